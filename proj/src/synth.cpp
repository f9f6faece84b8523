#include "catfa/synth.hpp"

#include <algorithm>
#include <cmath>

#include "catfa/ops.hpp"

namespace catfa {

namespace {

struct Shape {
    bool ellipse = true;
    double cy = 0, cx = 0, ry = 1, rx = 1;

    bool inside(double y, double x) const {
        const double dy = y - cy, dx = x - cx;
        if (ellipse) {
            const double a = dy / ry, b = dx / rx;
            return a * a + b * b <= 1.0;
        }
        return std::fabs(dy) <= ry && std::fabs(dx) <= rx;
    }
};

bool inside_any(const std::vector<Shape>& shapes, double y, double x) {
    for (const auto& s : shapes)
        if (s.inside(y, x)) return true;
    return false;
}

// Fraction of a pixel covered by the union of shapes: cheap pre-test on the
// corners and center, 4x4 supersampling only where they disagree.
double coverage(const std::vector<Shape>& shapes, int y, int x) {
    int agree = 0;
    const double probes[5][2] = {{0.0, 0.0}, {0.0, 1.0}, {1.0, 0.0}, {1.0, 1.0}, {0.5, 0.5}};
    for (const auto& p : probes) agree += inside_any(shapes, y + p[0], x + p[1]) ? 1 : 0;
    if (agree == 0) return 0.0;
    if (agree == 5) return 1.0;
    int hits = 0;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            if (inside_any(shapes, y + (i + 0.5) / 4.0, x + (j + 0.5) / 4.0)) ++hits;
    return hits / 16.0;
}

TensorT<float> correlated_background(int hw, Rng& rng) {
    const int g = std::max(2, hw / 8) + 1;
    TensorT<float> coarse({1, 1, g, g});
    for (int64_t i = 0; i < coarse.size(); ++i)
        coarse[i] = static_cast<float>(0.30 + 0.30 * rng.uniform());
    return bilinear_upsample(coarse, hw, hw);
}

// Offset from the global background mean; the band keeps shapes visible
// against the worst-case local background excursion.
double shape_intensity(double bg_mean, Rng& rng) {
    const double delta = 0.30 + 0.2 * rng.uniform();
    const double sign = rng.below(2) == 0 ? 1.0 : -1.0;
    return std::clamp(bg_mean + sign * delta, 0.02, 0.98);
}

Shape random_shape(Rng& rng, int hw, double rlo, double rhi, double y0, double y1, double x0,
                   double x1) {
    Shape s;
    s.ellipse = rng.below(2) == 0;
    s.ry = (rlo + (rhi - rlo) * rng.uniform()) * hw;
    s.rx = (rlo + (rhi - rlo) * rng.uniform()) * hw;
    const double margin = 0.02 * hw;
    const double cy_lo = y0 * hw + s.ry + margin, cy_hi = y1 * hw - s.ry - margin;
    const double cx_lo = x0 * hw + s.rx + margin, cx_hi = x1 * hw - s.rx - margin;
    s.cy = cy_lo + std::max(0.0, cy_hi - cy_lo) * rng.uniform();
    s.cx = cx_lo + std::max(0.0, cx_hi - cx_lo) * rng.uniform();
    return s;
}

SynthSample render(int hw, const TensorT<float>& bg, const std::vector<Shape>& fg_shapes,
                   const std::vector<Shape>& bg_shapes, double intensity, Rng& rng) {
    std::vector<Shape> all = fg_shapes;
    all.insert(all.end(), bg_shapes.begin(), bg_shapes.end());

    SynthSample out;
    out.image = TensorT<float>({3, hw, hw});
    out.mask = TensorT<float>({1, hw, hw});
    const double gains[3] = {1.0, 0.97, 0.94};
    for (int y = 0; y < hw; ++y)
        for (int x = 0; x < hw; ++x) {
            const double c = coverage(all, y, x);
            const double v = bg.at4(0, 0, y, x) * (1.0 - c) + intensity * c;
            for (int ch = 0; ch < 3; ++ch) {
                const double noisy = v * gains[ch] + 0.02 * (rng.uniform() - 0.5);
                out.image.at3(ch, y, x) = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
            }
            out.mask.at3(0, y, x) =
                inside_any(fg_shapes, y + 0.5, x + 0.5) ? 1.0f : 0.0f;
        }
    return out;
}

double fg_fraction(const TensorT<float>& mask) {
    double s = 0;
    for (int64_t i = 0; i < mask.size(); ++i) s += mask[i];
    return s / static_cast<double>(mask.size());
}

SynthSample make_anywhere(int hw, Rng& rng) {
    const TensorT<float> bg = correlated_background(hw, rng);
    double bg_mean = 0;
    for (int64_t i = 0; i < bg.size(); ++i) bg_mean += bg[i];
    bg_mean /= static_cast<double>(bg.size());
    const double intensity = shape_intensity(bg_mean, rng);

    for (int attempt = 0; attempt < 200; ++attempt) {
        const int k = 1 + static_cast<int>(rng.below(3));
        std::vector<Shape> shapes;
        for (int i = 0; i < k; ++i)
            shapes.push_back(random_shape(rng, hw, 0.16, 0.28, 0.0, 1.0, 0.0, 1.0));
        SynthSample s = render(hw, bg, shapes, {}, intensity, rng);
        const double frac = fg_fraction(s.mask);
        if (frac >= 0.05 && frac <= 0.6) return s;
    }
    throw runtime_fault("synth: could not hit the foreground-fraction band in 200 attempts");
}

SynthSample make_quadrant(int hw, Rng& rng) {
    const TensorT<float> bg = correlated_background(hw, rng);
    double bg_mean = 0;
    for (int64_t i = 0; i < bg.size(); ++i) bg_mean += bg[i];
    bg_mean /= static_cast<double>(bg.size());
    const double intensity = shape_intensity(bg_mean, rng);

    for (int attempt = 0; attempt < 200; ++attempt) {
        // Target in the top-left quadrant; one look-alike per other quadrant.
        std::vector<Shape> target = {random_shape(rng, hw, 0.14, 0.18, 0.0, 0.5, 0.0, 0.5)};
        std::vector<Shape> distractors = {
            random_shape(rng, hw, 0.14, 0.18, 0.0, 0.5, 0.5, 1.0),
            random_shape(rng, hw, 0.14, 0.18, 0.5, 1.0, 0.0, 0.5),
            random_shape(rng, hw, 0.14, 0.18, 0.5, 1.0, 0.5, 1.0),
        };
        SynthSample s = render(hw, bg, target, distractors, intensity, rng);
        const double frac = fg_fraction(s.mask);
        if (frac >= 0.05 && frac <= 0.6) return s;
    }
    throw runtime_fault("synth: could not hit the foreground-fraction band in 200 attempts");
}

} // namespace

std::vector<SynthSample> make_synth_dataset(int n, int hw, uint64_t seed, SynthTask task) {
    if (n < 1) throw config_error("synth: dataset size must be >= 1");
    if (hw < 32 || hw % 32 != 0)
        throw config_error("synth: image extent must be a positive multiple of 32, got " +
                           std::to_string(hw));
    Rng rng(seed);
    std::vector<SynthSample> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        out.push_back(task == SynthTask::anywhere ? make_anywhere(hw, rng)
                                                  : make_quadrant(hw, rng));
    return out;
}

} // namespace catfa
