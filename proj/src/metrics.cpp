#include "catfa/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace catfa {

ConfusionCounts confusion(const Mask& pred, const Mask& gt) {
    if (pred.size() != gt.size())
        throw shape_error("confusion: mask sizes differ, " + std::to_string(pred.size()) +
                          " vs " + std::to_string(gt.size()));
    ConfusionCounts c;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] > 1 || gt[i] > 1)
            throw shape_error("confusion: masks must be binary (0/1), found value " +
                              std::to_string(int(std::max(pred[i], gt[i]))) + " at index " +
                              std::to_string(i));
        if (pred[i] && gt[i]) ++c.tp;
        else if (pred[i] && !gt[i]) ++c.fp;
        else if (!pred[i] && gt[i]) ++c.fn;
        else ++c.tn;
    }
    return c;
}

namespace {

double ratio_or_one(double num, double den) { return den == 0 ? 1.0 : num / den; }

} // namespace

double dsc_of(const ConfusionCounts& c) {
    return ratio_or_one(2.0 * double(c.tp), 2.0 * double(c.tp) + double(c.fp) + double(c.fn));
}

double iou_of(const ConfusionCounts& c) {
    return ratio_or_one(double(c.tp), double(c.tp) + double(c.fp) + double(c.fn));
}

double precision_of(const ConfusionCounts& c) {
    return ratio_or_one(double(c.tp), double(c.tp) + double(c.fp));
}

double recall_of(const ConfusionCounts& c) {
    return ratio_or_one(double(c.tp), double(c.tp) + double(c.fn));
}

double specificity_of(const ConfusionCounts& c) {
    return ratio_or_one(double(c.tn), double(c.tn) + double(c.fp));
}

double mcc_of(const ConfusionCounts& c) {
    const double tp = double(c.tp), tn = double(c.tn), fp = double(c.fp), fn = double(c.fn);
    const double f1 = tp + fp, f2 = tp + fn, f3 = tn + fp, f4 = tn + fn;
    if (f1 == 0 || f2 == 0 || f3 == 0 || f4 == 0) return 0.0;
    return (tp * tn - fp * fn) / std::sqrt(f1 * f2 * f3 * f4);
}

MetricsReport report(const Mask& pred, const Mask& gt, int h, int w) {
    if (pred.size() != static_cast<size_t>(h) * static_cast<size_t>(w))
        throw shape_error("report: mask size does not match extents");
    const ConfusionCounts c = confusion(pred, gt);
    MetricsReport r;
    r.dsc = dsc_of(c);
    r.iou = iou_of(c);
    r.precision = precision_of(c);
    r.recall = recall_of(c);
    r.specificity = specificity_of(c);
    r.mcc = mcc_of(c);
    r.hd = hausdorff(pred, gt, h, w);
    return r;
}

std::vector<int> boundary_pixels(const Mask& m, int h, int w) {
    if (m.size() != static_cast<size_t>(h) * static_cast<size_t>(w))
        throw shape_error("boundary: mask size does not match extents");
    std::vector<int> out;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!m[static_cast<size_t>(y) * w + x]) continue;
            const bool edge =
                y == 0 || !m[static_cast<size_t>(y - 1) * w + x] ||
                y == h - 1 || !m[static_cast<size_t>(y + 1) * w + x] ||
                x == 0 || !m[static_cast<size_t>(y) * w + x - 1] ||
                x == w - 1 || !m[static_cast<size_t>(y) * w + x + 1];
            if (edge) out.push_back(y * w + x);
        }
    return out;
}

// Two-pass exact Euclidean distance transform (Meijster et al.): a column
// sweep for vertical distances, then a per-row lower-envelope sweep over the
// parabolas (x - i)^2 + g(i)^2. All arithmetic is on integers, so the squared
// distances are exact.
std::vector<int64_t> squared_distance_map(const std::vector<int>& sites, int h, int w) {
    if (sites.empty()) throw shape_error("distance map: needs at least one site");
    const int64_t inf = static_cast<int64_t>(h) + w + 1;
    std::vector<int64_t> g(static_cast<size_t>(h) * w, inf);
    for (int s : sites) {
        if (s < 0 || s >= h * w) throw shape_error("distance map: site offset out of range");
        g[static_cast<size_t>(s)] = 0;
    }
    for (int x = 0; x < w; ++x) {
        for (int y = 1; y < h; ++y) {
            auto& cur = g[static_cast<size_t>(y) * w + x];
            cur = std::min(cur, g[static_cast<size_t>(y - 1) * w + x] + 1);
        }
        for (int y = h - 2; y >= 0; --y) {
            auto& cur = g[static_cast<size_t>(y) * w + x];
            cur = std::min(cur, g[static_cast<size_t>(y + 1) * w + x] + 1);
        }
    }

    std::vector<int64_t> dist(static_cast<size_t>(h) * w);
    std::vector<int> s(static_cast<size_t>(w)), t(static_cast<size_t>(w));
    for (int y = 0; y < h; ++y) {
        const int64_t* gy = &g[static_cast<size_t>(y) * w];
        auto f = [&](int64_t x, int64_t i) { return (x - i) * (x - i) + gy[i] * gy[i]; };
        auto sep = [&](int64_t i, int64_t u) {
            return (u * u - i * i + gy[u] * gy[u] - gy[i] * gy[i]) / (2 * (u - i));
        };
        int q = 0;
        s[0] = 0;
        t[0] = 0;
        for (int u = 1; u < w; ++u) {
            while (q >= 0 && f(t[q], s[q]) > f(t[q], u)) --q;
            if (q < 0) {
                q = 0;
                s[0] = u;
            } else {
                const int64_t sw = 1 + sep(s[q], u);
                if (sw < w) {
                    ++q;
                    s[q] = u;
                    t[q] = static_cast<int>(sw);
                }
            }
        }
        for (int u = w - 1; u >= 0; --u) {
            dist[static_cast<size_t>(y) * w + u] = f(u, s[q]);
            if (u == t[q]) --q;
        }
    }
    return dist;
}

double hausdorff(const Mask& pred, const Mask& gt, int h, int w) {
    const std::vector<int> bp = boundary_pixels(pred, h, w);
    const std::vector<int> bg = boundary_pixels(gt, h, w);
    if (bp.empty() && bg.empty()) return 0.0;
    if (bp.empty() || bg.empty())
        return std::sqrt(double(h) * h + double(w) * w); // image diagonal: worst case
    const std::vector<int64_t> to_gt = squared_distance_map(bg, h, w);
    const std::vector<int64_t> to_pred = squared_distance_map(bp, h, w);
    int64_t worst = 0;
    for (int p : bp) worst = std::max(worst, to_gt[static_cast<size_t>(p)]);
    for (int p : bg) worst = std::max(worst, to_pred[static_cast<size_t>(p)]);
    return std::sqrt(static_cast<double>(worst));
}

WilcoxonResult wilcoxon_one_tailed(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw shape_error("wilcoxon: paired samples must have equal length, got " +
                          std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    struct Diff {
        double abs;
        bool positive;
    };
    std::vector<Diff> diffs;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        if (d != 0.0) diffs.push_back({std::fabs(d), d > 0});
    }
    if (diffs.empty())
        throw config_error("wilcoxon: all differences are zero; the test is undefined");
    const int n = static_cast<int>(diffs.size());
    if (n < 5)
        throw config_error("wilcoxon: needs at least 5 nonzero differences, got " +
                           std::to_string(n));

    std::sort(diffs.begin(), diffs.end(),
              [](const Diff& x, const Diff& y) { return x.abs < y.abs; });

    // Doubled ranks stay integral under average-rank ties: a tie group over
    // ranks i..j averages to (i + j) / 2, doubled to the integer i + j.
    std::vector<int64_t> rank2(static_cast<size_t>(n));
    std::vector<int64_t> tie_sizes;
    int i = 0;
    while (i < n) {
        int j = i;
        while (j + 1 < n && diffs[static_cast<size_t>(j + 1)].abs == diffs[static_cast<size_t>(i)].abs) ++j;
        const int64_t doubled = static_cast<int64_t>(i + 1) + static_cast<int64_t>(j + 1);
        for (int k = i; k <= j; ++k) rank2[static_cast<size_t>(k)] = doubled;
        if (j > i) tie_sizes.push_back(j - i + 1);
        i = j + 1;
    }

    int64_t w2 = 0; // doubled W+
    for (int k = 0; k < n; ++k)
        if (diffs[static_cast<size_t>(k)].positive) w2 += rank2[static_cast<size_t>(k)];

    WilcoxonResult res;
    res.n = n;
    res.w_plus = static_cast<double>(w2) / 2.0;

    if (n <= 12) {
        // Count sign assignments by their doubled rank sum.
        const int64_t maxsum = static_cast<int64_t>(n) * (n + 1); // sum of doubled ranks
        std::vector<uint64_t> count(static_cast<size_t>(maxsum) + 1, 0);
        count[0] = 1;
        for (int k = 0; k < n; ++k) {
            const int64_t r2 = rank2[static_cast<size_t>(k)];
            for (int64_t sum = maxsum; sum >= r2; --sum)
                count[static_cast<size_t>(sum)] += count[static_cast<size_t>(sum - r2)];
        }
        uint64_t at_least = 0;
        for (int64_t sum = w2; sum <= maxsum; ++sum) at_least += count[static_cast<size_t>(sum)];
        res.p = static_cast<double>(at_least) / std::pow(2.0, n);
        res.exact = true;
    } else {
        const double nn = n;
        const double mean = nn * (nn + 1) / 4.0;
        double var = nn * (nn + 1) * (2 * nn + 1) / 24.0;
        for (int64_t t : tie_sizes) var -= (double(t) * t * t - double(t)) / 48.0;
        const double z = (res.w_plus - mean - 0.5) / std::sqrt(var);
        res.p = 0.5 * std::erfc(z / std::sqrt(2.0));
        res.exact = false;
    }
    return res;
}

} // namespace catfa
