#include "catfa/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>

#include "catfa/attention.hpp"
#include "catfa/io.hpp"
#include "catfa/rng.hpp"

namespace catfa {

namespace {

// Scores + softmax + weighted value sum for one head of width `channels`,
// with keys/values already reduced to tokens / r rows.
void score_kernel(int64_t n, int64_t nr, int64_t c, const std::vector<float>& q,
                  const std::vector<float>& kr, const std::vector<float>& vr,
                  std::vector<float>& scores, std::vector<float>& out) {
    const float scale = 1.0f / std::sqrt(static_cast<float>(c));
    gemm_nt(static_cast<int>(n), static_cast<int>(c), static_cast<int>(nr), q.data(), kr.data(),
            scores.data(), false);
    for (int64_t i = 0; i < n; ++i) {
        float* row = scores.data() + i * nr;
        float mx = row[0] * scale;
        for (int64_t j = 0; j < nr; ++j) {
            row[j] *= scale;
            mx = std::max(mx, row[j]);
        }
        float denom = 0;
        for (int64_t j = 0; j < nr; ++j) {
            row[j] = std::exp(row[j] - mx);
            denom += row[j];
        }
        for (int64_t j = 0; j < nr; ++j) row[j] /= denom;
    }
    gemm_nn(static_cast<int>(n), static_cast<int>(nr), static_cast<int>(c), scores.data(),
            vr.data(), out.data(), false);
}

BenchRow measure(int64_t tokens, int64_t channels, int r, int reps, Rng& rng) {
    const int64_t nr = tokens / r;
    std::vector<float> q(tokens * channels), kr(nr * channels), vr(nr * channels);
    for (auto& v : q) v = static_cast<float>(rng.uniform() * 2 - 1);
    for (auto& v : kr) v = static_cast<float>(rng.uniform() * 2 - 1);
    for (auto& v : vr) v = static_cast<float>(rng.uniform() * 2 - 1);
    std::vector<float> scores(tokens * nr), out(tokens * channels);

    std::vector<double> times;
    times.reserve(reps);
    for (int rep = 0; rep <= reps; ++rep) {
        const auto t0 = std::chrono::steady_clock::now();
        score_kernel(tokens, nr, channels, q, kr, vr, scores, out);
        const auto t1 = std::chrono::steady_clock::now();
        if (rep == 0) continue; // warmup
        times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    const size_t m = times.size();
    const double median = m % 2 == 1 ? times[m / 2] : 0.5 * (times[m / 2 - 1] + times[m / 2]);

    BenchRow row;
    row.kernel = r == 1 ? "standard" : "reduced";
    row.r = r;
    row.tokens = tokens;
    row.channels = channels;
    row.madds = attention_score_madds(tokens, channels, r);
    row.median_ms = median;
    return row;
}

} // namespace

std::vector<BenchRow> run_bench(int64_t tokens, int64_t channels,
                                const std::vector<int>& reductions, int reps) {
    if (tokens < 1 || channels < 1)
        throw config_error("bench: tokens and channels must be positive");
    if (reps < 1) throw config_error("bench: reps must be positive");
    for (int r : reductions) {
        if (r < 1) throw config_error("bench: reduction factors must be positive");
        if (tokens % r != 0)
            throw config_error("bench: token count " + std::to_string(tokens) +
                               " is not divisible by reduction factor " + std::to_string(r));
    }

    Rng rng(0x9e3779b9u);
    std::vector<BenchRow> rows;
    rows.push_back(measure(tokens, channels, 1, reps, rng));
    for (int r : reductions) {
        if (r == 1) continue; // already covered by the standard row
        rows.push_back(measure(tokens, channels, r, reps, rng));
    }
    return rows;
}

void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows) {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw runtime_fault("cannot open for writing: " + path);
    std::fprintf(f, "kernel,r,tokens,channels,madds,median_ms\n");
    for (const BenchRow& row : rows)
        std::fprintf(f, "%s,%d,%lld,%lld,%llu,%.6f\n", row.kernel.c_str(), row.r,
                     static_cast<long long>(row.tokens), static_cast<long long>(row.channels),
                     static_cast<unsigned long long>(row.madds), row.median_ms);
    std::fclose(f);
}

} // namespace catfa
