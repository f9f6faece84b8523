#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace catfa {

// One measured attention-score kernel configuration. `madds` counts the
// multiply-adds of the score (Q.K^T) product — the weighted value sum costs
// the same — and scales as 1/r with the spatial-reduction factor.
struct BenchRow {
    std::string kernel; // "standard" (r = 1) or "reduced"
    int r = 1;
    int64_t tokens = 0;
    int64_t channels = 0;
    uint64_t madds = 0;
    double median_ms = 0;
};

// Times the attention-score kernel (q·k^T scaling, row softmax, weighted sum
// of values) at the given token count and width, once at r = 1 and once per
// entry of `reductions`. Each measurement is the median of `reps` timed runs
// after one warmup. Token count must be divisible by each reduction factor.
std::vector<BenchRow> run_bench(int64_t tokens, int64_t channels,
                                const std::vector<int>& reductions, int reps);

// Writes "kernel,r,tokens,channels,madds,median_ms" rows.
void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows);

} // namespace catfa
