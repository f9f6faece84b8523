#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "catfa/common.hpp"

namespace catfa {

// Binary-segmentation evaluation: confusion-count metrics, the boundary
// Hausdorff distance, and a one-tailed Wilcoxon signed-rank test for paired
// per-image scores.

// Row-major h*w mask with values 0/1.
using Mask = std::vector<uint8_t>;

struct ConfusionCounts {
    int64_t tp = 0, tn = 0, fp = 0, fn = 0;
    int64_t total() const { return tp + tn + fp + fn; }
};

struct MetricsReport {
    double dsc = 0, iou = 0, precision = 0, recall = 0, specificity = 0, mcc = 0, hd = 0;
};

// Exact counts; throws shape_error on size mismatch or non-binary values.
ConfusionCounts confusion(const Mask& pred, const Mask& gt);

// Ratio conventions: the overlap ratios (dsc, iou, precision, recall,
// specificity) return 1 when their denominator is 0 — an empty denominator
// means there was nothing to get wrong. MCC returns 0 when any factor of its
// denominator is 0 (no correlation measurable).
double dsc_of(const ConfusionCounts& c);
double iou_of(const ConfusionCounts& c);
double precision_of(const ConfusionCounts& c);
double recall_of(const ConfusionCounts& c);
double specificity_of(const ConfusionCounts& c);
double mcc_of(const ConfusionCounts& c);

// All seven metrics for one mask pair (h*w row-major).
MetricsReport report(const Mask& pred, const Mask& gt, int h, int w);

// Foreground pixels with at least one 4-neighbor outside the foreground;
// pixels beyond the image border count as outside. Returned as y*w + x
// offsets in ascending order.
std::vector<int> boundary_pixels(const Mask& m, int h, int w);

// Squared Euclidean distance from every pixel to the nearest site (exact
// integer arithmetic). `sites` holds y*w + x offsets; must be nonempty.
std::vector<int64_t> squared_distance_map(const std::vector<int>& sites, int h, int w);

// Symmetric Hausdorff distance between the foreground boundaries of two
// masks, in pixels. Both masks empty -> 0; exactly one empty -> the image
// diagonal sqrt(h^2 + w^2) as the worst case.
double hausdorff(const Mask& pred, const Mask& gt, int h, int w);

struct WilcoxonResult {
    double w_plus = 0; // sum of ranks of positive differences
    double p = 1;      // one-tailed p-value for the alternative a > b
    int n = 0;         // sample size after dropping zero differences
    bool exact = false;
};

// Paired one-tailed signed-rank test (alternative: a > b). Zero differences
// are dropped; ties share average ranks. Exact p by enumeration over sign
// assignments for n <= 12, otherwise a normal approximation with continuity
// and tie corrections. Throws config_error when every difference is zero or
// fewer than 5 nonzero differences remain.
WilcoxonResult wilcoxon_one_tailed(const std::vector<double>& a, const std::vector<double>& b);

} // namespace catfa
