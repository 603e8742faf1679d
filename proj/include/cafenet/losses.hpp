#pragma once

// Training objective: segmentation MSE with optional multi-split terms,
// edge cross-entropy, reciprocal Dice, and their unweighted sum.

#include <string>
#include <vector>

#include "cafenet/nn/autograd.hpp"

namespace cafenet::losses {

inline constexpr double kEpsilon = 1e-7;

/// Per-query segmentation predictions at encoder resolution.
struct SegTerms {
    nn::Var full;                 // p from full-vector matching, [1,1,h,w]
    std::vector<nn::Var> splits;  // p^k, one per channel split (may be empty)
    nn::Tensor target;            // down-sampled soft mask m^q, [1,1,h,w]
};

/// Per-query edge prediction at full resolution.
struct EdgeTerms {
    nn::Var prediction; // y_hat in (0,1), [1,1,H,W]
    nn::Tensor label;   // binary y, [1,1,H,W]
};

struct LossReport {
    double l_seg = 0.0;
    double l_ce = 0.0;    // per-query mean of the summed cross-entropy
    double l_dice = 0.0;  // per-query mean of the reciprocal Dice
    double l_final = 0.0;
    double ce_raw = 0.0;   // unnormalised sum over queries
    double dice_raw = 0.0;
    double seg_full = 0.0;                // mean (p - m)^2 part
    std::vector<double> seg_splits;       // mean (p^k - m)^2 per split
};

struct Objective {
    nn::Var total;
    LossReport report;
};

/// Mean over queries and pixels of (p - m)^2 + sum_k (p^k - m)^2. Split
/// terms are included only when `use_msmr` is set.
nn::Var seg_loss(const std::vector<SegTerms>& queries, bool use_msmr,
                 LossReport* report = nullptr);

/// -sum[y log y_hat + (1 - y) log(1 - y_hat)] for one query, y_hat clamped to
/// [eps, 1 - eps]. With `balanced`, positives are weighted by |Y-|/|Y| and
/// negatives by |Y+|/|Y|.
nn::Var ce_sum(const nn::Var& prediction, const nn::Tensor& label, bool balanced = false,
               double eps = kEpsilon);

/// (sum y_hat^2 + sum y^2) / (2 sum y_hat y + eps) for one query.
nn::Var dice_ratio(const nn::Var& prediction, const nn::Tensor& label, double eps = kEpsilon);

/// Query-normalised cross-entropy; `raw` receives the unnormalised sum.
nn::Var ce_loss(const std::vector<EdgeTerms>& queries, bool balanced = false,
                double* raw = nullptr);
nn::Var dice_loss(const std::vector<EdgeTerms>& queries, double* raw = nullptr);

/// l_seg + l_ce + l_dice; throws Numeric naming the first non-finite component.
nn::Var total_loss(const nn::Var& seg, const nn::Var& ce, const nn::Var& dice);
double total_loss(double seg, double ce, double dice);

} // namespace cafenet::losses
