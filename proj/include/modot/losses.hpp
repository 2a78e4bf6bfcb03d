#pragma once

#include "modot/errors.hpp"
#include "modot/tensor.hpp"

#include <string>
#include <vector>

namespace modot::losses {

enum class ObdclVariant { Literal, Hinge };

ObdclVariant obdcl_variant_from_string(const std::string& s);

struct LossWeights {
    double w_d = 1.2;
    double w_ob = 1.0;
    double w_c = 0.1;
};

struct LossParams {
    LossWeights weights;
    double silog_lambda = 0.85;
    double silog_alpha = 10.0;
    double cce_eps = 1e-6;
    int obdcl_n = 1;
    double obdcl_margin = 1.0;
    ObdclVariant obdcl_variant = ObdclVariant::Literal;
};

// Scale-invariant log loss over valid pixels:
//   L = alpha * sqrt(mean(d^2) - lambda * mean(d)^2),  d = ln(pred) - ln(gt).
// pred/gt are (H,W); mask is {0,1} and must be non-empty.
Tensor silog(const Tensor& pred, const Tensor& gt, const Tensor& valid_mask,
             double lambda, double alpha);

// Class-balanced cross-entropy on a single logit map vs a binary mask.
// beta = |neg| / (|pos| + |neg|) per image; probabilities clamped to
// [eps, 1-eps].
Tensor cce(const Tensor& ob_logit, const Tensor& gt_mask, double eps = 1e-6);

// Sum of absolute n-pixel central differences (replicate borders), Eq-2 style.
Tensor depth_diff_map(const Tensor& depth, int n);

// Mean of (margin - Delta) over ground-truth OB pixels; hinge variant clamps
// at zero. Empty B yields exactly 0.
Tensor obdcl(const Tensor& pred_depth, const Tensor& ob_mask, int n,
             ObdclVariant variant = ObdclVariant::Literal, double margin = 1.0);

struct LossBreakdown {
    Tensor l_d, l_ob, l_c, total;
    std::vector<double> side_cce;  // per side output, final map first
};

// Tripartite total: w_d*L_D + w_ob*L_OB + w_c*L_C. L_OB is the equal-weight
// mean of CCE over the final OB logit plus all side logits; L_C uses the
// predicted depth against the ground-truth OB mask.
LossBreakdown total_loss(const Tensor& pred_depth,
                         const std::vector<Tensor>& ob_logits,
                         const Tensor& gt_depth, const Tensor& gt_ob,
                         const Tensor& valid_mask, const LossParams& params);

}  // namespace modot::losses
