#pragma once

#include "modot/errors.hpp"

#include <cstdint>
#include <vector>

namespace modot::metrics {

struct DepthMetrics {
    double rmse = 0, rmse_log = 0, abs_rel = 0, sq_rel = 0, log10 = 0;
    double delta1 = 0, delta2 = 0, delta3 = 0;
};

struct OBMetrics {
    double recall = 0, precision = 0, fscore = 0;
    double threshold = 0.7;
    int64_t tp = 0, fp = 0, fn = 0;
};

// Standard depth evaluation over valid pixels with gt restricted to
// (min_eval_depth, depth_cap). Empty effective mask -> NumericError.
DepthMetrics depth_metrics(const std::vector<double>& pred,
                           const std::vector<double>& gt,
                           const std::vector<uint8_t>& valid_mask,
                           double depth_cap, double min_eval_depth = 1e-3);

// Thresholded boundary counting. With tolerance_radius t, a predicted
// positive is a TP if a GT positive lies within Chebyshev distance t; FN is
// counted by the symmetric GT -> prediction match. t = 0 is exact pixelwise.
OBMetrics ob_metrics(const std::vector<double>& prob_map,
                     const std::vector<uint8_t>& gt_mask,
                     int height, int width,
                     double threshold = 0.7, int tolerance_radius = 0);

}  // namespace modot::metrics
