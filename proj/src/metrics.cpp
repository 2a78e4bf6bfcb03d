#include "modot/metrics.hpp"

#include <cmath>

namespace modot::metrics {

DepthMetrics depth_metrics(const std::vector<double>& pred,
                           const std::vector<double>& gt,
                           const std::vector<uint8_t>& valid_mask,
                           double depth_cap, double min_eval_depth) {
    if (pred.size() != gt.size() || pred.size() != valid_mask.size())
        throw DataError("depth_metrics: size mismatch");
    if (!(depth_cap > 0)) throw ConfigError("depth_metrics: depth cap must be positive");
    DepthMetrics m;
    int64_t n = 0;
    double se = 0, se_log = 0, ar = 0, sr = 0, l10 = 0;
    int64_t d1 = 0, d2 = 0, d3 = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (!valid_mask[i]) continue;
        double g = gt[i];
        if (g <= min_eval_depth || g >= depth_cap) continue;
        double p = pred[i];
        if (p <= 0) throw NumericError("depth_metrics: non-positive prediction on valid pixel");
        ++n;
        double e = p - g;
        se += e * e;
        double el = std::log(p) - std::log(g);
        se_log += el * el;
        ar += std::fabs(e) / g;
        sr += e * e / g;
        l10 += std::fabs(std::log10(p) - std::log10(g));
        double ratio = std::max(p / g, g / p);
        if (ratio < 1.25) ++d1;
        if (ratio < 1.25 * 1.25) ++d2;
        if (ratio < 1.25 * 1.25 * 1.25) ++d3;
    }
    if (n == 0) throw NumericError("depth_metrics: no pixels inside evaluation range");
    double dn = static_cast<double>(n);
    m.rmse = std::sqrt(se / dn);
    m.rmse_log = std::sqrt(se_log / dn);
    m.abs_rel = ar / dn;
    m.sq_rel = sr / dn;
    m.log10 = l10 / dn;
    m.delta1 = d1 / dn;
    m.delta2 = d2 / dn;
    m.delta3 = d3 / dn;
    return m;
}

OBMetrics ob_metrics(const std::vector<double>& prob_map,
                     const std::vector<uint8_t>& gt_mask,
                     int height, int width,
                     double threshold, int tolerance_radius) {
    if (threshold < 0.0 || threshold > 1.0)
        throw ConfigError("ob_metrics: threshold must lie in [0,1]");
    if (prob_map.size() != gt_mask.size() ||
        prob_map.size() != static_cast<size_t>(height) * width)
        throw DataError("ob_metrics: size mismatch");

    auto has_near = [&](const std::vector<uint8_t>& mask, int i, int j) {
        for (int di = -tolerance_radius; di <= tolerance_radius; ++di)
            for (int dj = -tolerance_radius; dj <= tolerance_radius; ++dj) {
                int qi = i + di, qj = j + dj;
                if (qi >= 0 && qi < height && qj >= 0 && qj < width &&
                    mask[static_cast<size_t>(qi) * width + qj])
                    return true;
            }
        return false;
    };

    std::vector<uint8_t> pred_bin(prob_map.size());
    for (size_t i = 0; i < prob_map.size(); ++i) pred_bin[i] = prob_map[i] > threshold;

    OBMetrics m;
    m.threshold = threshold;
    for (int i = 0; i < height; ++i)
        for (int j = 0; j < width; ++j) {
            size_t px = static_cast<size_t>(i) * width + j;
            if (pred_bin[px]) {
                if (has_near(gt_mask, i, j))
                    ++m.tp;
                else
                    ++m.fp;
            }
            if (gt_mask[px] && !has_near(pred_bin, i, j)) ++m.fn;
        }
    // 0/0 conventions: recall and precision both default to 1 (nothing to
    // find, nothing found wrongly), so empty-vs-empty scores a perfect 1.
    m.recall = (m.tp + m.fn) > 0 ? static_cast<double>(m.tp) / (m.tp + m.fn) : 1.0;
    m.precision = (m.tp + m.fp) > 0 ? static_cast<double>(m.tp) / (m.tp + m.fp) : 1.0;
    m.fscore = (m.precision + m.recall) > 0
                   ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                   : 0.0;
    return m;
}

}  // namespace modot::metrics
