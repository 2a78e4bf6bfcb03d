#include "oracles.hpp"

#include <cmath>
#include <stdexcept>

namespace oracle {

std::vector<double> finite_diff_grad(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& x, double h) {
    std::vector<double> g(x.size());
    std::vector<double> xp = x;
    for (size_t i = 0; i < x.size(); ++i) {
        xp[i] = x[i] + h;
        double fp = f(xp);
        xp[i] = x[i] - h;
        double fm = f(xp);
        xp[i] = x[i];
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("finite_diff_grad: non-finite value at coordinate " +
                                     std::to_string(i));
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

double max_rel_err(const std::vector<double>& analytic, const std::vector<double>& numeric,
                   double floor) {
    if (analytic.size() != numeric.size())
        throw std::runtime_error("max_rel_err: size mismatch");
    double worst = 0;
    for (size_t i = 0; i < analytic.size(); ++i) {
        double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric[i]), floor});
        worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

modot::metrics::OBMetrics brute_ob_metrics(const std::vector<double>& prob,
                                           const std::vector<uint8_t>& gt, int h, int w,
                                           double threshold, int tol) {
    modot::metrics::OBMetrics m;
    m.threshold = threshold;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            bool pred_pos = prob[static_cast<size_t>(i) * w + j] > threshold;
            if (pred_pos) {
                bool matched = false;
                for (int qi = 0; qi < h; ++qi)
                    for (int qj = 0; qj < w; ++qj)
                        if (gt[static_cast<size_t>(qi) * w + qj] &&
                            std::abs(qi - i) <= tol && std::abs(qj - j) <= tol)
                            matched = true;
                if (matched)
                    ++m.tp;
                else
                    ++m.fp;
            }
            if (gt[static_cast<size_t>(i) * w + j]) {
                bool matched = false;
                for (int qi = 0; qi < h; ++qi)
                    for (int qj = 0; qj < w; ++qj)
                        if (prob[static_cast<size_t>(qi) * w + qj] > threshold &&
                            std::abs(qi - i) <= tol && std::abs(qj - j) <= tol)
                            matched = true;
                if (!matched) ++m.fn;
            }
        }
    m.recall = (m.tp + m.fn) > 0 ? double(m.tp) / double(m.tp + m.fn) : 1.0;
    m.precision = (m.tp + m.fp) > 0 ? double(m.tp) / double(m.tp + m.fp) : 1.0;
    m.fscore = (m.precision + m.recall) > 0
                   ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                   : 0.0;
    return m;
}

modot::metrics::DepthMetrics brute_depth_metrics(const std::vector<double>& pred,
                                                 const std::vector<double>& gt,
                                                 const std::vector<uint8_t>& valid,
                                                 double cap, double min_depth) {
    modot::metrics::DepthMetrics m;
    double n = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (!valid[i] || gt[i] <= min_depth || gt[i] >= cap) continue;
        n += 1;
        m.rmse += (pred[i] - gt[i]) * (pred[i] - gt[i]);
        m.rmse_log += std::pow(std::log(pred[i]) - std::log(gt[i]), 2.0);
        m.abs_rel += std::fabs(pred[i] - gt[i]) / gt[i];
        m.sq_rel += (pred[i] - gt[i]) * (pred[i] - gt[i]) / gt[i];
        m.log10 += std::fabs(std::log10(pred[i]) - std::log10(gt[i]));
        double r = std::max(pred[i] / gt[i], gt[i] / pred[i]);
        m.delta1 += r < 1.25 ? 1 : 0;
        m.delta2 += r < 1.5625 ? 1 : 0;
        m.delta3 += r < 1.953125 ? 1 : 0;
    }
    if (n == 0) throw std::runtime_error("brute_depth_metrics: empty evaluation set");
    m.rmse = std::sqrt(m.rmse / n);
    m.rmse_log = std::sqrt(m.rmse_log / n);
    m.abs_rel /= n;
    m.sq_rel /= n;
    m.log10 /= n;
    m.delta1 /= n;
    m.delta2 /= n;
    m.delta3 /= n;
    return m;
}

std::vector<double> brute_conv2d(const std::vector<double>& x, int cin, int h, int w,
                                 const std::vector<double>& wgt, int cout, int kh, int kw,
                                 const std::vector<double>& bias, int stride, int pad_h,
                                 int pad_w) {
    int oh = (h + 2 * pad_h - kh) / stride + 1;
    int ow = (w + 2 * pad_w - kw) / stride + 1;
    std::vector<double> out(static_cast<size_t>(cout) * oh * ow, 0.0);
    for (int co = 0; co < cout; ++co)
        for (int oi = 0; oi < oh; ++oi)
            for (int oj = 0; oj < ow; ++oj) {
                double acc = bias.empty() ? 0.0 : bias[static_cast<size_t>(co)];
                for (int ci = 0; ci < cin; ++ci)
                    for (int ki = 0; ki < kh; ++ki)
                        for (int kj = 0; kj < kw; ++kj) {
                            int si = oi * stride + ki - pad_h;
                            int sj = oj * stride + kj - pad_w;
                            if (si < 0 || si >= h || sj < 0 || sj >= w) continue;
                            acc += x[(static_cast<size_t>(ci) * h + si) * w + sj] *
                                   wgt[((static_cast<size_t>(co) * cin + ci) * kh + ki) * kw +
                                       kj];
                        }
                out[(static_cast<size_t>(co) * oh + oi) * ow + oj] = acc;
            }
    return out;
}

}  // namespace oracle
