#include "modot/losses.hpp"

#include <algorithm>
#include <cmath>

namespace modot::losses {

ObdclVariant obdcl_variant_from_string(const std::string& s) {
    if (s == "literal") return ObdclVariant::Literal;
    if (s == "hinge") return ObdclVariant::Hinge;
    throw ConfigError("unknown obdcl variant: " + s);
}

namespace {

double mask_count(const Tensor& mask) {
    double c = 0;
    for (double v : mask.data()) c += v;
    return c;
}

void check_binary(const Tensor& mask, const char* what) {
    for (double v : mask.data())
        if (v != 0.0 && v != 1.0)
            throw NumericError(std::string(what) + " must be binary {0,1}");
}

}  // namespace

Tensor silog(const Tensor& pred, const Tensor& gt, const Tensor& valid_mask,
             double lambda, double alpha) {
    if (pred.shape() != gt.shape() || pred.shape() != valid_mask.shape())
        throw TensorError("silog: shape mismatch");
    double nm = mask_count(valid_mask);
    if (nm <= 0) throw NumericError("silog: empty valid mask, loss undefined");
    for (size_t i = 0; i < pred.data().size(); ++i)
        if (valid_mask.data()[i] > 0 && (pred.data()[i] <= 0 || gt.data()[i] <= 0))
            throw NumericError("silog: non-positive depth on a valid pixel");

    // Off-mask pixels are replaced by 1 before the log so they contribute 0.
    Tensor ones = Tensor::full(pred.shape(), 1.0);
    Tensor inv_mask = sub(ones, valid_mask);
    Tensor p = add(mul(pred, valid_mask), inv_mask);
    Tensor g = add(mul(gt, valid_mask), inv_mask);
    Tensor d = sub(log_t(p), log_t(g));
    Tensor m1 = mul_scalar(sum(d), 1.0 / nm);
    Tensor m2 = mul_scalar(sum(square(d)), 1.0 / nm);
    Tensor inner = sub(m2, mul_scalar(square(m1), lambda));
    return mul_scalar(sqrt_t(relu(inner)), alpha);
}

Tensor cce(const Tensor& ob_logit, const Tensor& gt_mask, double eps) {
    if (ob_logit.shape() != gt_mask.shape()) throw TensorError("cce: shape mismatch");
    for (double v : ob_logit.data())
        if (!std::isfinite(v)) throw NumericError("cce: non-finite logit");
    check_binary(gt_mask, "cce ground truth");
    double n = static_cast<double>(gt_mask.numel());
    double pos = mask_count(gt_mask);
    double beta = (n - pos) / n;

    Tensor p = clamp(sigmoid(ob_logit), eps, 1.0 - eps);
    Tensor ones = Tensor::full(gt_mask.shape(), 1.0);
    Tensor neg_mask = sub(ones, gt_mask);
    Tensor pos_term = mul(gt_mask, log_t(p));
    Tensor neg_term = mul(neg_mask, log_t(sub(ones, p)));
    Tensor s = add(mul_scalar(sum(pos_term), beta), mul_scalar(sum(neg_term), 1.0 - beta));
    return mul_scalar(s, -1.0 / n);
}

Tensor depth_diff_map(const Tensor& depth, int n) {
    if (depth.ndim() != 2) throw TensorError("depth_diff_map: expected (H,W)");
    if (n < 1 || n >= std::min(depth.dim(0), depth.dim(1)))
        throw ConfigError("depth_diff_map: shift n must satisfy 1 <= n < min(H,W)");
    for (double v : depth.data())
        if (!std::isfinite(v)) throw NumericError("depth_diff_map: non-finite depth");
    Tensor top = shift_replicate(depth, -n, 0);
    Tensor bottom = shift_replicate(depth, n, 0);
    Tensor left = shift_replicate(depth, 0, -n);
    Tensor right = shift_replicate(depth, 0, n);
    return add(abs_t(sub(top, bottom)), abs_t(sub(left, right)));
}

Tensor obdcl(const Tensor& pred_depth, const Tensor& ob_mask, int n,
             ObdclVariant variant, double margin) {
    if (pred_depth.shape() != ob_mask.shape()) throw TensorError("obdcl: shape mismatch");
    check_binary(ob_mask, "obdcl OB mask");
    double b1 = mask_count(ob_mask);
    if (b1 <= 0) return Tensor::scalar(0.0);  // empty B convention
    Tensor delta = depth_diff_map(pred_depth, n);
    Tensor short_fall = add_scalar(neg(delta), margin);  // margin - Delta
    if (variant == ObdclVariant::Hinge) short_fall = relu(short_fall);
    return mul_scalar(sum(mul(ob_mask, short_fall)), 1.0 / b1);
}

LossBreakdown total_loss(const Tensor& pred_depth,
                         const std::vector<Tensor>& ob_logits,
                         const Tensor& gt_depth, const Tensor& gt_ob,
                         const Tensor& valid_mask, const LossParams& p) {
    LossBreakdown out;
    out.l_d = silog(pred_depth, gt_depth, valid_mask, p.silog_lambda, p.silog_alpha);
    if (!ob_logits.empty()) {
        Tensor acc;
        for (const Tensor& raw : ob_logits) {
            // decoder heads emit (1,H,W); supervision targets are (H,W)
            Tensor logit = raw.shape() == gt_ob.shape() ? raw : reshape(raw, gt_ob.shape());
            Tensor l = cce(logit, gt_ob, p.cce_eps);
            out.side_cce.push_back(l.item());
            acc = acc.defined() ? add(acc, l) : l;
        }
        out.l_ob = mul_scalar(acc, 1.0 / static_cast<double>(ob_logits.size()));
    } else {
        out.l_ob = Tensor::scalar(0.0);
    }
    out.l_c = obdcl(pred_depth, gt_ob, p.obdcl_n, p.obdcl_variant, p.obdcl_margin);
    out.total = add(add(mul_scalar(out.l_d, p.weights.w_d),
                        mul_scalar(out.l_ob, p.weights.w_ob)),
                    mul_scalar(out.l_c, p.weights.w_c));
    return out;
}

}  // namespace modot::losses
