#include "modot/nn.hpp"

#include <cmath>

namespace modot::nn {

Tensor ParamStore::make(const std::string& name, const std::vector<int64_t>& shape,
                        double fan_in) {
    double bound = std::sqrt(1.0 / std::max(1.0, fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    std::vector<double> data(static_cast<size_t>(n));
    for (auto& v : data) v = dist(rng_);
    Tensor t = Tensor::from_data(shape, std::move(data), true);
    params_.emplace_back(name, t);
    return t;
}

Tensor ParamStore::make_const(const std::string& name, const std::vector<int64_t>& shape,
                              double value) {
    Tensor t = Tensor::full(shape, value, true);
    params_.emplace_back(name, t);
    return t;
}

std::vector<std::pair<std::string, Tensor>> ParamStore::with_prefix(
    const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [name, t] : params_)
        if (name.rfind(prefix, 0) == 0) out.emplace_back(name, t);
    return out;
}

Linear::Linear(ParamStore& ps, const std::string& name, int64_t in, int64_t out, bool bias) {
    w = ps.make(name + ".w", {out, in}, static_cast<double>(in));
    if (bias) b = ps.make(name + ".b", {out}, static_cast<double>(in));
}

Tensor Linear::forward(const Tensor& x) const {
    Tensor wt = permute(w, {1, 0});
    Tensor y = matmul(x, wt);
    if (b.defined()) y = add_rowvec(y, b);
    return y;
}

Conv2d::Conv2d(ParamStore& ps, const std::string& name, int64_t cin, int64_t cout,
               int kh, int kw, int stride_, bool bias) {
    w = ps.make(name + ".w", {cout, cin, kh, kw}, static_cast<double>(cin * kh * kw));
    if (bias) b = ps.make(name + ".b", {cout}, static_cast<double>(cin * kh * kw));
    stride = stride_;
}

Tensor Conv2d::forward(const Tensor& x) const { return conv2d(x, w, b, stride, pad_h, pad_w); }

void Conv2d::zero_init() {
    std::fill(w.data().begin(), w.data().end(), 0.0);
    if (b.defined()) std::fill(b.data().begin(), b.data().end(), 0.0);
}

LayerNorm::LayerNorm(ParamStore& ps, const std::string& name, int64_t c) {
    gamma = ps.make_const(name + ".gamma", {c}, 1.0);
    beta = ps.make_const(name + ".beta", {c}, 0.0);
}

ChannelAttention::ChannelAttention(ParamStore& ps, const std::string& name, int64_t c,
                                   int64_t reduction) {
    if (reduction <= 0 || c % reduction != 0)
        throw TensorError("channel attention: channels not divisible by reduction");
    fc1 = Linear(ps, name + ".fc1", c, c / reduction);
    fc2 = Linear(ps, name + ".fc2", c / reduction, c);
}

Tensor ChannelAttention::forward(const Tensor& x) const {
    Tensor pooled = reshape(global_avg_pool(x), {1, x.dim(0)});
    Tensor h = relu(fc1.forward(pooled));
    Tensor wv = sigmoid(fc2.forward(h));
    return reshape(wv, {x.dim(0)});
}

Mlp::Mlp(ParamStore& ps, const std::string& name, int64_t c, int64_t hidden) {
    fc1 = Linear(ps, name + ".fc1", c, hidden);
    fc2 = Linear(ps, name + ".fc2", hidden, c);
}

Tensor Mlp::forward(const Tensor& x) const { return fc2.forward(gelu(fc1.forward(x))); }

Tensor chw_to_tokens(const Tensor& x) {
    int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    return reshape(permute(x, {1, 2, 0}), {h * w, c});
}

Tensor tokens_to_chw(const Tensor& t, int64_t h, int64_t w) {
    int64_t c = t.dim(1);
    return permute(reshape(t, {h, w, c}), {2, 0, 1});
}

WindowAttention::WindowAttention(ParamStore& ps, const std::string& name, int64_t c,
                                 int window_, int heads_) {
    q_proj = Linear(ps, name + ".q", c, c);
    k_proj = Linear(ps, name + ".k", c, c);
    v_proj = Linear(ps, name + ".v", c, c);
    out_proj = Linear(ps, name + ".out", c, c, /*bias=*/false);
    window = window_;
    heads = heads_;
}

namespace {

// (C,H,W) -> (num_windows, N*N, C), H and W already multiples of N
Tensor window_partition(const Tensor& x, int n) {
    int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor r = reshape(x, {c, h / n, n, w / n, n});
    r = permute(r, {1, 3, 2, 4, 0});  // (h/n, w/n, n, n, c)
    return reshape(r, {(h / n) * (w / n), static_cast<int64_t>(n) * n, c});
}

Tensor window_merge(const Tensor& t, int n, int64_t h, int64_t w, int64_t c) {
    Tensor r = reshape(t, {h / n, w / n, n, n, c});
    r = permute(r, {4, 0, 2, 1, 3});  // (c, h/n, n, w/n, n)
    return reshape(r, {c, h, w});
}

}  // namespace

Tensor WindowAttention::forward(const Tensor& q_src, const Tensor& kv_src) const {
    if (q_src.dim(1) != kv_src.dim(1) || q_src.dim(2) != kv_src.dim(2))
        throw TensorError("window attention: spatial mismatch between query and key/value maps");
    int64_t c = q_src.dim(0), h = q_src.dim(1), w = q_src.dim(2);
    int n = window;
    int64_t hp = (h + n - 1) / n * n, wp = (w + n - 1) / n * n;
    Tensor q_map = q_src, kv_map = kv_src;
    if (hp != h || wp != w) {
        q_map = pad2d(q_map, 0, hp - h, 0, wp - w);
        kv_map = pad2d(kv_map, 0, hp - h, 0, wp - w);
    }
    int64_t nw = (hp / n) * (wp / n), t = static_cast<int64_t>(n) * n;
    Tensor qt = window_partition(q_map, n);   // (nw, t, c)
    Tensor kt = window_partition(kv_map, n);
    Tensor q = q_proj.forward(reshape(qt, {nw * t, c}));
    Tensor k = k_proj.forward(reshape(kt, {nw * t, c}));
    Tensor v = v_proj.forward(reshape(kt, {nw * t, c}));

    int64_t dh = c / heads;
    auto split_heads = [&](const Tensor& x) {
        Tensor r = reshape(x, {nw, t, static_cast<int64_t>(heads), dh});
        return reshape(permute(r, {0, 2, 1, 3}), {nw * heads, t, dh});
    };
    Tensor qh = split_heads(q), kh = split_heads(k), vh = split_heads(v);
    Tensor attn = softmax_lastdim(
        mul_scalar(bmm(qh, permute(kh, {0, 2, 1})), 1.0 / std::sqrt(static_cast<double>(dh))));
    Tensor oh = bmm(attn, vh);  // (nw*heads, t, dh)
    Tensor o = reshape(permute(reshape(oh, {nw, static_cast<int64_t>(heads), t, dh}),
                               {0, 2, 1, 3}),
                       {nw * t, c});
    o = out_proj.forward(o);
    Tensor out = window_merge(reshape(o, {nw, t, c}), n, hp, wp, c);
    if (hp != h || wp != w) out = slice(slice(out, 1, 0, h), 2, 0, w);
    return out;
}

}  // namespace modot::nn
