#pragma once

#include "modot/tensor.hpp"

#include <random>
#include <string>
#include <vector>

namespace modot::nn {

// Named parameter registry. Owns nothing beyond the tensor handles; layers
// keep their own copies of the same handles. Names are hierarchical
// ("stage1.encoder.stage0.block0.attn.q.w") so checkpointing and the
// stage-one freeze contract can address whole groups by prefix.
class ParamStore {
public:
    explicit ParamStore(uint64_t seed) : rng_(seed) {}

    Tensor make(const std::string& name, const std::vector<int64_t>& shape, double fan_in);
    Tensor make_const(const std::string& name, const std::vector<int64_t>& shape, double value);

    const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
    std::vector<std::pair<std::string, Tensor>> with_prefix(const std::string& prefix) const;

    std::mt19937_64& rng() { return rng_; }

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    std::mt19937_64 rng_;
};

struct Linear {
    Tensor w;  // (out, in)
    Tensor b;  // (out) or undefined
    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, int64_t in, int64_t out, bool bias = true);
    Tensor forward(const Tensor& x) const;  // x: (T, in)
};

struct Conv2d {
    Tensor w;  // (Cout, Cin, kh, kw)
    Tensor b;
    int stride = 1;
    int pad_h = -1, pad_w = -1;
    Conv2d() = default;
    Conv2d(ParamStore& ps, const std::string& name, int64_t cin, int64_t cout,
           int kh, int kw, int stride = 1, bool bias = true);
    Tensor forward(const Tensor& x) const;
    void zero_init();
};

struct LayerNorm {
    Tensor gamma, beta;
    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& name, int64_t c);
    Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

// Squeeze-excite channel attention: GAP -> fc(C/r) -> ReLU -> fc(C) -> sigmoid.
struct ChannelAttention {
    Linear fc1, fc2;
    ChannelAttention() = default;
    ChannelAttention(ParamStore& ps, const std::string& name, int64_t c, int64_t reduction);
    Tensor forward(const Tensor& x) const;  // (C,H,W) -> weights (C)
};

struct Mlp {
    Linear fc1, fc2;
    Mlp() = default;
    Mlp(ParamStore& ps, const std::string& name, int64_t c, int64_t hidden);
    Tensor forward(const Tensor& x) const;
};

// Non-overlapping N x N window multi-head attention over a (C,H,W) map.
// Queries come from q_src, keys/values from kv_src (equal spatial sizes);
// self-attention is the q_src == kv_src case. Feature maps whose sides are
// not multiples of the window are zero-padded and cropped back.
struct WindowAttention {
    Linear q_proj, k_proj, v_proj, out_proj;
    int window = 4;
    int heads = 2;
    WindowAttention() = default;
    WindowAttention(ParamStore& ps, const std::string& name, int64_t c, int window, int heads);
    Tensor forward(const Tensor& q_src, const Tensor& kv_src) const;
};

// (C,H,W) <-> token helpers
Tensor chw_to_tokens(const Tensor& x);           // (C,H,W) -> (H*W, C)
Tensor tokens_to_chw(const Tensor& t, int64_t h, int64_t w);

}  // namespace modot::nn
