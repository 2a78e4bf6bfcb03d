#include "modot/model.hpp"

#include <cmath>

namespace modot::model {

using nn::Conv2d;
using nn::ParamStore;

ModelConfig ModelConfig::from_json(const Json& m) {
    ModelConfig cfg;
    cfg.max_depth = m.value("max_depth", cfg.max_depth);
    cfg.use_ob = m.value("use_ob", cfg.use_ob);
    cfg.use_casm = m.value("use_casm", cfg.use_casm);
    cfg.use_eip = m.value("use_eip", cfg.use_eip);
    cfg.use_ssr = m.value("use_ssr", cfg.use_ssr);
    if (m.contains("encoder")) {
        const Json& e = m["encoder"];
        cfg.encoder_type = e.value("type", cfg.encoder_type);
        cfg.base_channels = e.value("base_channels", cfg.base_channels);
        cfg.window = e.value("window", cfg.window);
        if (e.contains("depths")) cfg.depths = e["depths"].get<std::vector<int>>();
        if (e.contains("heads")) cfg.heads = e["heads"].get<std::vector<int>>();
    }
    if (m.contains("casm"))
        cfg.casm_reduction = m["casm"].value("reduction", cfg.casm_reduction);
    cfg.validate();
    return cfg;
}

void ModelConfig::validate() const {
    if (max_depth <= 0) throw ConfigError("model.max_depth must be positive");
    if (base_channels < 8 || base_channels % 4 != 0)
        throw ConfigError("encoder base_channels must be >= 8 and divisible by 4");
    if (window < 1) throw ConfigError("encoder window must be >= 1");
    if (depths.size() != 4 || heads.size() != 4)
        throw ConfigError("encoder depths/heads must list exactly 4 stages");
    if (encoder_type != "swin" && encoder_type != "conv")
        throw ConfigError("encoder type must be 'swin' or 'conv'");
    for (int i = 0; i < 4; ++i) {
        if (depths[static_cast<size_t>(i)] < 1 || heads[static_cast<size_t>(i)] < 1)
            throw ConfigError("encoder depths/heads entries must be >= 1");
        if ((base_channels << i) % heads[static_cast<size_t>(i)] != 0)
            throw ConfigError("attention heads must divide stage channels");
    }
    if (casm_reduction < 1 || base_channels % casm_reduction != 0)
        throw ConfigError("casm reduction must divide base_channels");
}

Tensor normalize_image(const Tensor& rgb) {
    return mul_scalar(add_scalar(rgb, -0.5), 4.0);
}

// ------------------------------------------------------------------
// encoder
// ------------------------------------------------------------------

SwinBlock::SwinBlock(ParamStore& ps, const std::string& name, int64_t c, int window,
                     int heads)
    : ln1(ps, name + ".ln1", c),
      ln2(ps, name + ".ln2", c),
      attn(ps, name + ".attn", c, window, heads),
      mlp(ps, name + ".mlp", c, 2 * c) {}

Tensor SwinBlock::forward(const Tensor& x) const {
    int64_t h = x.dim(1), w = x.dim(2);
    Tensor t = nn::chw_to_tokens(x);
    Tensor normed = nn::tokens_to_chw(ln1.forward(t), h, w);
    t = add(t, nn::chw_to_tokens(attn.forward(normed, normed)));
    t = add(t, mlp.forward(ln2.forward(t)));
    return nn::tokens_to_chw(t, h, w);
}

Encoder::Encoder(ParamStore& ps, const std::string& name, const ModelConfig& cfg)
    : type_(cfg.encoder_type), base_(cfg.base_channels) {
    patch_embed_ = Conv2d(ps, name + ".patch_embed", 3, base_, 4, 4, 4);
    patch_embed_.pad_h = patch_embed_.pad_w = 0;
    for (int s = 0; s < 4; ++s) {
        int64_t c = channels(s);
        std::string stage = name + ".stage" + std::to_string(s);
        if (type_ == "swin") {
            for (int b = 0; b < cfg.depths[static_cast<size_t>(s)]; ++b)
                stages_[static_cast<size_t>(s)].emplace_back(
                    ps, stage + ".block" + std::to_string(b), c, cfg.window,
                    cfg.heads[static_cast<size_t>(s)]);
        } else {
            for (int b = 0; b < cfg.depths[static_cast<size_t>(s)]; ++b)
                conv_stages_[static_cast<size_t>(s)].emplace_back(
                    ps, stage + ".conv" + std::to_string(b), c, c, 3, 3);
        }
        if (s < 3) {
            merges_[static_cast<size_t>(s)] =
                Conv2d(ps, name + ".merge" + std::to_string(s), c, 2 * c, 2, 2, 2);
            merges_[static_cast<size_t>(s)].pad_h = merges_[static_cast<size_t>(s)].pad_w = 0;
        }
    }
}

FeaturePyramid Encoder::encode(const Tensor& image) const {
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw ConfigError("encoder expects a (3,H,W) image");
    if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0)
        throw ConfigError("encoder input sides must be divisible by 32, got " +
                          std::to_string(image.dim(1)) + "x" + std::to_string(image.dim(2)));
    FeaturePyramid p;
    Tensor x = patch_embed_.forward(image);
    for (int s = 0; s < 4; ++s) {
        if (type_ == "swin") {
            for (const auto& blk : stages_[static_cast<size_t>(s)]) x = blk.forward(x);
        } else {
            for (const auto& cv : conv_stages_[static_cast<size_t>(s)])
                x = relu(add(cv.forward(x), x));
        }
        p.levels[static_cast<size_t>(s)] = x;
        if (s < 3) x = merges_[static_cast<size_t>(s)].forward(x);
    }
    return p;
}

// ------------------------------------------------------------------
// CASM
// ------------------------------------------------------------------

Casm::Casm(ParamStore& ps, const std::string& name, int64_t in_d, int64_t in_ob,
           int64_t c_prime, int64_t reduction)
    : proj_d(ps, name + ".proj_d", in_d, c_prime, 1, 1),
      proj_ob(ps, name + ".proj_ob", in_ob, c_prime, 1, 1),
      att_d(ps, name + ".att_d", c_prime, reduction),
      att_ob(ps, name + ".att_ob", c_prime, reduction),
      fuse(ps, name + ".fuse", 5 * c_prime, c_prime, 1, 1),
      out_channels(static_cast<int>(c_prime)) {
    const int ks[5][2] = {{1, 7}, {7, 1}, {1, 11}, {11, 1}, {3, 3}};
    for (int b = 0; b < 5; ++b)
        branches[static_cast<size_t>(b)] =
            Conv2d(ps, name + ".branch" + std::to_string(b), 2 * c_prime, c_prime,
                   ks[b][0], ks[b][1]);
}

std::vector<Tensor> Casm::mss_branch_outputs(const Tensor& f_cat) const {
    std::vector<Tensor> outs;
    outs.reserve(5);
    for (const auto& b : branches) outs.push_back(b.forward(f_cat));
    return outs;
}

Tensor Casm::mss_fuse(const Tensor& f_cat) const {
    if (f_cat.dim(0) != 2 * out_channels)
        throw TensorError("mss_fuse: expected 2*C' input channels");
    return fuse.forward(concat(mss_branch_outputs(f_cat), 0));
}

std::pair<Tensor, Tensor> Casm::forward(const Tensor& f_d, const Tensor& f_ob,
                                        const CasmOverrides& ov) const {
    if (f_d.dim(1) != f_ob.dim(1) || f_d.dim(2) != f_ob.dim(2))
        throw TensorError("casm: depth and OB inputs must share spatial size");
    int64_t h2 = f_d.dim(1) * 2, w2 = f_d.dim(2) * 2;
    Tensor fd = proj_d.forward(upsample_bilinear(f_d, h2, w2));
    Tensor fob = proj_ob.forward(upsample_bilinear(f_ob, h2, w2));

    Tensor w_d = att_d.forward(fd);
    Tensor w_ob = ov.unit_w_ob ? Tensor::full({fd.dim(0)}, 1.0) : att_ob.forward(fob);

    Tensor f_d_ob = scale_channels(fd, w_ob);   // boundary-salient depth features
    Tensor f_ob_d = scale_channels(fob, w_d);   // depth-aware boundary features

    Tensor mssf = ov.zero_mssf ? Tensor::zeros({fd.dim(0), h2, w2})
                               : mss_fuse(concat({fd, fob}, 0));
    return {add(mssf, f_d_ob), f_ob_d};
}

// ------------------------------------------------------------------
// PPM / decoder blocks / EIP
// ------------------------------------------------------------------

constexpr int Ppm::kGrids[4];

Ppm::Ppm(ParamStore& ps, const std::string& name, int64_t c)
    : fuse(ps, name + ".fuse", c + 4 * (c / 4), c, 1, 1) {
    for (int i = 0; i < 4; ++i)
        proj[static_cast<size_t>(i)] =
            Conv2d(ps, name + ".proj" + std::to_string(i), c, c / 4, 1, 1);
}

Tensor Ppm::forward(const Tensor& top) const {
    int64_t h = top.dim(1), w = top.dim(2);
    std::vector<Tensor> parts{top};
    for (int i = 0; i < 4; ++i) {
        Tensor pooled = adaptive_avg_pool(top, kGrids[i], kGrids[i]);
        parts.push_back(upsample_bilinear(proj[static_cast<size_t>(i)].forward(pooled), h, w));
    }
    return fuse.forward(concat(parts, 0));
}

DepthDecoderBlock::DepthDecoderBlock(ParamStore& ps, const std::string& name,
                                     int64_t in_ch, int64_t skip_ch, int window, int heads)
    : proj_in(ps, name + ".proj_in", in_ch, skip_ch, 1, 1),
      attn(ps, name + ".attn", skip_ch, window, heads) {}

Tensor DepthDecoderBlock::forward(const Tensor& f_in, const Tensor& skip) const {
    Tensor r = proj_in.forward(upsample_bilinear(f_in, skip.dim(1), skip.dim(2)));
    return add(r, attn.forward(r, skip));
}

ObDecoderBlock::ObDecoderBlock(ParamStore& ps, const std::string& name, int64_t in_ch) {
    if (in_ch % 2 != 0)
        throw ConfigError("ob decoder block needs an even channel count, got " +
                          std::to_string(in_ch));
    halve = Conv2d(ps, name + ".halve", in_ch, in_ch / 2, 1, 1);
    conv1 = Conv2d(ps, name + ".conv1", in_ch / 2, in_ch / 2, 3, 3);
    conv2 = Conv2d(ps, name + ".conv2", in_ch / 2, in_ch / 2, 3, 3);
    side = Conv2d(ps, name + ".side", in_ch / 2, 1, 1, 1);
}

std::pair<Tensor, Tensor> ObDecoderBlock::forward(const Tensor& x, int64_t full_h,
                                                  int64_t full_w) const {
    Tensor y = relu(conv2.forward(relu(conv1.forward(halve.forward(x)))));
    Tensor up = upsample_bilinear(y, y.dim(1) * 2, y.dim(2) * 2);
    Tensor side_logit = upsample_bilinear(side.forward(y), full_h, full_w);
    return {up, side_logit};
}

Eip::Eip(ParamStore& ps, const std::string& name, int64_t c, int64_t skip_ch)
    : stem1(ps, name + ".stem1", 3, c, 3, 3),
      stem2(ps, name + ".stem2", c, c, 3, 3),
      spatial_conv(ps, name + ".spatial", 2, 1, 7, 7),
      channel_att(ps, name + ".channel", c, 4),
      fuse(ps, name + ".fuse", 2 * c, c, 1, 1),
      merge(ps, name + ".merge", c + skip_ch, c, 3, 3),
      head(ps, name + ".head", c, 1, 1, 1) {}

namespace {

// Multiplies (C,H,W) features by a (1,H,W) attention map.
Tensor spatial_scale(const Tensor& x, const Tensor& a) {
    std::vector<Tensor> copies(static_cast<size_t>(x.dim(0)), a);
    return mul(x, concat(copies, 0));
}

}  // namespace

Tensor Eip::forward(const Tensor& image, const Tensor& f_ob_skip) const {
    if (!f_ob_skip.defined())
        throw ConfigError("EIP requires OB decoder skip features in stage-one mode");
    Tensor s = relu(stem2.forward(relu(stem1.forward(image))));
    Tensor stats = concat({channel_mean(s), channel_max(s)}, 0);
    Tensor att_map = sigmoid(spatial_conv.forward(stats));
    Tensor enhanced_sp = spatial_scale(s, att_map);
    Tensor enhanced_ch = scale_channels(s, channel_att.forward(s));
    Tensor fused = fuse.forward(concat({enhanced_sp, enhanced_ch}, 0));
    Tensor merged = relu(merge.forward(concat({fused, f_ob_skip}, 0)));
    return head.forward(merged);
}

// ------------------------------------------------------------------
// SSR
// ------------------------------------------------------------------

Ssr::Ssr(ParamStore& ps, const std::string& name, const ModelConfig& cfg,
         int64_t f_depth_ch, int64_t f_ob_ch)
    : stem1(ps, name + ".stem1", 3, cfg.base_channels, 3, 3),
      stem2(ps, name + ".stem2", cfg.base_channels, cfg.base_channels, 3, 3),
      casm(ps, name + ".casm", f_depth_ch, f_ob_ch, cfg.base_channels, cfg.casm_reduction),
      fuse_d(ps, name + ".fuse_d", 2 * cfg.base_channels, cfg.base_channels, 3, 3),
      fuse_ob(ps, name + ".fuse_ob", 2 * cfg.base_channels, cfg.base_channels, 3, 3),
      head_d(ps, name + ".head_d", cfg.base_channels, 1, 1, 1),
      head_ob(ps, name + ".head_ob", cfg.base_channels, 1, 1, 1) {
    // residual heads start at zero so stage two opens as a pass-through
    head_d.zero_init();
    head_ob.zero_init();
}

// ------------------------------------------------------------------
// full model
// ------------------------------------------------------------------

int MoDOTModel::casm_out_channels(int level) const {
    return cfg_.base_channels << std::max(0, level - 1);
}

int MoDOTModel::f_depth_channels() const { return casm_out_channels(0); }
int MoDOTModel::f_ob_channels() const { return 3 * cfg_.base_channels / 2; }

MoDOTModel::MoDOTModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg), params_(seed) {
    cfg_.validate();
    const int C = cfg_.base_channels;
    encoder_ = std::make_unique<Encoder>(params_, "stage1.encoder", cfg_);
    ppm_ = Ppm(params_, "stage1.ppm", 8 * C);

    for (int i = 0; i < 4; ++i) {
        int64_t in_ch = i == 3 ? 8 * C : casm_out_channels(i + 1);
        int64_t skip_ch = encoder_->channels(i);
        depth_blocks_[static_cast<size_t>(i)] =
            DepthDecoderBlock(params_, "stage1.depth_block" + std::to_string(i), in_ch,
                              skip_ch, cfg_.window, cfg_.heads[static_cast<size_t>(i)]);
        if (cfg_.use_casm) {
            casms_[static_cast<size_t>(i)] =
                Casm(params_, "stage1.casm" + std::to_string(i), skip_ch, skip_ch,
                     casm_out_channels(i), cfg_.casm_reduction);
        } else {
            bridge_d_[static_cast<size_t>(i)] =
                Conv2d(params_, "stage1.bridge_d" + std::to_string(i), skip_ch,
                       casm_out_channels(i), 1, 1);
            if (cfg_.use_ob)
                bridge_ob_[static_cast<size_t>(i)] =
                    Conv2d(params_, "stage1.bridge_ob" + std::to_string(i), skip_ch,
                           casm_out_channels(i), 1, 1);
        }
    }

    if (cfg_.use_ob) {
        ob_seed_ = Conv2d(params_, "stage1.ob_seed", 8 * C, 8 * C, 1, 1);
        // chain widths: prev-out + CASM feed, halved by each block
        int64_t in0 = 8 * C;
        int64_t ins[5] = {in0,
                          in0 / 2 + casm_out_channels(3),
                          (in0 / 2 + casm_out_channels(3)) / 2 + casm_out_channels(2),
                          0, 0};
        ins[3] = ins[2] / 2 + casm_out_channels(1);
        ins[4] = ins[3] / 2 + casm_out_channels(0);
        for (int j = 0; j < 5; ++j)
            ob_blocks_[static_cast<size_t>(j)] =
                ObDecoderBlock(params_, "stage1.ob_block" + std::to_string(j), ins[j]);
        if (cfg_.use_eip)
            eip_ = Eip(params_, "stage1.eip", C, ins[4] / 2);
        else
            ob_head_plain_ = Conv2d(params_, "stage1.ob_head", ins[4] / 2, 1, 1, 1);
    }

    depth_head_ = Conv2d(params_, "stage1.depth_head", casm_out_channels(0), 1, 1, 1);

    if (cfg_.use_ssr && cfg_.use_ob)
        ssr_.emplace(params_, "ssr", cfg_, f_depth_channels(), f_ob_channels());
}

Stage1Output MoDOTModel::stage1_forward(const Tensor& image) const {
    const int64_t H = image.dim(1), W = image.dim(2);
    Tensor x = normalize_image(image);
    FeaturePyramid pyr = encoder_->encode(x);

    Stage1Output out;
    Tensor d = ppm_.forward(pyr.levels[3]);
    Tensor ob_f;
    if (cfg_.use_ob) {
        auto [f, side] = ob_blocks_[0].forward(relu(ob_seed_.forward(pyr.levels[3])), H, W);
        ob_f = f;
        out.ob_side_logits.push_back(side);
    }
    for (int i = 3; i >= 0; --i) {
        d = depth_blocks_[static_cast<size_t>(i)].forward(d, pyr.levels[static_cast<size_t>(i)]);
        Tensor fd, fob;
        if (cfg_.use_casm) {
            std::tie(fd, fob) =
                casms_[static_cast<size_t>(i)].forward(d, pyr.levels[static_cast<size_t>(i)]);
        } else {
            Tensor d_up = upsample_bilinear(d, d.dim(1) * 2, d.dim(2) * 2);
            fd = bridge_d_[static_cast<size_t>(i)].forward(d_up);
            if (cfg_.use_ob) {
                const Tensor& p = pyr.levels[static_cast<size_t>(i)];
                fob = bridge_ob_[static_cast<size_t>(i)].forward(
                    upsample_bilinear(p, p.dim(1) * 2, p.dim(2) * 2));
            }
        }
        if (cfg_.use_ob) {
            auto [f, side] =
                ob_blocks_[static_cast<size_t>(4 - i)].forward(concat({ob_f, fob}, 0), H, W);
            ob_f = f;
            out.ob_side_logits.push_back(side);
        }
        d = fd;
    }

    out.f_depth_last = d;
    out.depth_logit = upsample_bilinear(depth_head_.forward(d), H, W);
    out.depth = reshape(mul_scalar(sigmoid(out.depth_logit), cfg_.max_depth), {H, W});

    if (cfg_.use_ob) {
        out.f_ob_last = ob_f;
        out.ob_logit_final = cfg_.use_eip ? eip_.forward(x, ob_f)
                                          : ob_head_plain_.forward(ob_f);
        out.ob_prob_final = reshape(sigmoid(out.ob_logit_final), {H, W});
        for (const Tensor& s : out.ob_side_logits)
            out.ob_side_probs.push_back(reshape(sigmoid(s), {H, W}));
    }
    return out;
}

Stage2Output MoDOTModel::ssr_forward(const Tensor& image, const Stage1Output& s1) const {
    if (!ssr_) throw ConfigError("model was built without SSR (model.use_ssr/use_ob)");
    const int64_t H = image.dim(1), W = image.dim(2);
    Tensor x = normalize_image(image);
    const Ssr& ssr = *ssr_;
    Tensor s = relu(ssr.stem2.forward(relu(ssr.stem1.forward(x))));
    Tensor ob_half = adaptive_avg_pool(s1.f_ob_last, H / 2, W / 2);
    auto [rd, rob] = ssr.casm.forward(s1.f_depth_last, ob_half);
    Tensor d_feat = relu(ssr.fuse_d.forward(concat({rd, s}, 0)));
    Tensor ob_feat = relu(ssr.fuse_ob.forward(concat({rob, s}, 0)));

    Stage2Output out;
    out.depth_logit = add(ssr.head_d.forward(d_feat), s1.depth_logit);
    out.depth = reshape(mul_scalar(sigmoid(out.depth_logit), cfg_.max_depth), {H, W});
    out.ob_logit = add(ssr.head_ob.forward(ob_feat), s1.ob_logit_final);
    out.ob_prob = reshape(sigmoid(out.ob_logit), {H, W});
    return out;
}

}  // namespace modot::model
