#pragma once

#include "modot/config.hpp"
#include "modot/errors.hpp"
#include "modot/nn.hpp"
#include "modot/tensor.hpp"

#include <array>
#include <memory>
#include <optional>
#include <vector>

namespace modot::model {

struct ModelConfig {
    double max_depth = 10.0;
    bool use_ob = true;
    bool use_casm = true;
    bool use_eip = true;
    bool use_ssr = true;
    std::string encoder_type = "swin";  // "swin" | "conv"
    int base_channels = 16;
    int window = 4;
    std::vector<int> depths{2, 2, 2, 2};
    std::vector<int> heads{1, 2, 2, 4};
    int casm_reduction = 4;

    static ModelConfig from_json(const Json& model_json);
    void validate() const;
};

// Four levels at strides 4/8/16/32 with doubling channel widths.
struct FeaturePyramid {
    std::array<Tensor, 4> levels;
};

// ------------------------------------------------------------------
// shared encoder
// ------------------------------------------------------------------

struct SwinBlock {
    nn::LayerNorm ln1, ln2;
    nn::WindowAttention attn;
    nn::Mlp mlp;
    SwinBlock() = default;
    SwinBlock(nn::ParamStore& ps, const std::string& name, int64_t c, int window, int heads);
    Tensor forward(const Tensor& x) const;  // (C,H,W) -> (C,H,W)
};

class Encoder {
public:
    Encoder(nn::ParamStore& ps, const std::string& name, const ModelConfig& cfg);
    FeaturePyramid encode(const Tensor& image) const;  // (3,H,W), H,W % 32 == 0
    int channels(int level) const { return base_ << level; }

private:
    std::string type_;
    int base_;
    nn::Conv2d patch_embed_;                     // 4x4 stride 4
    std::array<nn::Conv2d, 3> merges_;           // 2x2 stride 2
    std::array<std::vector<SwinBlock>, 4> stages_;
    std::array<std::vector<nn::Conv2d>, 4> conv_stages_;  // conv fallback
};

// ------------------------------------------------------------------
// CASM
// ------------------------------------------------------------------

struct CasmOverrides {
    bool zero_mssf = false;   // test hook: force F_MSSF to zero
    bool unit_w_ob = false;   // test hook: force W_OB to all-ones
};

struct Casm {
    nn::Conv2d proj_d, proj_ob;            // 1x1 channel alignment to C'
    nn::ChannelAttention att_d, att_ob;
    std::array<nn::Conv2d, 5> branches;    // 1x7, 7x1, 1x11, 11x1, 3x3
    nn::Conv2d fuse;                       // 1x1 over concatenated branches
    int out_channels = 0;

    Casm() = default;
    Casm(nn::ParamStore& ps, const std::string& name, int64_t in_d, int64_t in_ob,
         int64_t c_prime, int64_t reduction);

    Tensor mss_fuse(const Tensor& f_cat) const;
    std::vector<Tensor> mss_branch_outputs(const Tensor& f_cat) const;  // pre-fusion
    // (F_D, F_OB) at equal spatial size -> (F~_D, F~_OB), both 2x spatial, C'.
    std::pair<Tensor, Tensor> forward(const Tensor& f_d, const Tensor& f_ob,
                                      const CasmOverrides& ov = {}) const;
};

// ------------------------------------------------------------------
// decoders and heads
// ------------------------------------------------------------------

struct Ppm {
    std::array<nn::Conv2d, 4> proj;  // per pooled grid
    nn::Conv2d fuse;
    static constexpr int kGrids[4] = {1, 2, 3, 6};
    Ppm() = default;
    Ppm(nn::ParamStore& ps, const std::string& name, int64_t c);
    Tensor forward(const Tensor& top) const;
};

// Windowed cross-attention block: queries from the decoder path, keys and
// values from the encoder skip, inside non-overlapping windows.
struct DepthDecoderBlock {
    nn::Conv2d proj_in;       // 1x1 to the skip width
    nn::WindowAttention attn;
    DepthDecoderBlock() = default;
    DepthDecoderBlock(nn::ParamStore& ps, const std::string& name, int64_t in_ch,
                      int64_t skip_ch, int window, int heads);
    Tensor forward(const Tensor& f_in, const Tensor& skip) const;
};

struct ObDecoderBlock {
    nn::Conv2d halve;         // 1x1, channels / 2
    nn::Conv2d conv1, conv2;  // dual 3x3
    nn::Conv2d side;          // 1x1 -> 1 channel
    ObDecoderBlock() = default;
    ObDecoderBlock(nn::ParamStore& ps, const std::string& name, int64_t in_ch);
    // Returns (2x-upsampled features, side logit at full resolution).
    std::pair<Tensor, Tensor> forward(const Tensor& x, int64_t full_h, int64_t full_w) const;
};

struct Eip {
    nn::Conv2d stem1, stem2;
    nn::Conv2d spatial_conv;  // 7x7 over pooled channel statistics
    nn::ChannelAttention channel_att;
    nn::Conv2d fuse;          // adaptive fusion of the two enhanced maps
    nn::Conv2d merge;         // progressive decoding with the OB-decoder skip
    nn::Conv2d head;
    Eip() = default;
    Eip(nn::ParamStore& ps, const std::string& name, int64_t c, int64_t skip_ch);
    Tensor forward(const Tensor& image, const Tensor& f_ob_skip) const;  // full-res logit
};

struct Stage1Output {
    Tensor depth;                     // (H,W) meters, in (0, max_depth)
    Tensor depth_logit;               // (1,H,W) pre-squash, full res
    Tensor ob_prob_final;             // (H,W) in [0,1]
    Tensor ob_logit_final;            // (1,H,W)
    std::vector<Tensor> ob_side_probs;
    std::vector<Tensor> ob_side_logits;
    Tensor f_depth_last;              // from the final CASM
    Tensor f_ob_last;                 // from the last OB decoder block
};

struct Stage2Output {
    Tensor depth;
    Tensor depth_logit;
    Tensor ob_prob;
    Tensor ob_logit;
};

struct Ssr {
    nn::Conv2d stem1, stem2;
    Casm casm;
    nn::Conv2d fuse_d, fuse_ob;
    nn::Conv2d head_d, head_ob;  // zero-initialized: stage two starts as pass-through
    Ssr() = default;
    Ssr(nn::ParamStore& ps, const std::string& name, const ModelConfig& cfg,
        int64_t f_depth_ch, int64_t f_ob_ch);
};

class MoDOTModel {
public:
    MoDOTModel(const ModelConfig& cfg, uint64_t seed);

    Stage1Output stage1_forward(const Tensor& image) const;  // (3,H,W) in [0,1]
    Stage2Output ssr_forward(const Tensor& image, const Stage1Output& s1) const;

    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }
    const ModelConfig& config() const { return cfg_; }
    const Encoder& encoder() const { return *encoder_; }

    int f_depth_channels() const;
    int f_ob_channels() const;

private:
    int casm_out_channels(int level) const;  // C' per pyramid level

    ModelConfig cfg_;
    nn::ParamStore params_;
    std::unique_ptr<Encoder> encoder_;
    Ppm ppm_;
    std::array<DepthDecoderBlock, 4> depth_blocks_;
    std::array<Casm, 4> casms_;
    std::array<nn::Conv2d, 4> bridge_d_, bridge_ob_;  // plain paths when CASM is off
    nn::Conv2d ob_seed_;                              // projects top features for OB block 1
    std::array<ObDecoderBlock, 5> ob_blocks_;
    Eip eip_;
    nn::Conv2d ob_head_plain_;                        // final OB head when EIP is off
    nn::Conv2d depth_head_;
    std::optional<Ssr> ssr_;
};

// Normalizes an RGB tensor in [0,1] to zero mean / unit scale per channel.
Tensor normalize_image(const Tensor& rgb);

}  // namespace modot::model
