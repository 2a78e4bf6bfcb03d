#include "modot/model.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace modot;
using namespace modot::model;

namespace {

Tensor rand_image(int64_t side, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(0.05, 0.95);
    std::vector<double> v(static_cast<size_t>(3 * side * side));
    for (auto& x : v) x = d(rng);
    return Tensor::from_data({3, side, side}, std::move(v));
}

Tensor rand_feat(const std::vector<int64_t>& shape, uint64_t seed, bool rg = false) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    size_t n = 1;
    for (auto s : shape) n *= static_cast<size_t>(s);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return Tensor::from_data(shape, std::move(v), rg);
}

ModelConfig small_cfg() {
    ModelConfig cfg;
    cfg.base_channels = 8;
    cfg.depths = {1, 1, 1, 1};
    cfg.heads = {1, 1, 2, 2};
    return cfg;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= a.size();
    mb /= b.size();
    double num = 0, da = 0, db = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - ma) * (b[i] - mb);
        da += (a[i] - ma) * (a[i] - ma);
        db += (b[i] - mb) * (b[i] - mb);
    }
    double den = std::sqrt(da * db);
    return den > 0 ? num / den : 1.0;  // exact pass-through has zero spread of diff
}

}  // namespace

TEST_CASE("encoder shape law at 64 with C=16") {
    ModelConfig cfg;
    nn::ParamStore ps(1);
    Encoder enc(ps, "enc", cfg);
    NoGradGuard g;
    auto pyr = enc.encode(rand_image(64, 2));
    int64_t sides[4] = {16, 8, 4, 2}, chans[4] = {16, 32, 64, 128};
    for (int i = 0; i < 4; ++i) {
        CHECK(pyr.levels[static_cast<size_t>(i)].dim(0) == chans[i]);
        CHECK(pyr.levels[static_cast<size_t>(i)].dim(1) == sides[i]);
        CHECK(pyr.levels[static_cast<size_t>(i)].dim(2) == sides[i]);
    }
}

TEST_CASE("encoder rejects bad sides, conv fallback works, zero image finite") {
    ModelConfig cfg = small_cfg();
    nn::ParamStore ps(1);
    Encoder enc(ps, "enc", cfg);
    CHECK_THROWS_AS(enc.encode(Tensor::zeros({3, 60, 64})), ConfigError);
    NoGradGuard g;
    auto pyr = enc.encode(Tensor::zeros({3, 64, 64}));
    for (const auto& l : pyr.levels)
        for (double v : l.data()) CHECK(std::isfinite(v));

    ModelConfig cc = small_cfg();
    cc.encoder_type = "conv";
    nn::ParamStore ps2(1);
    Encoder enc2(ps2, "enc", cc);
    auto pyr2 = enc2.encode(rand_image(64, 3));
    CHECK(pyr2.levels[3].dim(0) == 64);
    CHECK(pyr2.levels[3].dim(1) == 2);
}

TEST_CASE("encoder determinism and gradient liveness") {
    ModelConfig cfg = small_cfg();
    nn::ParamStore ps(9);
    Encoder enc(ps, "stage1.encoder", cfg);
    Tensor img = rand_image(64, 4);
    {
        NoGradGuard g;
        auto a = enc.encode(img);
        auto b = enc.encode(img);
        for (int i = 0; i < 4; ++i)
            CHECK(a.levels[static_cast<size_t>(i)].data() ==
                  b.levels[static_cast<size_t>(i)].data());
    }
    auto pyr = enc.encode(img);
    sum(pyr.levels[3]).backward();
    int live = 0, total = 0;
    for (const auto& [name, t] : ps.with_prefix("stage1.encoder")) {
        ++total;
        Tensor tt = t;
        bool any = false;
        for (double gv : tt.node()->grad) any |= gv != 0.0;
        live += any;
    }
    CHECK(total > 0);
    CHECK(static_cast<double>(live) / total >= 0.99);
}

TEST_CASE("channel attention: range, constant-input pooling identity, direct oracle") {
    nn::ParamStore ps(5);
    nn::ChannelAttention att(ps, "att", 16, 4);
    NoGradGuard g;
    Tensor x = rand_feat({16, 8, 8}, 6);
    Tensor w = att.forward(x);
    REQUIRE(w.numel() == 16);
    for (double v : w.data()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    // spatially constant input equals its 1x1 pooled equivalent
    Tensor cvals = rand_feat({16, 1, 1}, 7);
    std::vector<double> big(16 * 4 * 4);
    for (int c = 0; c < 16; ++c)
        for (int i = 0; i < 16; ++i)
            big[static_cast<size_t>(c) * 16 + i] = cvals.data()[static_cast<size_t>(c)];
    Tensor wc = att.forward(Tensor::from_data({16, 4, 4}, big));
    Tensor w1 = att.forward(cvals);
    for (int c = 0; c < 16; ++c)
        CHECK(wc.data()[static_cast<size_t>(c)] ==
              doctest::Approx(w1.data()[static_cast<size_t>(c)]).epsilon(1e-12));

    // hand-rolled pool -> affine -> relu -> affine -> sigmoid
    std::vector<double> pooled(16, 0.0);
    for (int c = 0; c < 16; ++c) {
        for (int i = 0; i < 64; ++i) pooled[static_cast<size_t>(c)] +=
            x.data()[static_cast<size_t>(c) * 64 + i];
        pooled[static_cast<size_t>(c)] /= 64.0;
    }
    std::vector<double> hid(4, 0.0);
    for (int o = 0; o < 4; ++o) {
        double acc = att.fc1.b.data()[static_cast<size_t>(o)];
        for (int c = 0; c < 16; ++c)
            acc += att.fc1.w.data()[static_cast<size_t>(o) * 16 + c] *
                   pooled[static_cast<size_t>(c)];
        hid[static_cast<size_t>(o)] = std::max(0.0, acc);
    }
    for (int o = 0; o < 16; ++o) {
        double acc = att.fc2.b.data()[static_cast<size_t>(o)];
        for (int c = 0; c < 4; ++c)
            acc += att.fc2.w.data()[static_cast<size_t>(o) * 4 + c] *
                   hid[static_cast<size_t>(c)];
        double ref = 1.0 / (1.0 + std::exp(-acc));
        CHECK(w.data()[static_cast<size_t>(o)] == doctest::Approx(ref).epsilon(1e-6));
    }
    CHECK_THROWS_AS(nn::ChannelAttention(ps, "bad", 10, 4), TensorError);
}

TEST_CASE("casm: shape law, cross-gradients, identity composition") {
    nn::ParamStore ps(3);
    Casm casm(ps, "casm", 12, 10, 8, 4);
    Tensor fd = rand_feat({12, 8, 8}, 11, true);
    Tensor fob = rand_feat({10, 8, 8}, 12, true);
    auto [td, tob] = casm.forward(fd, fob);
    CHECK(td.dim(0) == 8);
    CHECK(td.dim(1) == 16);
    CHECK(tob.dim(0) == 8);
    CHECK(tob.dim(2) == 16);

    sum(td).backward();
    bool cross_d = false;
    for (double g : fob.node()->grad) cross_d |= g != 0.0;
    CHECK(cross_d);  // F~_D depends on F_OB

    fd.zero_grad();
    fob.zero_grad();
    auto [td2, tob2] = casm.forward(fd, fob);
    sum(tob2).backward();
    bool cross_ob = false;
    for (double g : fd.node()->grad) cross_ob |= g != 0.0;
    CHECK(cross_ob);  // F~_OB depends on F_D

    // zero MSS-Fuse + unit W_OB reduces the depth path to its projection
    NoGradGuard g;
    CasmOverrides ov;
    ov.zero_mssf = true;
    ov.unit_w_ob = true;
    auto [ident, unused] = casm.forward(fd, fob, ov);
    Tensor fprime = casm.proj_d.forward(upsample_bilinear(fd, 16, 16));
    for (size_t i = 0; i < ident.data().size(); ++i)
        CHECK(ident.data()[i] == doctest::Approx(fprime.data()[i]).epsilon(1e-12));

    CHECK_THROWS_AS(casm.forward(rand_feat({12, 8, 8}, 1), rand_feat({10, 4, 4}, 2)),
                    TensorError);
}

TEST_CASE("mss_fuse: shape preservation, zero linearity, strip anisotropy") {
    nn::ParamStore ps(4);
    Casm casm(ps, "casm", 8, 8, 8, 4);
    NoGradGuard g;
    Tensor f_cat = rand_feat({16, 10, 10}, 13);
    Tensor fused = casm.mss_fuse(f_cat);
    CHECK(fused.dim(0) == 8);
    CHECK(fused.dim(1) == 10);
    CHECK(fused.dim(2) == 10);

    // all-ones-kernel configuration: a horizontal line drives the 1xk branches harder
    auto energy = [](const Tensor& t) {
        double e = 0;
        for (double v : t.data()) e += v * v;
        return e;
    };
    Tensor line = Tensor::zeros({16, 11, 11});
    for (int c = 0; c < 16; ++c)
        for (int j = 0; j < 11; ++j)
            line.data()[static_cast<size_t>(c * 11 + 5) * 11 + j] = 1.0;
    Casm ones(ps, "ones", 8, 8, 8, 4);
    for (auto& br : ones.branches) {
        for (auto& v : br.w.data()) v = 1.0;
        for (auto& v : br.b.data()) v = 0.0;
    }
    auto outs = ones.mss_branch_outputs(line);
    CHECK(energy(outs[0]) > energy(outs[1]));  // 1x7 vs 7x1
    CHECK(energy(outs[2]) > energy(outs[3]));  // 1x11 vs 11x1

    // zero input, zero bias -> zero output
    auto zouts = ones.mss_branch_outputs(Tensor::zeros({16, 9, 9}));
    for (const auto& o : zouts)
        for (double v : o.data()) CHECK(v == 0.0);

    // transposing the input and swapping 1xk <-> kx1 weights transposes outputs
    Tensor x = rand_feat({16, 7, 9}, 14);
    Tensor xt = permute(x, {0, 2, 1});
    for (int pair = 0; pair < 2; ++pair) {
        const auto& bh = casm.branches[static_cast<size_t>(2 * pair)];      // 1xk
        const auto& bv = casm.branches[static_cast<size_t>(2 * pair + 1)];  // kx1
        Tensor wt = permute(bh.w, {0, 1, 3, 2});
        Tensor yh = conv2d(x, bh.w, bh.b);
        Tensor yswap = conv2d(xt, wt, bh.b);
        Tensor yh_t = permute(yh, {0, 2, 1});
        for (size_t i = 0; i < yh_t.data().size(); ++i)
            CHECK(yswap.data()[i] == doctest::Approx(yh_t.data()[i]).epsilon(1e-12));
        CHECK(bv.w.dim(2) == bh.w.dim(3));  // the paired branch is the transposed shape
    }
}

TEST_CASE("ppm: declared grids, constant pooling, shape preservation") {
    CHECK(Ppm::kGrids[0] == 1);
    CHECK(Ppm::kGrids[1] == 2);
    CHECK(Ppm::kGrids[2] == 3);
    CHECK(Ppm::kGrids[3] == 6);
    nn::ParamStore ps(6);
    Ppm ppm(ps, "ppm", 32);
    NoGradGuard g;
    Tensor x = rand_feat({32, 12, 12}, 15);
    Tensor y = ppm.forward(x);
    CHECK(y.dim(0) == 32);
    CHECK(y.dim(1) == 12);
    CHECK(y.dim(2) == 12);
    // constant input: every pooled branch reproduces the constant per channel
    Tensor c = Tensor::full({32, 12, 12}, 3.25);
    for (int grid : {1, 2, 3, 6}) {
        Tensor pooled = adaptive_avg_pool(c, grid, grid);
        for (double v : pooled.data()) CHECK(v == doctest::Approx(3.25).epsilon(1e-12));
    }
    // works at tiny sides too (level-3 side of a 64 input is 2)
    CHECK_NOTHROW(ppm.forward(rand_feat({32, 2, 2}, 16)));
}

TEST_CASE("depth decoder block: window normalization and zero-skip identity") {
    nn::ParamStore ps(7);
    DepthDecoderBlock blk(ps, "blk", 12, 8, 4, 2);
    NoGradGuard g;
    Tensor f_in = rand_feat({12, 4, 4}, 17);
    Tensor skip = rand_feat({8, 8, 8}, 18);
    Tensor out = blk.forward(f_in, skip);
    CHECK(out.dim(0) == 8);
    CHECK(out.dim(1) == 8);

    // zero skip + zero value-projection bias leaves only the residual path
    for (auto& v : blk.attn.v_proj.b.data()) v = 0.0;
    Tensor out0 = blk.forward(f_in, Tensor::zeros({8, 8, 8}));
    Tensor r = blk.proj_in.forward(upsample_bilinear(f_in, 8, 8));
    for (size_t i = 0; i < r.data().size(); ++i)
        CHECK(out0.data()[i] == doctest::Approx(r.data()[i]).epsilon(1e-12));
}

TEST_CASE("ob decoder block halves channels, doubles size, full-res side output") {
    nn::ParamStore ps(8);
    ObDecoderBlock blk(ps, "ob", 64);
    NoGradGuard g;
    auto [next, side] = blk.forward(rand_feat({64, 16, 16}, 19), 512, 512);
    CHECK(next.dim(0) == 32);
    CHECK(next.dim(1) == 32);
    CHECK(next.dim(2) == 32);
    CHECK(side.dim(0) == 1);
    CHECK(side.dim(1) == 512);
    CHECK(side.dim(2) == 512);
    CHECK_THROWS_AS(ObDecoderBlock(ps, "odd", 7), ConfigError);
}

TEST_CASE("eip: shape, attention range, stem path liveness, missing skip") {
    nn::ParamStore ps(10);
    Eip eip(ps, "eip", 8, 12);
    Tensor img = rand_image(32, 20);
    Tensor skip = rand_feat({12, 32, 32}, 21);
    Tensor logit = eip.forward(img, skip);
    CHECK(logit.dim(0) == 1);
    CHECK(logit.dim(1) == 32);
    CHECK(logit.dim(2) == 32);
    mean(logit).backward();
    bool live = false;
    for (double g : Tensor(eip.stem1.w).node()->grad) live |= g != 0.0;
    CHECK(live);
    CHECK_THROWS_AS(eip.forward(img, Tensor()), ConfigError);
}

TEST_CASE("stage1_forward: shape law, ranges, five sides, determinism") {
    ModelConfig cfg = small_cfg();
    MoDOTModel m(cfg, 3);
    Tensor img = rand_image(64, 22);
    NoGradGuard g;
    Stage1Output a = m.stage1_forward(img);
    CHECK(a.depth.dim(0) == 64);
    CHECK(a.depth.dim(1) == 64);
    CHECK(a.ob_prob_final.dim(0) == 64);
    CHECK(a.ob_side_probs.size() == 5);
    for (double v : a.depth.data()) {
        CHECK(v > 0.0);
        CHECK(v <= cfg.max_depth);
    }
    for (double v : a.ob_prob_final.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    for (const auto& s : a.ob_side_probs) {
        CHECK(s.dim(0) == 64);
        for (double v : s.data()) CHECK(std::isfinite(v));
    }
    Stage1Output b = m.stage1_forward(img);
    CHECK(a.depth.data() == b.depth.data());
    CHECK(a.ob_prob_final.data() == b.ob_prob_final.data());
}

TEST_CASE("ssr_forward: full resolution and near-perfect initial correlation") {
    ModelConfig cfg = small_cfg();
    MoDOTModel m(cfg, 5);
    Tensor img = rand_image(64, 23);
    NoGradGuard g;
    Stage1Output s1 = m.stage1_forward(img);
    Stage2Output s2 = m.ssr_forward(img, s1);
    CHECK(s2.depth.dim(0) == 64);
    CHECK(s2.ob_prob.dim(0) == 64);
    CHECK(pearson(s1.depth.data(), s2.depth.data()) > 0.99);
}

TEST_CASE("ablation flags toggle exactly their component") {
    Tensor img = rand_image(64, 24);
    NoGradGuard g;

    ModelConfig depth_only = small_cfg();
    depth_only.use_ob = false;
    depth_only.use_ssr = false;
    MoDOTModel m1(depth_only, 1);
    Stage1Output o1 = m1.stage1_forward(img);
    CHECK(o1.depth.dim(0) == 64);
    CHECK(o1.ob_side_probs.empty());
    CHECK_FALSE(o1.ob_prob_final.defined());
    CHECK_THROWS_AS(m1.ssr_forward(img, o1), ConfigError);
    for (const auto& [name, t] : m1.params().params()) {
        CHECK(name.find(".ob_") == std::string::npos);
        CHECK(name.find("ssr.") == std::string::npos);
        CHECK(name.find(".eip") == std::string::npos);
    }

    ModelConfig no_casm = small_cfg();
    no_casm.use_casm = false;
    MoDOTModel m2(no_casm, 1);
    Stage1Output o2 = m2.stage1_forward(img);
    CHECK(o2.ob_side_probs.size() == 5);
    // the stage-one pyramid loses its cross-attention modules; the refinement
    // head keeps its own internal one, so only stage1.* is checked
    for (const auto& [name, t] : m2.params().with_prefix("stage1."))
        CHECK(name.find(".casm") == std::string::npos);

    ModelConfig no_eip = small_cfg();
    no_eip.use_eip = false;
    MoDOTModel m3(no_eip, 1);
    Stage1Output o3 = m3.stage1_forward(img);
    CHECK(o3.ob_prob_final.dim(0) == 64);
    for (const auto& [name, t] : m3.params().params())
        CHECK(name.find(".eip") == std::string::npos);
}

TEST_CASE("model config validation") {
    ModelConfig bad = small_cfg();
    bad.base_channels = 10;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    ModelConfig bad2 = small_cfg();
    bad2.heads = {3, 1, 1, 1};  // 8 % 3 != 0
    CHECK_THROWS_AS(bad2.validate(), ConfigError);
    ModelConfig bad3 = small_cfg();
    bad3.encoder_type = "resnet";
    CHECK_THROWS_AS(bad3.validate(), ConfigError);
    Json j = {{"max_depth", 5.0}, {"encoder", {{"base_channels", 12}, {"heads", {1, 2, 2, 4}}}}};
    ModelConfig fromj = ModelConfig::from_json(j);
    CHECK(fromj.max_depth == 5.0);
    CHECK(fromj.base_channels == 12);
}
