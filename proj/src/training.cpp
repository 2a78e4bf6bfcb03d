#include "modot/training.hpp"

#include "modot/metrics.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;

namespace modot::train {

using data::ManifestEntry;
using data::Sample;
using model::MoDOTModel;
using model::ModelConfig;
using model::Stage1Output;
using model::Stage2Output;

// ------------------------------------------------------------------
// optimizer
// ------------------------------------------------------------------

Adam::Adam(std::vector<std::pair<std::string, Tensor>> ps) : params(std::move(ps)) {
    for (auto& [name, t] : params) {
        m[name].assign(static_cast<size_t>(t.numel()), 0.0);
        v[name].assign(static_cast<size_t>(t.numel()), 0.0);
    }
}

void Adam::zero_grad() {
    for (auto& [name, t] : params) t.zero_grad();
}

void Adam::step(double lr) {
    ++t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (auto& [name, p] : params) {
        Tensor pt = p;
        if (pt.node()->grad.empty()) continue;
        auto& mm = m[name];
        auto& vv = v[name];
        auto& d = pt.data();
        const auto& g = pt.node()->grad;
        for (size_t i = 0; i < d.size(); ++i) {
            mm[i] = beta1 * mm[i] + (1.0 - beta1) * g[i];
            vv[i] = beta2 * vv[i] + (1.0 - beta2) * g[i] * g[i];
            d[i] -= lr * (mm[i] / bc1) / (std::sqrt(vv[i] / bc2) + eps);
        }
    }
}

double lr_at(double lr_init, double lr_final, uint64_t step, uint64_t total) {
    if (total <= 1) return lr_init;
    double f = static_cast<double>(step) / static_cast<double>(total - 1);
    return lr_init + (lr_final - lr_init) * f;
}

// ------------------------------------------------------------------
// sample plumbing
// ------------------------------------------------------------------

TensorSample to_tensors(const Sample& s) {
    int64_t h = s.height, w = s.width;
    std::vector<double> rgb(static_cast<size_t>(3 * h * w));
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t i = 0; i < h * w; ++i)
            rgb[static_cast<size_t>(c * h * w + i)] =
                s.rgb[static_cast<size_t>(i * 3 + c)] / 255.0;
    std::vector<double> ob(s.ob.begin(), s.ob.end());
    std::vector<double> valid(s.valid.begin(), s.valid.end());
    TensorSample t;
    t.rgb = Tensor::from_data({3, h, w}, std::move(rgb));
    t.depth = Tensor::from_data({h, w}, s.depth);
    t.ob = Tensor::from_data({h, w}, std::move(ob));
    t.valid = Tensor::from_data({h, w}, std::move(valid));
    return t;
}

namespace {

Tensor crop2d(const Tensor& x, int64_t y0, int64_t x0, int64_t size) {
    bool chw = x.ndim() == 3;
    int64_t c = chw ? x.dim(0) : 1;
    int64_t h = x.dim(chw ? 1 : 0), w = x.dim(chw ? 2 : 1);
    std::vector<double> out(static_cast<size_t>(c * size * size));
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < size; ++i)
            for (int64_t j = 0; j < size; ++j)
                out[static_cast<size_t>((ch * size + i) * size + j)] =
                    x.data()[static_cast<size_t>((ch * h + y0 + i) * w + x0 + j)];
    return chw ? Tensor::from_data({c, size, size}, std::move(out))
               : Tensor::from_data({size, size}, std::move(out));
}

Tensor flip2d(const Tensor& x) {
    bool chw = x.ndim() == 3;
    int64_t c = chw ? x.dim(0) : 1;
    int64_t h = x.dim(chw ? 1 : 0), w = x.dim(chw ? 2 : 1);
    std::vector<double> out(x.data().size());
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j)
                out[static_cast<size_t>((ch * h + i) * w + j)] =
                    x.data()[static_cast<size_t>((ch * h + i) * w + (w - 1 - j))];
    return chw ? Tensor::from_data({c, h, w}, std::move(out))
               : Tensor::from_data({h, w}, std::move(out));
}

// Edge-replicating pad to a multiple of 32, split evenly per side.
struct PadInfo {
    int64_t top = 0, bottom = 0, left = 0, right = 0;
    bool any() const { return top || bottom || left || right; }
};

Tensor pad_replicate(const Tensor& x, const PadInfo& p) {
    bool chw = x.ndim() == 3;
    int64_t c = chw ? x.dim(0) : 1;
    int64_t h = x.dim(chw ? 1 : 0), w = x.dim(chw ? 2 : 1);
    int64_t oh = h + p.top + p.bottom, ow = w + p.left + p.right;
    std::vector<double> out(static_cast<size_t>(c * oh * ow));
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < oh; ++i)
            for (int64_t j = 0; j < ow; ++j) {
                int64_t si = std::clamp(i - p.top, int64_t{0}, h - 1);
                int64_t sj = std::clamp(j - p.left, int64_t{0}, w - 1);
                out[static_cast<size_t>((ch * oh + i) * ow + j)] =
                    x.data()[static_cast<size_t>((ch * h + si) * w + sj)];
            }
    return chw ? Tensor::from_data({c, oh, ow}, std::move(out))
               : Tensor::from_data({oh, ow}, std::move(out));
}

PadInfo pad_to_32(int64_t h, int64_t w) {
    PadInfo p;
    int64_t ph = (32 - h % 32) % 32, pw = (32 - w % 32) % 32;
    p.top = ph / 2;
    p.bottom = ph - p.top;
    p.left = pw / 2;
    p.right = pw - p.left;
    return p;
}

std::vector<double> unpad_map(const Tensor& t, const PadInfo& p, int64_t h, int64_t w) {
    int64_t ow = w + p.left + p.right;
    std::vector<double> out(static_cast<size_t>(h * w));
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j)
            out[static_cast<size_t>(i * w + j)] =
                t.data()[static_cast<size_t>((i + p.top) * ow + j + p.left)];
    return out;
}

losses::LossParams loss_params_from(const Json& cfg) {
    const Json& l = cfg.at("loss");
    losses::LossParams p;
    p.weights.w_d = l.value("w_d", p.weights.w_d);
    p.weights.w_ob = l.value("w_ob", p.weights.w_ob);
    p.weights.w_c = l.value("w_c", p.weights.w_c);
    p.silog_lambda = l.value("silog_lambda", p.silog_lambda);
    p.silog_alpha = l.value("silog_alpha", p.silog_alpha);
    p.cce_eps = l.value("cce_eps", p.cce_eps);
    p.obdcl_n = l.value("obdcl_n", p.obdcl_n);
    p.obdcl_margin = l.value("obdcl_margin", p.obdcl_margin);
    p.obdcl_variant = losses::obdcl_variant_from_string(
        l.value("obdcl_variant", std::string("literal")));
    return p;
}

std::vector<TensorSample> load_split(const std::vector<ManifestEntry>& entries) {
    std::vector<TensorSample> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(to_tensors(data::read_sample(e.paths)));
    return out;
}

std::string rng_to_string(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

void rng_from_string(std::mt19937_64& rng, const std::string& s) {
    std::istringstream is(s);
    is >> rng;
    if (!is) throw DataError("checkpoint: bad RNG state");
}

std::vector<Tensor> stage1_ob_logits(const model::ModelConfig& mc, const Stage1Output& o) {
    std::vector<Tensor> logits;
    if (mc.use_ob) {
        logits = o.ob_side_logits;
        logits.push_back(o.ob_logit_final);
    }
    return logits;
}

struct LoadedModel {
    std::unique_ptr<MoDOTModel> model;
    Json cfg;
};

LoadedModel model_from_checkpoint(const std::string& path) {
    ckpt::Checkpoint ck = ckpt::load_checkpoint(path);
    LoadedModel lm;
    lm.cfg = ck.config;
    ModelConfig mc = ModelConfig::from_json(lm.cfg.at("model"));
    uint64_t seed = lm.cfg.at("train").value("seed", 42);
    lm.model = std::make_unique<MoDOTModel>(mc, seed);
    ckpt::load_into(lm.model->params(), ck);
    return lm;
}

ckpt::Checkpoint snapshot(const Json& cfg, const MoDOTModel& m, const Adam& opt,
                          uint64_t step, const std::mt19937_64& rng, int stage) {
    ckpt::Checkpoint ck;
    ck.config = cfg;
    ck.config["__stage"] = stage;
    ck.step = step;
    ck.rng_state = rng_to_string(rng);
    ckpt::store_params(m.params(), "", ck);
    ck.adam_m = opt.m;
    ck.adam_v = opt.v;
    ck.config["__adam_t"] = opt.t;
    return ck;
}

void restore_optimizer(Adam& opt, const ckpt::Checkpoint& ck) {
    for (auto& [name, mm] : opt.m) {
        auto it = ck.adam_m.find(name);
        if (it == ck.adam_m.end() || it->second.size() != mm.size())
            throw DataError("checkpoint: optimizer state missing for '" + name + "'");
        mm = it->second;
        opt.v[name] = ck.adam_v.at(name);
    }
    opt.t = ck.config.value("__adam_t", 0);
}

}  // namespace

TensorSample crop(const TensorSample& s, int64_t y0, int64_t x0, int64_t size) {
    return {crop2d(s.rgb, y0, x0, size), crop2d(s.depth, y0, x0, size),
            crop2d(s.ob, y0, x0, size), crop2d(s.valid, y0, x0, size)};
}

TensorSample hflip(const TensorSample& s) {
    return {flip2d(s.rgb), flip2d(s.depth), flip2d(s.ob), flip2d(s.valid)};
}

// ------------------------------------------------------------------
// stage one
// ------------------------------------------------------------------

TrainResult train_stage1(const Json& cfg, const data::DatasetManifest& manifest,
                         const TrainOptions& opt) {
    const Json& tc = cfg.at("train");
    int64_t crop_size = tc.value("crop_size", 64);
    int batch = tc.value("batch_size", 2);
    uint64_t total_steps = tc.value("steps_stage1", 500);
    double lr_init = tc.value("lr_init", 1e-4), lr_final = tc.value("lr_final", 1e-5);
    bool flip = tc.value("flip", true);
    uint64_t ckpt_every = tc.value("ckpt_every", 250);
    uint64_t log_every = tc.value("log_every", 25);
    uint64_t seed = tc.value("seed", 42);
    if (crop_size % 32 != 0) throw ConfigError("train.crop_size must be divisible by 32");
    if (batch < 1 || total_steps < 1)
        throw ConfigError("train.batch_size and step counts must be >= 1");

    auto entries = manifest.split("train");
    if (entries.empty()) throw DataError("training requires a non-empty train split");
    std::vector<TensorSample> samples = load_split(entries);
    for (const auto& s : samples)
        if (s.rgb.dim(1) < crop_size || s.rgb.dim(2) < crop_size)
            throw ConfigError("train.crop_size exceeds sample resolution");

    losses::LossParams lp = loss_params_from(cfg);
    ModelConfig mc = ModelConfig::from_json(cfg.at("model"));
    MoDOTModel model(mc, seed);
    Adam adam(model.params().with_prefix("stage1."));
    std::mt19937_64 rng(seed + 1);
    uint64_t start_step = 0;

    if (!opt.resume_path.empty()) {
        ckpt::Checkpoint ck = ckpt::load_checkpoint(opt.resume_path);
        if (ck.config.value("__stage", 1) != 1)
            throw ConfigError("resume checkpoint was not written by stage-one training");
        ckpt::load_into(model.params(), ck);
        restore_optimizer(adam, ck);
        rng_from_string(rng, ck.rng_state);
        start_step = ck.step;
    }

    fs::create_directories(opt.out_dir);
    std::string last_path = (fs::path(opt.out_dir) / "stage1_last.ckpt").string();
    TrainResult res;
    std::uniform_int_distribution<size_t> pick(0, samples.size() - 1);

    for (uint64_t step = start_step; step < total_steps; ++step) {
        adam.zero_grad();
        double loss_acc = 0;
        for (int b = 0; b < batch; ++b) {
            const TensorSample& full = samples[pick(rng)];
            int64_t ymax = full.rgb.dim(1) - crop_size, xmax = full.rgb.dim(2) - crop_size;
            int64_t y0 = ymax > 0 ? static_cast<int64_t>(rng() % (ymax + 1)) : 0;
            int64_t x0 = xmax > 0 ? static_cast<int64_t>(rng() % (xmax + 1)) : 0;
            TensorSample s = crop(full, y0, x0, crop_size);
            if (flip && (rng() & 1)) s = hflip(s);

            Stage1Output out = model.stage1_forward(s.rgb);
            auto lb = losses::total_loss(out.depth, stage1_ob_logits(mc, out), s.depth,
                                         s.ob, s.valid, lp);
            double lv = lb.total.item();
            if (!std::isfinite(lv)) {
                ckpt::save_checkpoint(last_path, snapshot(cfg, model, adam, step, rng, 1));
                throw NumericError("stage-one loss is non-finite at step " +
                                   std::to_string(step) + "; last-good checkpoint: " + last_path);
            }
            loss_acc += lv;
            mul_scalar(lb.total, 1.0 / batch).backward();
        }
        adam.step(lr_at(lr_init, lr_final, step, total_steps));
        double lv = loss_acc / batch;
        res.loss_history.push_back(lv);
        res.final_loss = lv;
        if (opt.log && (step % log_every == 0 || step + 1 == total_steps))
            (*opt.log) << "stage1 step " << step << " loss " << lv << "\n";
        if ((step + 1) % ckpt_every == 0)
            ckpt::save_checkpoint(last_path, snapshot(cfg, model, adam, step + 1, rng, 1));
    }

    res.steps = total_steps;
    res.final_ckpt = (fs::path(opt.out_dir) / "stage1_final.ckpt").string();
    ckpt::save_checkpoint(res.final_ckpt, snapshot(cfg, model, adam, total_steps, rng, 1));
    return res;
}

// ------------------------------------------------------------------
// stage two
// ------------------------------------------------------------------

TrainResult train_stage2(const Json& cfg, const std::string& stage1_ckpt,
                         const data::DatasetManifest& manifest, const TrainOptions& opt) {
    const Json& tc = cfg.at("train");
    int batch = tc.value("batch_size", 2);
    uint64_t total_steps = tc.value("steps_stage2", 200);
    double lr_init = tc.value("lr_init", 1e-4), lr_final = tc.value("lr_final", 1e-5);
    uint64_t ckpt_every = tc.value("ckpt_every", 250);
    uint64_t log_every = tc.value("log_every", 25);
    uint64_t seed = tc.value("seed", 42);
    if (batch < 1 || total_steps < 1)
        throw ConfigError("train.batch_size and step counts must be >= 1");

    ModelConfig mc = ModelConfig::from_json(cfg.at("model"));
    if (!(mc.use_ssr && mc.use_ob))
        throw ConfigError("stage-two training needs model.use_ssr and model.use_ob");
    MoDOTModel model(mc, seed);
    {
        ckpt::Checkpoint ck = ckpt::load_checkpoint(stage1_ckpt);
        ckpt::load_into(model.params(), ck);
    }
    const uint64_t frozen_sum = ckpt::group_checksum(model.params(), "stage1.");

    auto entries = manifest.split("train");
    if (entries.empty()) throw DataError("training requires a non-empty train split");
    std::vector<TensorSample> samples = load_split(entries);

    losses::LossParams lp = loss_params_from(cfg);
    Adam adam(model.params().with_prefix("ssr."));
    std::mt19937_64 rng(seed + 2);
    uint64_t start_step = 0;

    if (!opt.resume_path.empty()) {
        ckpt::Checkpoint ck = ckpt::load_checkpoint(opt.resume_path);
        if (ck.config.value("__stage", 1) != 2)
            throw ConfigError("resume checkpoint was not written by stage-two training");
        ckpt::load_into(model.params(), ck);
        restore_optimizer(adam, ck);
        rng_from_string(rng, ck.rng_state);
        start_step = ck.step;
    }

    fs::create_directories(opt.out_dir);
    std::string last_path = (fs::path(opt.out_dir) / "stage2_last.ckpt").string();
    TrainResult res;
    std::uniform_int_distribution<size_t> pick(0, samples.size() - 1);

    auto check_frozen = [&] {
        if (ckpt::group_checksum(model.params(), "stage1.") != frozen_sum)
            throw NumericError("stage-one parameters drifted during refinement training");
    };

    for (uint64_t step = start_step; step < total_steps; ++step) {
        adam.zero_grad();
        double loss_acc = 0;
        for (int b = 0; b < batch; ++b) {
            const TensorSample& s = samples[pick(rng)];
            Stage1Output s1;
            {
                NoGradGuard ng;  // stage one is a frozen feature extractor here
                s1 = model.stage1_forward(s.rgb);
            }
            Stage2Output s2 = model.ssr_forward(s.rgb, s1);
            auto lb = losses::total_loss(s2.depth, {s2.ob_logit}, s.depth, s.ob, s.valid, lp);
            double lv = lb.total.item();
            if (!std::isfinite(lv)) {
                ckpt::save_checkpoint(last_path, snapshot(cfg, model, adam, step, rng, 2));
                throw NumericError("stage-two loss is non-finite at step " +
                                   std::to_string(step) + "; last-good checkpoint: " + last_path);
            }
            loss_acc += lv;
            mul_scalar(lb.total, 1.0 / batch).backward();
        }
        adam.step(lr_at(lr_init, lr_final, step, total_steps));
        double lv = loss_acc / batch;
        res.loss_history.push_back(lv);
        res.final_loss = lv;
        if (opt.log && (step % log_every == 0 || step + 1 == total_steps))
            (*opt.log) << "stage2 step " << step << " loss " << lv << "\n";
        if ((step + 1) % ckpt_every == 0) {
            check_frozen();
            ckpt::save_checkpoint(last_path, snapshot(cfg, model, adam, step + 1, rng, 2));
        }
    }

    check_frozen();
    res.steps = total_steps;
    res.final_ckpt = (fs::path(opt.out_dir) / "stage2_final.ckpt").string();
    ckpt::save_checkpoint(res.final_ckpt, snapshot(cfg, model, adam, total_steps, rng, 2));
    return res;
}

// ------------------------------------------------------------------
// evaluation helpers
// ------------------------------------------------------------------

namespace {

struct Prediction {
    std::vector<double> depth;  // H*W meters
    std::vector<double> ob;     // H*W probabilities
    bool padded = false;
};

Prediction predict(const MoDOTModel& model, const TensorSample& s, int stage) {
    NoGradGuard ng;
    int64_t h = s.rgb.dim(1), w = s.rgb.dim(2);
    PadInfo pad = pad_to_32(h, w);
    Tensor img = pad.any() ? pad_replicate(s.rgb, pad) : s.rgb;
    Stage1Output s1 = model.stage1_forward(img);
    Prediction p;
    p.padded = pad.any();
    if (stage == 2) {
        Stage2Output s2 = model.ssr_forward(img, s1);
        p.depth = unpad_map(s2.depth, pad, h, w);
        p.ob = unpad_map(s2.ob_prob, pad, h, w);
    } else {
        p.depth = unpad_map(s1.depth, pad, h, w);
        if (model.config().use_ob) p.ob = unpad_map(s1.ob_prob_final, pad, h, w);
    }
    return p;
}

std::vector<uint8_t> to_u8_mask(const Tensor& t) {
    std::vector<uint8_t> m(t.data().size());
    for (size_t i = 0; i < m.size(); ++i) m[i] = t.data()[i] > 0.5;
    return m;
}

}  // namespace

double mean_loss(const std::string& ckpt_path, const std::vector<ManifestEntry>& entries,
                 int stage) {
    LoadedModel lm = model_from_checkpoint(ckpt_path);
    losses::LossParams lp = loss_params_from(lm.cfg);
    NoGradGuard ng;
    double acc = 0;
    for (const auto& e : entries) {
        TensorSample s = to_tensors(data::read_sample(e.paths));
        Stage1Output s1 = lm.model->stage1_forward(s.rgb);
        if (stage == 2) {
            Stage2Output s2 = lm.model->ssr_forward(s.rgb, s1);
            acc += losses::total_loss(s2.depth, {s2.ob_logit}, s.depth, s.ob, s.valid, lp)
                       .total.item();
        } else {
            acc += losses::total_loss(s1.depth, stage1_ob_logits(lm.model->config(), s1),
                                      s.depth, s.ob, s.valid, lp)
                       .total.item();
        }
    }
    return acc / static_cast<double>(entries.size());
}

double mean_delta_on_ob(const std::string& ckpt_path,
                        const std::vector<ManifestEntry>& entries, int stage, int n) {
    LoadedModel lm = model_from_checkpoint(ckpt_path);
    NoGradGuard ng;
    double sum = 0;
    int64_t count = 0;
    for (const auto& e : entries) {
        TensorSample s = to_tensors(data::read_sample(e.paths));
        Prediction p = predict(*lm.model, s, stage);
        Tensor d = Tensor::from_data({s.depth.dim(0), s.depth.dim(1)}, p.depth);
        Tensor delta = losses::depth_diff_map(d, n);
        for (size_t i = 0; i < delta.data().size(); ++i)
            if (s.ob.data()[i] > 0.5) {
                sum += delta.data()[i];
                ++count;
            }
    }
    if (count == 0) throw NumericError("mean_delta_on_ob: no GT OB pixels in split");
    return sum / static_cast<double>(count);
}

Json evaluate(const std::string& ckpt_path, const data::DatasetManifest& manifest,
              int stage, bool oracle) {
    if (stage != 1 && stage != 2) throw ConfigError("evaluate: stage must be 1 or 2");
    LoadedModel lm = model_from_checkpoint(ckpt_path);
    const Json& ev = lm.cfg.at("eval");
    double depth_cap = ev.value("depth_cap", 10.0);
    double min_depth = ev.value("min_eval_depth", 1e-3);
    double thr = ev.value("ob_threshold", 0.7);
    int tol = ev.value("tolerance_radius", 0);

    auto entries = manifest.split("test");
    if (entries.empty()) throw DataError("evaluate: empty test split");

    Json report;
    report["config"] = lm.cfg;
    report["stage"] = stage;
    report["checkpoint"] = ckpt_path;
    report["oracle"] = oracle;
    report["num_images"] = entries.size();

    metrics::DepthMetrics dsum;
    metrics::OBMetrics osum;
    Json per_image = Json::array();
    struct PrItem {
        std::vector<double> prob;
        std::vector<uint8_t> gt;
        int h, w;
    };
    std::vector<PrItem> pr_data;

    for (const auto& e : entries) {
        TensorSample s = to_tensors(data::read_sample(e.paths));
        int64_t h = s.depth.dim(0), w = s.depth.dim(1);
        Prediction p;
        if (oracle) {
            p.depth = s.depth.data();
            p.ob.assign(s.ob.data().begin(), s.ob.data().end());
        } else {
            p = predict(*lm.model, s, stage);
        }
        std::vector<uint8_t> valid(s.valid.data().size());
        for (size_t i = 0; i < valid.size(); ++i) valid[i] = s.valid.data()[i] > 0.5;
        std::vector<uint8_t> gt_ob = to_u8_mask(s.ob);

        auto dm = metrics::depth_metrics(p.depth, s.depth.data(), valid, depth_cap, min_depth);
        Json entry;
        entry["id"] = e.id;
        entry["padded"] = p.padded;
        entry["depth"] = Json{{"rmse", dm.rmse},       {"rmse_log", dm.rmse_log},
                          {"abs_rel", dm.abs_rel}, {"sq_rel", dm.sq_rel},
                          {"log10", dm.log10},     {"delta1", dm.delta1},
                          {"delta2", dm.delta2},   {"delta3", dm.delta3}};
        dsum.rmse += dm.rmse; dsum.rmse_log += dm.rmse_log; dsum.abs_rel += dm.abs_rel;
        dsum.sq_rel += dm.sq_rel; dsum.log10 += dm.log10;
        dsum.delta1 += dm.delta1; dsum.delta2 += dm.delta2; dsum.delta3 += dm.delta3;

        if (!p.ob.empty()) {
            auto om = metrics::ob_metrics(p.ob, gt_ob, static_cast<int>(h),
                                          static_cast<int>(w), thr, tol);
            entry["ob"] = Json{{"recall", om.recall},
                           {"precision", om.precision},
                           {"fscore", om.fscore},
                           {"threshold", om.threshold}};
            osum.recall += om.recall; osum.precision += om.precision; osum.fscore += om.fscore;
            pr_data.push_back({p.ob, gt_ob, static_cast<int>(h), static_cast<int>(w)});
        }
        per_image.push_back(entry);
    }

    double n = static_cast<double>(entries.size());
    report["per_image"] = per_image;
    report["mean"]["depth"] = Json{{"rmse", dsum.rmse / n},       {"rmse_log", dsum.rmse_log / n},
                               {"abs_rel", dsum.abs_rel / n}, {"sq_rel", dsum.sq_rel / n},
                               {"log10", dsum.log10 / n},     {"delta1", dsum.delta1 / n},
                               {"delta2", dsum.delta2 / n},   {"delta3", dsum.delta3 / n}};
    if (!pr_data.empty()) {
        report["mean"]["ob"] = Json{{"recall", osum.recall / n},
                                {"precision", osum.precision / n},
                                {"fscore", osum.fscore / n},
                                {"threshold", thr}};
        Json curve = Json::array();
        for (int k = 1; k <= 19; ++k) {
            double th = 0.05 * k;
            double r = 0, pr = 0, f = 0;
            for (const auto& item : pr_data) {
                auto om = metrics::ob_metrics(item.prob, item.gt, item.h, item.w, th, tol);
                r += om.recall; pr += om.precision; f += om.fscore;
            }
            double m = static_cast<double>(pr_data.size());
            curve.push_back({{"threshold", th},
                             {"recall", r / m},
                             {"precision", pr / m},
                             {"fscore", f / m}});
        }
        report["pr_curve"] = curve;
    }
    return report;
}

void infer(const std::string& ckpt_path, const std::string& image_path,
           const std::string& out_dir) {
    cv::Mat bgr = cv::imread(image_path, cv::IMREAD_COLOR);
    if (bgr.empty()) throw DataError("infer: cannot read image: " + image_path);
    int64_t h = bgr.rows, w = bgr.cols;
    std::vector<double> rgb(static_cast<size_t>(3 * h * w));
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
            cv::Vec3b px = bgr.at<cv::Vec3b>(static_cast<int>(i), static_cast<int>(j));
            rgb[static_cast<size_t>(0 * h * w + i * w + j)] = px[2] / 255.0;
            rgb[static_cast<size_t>(1 * h * w + i * w + j)] = px[1] / 255.0;
            rgb[static_cast<size_t>(2 * h * w + i * w + j)] = px[0] / 255.0;
        }
    TensorSample s;
    s.rgb = Tensor::from_data({3, h, w}, std::move(rgb));
    s.depth = Tensor::zeros({h, w});

    LoadedModel lm = model_from_checkpoint(ckpt_path);
    int stage = lm.model->config().use_ssr && lm.model->config().use_ob ? 2 : 1;
    Prediction p = predict(*lm.model, s, stage);

    fs::create_directories(out_dir);
    cv::Mat depth_mm(static_cast<int>(h), static_cast<int>(w), CV_16UC1);
    cv::Mat depth_vis_in(static_cast<int>(h), static_cast<int>(w), CV_8UC1);
    double max_d = lm.model->config().max_depth;
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
            double d = p.depth[static_cast<size_t>(i * w + j)];
            depth_mm.at<uint16_t>(static_cast<int>(i), static_cast<int>(j)) =
                static_cast<uint16_t>(std::lround(std::clamp(d * 1000.0, 0.0, 65535.0)));
            depth_vis_in.at<uint8_t>(static_cast<int>(i), static_cast<int>(j)) =
                static_cast<uint8_t>(std::lround(std::clamp(d / max_d, 0.0, 1.0) * 255.0));
        }
    cv::imwrite((fs::path(out_dir) / "depth.png").string(), depth_mm);
    cv::Mat vis;
    cv::applyColorMap(depth_vis_in, vis, cv::COLORMAP_JET);
    cv::imwrite((fs::path(out_dir) / "depth_vis.png").string(), vis);

    if (!p.ob.empty()) {
        cv::Mat ob(static_cast<int>(h), static_cast<int>(w), CV_8UC1);
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j)
                ob.at<uint8_t>(static_cast<int>(i), static_cast<int>(j)) =
                    static_cast<uint8_t>(std::lround(
                        std::clamp(p.ob[static_cast<size_t>(i * w + j)], 0.0, 1.0) * 255.0));
        cv::imwrite((fs::path(out_dir) / "ob.png").string(), ob);
    }
}

}  // namespace modot::train
