#pragma once

#include "modot/checkpoint.hpp"
#include "modot/config.hpp"
#include "modot/data_synth.hpp"
#include "modot/errors.hpp"
#include "modot/losses.hpp"
#include "modot/model.hpp"

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace modot::train {

// Per-parameter moment-based adaptive gradient descent.
struct Adam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t t = 0;
    std::vector<std::pair<std::string, Tensor>> params;
    std::map<std::string, std::vector<double>> m, v;

    explicit Adam(std::vector<std::pair<std::string, Tensor>> ps);
    void zero_grad();
    void step(double lr);
};

// A dataset sample lifted to tensors: rgb (3,H,W) in [0,1], depth (H,W)
// meters, ob and valid (H,W) in {0,1}.
struct TensorSample {
    Tensor rgb, depth, ob, valid;
};
TensorSample to_tensors(const data::Sample& s);
TensorSample crop(const TensorSample& s, int64_t y0, int64_t x0, int64_t size);
TensorSample hflip(const TensorSample& s);

double lr_at(double lr_init, double lr_final, uint64_t step, uint64_t total);

struct TrainOptions {
    std::string out_dir = ".";
    std::string resume_path;     // empty = start fresh
    std::ostream* log = nullptr;
};

struct TrainResult {
    std::string final_ckpt;
    double final_loss = 0;
    std::vector<double> loss_history;  // per-step totals
    uint64_t steps = 0;
};

// Stage one: end-to-end on random crops with flips. NaN loss aborts with a
// NumericError naming the last-good checkpoint.
TrainResult train_stage1(const Json& cfg, const data::DatasetManifest& manifest,
                         const TrainOptions& opt);

// Stage two: refinement head only, on full-resolution images, stage-one
// weights frozen (checksum-verified; drift -> NumericError).
TrainResult train_stage2(const Json& cfg, const std::string& stage1_ckpt,
                         const data::DatasetManifest& manifest, const TrainOptions& opt);

// Mean training loss of a checkpointed model over the given entries, at full
// resolution, stage 1 or 2 outputs.
double mean_loss(const std::string& ckpt_path, const std::vector<data::ManifestEntry>& entries,
                 int stage);

// Mean depth-contrast statistic over GT OB pixels across entries.
double mean_delta_on_ob(const std::string& ckpt_path,
                        const std::vector<data::ManifestEntry>& entries, int stage, int n);

// Full-resolution evaluation report: per-image + mean metrics, PR sweep,
// config echo. oracle=true scores ground truth against itself.
Json evaluate(const std::string& ckpt_path, const data::DatasetManifest& manifest,
              int stage, bool oracle = false);

// Writes <out_dir>/depth.png (16-bit mm), ob.png (255*p), depth_vis.png.
void infer(const std::string& ckpt_path, const std::string& image_path,
           const std::string& out_dir);

}  // namespace modot::train
