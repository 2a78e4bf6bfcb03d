#pragma once

#include "modot/config.hpp"
#include "modot/errors.hpp"
#include "modot/nn.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace modot::ckpt {

struct TensorBlob {
    std::vector<int64_t> shape;
    std::vector<double> data;
};

// Self-contained training snapshot: full config, model parameters by name,
// Adam moments, the training RNG stream, and the global step. Per-tensor
// checksums are verified on load so a truncated or bit-flipped file is
// rejected with DataError instead of silently loading garbage.
struct Checkpoint {
    Json config;
    uint64_t step = 0;
    std::string rng_state;
    std::map<std::string, TensorBlob> params;
    std::map<std::string, std::vector<double>> adam_m, adam_v;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Copies stored values into matching named parameters; shape or name
// mismatches raise DataError. Returns the number of tensors loaded.
size_t load_into(nn::ParamStore& store, const Checkpoint& ck);

// Snapshots every parameter under `prefix` ("" = all).
void store_params(const nn::ParamStore& store, const std::string& prefix, Checkpoint& ck);

// Order-independent digest of all parameter bytes under a prefix; used to
// prove the stage-one weights stayed frozen during refinement training.
uint64_t group_checksum(const nn::ParamStore& store, const std::string& prefix);

}  // namespace modot::ckpt
