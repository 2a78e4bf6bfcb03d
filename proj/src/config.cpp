#include "modot/config.hpp"
#include "modot/errors.hpp"

#include <cstdlib>
#include <fstream>

namespace modot {

Json default_config() {
    return Json{
        {"data",
         {{"root", "data"},
          {"image_width", 64},
          {"image_height", 64},
          {"num_primitives", 4},
          {"depth_min", 1.0},
          {"depth_max", 8.0},
          {"texture", "noise"},
          {"seed", 1234},
          {"num_train", 8},
          {"num_test", 4},
          {"split_fraction", 0.8},
          {"ob_tau", 0.05},
          {"rim_angle_deg", 5.0},
          {"emit_aux_contours", false}}},
        {"model",
         {{"max_depth", 10.0},
          {"use_ob", true},
          {"use_casm", true},
          {"use_eip", true},
          {"use_ssr", true},
          {"encoder",
           {{"type", "swin"},
            {"base_channels", 16},
            {"window", 4},
            {"depths", {2, 2, 2, 2}},
            {"heads", {1, 2, 2, 4}}}},
          {"casm", {{"reduction", 4}}}}},
        {"loss",
         {{"w_d", 1.2},
          {"w_ob", 1.0},
          {"w_c", 0.1},
          {"silog_lambda", 0.85},
          {"silog_alpha", 10.0},
          {"cce_eps", 1e-6},
          {"obdcl_n", 1},
          {"obdcl_margin", 1.0},
          {"obdcl_variant", "literal"}}},
        {"train",
         {{"crop_size", 64},
          {"batch_size", 2},
          {"steps_stage1", 500},
          {"steps_stage2", 200},
          {"lr_init", 1e-4},
          {"lr_final", 1e-5},
          {"flip", true},
          {"color_jitter", false},
          {"seed", 42},
          {"ckpt_every", 250},
          {"log_every", 25}}},
        {"eval",
         {{"depth_cap", 10.0},
          {"min_eval_depth", 0.001},
          {"ob_threshold", 0.7},
          {"tolerance_radius", 0}}}};
}

void merge_config(Json& a, const Json& b) {
    if (!b.is_object()) {
        a = b;
        return;
    }
    if (!a.is_object()) a = Json::object();
    for (auto it = b.begin(); it != b.end(); ++it) {
        if (a.contains(it.key()))
            merge_config(a[it.key()], it.value());
        else
            a[it.key()] = it.value();
    }
}

Json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    Json user;
    try {
        in >> user;
    } catch (const std::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    Json cfg = default_config();
    merge_config(cfg, user);
    return cfg;
}

void apply_env_seed(Json& cfg) {
    const char* s = std::getenv("MODOT_SEED");
    if (!s || !*s) return;
    char* end = nullptr;
    long long v = std::strtoll(s, &end, 10);
    if (end == s || *end) throw ConfigError("MODOT_SEED is not an integer: " + std::string(s));
    cfg["data"]["seed"] = v;
    cfg["train"]["seed"] = v;
}

}  // namespace modot
