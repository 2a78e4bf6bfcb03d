#include "modot/config.hpp"
#include "modot/data_synth.hpp"
#include "modot/errors.hpp"
#include "modot/training.hpp"

#include <CLI11.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using modot::Json;

namespace {

modot::data::DatasetGenConfig gen_config_from(const Json& cfg) {
    const Json& d = cfg.at("data");
    modot::data::DatasetGenConfig gc;
    gc.scene.image_width = d.value("image_width", 64);
    gc.scene.image_height = d.value("image_height", 64);
    gc.scene.num_primitives = d.value("num_primitives", 4);
    gc.scene.z_min = d.value("depth_min", 1.0);
    gc.scene.z_max = d.value("depth_max", 8.0);
    gc.scene.texture = modot::data::texture_from_string(d.value("texture", "noise"));
    gc.scene.rng_seed = d.value("seed", 1234);
    gc.num_train = d.value("num_train", 8);
    gc.num_test = d.value("num_test", 4);
    gc.tau = d.value("ob_tau", 0.05);
    gc.rim_angle_deg = d.value("rim_angle_deg", 5.0);
    return gc;
}

modot::data::DatasetManifest manifest_for(const std::string& data_dir, const Json& cfg) {
    fs::path mf = fs::path(data_dir) / "manifest.json";
    if (fs::exists(mf)) return modot::data::DatasetManifest::load(mf.string());
    return modot::data::build_manifest(data_dir,
                                       cfg.at("data").value("split_fraction", 0.8),
                                       cfg.at("data").value("seed", 1234));
}

void render_report(const std::string& report_path, const std::string& out_dir) {
    std::ifstream in(report_path);
    if (!in) throw modot::DataError("report: cannot open " + report_path);
    Json rep;
    try {
        in >> rep;
    } catch (const std::exception& e) {
        throw modot::DataError(std::string("report: invalid JSON: ") + e.what());
    }
    fs::create_directories(out_dir);

    // metrics table
    {
        std::vector<std::string> lines;
        lines.push_back("stage " + std::to_string(rep.value("stage", 0)) + "  images " +
                        std::to_string(rep.value("num_images", 0)));
        if (rep.contains("mean") && rep["mean"].contains("depth")) {
            const Json& d = rep["mean"]["depth"];
            char buf[160];
            std::snprintf(buf, sizeof(buf), "rmse %.4f  rmse_log %.4f  abs_rel %.4f",
                          d.value("rmse", 0.0), d.value("rmse_log", 0.0),
                          d.value("abs_rel", 0.0));
            lines.push_back(buf);
            std::snprintf(buf, sizeof(buf), "sq_rel %.4f  log10 %.4f",
                          d.value("sq_rel", 0.0), d.value("log10", 0.0));
            lines.push_back(buf);
            std::snprintf(buf, sizeof(buf), "d1 %.4f  d2 %.4f  d3 %.4f",
                          d.value("delta1", 0.0), d.value("delta2", 0.0),
                          d.value("delta3", 0.0));
            lines.push_back(buf);
        }
        if (rep.contains("mean") && rep["mean"].contains("ob")) {
            const Json& o = rep["mean"]["ob"];
            char buf[160];
            std::snprintf(buf, sizeof(buf), "OB@%.2f  R %.4f  P %.4f  F %.4f",
                          o.value("threshold", 0.7), o.value("recall", 0.0),
                          o.value("precision", 0.0), o.value("fscore", 0.0));
            lines.push_back(buf);
        }
        int h = 40 + 28 * static_cast<int>(lines.size());
        cv::Mat img(h, 640, CV_8UC3, cv::Scalar(255, 255, 255));
        for (size_t i = 0; i < lines.size(); ++i)
            cv::putText(img, lines[i], {16, 32 + 28 * static_cast<int>(i)},
                        cv::FONT_HERSHEY_SIMPLEX, 0.55, cv::Scalar(20, 20, 20), 1,
                        cv::LINE_AA);
        cv::imwrite((fs::path(out_dir) / "metrics_table.png").string(), img);
    }

    // precision-recall curve
    if (rep.contains("pr_curve")) {
        const int S = 512, M = 48;
        cv::Mat img(S + 2 * M, S + 2 * M, CV_8UC3, cv::Scalar(255, 255, 255));
        auto px = [&](double r, double p) {
            return cv::Point(M + static_cast<int>(r * S), M + S - static_cast<int>(p * S));
        };
        cv::rectangle(img, {M, M}, {M + S, M + S}, cv::Scalar(0, 0, 0));
        for (int g = 1; g < 10; ++g) {
            int t = M + g * S / 10;
            cv::line(img, {t, M}, {t, M + S}, cv::Scalar(230, 230, 230));
            cv::line(img, {M, t}, {M + S, t}, cv::Scalar(230, 230, 230));
        }
        cv::Point prev;
        bool first = true;
        for (const Json& pt : rep["pr_curve"]) {
            cv::Point cur = px(pt.value("recall", 0.0), pt.value("precision", 0.0));
            cv::circle(img, cur, 3, cv::Scalar(40, 40, 200), -1, cv::LINE_AA);
            if (!first) cv::line(img, prev, cur, cv::Scalar(40, 40, 200), 1, cv::LINE_AA);
            prev = cur;
            first = false;
        }
        cv::putText(img, "recall", {M + S / 2 - 30, M + S + 32}, cv::FONT_HERSHEY_SIMPLEX,
                    0.5, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
        cv::putText(img, "precision", {6, M - 10}, cv::FONT_HERSHEY_SIMPLEX, 0.5,
                    cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
        cv::imwrite((fs::path(out_dir) / "pr_curve.png").string(), img);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"joint monocular depth and occlusion-boundary estimation"};
    app.require_subcommand(1);

    std::string config_path, out_path, data_dir, ckpt_path, image_path, report_in,
        resume_path;
    int stage = 1;
    bool oracle = false;

    CLI::App* gen = app.add_subcommand("gen-data", "render a synthetic dataset");
    gen->add_option("--config", config_path, "config JSON");
    gen->add_option("--out", out_path, "output dataset directory")->required();

    CLI::App* tr = app.add_subcommand("train", "train stage 1 or 2");
    tr->add_option("--stage", stage, "training stage")->check(CLI::Range(1, 2));
    tr->add_option("--config", config_path, "config JSON");
    tr->add_option("--data", data_dir, "dataset directory (default config data.root)");
    tr->add_option("--out", out_path, "run directory for checkpoints")->required();
    tr->add_option("--ckpt", ckpt_path, "stage-one checkpoint (stage 2)");
    tr->add_option("--resume", resume_path, "checkpoint to resume from");

    CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    ev->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    ev->add_option("--data", data_dir, "dataset directory")->required();
    ev->add_option("--out", out_path, "report JSON path")->required();
    ev->add_option("--stage", stage, "evaluate stage 1 or 2 outputs")->check(CLI::Range(1, 2));
    ev->add_flag("--oracle", oracle, "score ground truth against itself");

    CLI::App* in = app.add_subcommand("infer", "run on a single image");
    in->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    in->add_option("--image", image_path, "input image")->required();
    in->add_option("--out", out_path, "output directory")->required();

    CLI::App* rp = app.add_subcommand("report", "render tables and curves from a report");
    rp->add_option("--in", report_in, "report JSON")->required();
    rp->add_option("--out", out_path, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        Json cfg = config_path.empty() ? modot::default_config()
                                       : modot::load_config(config_path);
        modot::apply_env_seed(cfg);

        if (gen->parsed()) {
            auto m = modot::data::generate_dataset(gen_config_from(cfg), out_path,
                                                   cfg.at("data").dump());
            std::cout << "wrote " << m.entries.size() << " samples to " << out_path << "\n";
        } else if (tr->parsed()) {
            std::string dd = data_dir.empty()
                                 ? cfg.at("data").value("root", std::string("data"))
                                 : data_dir;
            auto manifest = manifest_for(dd, cfg);
            modot::train::TrainOptions opt;
            opt.out_dir = out_path;
            opt.resume_path = resume_path;
            opt.log = &std::cout;
            modot::train::TrainResult res;
            if (stage == 1) {
                res = modot::train::train_stage1(cfg, manifest, opt);
            } else {
                std::string s1 = ckpt_path.empty()
                                     ? (fs::path(out_path) / "stage1_final.ckpt").string()
                                     : ckpt_path;
                res = modot::train::train_stage2(cfg, s1, manifest, opt);
            }
            std::cout << "final loss " << res.final_loss << " -> " << res.final_ckpt << "\n";
        } else if (ev->parsed()) {
            auto manifest = manifest_for(data_dir, cfg);
            Json rep = modot::train::evaluate(ckpt_path, manifest, stage, oracle);
            std::ofstream os(out_path);
            if (!os) throw modot::DataError("cannot write report: " + out_path);
            os << rep.dump(2) << "\n";
            std::cout << "report -> " << out_path << "\n";
        } else if (in->parsed()) {
            modot::train::infer(ckpt_path, image_path, out_path);
            std::cout << "outputs -> " << out_path << "\n";
        } else if (rp->parsed()) {
            render_report(report_in, out_path);
            std::cout << "renders -> " << out_path << "\n";
        }
    } catch (const modot::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const modot::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const modot::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const modot::TensorError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
