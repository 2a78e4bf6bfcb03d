#include "modot/data_synth.hpp"
#include "modot/config.hpp"

#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <random>

namespace fs = std::filesystem;

namespace modot::data {

double Vec3::norm() const { return std::sqrt(x * x + y * y + z * z); }
Vec3 Vec3::normalized() const {
    double n = norm();
    return n > 0 ? Vec3{x / n, y / n, z / n} : Vec3{0, 0, 0};
}

void SceneSpec::validate() const {
    if (image_width <= 0 || image_width % 32 != 0 || image_height <= 0 || image_height % 32 != 0)
        throw ConfigError("scene dimensions must be positive multiples of 32, got " +
                          std::to_string(image_width) + "x" + std::to_string(image_height));
    if (!(z_min > 0.0) || !(z_max > z_min))
        throw ConfigError("depth range requires 0 < z_min < z_max");
    if (num_primitives < 1) throw ConfigError("num_primitives must be >= 1");
    if (allowed_kinds.empty()) throw ConfigError("allowed_kinds must be non-empty");
}

Camera Camera::for_size(int w, int h) {
    Camera c;
    c.width = w;
    c.height = h;
    c.fx = c.fy = static_cast<double>(w);
    c.cx = (w - 1) * 0.5;
    c.cy = (h - 1) * 0.5;
    return c;
}

TextureMode texture_from_string(const std::string& s) {
    if (s == "flat") return TextureMode::Flat;
    if (s == "noise") return TextureMode::Noise;
    if (s == "stripes") return TextureMode::Stripes;
    throw ConfigError("unknown texture mode: " + s);
}

// ------------------------------------------------------------------
// scene generation
// ------------------------------------------------------------------

namespace {

struct ImageBox {
    double u0, u1, v0, v1, z;
};

ImageBox image_box(const Primitive& p, const Camera& cam) {
    double hw = p.kind == PrimitiveKind::Sphere ? p.radius : p.half_w;
    double hh = p.kind == PrimitiveKind::Sphere ? p.radius : p.half_h;
    double z = p.center.z;
    return {cam.cx + (p.center.x - hw) / z * cam.fx, cam.cx + (p.center.x + hw) / z * cam.fx,
            cam.cy + (p.center.y - hh) / z * cam.fy, cam.cy + (p.center.y + hh) / z * cam.fy, z};
}

bool boxes_overlap(const ImageBox& a, const ImageBox& b) {
    return a.u0 < b.u1 && b.u0 < a.u1 && a.v0 < b.v1 && b.v0 < a.v1;
}

}  // namespace

Scene generate_scene(const SceneSpec& spec) {
    spec.validate();
    Scene scene;
    scene.spec = spec;
    scene.camera = Camera::for_size(spec.image_width, spec.image_height);
    scene.background_z = spec.z_max;

    std::mt19937_64 rng(spec.rng_seed);
    auto U = [&](double a, double b) {
        return std::uniform_real_distribution<double>(a, b)(rng);
    };
    const Camera& cam = scene.camera;
    double range = spec.z_max - spec.z_min;

    for (int i = 0; i < spec.num_primitives; ++i) {
        Primitive p;
        p.kind = spec.allowed_kinds[std::uniform_int_distribution<size_t>(
            0, spec.allowed_kinds.size() - 1)(rng)];
        double z = U(spec.z_min + 0.05 * range, spec.z_max - 0.15 * range);
        double u = U(0.15 * cam.width, 0.85 * cam.width);
        double v = U(0.15 * cam.height, 0.85 * cam.height);
        double frac = U(0.25, 0.55);
        p.center = {(u - cam.cx) / cam.fx * z, (v - cam.cy) / cam.fy * z, z};
        p.half_w = frac * (cam.width * 0.5) / cam.fx * z;
        p.half_h = p.half_w * U(0.6, 1.0);
        p.color = {U(0.3, 0.9), U(0.3, 0.9), U(0.3, 0.9)};
        switch (p.kind) {
            case PrimitiveKind::FrontoRect:
                break;
            case PrimitiveKind::SlantedPlane:
                p.normal = Vec3{U(-0.45, 0.45), U(-0.45, 0.45), -1.0}.normalized();
                break;
            case PrimitiveKind::Sphere:
                p.radius = 0.8 * std::min(p.half_w, p.half_h);
                p.radius = std::min(p.radius, 0.8 * (z - spec.z_min));
                break;
            case PrimitiveKind::OpenBox:
                p.depth_ext = U(0.3, 1.0) * std::max(0.2, std::min(1.0, spec.z_max - z - 0.1));
                break;
        }
        scene.primitives.push_back(p);
    }

    // Guarantee at least one occluding pair.
    if (spec.num_primitives >= 2) {
        bool found = false;
        for (size_t a = 0; a < scene.primitives.size() && !found; ++a)
            for (size_t b = a + 1; b < scene.primitives.size() && !found; ++b) {
                auto ba = image_box(scene.primitives[a], cam);
                auto bb = image_box(scene.primitives[b], cam);
                if (boxes_overlap(ba, bb) && std::fabs(ba.z - bb.z) > 0.2) found = true;
            }
        if (!found) {
            Primitive& p0 = scene.primitives[0];
            Primitive& p1 = scene.primitives[1];
            double z = std::max(spec.z_min + 0.1 * range, p0.center.z - 0.5 * range);
            if (p0.center.z - z < 0.25) z = std::max(spec.z_min + 0.02 * range, p0.center.z - 0.3);
            double sx = p0.center.x / p0.center.z, sy = p0.center.y / p0.center.z;
            p1.center = {sx * z, sy * z, z};
            p1.half_w = 0.6 * p0.half_w / p0.center.z * z;
            p1.half_h = 0.6 * p0.half_h / p0.center.z * z;
            if (p1.kind == PrimitiveKind::Sphere)
                p1.radius = 0.8 * std::min(p1.half_w, p1.half_h);
        }
    }
    return scene;
}

// ------------------------------------------------------------------
// rendering
// ------------------------------------------------------------------

namespace {

struct Hit {
    double t = std::numeric_limits<double>::infinity();
    Vec3 normal;
    Vec3 point;
    int prim = -1;
};

// Ray is p = t * d with d = (dx, dy, 1); t equals planar depth z.
void intersect(const Primitive& p, int idx, const Vec3& d, Hit& best) {
    auto consider = [&](double t, const Vec3& n) {
        if (t > 1e-6 && t < best.t) {
            best.t = t;
            best.normal = n;
            best.point = d * t;
            best.prim = idx;
        }
    };
    switch (p.kind) {
        case PrimitiveKind::FrontoRect: {
            double t = p.center.z;
            double x = d.x * t, y = d.y * t;
            if (std::fabs(x - p.center.x) <= p.half_w && std::fabs(y - p.center.y) <= p.half_h)
                consider(t, {0, 0, -1});
            break;
        }
        case PrimitiveKind::SlantedPlane: {
            double denom = p.normal.dot(d);
            if (std::fabs(denom) < 1e-9) break;
            double t = p.normal.dot(p.center) / denom;
            double x = d.x * t, y = d.y * t;
            if (std::fabs(x - p.center.x) <= p.half_w && std::fabs(y - p.center.y) <= p.half_h)
                consider(t, p.normal);
            break;
        }
        case PrimitiveKind::Sphere: {
            double a = d.dot(d);
            double b = -2.0 * d.dot(p.center);
            double c = p.center.dot(p.center) - p.radius * p.radius;
            double disc = b * b - 4 * a * c;
            if (disc < 0) break;
            double t = (-b - std::sqrt(disc)) / (2 * a);
            if (t > 1e-6) {
                Vec3 hp = d * t;
                consider(t, (hp - p.center) * (1.0 / p.radius));
            }
            break;
        }
        case PrimitiveKind::OpenBox: {
            double zb = p.center.z + p.depth_ext;
            // back face
            {
                double t = zb;
                double x = d.x * t, y = d.y * t;
                if (std::fabs(x - p.center.x) <= p.half_w && std::fabs(y - p.center.y) <= p.half_h)
                    consider(t, {0, 0, -1});
            }
            // side walls, spanning z in [center.z, zb]
            auto wall_x = [&](double xw, double nx) {
                if (std::fabs(d.x) < 1e-9) return;
                double t = xw / d.x;
                double z = t, y = d.y * t;
                if (t > 1e-6 && z >= p.center.z && z <= zb &&
                    std::fabs(y - p.center.y) <= p.half_h)
                    consider(t, {nx, 0, 0});
            };
            auto wall_y = [&](double yw, double ny) {
                if (std::fabs(d.y) < 1e-9) return;
                double t = yw / d.y;
                double z = t, x = d.x * t;
                if (t > 1e-6 && z >= p.center.z && z <= zb &&
                    std::fabs(x - p.center.x) <= p.half_w)
                    consider(t, {0, ny, 0});
            };
            wall_x(p.center.x - p.half_w, 1);
            wall_x(p.center.x + p.half_w, -1);
            wall_y(p.center.y - p.half_h, 1);
            wall_y(p.center.y + p.half_h, -1);
            break;
        }
    }
}

double noise_hash(uint64_t seed, int u, int v, int id) {
    uint64_t h = seed ^ (static_cast<uint64_t>(u) * 0x9E3779B97F4A7C15ULL) ^
                 (static_cast<uint64_t>(v) * 0xC2B2AE3D27D4EB4FULL) ^
                 (static_cast<uint64_t>(id + 2) * 0x165667B19E3779F9ULL);
    h ^= h >> 33;
    h *= 0xFF51AFD7ED558CCDULL;
    h ^= h >> 33;
    return static_cast<double>(h >> 11) / static_cast<double>(1ULL << 53);
}

}  // namespace

RenderRaw render_raw(const Scene& scene) {
    if (scene.primitives.empty()) throw DataError("cannot render an empty scene");
    const Camera& cam = scene.camera;
    const int H = cam.height, W = cam.width;
    RenderRaw out;
    out.height = H;
    out.width = W;
    out.depth.assign(static_cast<size_t>(H) * W, scene.background_z);
    out.normals.assign(static_cast<size_t>(H) * W * 3, 0.0);
    out.prim_id.assign(static_cast<size_t>(H) * W, -1);
    out.rgb.assign(static_cast<size_t>(H) * W * 3, 0);

    const Vec3 light = Vec3{0.4, -0.6, -0.7}.normalized();
    for (int v = 0; v < H; ++v) {
        for (int u = 0; u < W; ++u) {
            Vec3 d = cam.ray_dir(u, v);
            Hit hit;
            hit.t = scene.background_z;  // backdrop
            hit.normal = {0, 0, -1};
            hit.point = d * scene.background_z;
            hit.prim = -1;
            for (size_t i = 0; i < scene.primitives.size(); ++i)
                intersect(scene.primitives[i], static_cast<int>(i), d, hit);

            size_t px = static_cast<size_t>(v) * W + u;
            Vec3 n = hit.normal;
            if (n.dot(d) > 0) n = n * -1.0;  // face the camera
            out.depth[px] = hit.t;
            out.normals[px * 3 + 0] = n.x;
            out.normals[px * 3 + 1] = n.y;
            out.normals[px * 3 + 2] = n.z;
            out.prim_id[px] = hit.prim;

            Vec3 base = hit.prim >= 0 ? scene.primitives[static_cast<size_t>(hit.prim)].color
                                      : Vec3{0.75, 0.75, 0.75};
            double lambert = std::max(0.0, n.dot(light * -1.0));
            double intensity = 0.3 + 0.7 * lambert;
            double tex = 1.0;
            if (hit.prim >= 0) {
                switch (scene.spec.texture) {
                    case TextureMode::Flat:
                        break;
                    case TextureMode::Noise:
                        tex = 0.8 + 0.4 * noise_hash(scene.spec.rng_seed, u, v, hit.prim);
                        break;
                    case TextureMode::Stripes:
                        tex = std::sin((hit.point.x + hit.point.y) * 8.0) > 0 ? 1.0 : 0.7;
                        break;
                }
            }
            for (int c = 0; c < 3; ++c) {
                double ch = (c == 0 ? base.x : c == 1 ? base.y : base.z) * intensity * tex;
                out.rgb[px * 3 + static_cast<size_t>(c)] =
                    static_cast<uint8_t>(std::lround(std::clamp(ch, 0.0, 1.0) * 255.0));
            }
        }
    }
    return out;
}

ObMasks derive_ob_from_depth(const std::vector<double>& depth,
                             const std::vector<double>& normals,
                             const Camera& cam, int height, int width,
                             double tau, double rim_angle_deg,
                             const std::vector<uint8_t>& curved) {
    if (!(tau > 0.0)) throw ConfigError("derive_ob: contrast threshold tau must be positive");
    const size_t n = static_cast<size_t>(height) * width;
    ObMasks m;
    m.discontinuity.assign(n, 0);
    m.rim.assign(n, 0);
    m.combined.assign(n, 0);

    const int dys[4] = {-1, 1, 0, 0};
    const int dxs[4] = {0, 0, -1, 1};
    double sin_eps = std::sin(rim_angle_deg * M_PI / 180.0);
    for (int i = 0; i < height; ++i) {
        for (int j = 0; j < width; ++j) {
            size_t px = static_cast<size_t>(i) * width + j;
            for (int k = 0; k < 4; ++k) {
                int qi = i + dys[k], qj = j + dxs[k];
                if (qi < 0 || qi >= height || qj < 0 || qj >= width) continue;
                size_t qx = static_cast<size_t>(qi) * width + qj;
                if (depth[qx] - depth[px] > tau) {
                    m.discontinuity[px] = 1;
                    break;
                }
            }
            if (!normals.empty() && !curved.empty() && curved[px]) {
                Vec3 vdir = cam.ray_dir(j, i).normalized();
                Vec3 nrm{normals[px * 3], normals[px * 3 + 1], normals[px * 3 + 2]};
                if (std::fabs(nrm.dot(vdir)) < sin_eps) m.rim[px] = 1;
            }
            m.combined[px] = m.discontinuity[px] || m.rim[px];
        }
    }
    return m;
}

Sample render_sample(const Scene& scene, double tau, double rim_angle_deg) {
    RenderRaw raw = render_raw(scene);
    std::vector<uint8_t> curved(raw.depth.size(), 0);
    for (size_t i = 0; i < curved.size(); ++i) {
        int id = raw.prim_id[i];
        curved[i] = id >= 0 && scene.primitives[static_cast<size_t>(id)].kind ==
                                   PrimitiveKind::Sphere;
    }
    ObMasks masks = derive_ob_from_depth(raw.depth, raw.normals, scene.camera,
                                         raw.height, raw.width, tau, rim_angle_deg, curved);
    Sample s;
    s.height = raw.height;
    s.width = raw.width;
    s.rgb = std::move(raw.rgb);
    s.depth = std::move(raw.depth);
    s.ob = std::move(masks.combined);
    s.valid.assign(s.depth.size(), 1);
    return s;
}

// ------------------------------------------------------------------
// persistence
// ------------------------------------------------------------------

void write_sample(const Sample& s, const SamplePaths& paths) {
    cv::Mat rgb(s.height, s.width, CV_8UC3);
    for (int i = 0; i < s.height; ++i)
        for (int j = 0; j < s.width; ++j) {
            size_t px = (static_cast<size_t>(i) * s.width + j) * 3;
            rgb.at<cv::Vec3b>(i, j) = {s.rgb[px + 2], s.rgb[px + 1], s.rgb[px]};  // BGR
        }
    cv::Mat depth(s.height, s.width, CV_16UC1);
    for (int i = 0; i < s.height; ++i)
        for (int j = 0; j < s.width; ++j) {
            double d = s.depth[static_cast<size_t>(i) * s.width + j];
            if (d > 65.535)
                throw DataError("depth " + std::to_string(d) +
                                " m exceeds 16-bit millimeter range at " + paths.depth);
            depth.at<uint16_t>(i, j) = static_cast<uint16_t>(std::lround(d * 1000.0));
        }
    cv::Mat ob(s.height, s.width, CV_8UC1);
    for (int i = 0; i < s.height; ++i)
        for (int j = 0; j < s.width; ++j)
            ob.at<uint8_t>(i, j) = s.ob[static_cast<size_t>(i) * s.width + j] ? 255 : 0;
    if (!cv::imwrite(paths.rgb, rgb)) throw DataError("failed to write " + paths.rgb);
    if (!cv::imwrite(paths.depth, depth)) throw DataError("failed to write " + paths.depth);
    if (!cv::imwrite(paths.ob, ob)) throw DataError("failed to write " + paths.ob);
}

Sample read_sample(const SamplePaths& paths) {
    cv::Mat rgb = cv::imread(paths.rgb, cv::IMREAD_COLOR);
    if (rgb.empty()) throw DataError("cannot read rgb image: " + paths.rgb);
    cv::Mat depth = cv::imread(paths.depth, cv::IMREAD_UNCHANGED);
    if (depth.empty() || depth.type() != CV_16UC1)
        throw DataError("cannot read 16-bit depth image: " + paths.depth);
    cv::Mat ob = cv::imread(paths.ob, cv::IMREAD_GRAYSCALE);
    if (ob.empty()) throw DataError("cannot read ob mask: " + paths.ob);
    if (rgb.size() != depth.size() || rgb.size() != ob.size())
        throw DataError("size mismatch among sample files: " + paths.rgb);

    Sample s;
    s.height = rgb.rows;
    s.width = rgb.cols;
    s.rgb.resize(static_cast<size_t>(s.height) * s.width * 3);
    s.depth.resize(static_cast<size_t>(s.height) * s.width);
    s.ob.resize(s.depth.size());
    s.valid.assign(s.depth.size(), 1);
    for (int i = 0; i < s.height; ++i)
        for (int j = 0; j < s.width; ++j) {
            size_t px = static_cast<size_t>(i) * s.width + j;
            auto bgr = rgb.at<cv::Vec3b>(i, j);
            s.rgb[px * 3 + 0] = bgr[2];
            s.rgb[px * 3 + 1] = bgr[1];
            s.rgb[px * 3 + 2] = bgr[0];
            s.depth[px] = depth.at<uint16_t>(i, j) / 1000.0;
            s.ob[px] = ob.at<uint8_t>(i, j) >= 128 ? 1 : 0;
        }
    return s;
}

// ------------------------------------------------------------------
// manifest
// ------------------------------------------------------------------

std::vector<ManifestEntry> DatasetManifest::split(const std::string& tag) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
        if (e.split == tag) out.push_back(e);
    return out;
}

void DatasetManifest::save(const std::string& path) const {
    Json j;
    j["format_version"] = format_version;
    j["root"] = root;
    j["entries"] = Json::array();
    auto rel = [&](const std::string& p) {
        std::error_code ec;
        auto r = fs::relative(p, root, ec);
        return ec || r.empty() ? p : r.string();
    };
    for (const auto& e : entries)
        j["entries"].push_back({{"id", e.id},
                                {"split", e.split},
                                {"rgb", rel(e.paths.rgb)},
                                {"depth", rel(e.paths.depth)},
                                {"ob", rel(e.paths.ob)}});
    j["errors"] = errors;
    if (!generator_config.empty())
        j["generator_config"] = Json::parse(generator_config);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
}

DatasetManifest DatasetManifest::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path);
    Json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw DataError("manifest parse error in " + path + ": " + e.what());
    }
    DatasetManifest m;
    m.format_version = j.value("format_version", 1);
    m.root = fs::path(path).parent_path().string();
    for (const auto& e : j.at("entries")) {
        ManifestEntry me;
        me.id = e.at("id");
        me.split = e.at("split");
        me.paths.rgb = (fs::path(m.root) / e.at("rgb").get<std::string>()).string();
        me.paths.depth = (fs::path(m.root) / e.at("depth").get<std::string>()).string();
        me.paths.ob = (fs::path(m.root) / e.at("ob").get<std::string>()).string();
        m.entries.push_back(me);
    }
    if (j.contains("errors")) m.errors = j["errors"].get<std::vector<std::string>>();
    if (j.contains("generator_config")) m.generator_config = j["generator_config"].dump();
    return m;
}

DatasetManifest build_manifest(const std::string& root, double split_fraction,
                               uint64_t seed) {
    DatasetManifest m;
    m.root = root;
    struct Found {
        std::string id, split, dir;
        bool rgb = false, depth = false, ob = false;
    };
    std::map<std::string, Found> found;

    auto scan_dir = [&](const fs::path& dir, const std::string& tag) {
        if (!fs::is_directory(dir)) return;
        for (const auto& entry : fs::directory_iterator(dir)) {
            std::string name = entry.path().filename().string();
            for (const char* suffix : {".rgb.png", ".depth.png", ".ob.png"}) {
                if (name.size() > strlen(suffix) &&
                    name.compare(name.size() - strlen(suffix), strlen(suffix), suffix) == 0) {
                    std::string id = name.substr(0, name.size() - strlen(suffix));
                    auto& f = found[tag + "/" + id];
                    f.id = id;
                    f.split = tag;
                    f.dir = dir.string();
                    if (strcmp(suffix, ".rgb.png") == 0) f.rgb = true;
                    if (strcmp(suffix, ".depth.png") == 0) f.depth = true;
                    if (strcmp(suffix, ".ob.png") == 0) f.ob = true;
                }
            }
        }
    };
    scan_dir(fs::path(root) / "train", "train");
    scan_dir(fs::path(root) / "test", "test");
    bool had_subdirs = !found.empty();
    if (!had_subdirs) scan_dir(root, "");

    std::vector<Found> complete;
    for (auto& [key, f] : found) {
        if (f.rgb && f.depth && f.ob)
            complete.push_back(f);
        else
            m.errors.push_back("incomplete sample triple: " + f.dir + "/" + f.id);
    }
    if (complete.empty())
        throw DataError("no complete sample triples under " + root);

    std::sort(complete.begin(), complete.end(),
              [](const Found& a, const Found& b) {
                  return std::tie(a.split, a.id) < std::tie(b.split, b.id);
              });

    if (!had_subdirs) {
        // deterministic shuffle split for flat layouts
        std::vector<size_t> idx(complete.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::mt19937_64 rng(seed);
        std::shuffle(idx.begin(), idx.end(), rng);
        size_t n_train = static_cast<size_t>(
            std::lround(split_fraction * static_cast<double>(complete.size())));
        std::vector<uint8_t> is_train(complete.size(), 0);
        for (size_t i = 0; i < n_train; ++i) is_train[idx[i]] = 1;
        for (size_t i = 0; i < complete.size(); ++i)
            complete[i].split = is_train[i] ? "train" : "test";
    }

    for (const auto& f : complete) {
        ManifestEntry e;
        e.id = f.id;
        e.split = f.split;
        e.paths.rgb = (fs::path(f.dir) / (f.id + ".rgb.png")).string();
        e.paths.depth = (fs::path(f.dir) / (f.id + ".depth.png")).string();
        e.paths.ob = (fs::path(f.dir) / (f.id + ".ob.png")).string();
        m.entries.push_back(e);
    }
    return m;
}

DatasetManifest generate_dataset(const DatasetGenConfig& gc, const std::string& out_dir,
                                 const std::string& generator_config_json) {
    gc.scene.validate();
    if (gc.num_train < 1 || gc.num_test < 0)
        throw ConfigError("dataset generation needs num_train >= 1, num_test >= 0");
    DatasetManifest m;
    m.root = out_dir;
    m.generator_config = generator_config_json;

    uint64_t idx = 0;
    auto emit_split = [&](const std::string& tag, int count) {
        fs::path dir = fs::path(out_dir) / tag;
        fs::create_directories(dir);
        for (int i = 0; i < count; ++i, ++idx) {
            SceneSpec spec = gc.scene;
            spec.rng_seed = gc.scene.rng_seed * 1000003ull + idx;
            Sample s = render_sample(generate_scene(spec), gc.tau, gc.rim_angle_deg);
            char id[32];
            std::snprintf(id, sizeof(id), "%s_%04d", tag.c_str(), i);
            ManifestEntry e;
            e.id = id;
            e.split = tag;
            e.paths.rgb = (dir / (std::string(id) + ".rgb.png")).string();
            e.paths.depth = (dir / (std::string(id) + ".depth.png")).string();
            e.paths.ob = (dir / (std::string(id) + ".ob.png")).string();
            write_sample(s, e.paths);
            m.entries.push_back(e);
        }
    };
    emit_split("train", gc.num_train);
    emit_split("test", gc.num_test);
    m.save((fs::path(out_dir) / "manifest.json").string());
    return m;
}

}  // namespace modot::data
