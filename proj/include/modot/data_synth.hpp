#pragma once

#include "modot/errors.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace modot::data {

struct Vec3 {
    double x = 0, y = 0, z = 0;
    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const;
    Vec3 normalized() const;
};

enum class PrimitiveKind { FrontoRect, SlantedPlane, Sphere, OpenBox };
enum class TextureMode { Flat, Noise, Stripes };

struct SceneSpec {
    int image_width = 64;
    int image_height = 64;
    int num_primitives = 4;
    double z_min = 1.0;
    double z_max = 8.0;
    TextureMode texture = TextureMode::Noise;
    uint64_t rng_seed = 0;
    std::vector<PrimitiveKind> allowed_kinds = {
        PrimitiveKind::FrontoRect, PrimitiveKind::SlantedPlane,
        PrimitiveKind::Sphere, PrimitiveKind::OpenBox};

    void validate() const;  // throws ConfigError
};

struct Primitive {
    PrimitiveKind kind = PrimitiveKind::FrontoRect;
    Vec3 center;          // camera-space reference point
    Vec3 normal;          // slanted plane
    double half_w = 0, half_h = 0;
    double radius = 0;    // sphere
    double depth_ext = 0; // open box cavity depth
    Vec3 color{0.7, 0.7, 0.7};
};

struct Camera {
    int width = 64, height = 64;
    double fx = 64, fy = 64, cx = 31.5, cy = 31.5;
    static Camera for_size(int w, int h);
    Vec3 ray_dir(double u, double v) const { return {(u - cx) / fx, (v - cy) / fy, 1.0}; }
};

struct Scene {
    SceneSpec spec;
    Camera camera;
    std::vector<Primitive> primitives;
    double background_z = 8.0;  // fronto-parallel backdrop, keeps valid_mask full
};

// One training/eval item. Planar (z) depth in meters; all maps share H x W.
struct Sample {
    int height = 0, width = 0;
    std::vector<uint8_t> rgb;    // H*W*3, RGB order
    std::vector<double> depth;   // H*W, meters
    std::vector<uint8_t> ob;     // H*W, {0,1}
    std::vector<uint8_t> valid;  // H*W, {0,1}
};

// Raw render buffers used to derive annotations.
struct RenderRaw {
    int height = 0, width = 0;
    std::vector<double> depth;     // planar z of nearest hit
    std::vector<double> normals;   // 3*H*W, camera-facing unit normals
    std::vector<int> prim_id;      // index into scene.primitives; -1 = backdrop
    std::vector<uint8_t> rgb;      // H*W*3
};

struct ObMasks {
    std::vector<uint8_t> discontinuity;  // rule (a): nearer side of a depth step
    std::vector<uint8_t> rim;            // rule (b): grazing normals on curved surfaces
    std::vector<uint8_t> combined;
};

Scene generate_scene(const SceneSpec& spec);
RenderRaw render_raw(const Scene& scene);

// Rule (a): pixel is OB iff some 4-neighbor is deeper by more than tau (the
// pixel itself sits on the nearer side). Rule (b): view-grazing normals on
// curved primitives, within rim_angle_deg of perpendicular to the ray.
// curved[i] != 0 restricts rule (b) to those pixels.
ObMasks derive_ob_from_depth(const std::vector<double>& depth,
                             const std::vector<double>& normals,
                             const Camera& cam, int height, int width,
                             double tau, double rim_angle_deg,
                             const std::vector<uint8_t>& curved);

Sample render_sample(const Scene& scene, double tau, double rim_angle_deg);

struct SamplePaths {
    std::string rgb, depth, ob;
};

// Depth stored as 16-bit millimeter PNG; throws DataError above 65.535 m.
void write_sample(const Sample& s, const SamplePaths& paths);
Sample read_sample(const SamplePaths& paths);

struct ManifestEntry {
    std::string id;
    std::string split;  // "train" or "test"
    SamplePaths paths;
};

struct DatasetManifest {
    int format_version = 1;
    std::string root;
    std::vector<ManifestEntry> entries;
    std::vector<std::string> errors;  // incomplete triples, excluded
    std::string generator_config;     // JSON snapshot

    std::vector<ManifestEntry> split(const std::string& tag) const;
    void save(const std::string& path) const;
    static DatasetManifest load(const std::string& path);
};

// Scans root/{train,test} (or flat root, split by seed) for sample triples.
DatasetManifest build_manifest(const std::string& root, double split_fraction,
                               uint64_t seed);

struct DatasetGenConfig {
    SceneSpec scene;  // template; per-sample seeds are derived from scene.rng_seed
    int num_train = 8;
    int num_test = 4;
    double tau = 0.05;
    double rim_angle_deg = 5.0;
};

// Renders num_train + num_test scenes into out_dir/{train,test} and writes
// out_dir/manifest.json. generator_config_json is echoed into the manifest.
DatasetManifest generate_dataset(const DatasetGenConfig& gc, const std::string& out_dir,
                                 const std::string& generator_config_json = "");

TextureMode texture_from_string(const std::string& s);

}  // namespace modot::data
