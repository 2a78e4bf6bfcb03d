#include "modot/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace modot::ckpt {

namespace {

constexpr char kMagic[8] = {'M', 'D', 'O', 'T', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

uint64_t fnv1a(const void* p, size_t n, uint64_t h = 1469598103934665603ull) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ull;
    }
    return h;
}

void put_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

uint64_t get_u64(std::istream& is) {
    uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 8)) throw DataError("checkpoint: truncated file");
    return v;
}
uint32_t get_u32(std::istream& is) {
    uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw DataError("checkpoint: truncated file");
    return v;
}

void put_string(std::ostream& os, const std::string& s) {
    put_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string get_string(std::istream& is) {
    uint64_t n = get_u64(is);
    if (n > (1ull << 32)) throw DataError("checkpoint: implausible string length");
    std::string s(n, '\0');
    if (n && !is.read(s.data(), static_cast<std::streamsize>(n)))
        throw DataError("checkpoint: truncated string");
    return s;
}

void put_doubles(std::ostream& os, const std::vector<double>& d) {
    put_u64(os, d.size());
    os.write(reinterpret_cast<const char*>(d.data()),
             static_cast<std::streamsize>(d.size() * sizeof(double)));
    put_u64(os, fnv1a(d.data(), d.size() * sizeof(double)));
}
std::vector<double> get_doubles(std::istream& is) {
    uint64_t n = get_u64(is);
    if (n > (1ull << 31)) throw DataError("checkpoint: implausible tensor size");
    std::vector<double> d(n);
    if (n && !is.read(reinterpret_cast<char*>(d.data()),
                      static_cast<std::streamsize>(n * sizeof(double))))
        throw DataError("checkpoint: truncated tensor data");
    if (get_u64(is) != fnv1a(d.data(), d.size() * sizeof(double)))
        throw DataError("checkpoint: checksum mismatch, file is corrupt");
    return d;
}

void put_moment_map(std::ostream& os, const std::map<std::string, std::vector<double>>& m) {
    put_u64(os, m.size());
    for (const auto& [name, data] : m) {
        put_string(os, name);
        put_doubles(os, data);
    }
}
std::map<std::string, std::vector<double>> get_moment_map(std::istream& is) {
    std::map<std::string, std::vector<double>> m;
    uint64_t n = get_u64(is);
    for (uint64_t i = 0; i < n; ++i) {
        std::string name = get_string(is);
        m[name] = get_doubles(is);
    }
    return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("checkpoint: cannot open for writing: " + path);
    os.write(kMagic, 8);
    put_u32(os, kVersion);
    put_string(os, ck.config.dump());
    put_u64(os, ck.step);
    put_string(os, ck.rng_state);
    put_u64(os, ck.params.size());
    for (const auto& [name, blob] : ck.params) {
        put_string(os, name);
        put_u64(os, blob.shape.size());
        for (int64_t d : blob.shape) put_u64(os, static_cast<uint64_t>(d));
        put_doubles(os, blob.data);
    }
    put_moment_map(os, ck.adam_m);
    put_moment_map(os, ck.adam_v);
    if (!os) throw DataError("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open: " + path);
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw DataError("checkpoint: bad magic, not a checkpoint file: " + path);
    uint32_t ver = get_u32(is);
    if (ver != kVersion)
        throw DataError("checkpoint: unsupported version " + std::to_string(ver));
    Checkpoint ck;
    try {
        ck.config = Json::parse(get_string(is));
    } catch (const Json::exception& e) {
        throw DataError(std::string("checkpoint: embedded config is invalid: ") + e.what());
    }
    ck.step = get_u64(is);
    ck.rng_state = get_string(is);
    uint64_t np = get_u64(is);
    for (uint64_t i = 0; i < np; ++i) {
        std::string name = get_string(is);
        TensorBlob blob;
        uint64_t nd = get_u64(is);
        if (nd > 8) throw DataError("checkpoint: implausible tensor rank");
        for (uint64_t d = 0; d < nd; ++d)
            blob.shape.push_back(static_cast<int64_t>(get_u64(is)));
        blob.data = get_doubles(is);
        uint64_t expect = 1;
        for (int64_t d : blob.shape) expect *= static_cast<uint64_t>(d);
        if (expect != blob.data.size())
            throw DataError("checkpoint: shape/data mismatch for '" + name + "'");
        ck.params.emplace(std::move(name), std::move(blob));
    }
    ck.adam_m = get_moment_map(is);
    ck.adam_v = get_moment_map(is);
    return ck;
}

size_t load_into(nn::ParamStore& store, const Checkpoint& ck) {
    size_t loaded = 0;
    for (auto& [name, t] : store.params()) {
        auto it = ck.params.find(name);
        if (it == ck.params.end())
            throw DataError("checkpoint: missing parameter '" + name + "'");
        const TensorBlob& blob = it->second;
        Tensor tt = t;
        if (blob.shape != tt.shape())
            throw DataError("checkpoint: shape mismatch for '" + name + "'");
        tt.data() = blob.data;
        ++loaded;
    }
    return loaded;
}

void store_params(const nn::ParamStore& store, const std::string& prefix, Checkpoint& ck) {
    for (const auto& [name, t] : store.with_prefix(prefix))
        ck.params[name] = TensorBlob{t.shape(), t.data()};
}

uint64_t group_checksum(const nn::ParamStore& store, const std::string& prefix) {
    uint64_t acc = 0;
    for (const auto& [name, t] : store.with_prefix(prefix)) {
        uint64_t h = fnv1a(name.data(), name.size());
        h = fnv1a(t.data().data(), t.data().size() * sizeof(double), h);
        acc += h;  // order-independent combine
    }
    return acc;
}

}  // namespace modot::ckpt
