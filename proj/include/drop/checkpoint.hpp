#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "drop/layers.hpp"

namespace drop {

// ---------------------------------------------------------------------------
// Binary training checkpoints. Everything needed to resume bit-exactly is
// stored: the run config (as JSON text), the completed-epoch counter, the
// sampler RNG state, every parameter and buffer in registry order, and the
// optimizer moments. Doubles are written raw (native little-endian).
// ---------------------------------------------------------------------------

struct AdamState {
    std::vector<Tensor> m, v;  // one slot per registry parameter
    int64_t t = 0;             // step count
};

namespace ckpt_detail {

constexpr char kMagic[8] = {'D', 'R', 'O', 'P', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

inline void write_bytes(std::ostream& out, const void* p, size_t n) {
    out.write(reinterpret_cast<const char*>(p), (std::streamsize)n);
}
template <typename T>
void write_pod(std::ostream& out, T v) {
    write_bytes(out, &v, sizeof(T));
}
inline void write_string(std::ostream& out, const std::string& s) {
    write_pod<uint64_t>(out, s.size());
    write_bytes(out, s.data(), s.size());
}
inline void write_tensor(std::ostream& out, const Tensor& t) {
    write_pod<uint64_t>(out, (uint64_t)t.numel());
    write_bytes(out, t.data(), sizeof(double) * (size_t)t.numel());
}

inline void read_bytes(std::istream& in, void* p, size_t n) {
    in.read(reinterpret_cast<char*>(p), (std::streamsize)n);
    check_io(in.good(), "checkpoint: unexpected end of file");
}
template <typename T>
T read_pod(std::istream& in) {
    T v;
    read_bytes(in, &v, sizeof(T));
    return v;
}
inline std::string read_string(std::istream& in) {
    uint64_t n = read_pod<uint64_t>(in);
    check_io(n <= (1ull << 32), "checkpoint: implausible string length");
    std::string s((size_t)n, '\0');
    if (n > 0) read_bytes(in, s.data(), (size_t)n);
    return s;
}
inline std::vector<double> read_doubles(std::istream& in) {
    uint64_t n = read_pod<uint64_t>(in);
    check_io(n <= (1ull << 34), "checkpoint: implausible tensor length");
    std::vector<double> v((size_t)n);
    if (n > 0) read_bytes(in, v.data(), sizeof(double) * (size_t)n);
    return v;
}

}  // namespace ckpt_detail

struct Checkpoint {
    std::string config_json;
    int epoch = 0;  // completed epochs
    std::string rng_state;
    std::vector<std::pair<std::string, std::vector<double>>> params;
    std::vector<std::pair<std::string, std::vector<double>>> buffers;
    bool has_optimizer = false;
    int64_t adam_t = 0;
    std::vector<std::vector<double>> adam_m, adam_v;
};

inline void save_checkpoint(const std::string& path, const std::string& config_json, int epoch,
                            const std::string& rng_state, const ParamRegistry& reg,
                            const AdamState* opt) {
    using namespace ckpt_detail;
    std::ofstream out(path, std::ios::binary);
    check_io(out.good(), "checkpoint: cannot write " + path);
    write_bytes(out, kMagic, sizeof(kMagic));
    write_pod<uint32_t>(out, kVersion);
    write_string(out, config_json);
    write_pod<int32_t>(out, epoch);
    write_string(out, rng_state);

    write_pod<uint64_t>(out, reg.params.size());
    for (const auto& p : reg.params) {
        write_string(out, p.name);
        write_tensor(out, p.var.value());
    }
    write_pod<uint64_t>(out, reg.buffers.size());
    for (const auto& b : reg.buffers) {
        write_string(out, b.name);
        write_tensor(out, *b.tensor);
    }

    write_pod<uint8_t>(out, opt ? 1 : 0);
    if (opt) {
        check_config(opt->m.size() == reg.params.size() && opt->v.size() == reg.params.size(),
                     "checkpoint: optimizer slot count mismatch");
        write_pod<int64_t>(out, opt->t);
        for (size_t i = 0; i < opt->m.size(); ++i) {
            write_tensor(out, opt->m[i]);
            write_tensor(out, opt->v[i]);
        }
    }
    out.flush();
    check_io(out.good(), "checkpoint: write failed " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    using namespace ckpt_detail;
    std::ifstream in(path, std::ios::binary);
    check_io(in.good(), "checkpoint: cannot open " + path);
    char magic[8];
    read_bytes(in, magic, sizeof(magic));
    check_io(std::memcmp(magic, kMagic, sizeof(magic)) == 0,
             "checkpoint: bad magic in " + path);
    uint32_t version = read_pod<uint32_t>(in);
    check_io(version == kVersion, "checkpoint: unsupported version");

    Checkpoint c;
    c.config_json = read_string(in);
    c.epoch = read_pod<int32_t>(in);
    c.rng_state = read_string(in);

    uint64_t np = read_pod<uint64_t>(in);
    for (uint64_t i = 0; i < np; ++i) {
        std::string name = read_string(in);
        c.params.emplace_back(std::move(name), read_doubles(in));
    }
    uint64_t nb = read_pod<uint64_t>(in);
    for (uint64_t i = 0; i < nb; ++i) {
        std::string name = read_string(in);
        c.buffers.emplace_back(std::move(name), read_doubles(in));
    }
    c.has_optimizer = read_pod<uint8_t>(in) != 0;
    if (c.has_optimizer) {
        c.adam_t = read_pod<int64_t>(in);
        for (uint64_t i = 0; i < np; ++i) {
            c.adam_m.push_back(read_doubles(in));
            c.adam_v.push_back(read_doubles(in));
        }
    }
    return c;
}

// Copy checkpoint values into a live registry. Names and sizes must match
// the registry exactly (same model architecture, same registration order).
inline void restore_registry(const Checkpoint& c, ParamRegistry& reg) {
    check_config(c.params.size() == reg.params.size(),
                 "checkpoint: parameter count mismatch");
    check_config(c.buffers.size() == reg.buffers.size(), "checkpoint: buffer count mismatch");
    for (size_t i = 0; i < reg.params.size(); ++i) {
        check_config(c.params[i].first == reg.params[i].name,
                     "checkpoint: parameter name mismatch at " + reg.params[i].name);
        Tensor& t = reg.params[i].var.value();
        check_config((int64_t)c.params[i].second.size() == t.numel(),
                     "checkpoint: parameter size mismatch at " + reg.params[i].name);
        std::copy(c.params[i].second.begin(), c.params[i].second.end(), t.data());
    }
    for (size_t i = 0; i < reg.buffers.size(); ++i) {
        check_config(c.buffers[i].first == reg.buffers[i].name,
                     "checkpoint: buffer name mismatch at " + reg.buffers[i].name);
        Tensor& t = *reg.buffers[i].tensor;
        check_config((int64_t)c.buffers[i].second.size() == t.numel(),
                     "checkpoint: buffer size mismatch at " + reg.buffers[i].name);
        std::copy(c.buffers[i].second.begin(), c.buffers[i].second.end(), t.data());
    }
}

inline void restore_adam(const Checkpoint& c, AdamState& opt) {
    check_config(c.has_optimizer, "checkpoint: no optimizer state stored");
    check_config(c.adam_m.size() == opt.m.size(), "checkpoint: optimizer slot count mismatch");
    opt.t = c.adam_t;
    for (size_t i = 0; i < opt.m.size(); ++i) {
        check_config((int64_t)c.adam_m[i].size() == opt.m[i].numel() &&
                         (int64_t)c.adam_v[i].size() == opt.v[i].numel(),
                     "checkpoint: optimizer slot size mismatch");
        std::copy(c.adam_m[i].begin(), c.adam_m[i].end(), opt.m[i].data());
        std::copy(c.adam_v[i].begin(), c.adam_v[i].end(), opt.v[i].data());
    }
}

}  // namespace drop
