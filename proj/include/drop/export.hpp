#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "drop/checkpoint.hpp"
#include "drop/retrieval.hpp"

namespace drop {

// ---------------------------------------------------------------------------
// Flat binary embedding files. Each section is independently valid, so files
// produced by separate runs can be concatenated with `cat` as long as the
// embedding width and part count agree.
//
//   magic "DROPEMB1" | u32 C | u32 K | u64 count
//   count rows of: i32 identity | i32 camera | u64 visibility bitmask |
//                  (2+K)*C f64 (global, foreground, parts 0..K-1)
// ---------------------------------------------------------------------------

namespace emb_detail {
constexpr char kMagic[8] = {'D', 'R', 'O', 'P', 'E', 'M', 'B', '1'};
}

inline void write_embeddings(const std::string& path, const std::vector<RetrievalRecord>& recs,
                             bool append = false) {
    using namespace ckpt_detail;
    check_config(!recs.empty(), "export: no records to write");
    const uint32_t C = (uint32_t)recs[0].global.size();
    const uint32_t K = (uint32_t)recs[0].parts.size();
    check_config(K <= 64, "export: visibility bitmask holds at most 64 parts");
    std::ofstream out(path, append ? std::ios::binary | std::ios::app : std::ios::binary);
    check_io(out.good(), "export: cannot write " + path);
    write_bytes(out, emb_detail::kMagic, sizeof(emb_detail::kMagic));
    write_pod<uint32_t>(out, C);
    write_pod<uint32_t>(out, K);
    write_pod<uint64_t>(out, recs.size());
    for (const auto& r : recs) {
        check_config(r.global.size() == C && r.foreground.size() == C &&
                         r.parts.size() == K && r.visibility.size() == K,
                     "export: inconsistent record widths");
        write_pod<int32_t>(out, r.identity);
        write_pod<int32_t>(out, r.camera);
        uint64_t bits = 0;
        for (uint32_t k = 0; k < K; ++k)
            if (r.visibility[k]) bits |= 1ull << k;
        write_pod<uint64_t>(out, bits);
        write_bytes(out, r.global.data(), sizeof(double) * C);
        write_bytes(out, r.foreground.data(), sizeof(double) * C);
        for (const auto& p : r.parts) {
            check_config(p.size() == C, "export: inconsistent part width");
            write_bytes(out, p.data(), sizeof(double) * C);
        }
    }
    out.flush();
    check_io(out.good(), "export: write failed " + path);
}

inline std::vector<RetrievalRecord> read_embeddings(const std::string& path) {
    using namespace ckpt_detail;
    std::ifstream in(path, std::ios::binary);
    check_io(in.good(), "export: cannot open " + path);
    std::vector<RetrievalRecord> recs;
    uint32_t C = 0, K = 0;
    bool first = true;
    while (true) {
        char magic[8];
        in.read(magic, sizeof(magic));
        if (in.gcount() == 0 && in.eof()) break;  // clean section boundary
        check_io(in.gcount() == sizeof(magic) &&
                     std::memcmp(magic, emb_detail::kMagic, sizeof(magic)) == 0,
                 "export: bad section magic in " + path);
        const uint32_t c = read_pod<uint32_t>(in);
        const uint32_t k = read_pod<uint32_t>(in);
        if (first) {
            C = c;
            K = k;
            first = false;
        } else {
            check_io(c == C && k == K, "export: mismatched section dimensions in " + path);
        }
        check_io(C > 0 && K > 0 && K <= 64, "export: implausible section header");
        const uint64_t count = read_pod<uint64_t>(in);
        for (uint64_t i = 0; i < count; ++i) {
            RetrievalRecord r;
            r.identity = read_pod<int32_t>(in);
            r.camera = read_pod<int32_t>(in);
            const uint64_t bits = read_pod<uint64_t>(in);
            r.visibility.resize(K);
            for (uint32_t kk = 0; kk < K; ++kk) r.visibility[kk] = (bits >> kk) & 1;
            auto read_vec = [&](std::vector<double>& v) {
                v.resize(C);
                read_bytes(in, v.data(), sizeof(double) * C);
            };
            read_vec(r.global);
            read_vec(r.foreground);
            r.parts.resize(K);
            for (uint32_t kk = 0; kk < K; ++kk) read_vec(r.parts[kk]);
            recs.push_back(std::move(r));
        }
    }
    check_io(!first, "export: file has no sections: " + path);
    return recs;
}

}  // namespace drop
