#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "drop/tensor.hpp"

namespace drop {

// ---------------------------------------------------------------------------
// Retrieval over extracted embeddings. Distances combine up to three
// components — global, foreground, and visibility-gated part-to-part — and
// ranking quality is reported as CMC curves and mean average precision.
// ---------------------------------------------------------------------------

enum RetrievalMode : int {
    kModeGlobal = 1,
    kModeForeground = 2,
    kModeParts = 4,
};

inline int parse_retrieval_mode(const std::string& s) {
    int mode = 0;
    std::string token;
    auto flush = [&]() {
        if (token.empty()) return;
        if (token == "G" || token == "g")
            mode |= kModeGlobal;
        else if (token == "F" || token == "f")
            mode |= kModeForeground;
        else if (token == "P" || token == "p")
            mode |= kModeParts;
        else
            throw ConfigError("unknown retrieval mode token: " + token);
        token.clear();
    };
    for (char c : s) {
        if (c == '+')
            flush();
        else
            token.push_back(c);
    }
    flush();
    check_config(mode != 0, "retrieval mode is empty");
    return mode;
}

inline std::string retrieval_mode_name(int mode) {
    std::string s;
    if (mode & kModeGlobal) s += "G";
    if (mode & kModeForeground) s += s.empty() ? "F" : "+F";
    if (mode & kModeParts) s += s.empty() ? "P" : "+P";
    return s;
}

// One image's retrieval-side representation.
struct RetrievalRecord {
    std::vector<double> global;           // [C]
    std::vector<double> foreground;       // [C]
    std::vector<std::vector<double>> parts;  // [K][C]
    std::vector<bool> visibility;         // [K]
    int identity = 0;
    int camera = 0;
};

namespace detail {
inline double sq_euclid(const std::vector<double>& a, const std::vector<double>& b) {
    check_config(a.size() == b.size(), "retrieval: embedding width mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}
}  // namespace detail

// Mean of the selected distance components. The part component is defined
// only when at least one part is visible on both sides; when it is not,
// the mean falls back to the remaining selected components, or to the
// foreground distance if parts were the only selection.
inline double pair_distance(const RetrievalRecord& q, const RetrievalRecord& g, int mode) {
    double sum = 0.0;
    int n = 0;
    if (mode & kModeGlobal) {
        sum += std::sqrt(detail::sq_euclid(q.global, g.global));
        ++n;
    }
    if (mode & kModeForeground) {
        sum += std::sqrt(detail::sq_euclid(q.foreground, g.foreground));
        ++n;
    }
    if (mode & kModeParts) {
        check_config(q.visibility.size() == g.visibility.size(),
                     "retrieval: part count mismatch");
        double psum = 0.0;
        int shared = 0;
        for (size_t k = 0; k < q.visibility.size(); ++k) {
            if (!q.visibility[k] || !g.visibility[k]) continue;
            psum += std::sqrt(detail::sq_euclid(q.parts[k], g.parts[k]));
            ++shared;
        }
        if (shared > 0) {
            sum += psum / shared;
            ++n;
        } else if (n == 0) {
            sum += std::sqrt(detail::sq_euclid(q.foreground, g.foreground));
            ++n;
        }
    }
    check_config(n > 0, "retrieval: no distance component selected");
    return sum / n;
}

struct EvalResult {
    std::vector<double> cmc;          // cmc[r-1] = P(hit within top r)
    double mean_ap = 0.0;
    int evaluated_queries = 0;
    int skipped_queries = 0;          // queries with no cross-camera positive
    std::vector<double> per_query_ap;            // per evaluated query
    std::vector<std::vector<int>> rankings;      // gallery indices, best first
};

// Rank the gallery for every query. Gallery entries sharing both identity
// and camera with the query are excluded from its ranking. Distance ties
// break on the lower gallery index so results are reproducible.
inline EvalResult evaluate_retrieval(const std::vector<RetrievalRecord>& queries,
                                     const std::vector<RetrievalRecord>& gallery, int mode,
                                     int max_rank = 10) {
    check_config(!gallery.empty(), "retrieval: empty gallery");
    check_config(max_rank >= 1, "retrieval: max_rank must be >= 1");
    EvalResult out;
    out.cmc.assign((size_t)max_rank, 0.0);
    double ap_sum = 0.0;
    for (const auto& q : queries) {
        std::vector<std::pair<double, int>> scored;
        scored.reserve(gallery.size());
        int n_pos = 0;
        for (int gi = 0; gi < (int)gallery.size(); ++gi) {
            const auto& g = gallery[(size_t)gi];
            if (g.identity == q.identity && g.camera == q.camera) continue;
            scored.emplace_back(pair_distance(q, g, mode), gi);
            if (g.identity == q.identity) ++n_pos;
        }
        if (n_pos == 0) {
            ++out.skipped_queries;
            continue;
        }
        std::sort(scored.begin(), scored.end());
        std::vector<int> ranking;
        ranking.reserve(scored.size());
        double ap = 0.0;
        int hits = 0, first_hit = -1;
        for (int r = 0; r < (int)scored.size(); ++r) {
            const int gi = scored[(size_t)r].second;
            ranking.push_back(gi);
            if (gallery[(size_t)gi].identity == q.identity) {
                ++hits;
                ap += (double)hits / (r + 1);
                if (first_hit < 0) first_hit = r;
            }
        }
        ap /= n_pos;
        ap_sum += ap;
        out.per_query_ap.push_back(ap);
        out.rankings.push_back(std::move(ranking));
        for (int r = first_hit; r < max_rank; ++r) out.cmc[(size_t)r] += 1.0;
        ++out.evaluated_queries;
    }
    if (out.evaluated_queries > 0) {
        for (auto& v : out.cmc) v /= out.evaluated_queries;
        out.mean_ap = ap_sum / out.evaluated_queries;
    }
    return out;
}

}  // namespace drop
