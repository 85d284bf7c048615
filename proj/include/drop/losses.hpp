#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "drop/memory_bank.hpp"
#include "drop/ops.hpp"

namespace drop {

struct LossConfig {
    double lambda_parsing = 0.4;   // weight of the parsing objective
    double gamma_smooth = 0.1;     // weight of the total-variation term
    double epsilon_ls = 0.1;       // label smoothing strength
    double margin = 0.3;           // triplet hinge margin
    bool sum_heads = false;        // false: average CE across heads; true: sum

    void validate() const {
        check_config(lambda_parsing >= 0.0, "loss: lambda_parsing must be >= 0");
        check_config(gamma_smooth >= 0.0, "loss: gamma_smooth must be >= 0");
        check_config(epsilon_ls >= 0.0 && epsilon_ls < 1.0, "loss: epsilon_ls in [0,1)");
        check_config(margin >= 0.0, "loss: margin must be >= 0");
    }
};

// ---------------------------------------------------------------------------
// Per-part pairwise Euclidean distances with a visibility mask.
// dist[k,a,b] is defined only where valid[k,a,b] == 1 (both sides see part k).
// ---------------------------------------------------------------------------
struct PartDistanceMatrix {
    Tensor dist;   // [K,N,N]
    Tensor valid;  // [K,N,N], 0/1
    int k_parts = 0, n = 0;
};

inline PartDistanceMatrix part_distance_matrix(const Tensor& embs,
                                               const std::vector<std::vector<bool>>& vis) {
    check_numeric(embs.ndim() == 3, "part distances: embeddings must be [N,K,C]");
    const int N = embs.dim(0), K = embs.dim(1), C = embs.dim(2);
    check_config((int)vis.size() == N, "part distances: visibility rows mismatch");
    for (const auto& row : vis)
        check_config((int)row.size() == K, "part distances: visibility cols mismatch");
    PartDistanceMatrix m;
    m.k_parts = K;
    m.n = N;
    m.dist = Tensor({K, N, N});
    m.valid = Tensor({K, N, N});
    for (int k = 0; k < K; ++k)
        for (int a = 0; a < N; ++a) {
            if (!vis[(size_t)a][(size_t)k]) continue;
            for (int b = a; b < N; ++b) {
                if (!vis[(size_t)b][(size_t)k]) continue;
                double s = 0.0;
                for (int c = 0; c < C; ++c) {
                    const double d = embs.at(a, k, c) - embs.at(b, k, c);
                    s += d * d;
                }
                const double dist = std::sqrt(s);
                m.dist.at(k, a, b) = dist;
                m.dist.at(k, b, a) = dist;
                m.valid.at(k, a, b) = 1.0;
                m.valid.at(k, b, a) = 1.0;
            }
        }
    return m;
}

// ---------------------------------------------------------------------------
// Batch-hard triplet over part-averaged distances in a candidate pool.
//
// For each anchor, candidate distances are averaged over the parts visible
// on both sides; candidates sharing no part are skipped. The hardest
// positive (same identity, largest distance) and hardest negative
// (different identity, smallest distance) form a hinge. Anchors lacking a
// usable positive or negative are excluded; if all anchors are excluded the
// loss is zero and a diagnostic counter records it.
// ---------------------------------------------------------------------------
struct TripletDiagnostics {
    int counted = 0;     // anchors contributing to the loss
    int degenerate = 0;  // anchors with no usable (positive, negative) pair
    int active = 0;      // counted anchors with a positive hinge
};

namespace detail {

struct TripletPick {
    int anchor = -1, pos = -1, neg = -1;
    double d_ap = 0.0, d_an = 0.0;
    bool active = false;  // hinge strictly positive
};

// Shared selection core: batch-hard mining over mean shared-part distances.
inline std::vector<TripletPick> pick_triplets(const PartDistanceMatrix& m,
                                              const std::vector<int>& ids,
                                              const std::vector<int>& anchors, double margin,
                                              TripletDiagnostics* diag) {
    check_config((int)ids.size() == m.n, "triplet: identity count mismatch");
    std::vector<TripletPick> picks;
    for (int a : anchors) {
        check_config(a >= 0 && a < m.n, "triplet: anchor out of range");
        TripletPick best;
        best.anchor = a;
        bool has_pos = false, has_neg = false;
        for (int cand = 0; cand < m.n; ++cand) {
            if (cand == a) continue;
            int shared = 0;
            double dsum = 0.0;
            for (int k = 0; k < m.k_parts; ++k)
                if (m.valid.at(k, a, cand) != 0.0) {
                    dsum += m.dist.at(k, a, cand);
                    ++shared;
                }
            if (shared == 0) continue;
            const double d = dsum / shared;
            if (ids[(size_t)cand] == ids[(size_t)a]) {
                if (!has_pos || d > best.d_ap) {
                    best.d_ap = d;
                    best.pos = cand;
                    has_pos = true;
                }
            } else {
                if (!has_neg || d < best.d_an) {
                    best.d_an = d;
                    best.neg = cand;
                    has_neg = true;
                }
            }
        }
        if (has_pos && has_neg) {
            best.active = best.d_ap - best.d_an + margin > 0.0;
            picks.push_back(best);
            if (diag) {
                ++diag->counted;
                if (best.active) ++diag->active;
            }
        } else if (diag) {
            ++diag->degenerate;
        }
    }
    return picks;
}

inline double hinge_total(const std::vector<TripletPick>& picks, double margin) {
    double total = 0.0;
    for (const auto& p : picks) total += std::max(0.0, p.d_ap - p.d_an + margin);
    return total;
}

// Gradient of the mean shared-part distance between rows a and b of `embs`,
// scaled by `coef`, accumulated into per-row slots of `grad` ([N,K,C], but
// only rows >= first_live receive gradient, remapped by the caller).
inline void accumulate_pair_grad(const Tensor& embs,
                                 const std::vector<std::vector<bool>>& vis, int a, int b,
                                 double coef, Tensor& grad) {
    const int K = embs.dim(1), C = embs.dim(2);
    int shared = 0;
    for (int k = 0; k < K; ++k)
        if (vis[(size_t)a][(size_t)k] && vis[(size_t)b][(size_t)k]) ++shared;
    if (shared == 0) return;
    for (int k = 0; k < K; ++k) {
        if (!vis[(size_t)a][(size_t)k] || !vis[(size_t)b][(size_t)k]) continue;
        double s = 0.0;
        for (int c = 0; c < C; ++c) {
            const double d = embs.at(a, k, c) - embs.at(b, k, c);
            s += d * d;
        }
        const double dist = std::sqrt(s);
        if (dist <= 0.0) continue;  // coincident embeddings: subgradient 0
        const double scale = coef / (shared * dist);
        for (int c = 0; c < C; ++c) {
            const double diff = embs.at(a, k, c) - embs.at(b, k, c);
            grad.at(a, k, c) += scale * diff;
            grad.at(b, k, c) -= scale * diff;
        }
    }
}

}  // namespace detail

// Value-only evaluation (used by the trainer's metric log and by tests).
inline double part_triplet_value(const Tensor& embs, const std::vector<std::vector<bool>>& vis,
                             const std::vector<int>& ids, const std::vector<int>& anchors,
                             double margin, TripletDiagnostics* diag = nullptr) {
    TripletDiagnostics local;
    PartDistanceMatrix m = part_distance_matrix(embs, vis);
    auto picks = detail::pick_triplets(m, ids, anchors, margin, &local);
    if (diag) *diag = local;
    return local.counted > 0 ? detail::hinge_total(picks, margin) / local.counted : 0.0;
}

// Autograd version over a memory-bank snapshot. Anchors are the rows of the
// newest (gradient-connected) batch; candidates are every other row in the
// bank. Gradients flow into the snapshot's live part vars only.
inline Var banked_triplet_op(const PartsMemoryBank::Snapshot& snap, double margin,
                       TripletDiagnostics* diag = nullptr) {
    const int N = snap.n_total, B = N - snap.n_detached;
    const int K = snap.embeddings.dim(1), C = snap.embeddings.dim(2);
    check_config((int)snap.live_parts.size() == K, "banked_triplet: snapshot missing live parts");
    std::vector<int> anchors(B);
    for (int i = 0; i < B; ++i) anchors[(size_t)i] = snap.n_detached + i;

    TripletDiagnostics local;
    PartDistanceMatrix m = part_distance_matrix(snap.embeddings, snap.visibility);
    auto picks = detail::pick_triplets(m, snap.identities, anchors, margin, &local);
    if (diag) *diag = local;
    if (local.counted == 0) return Var(Tensor::scalar(0.0), false);
    const double value = detail::hinge_total(picks, margin) / local.counted;

    std::vector<Var> inputs = snap.live_parts;
    Tensor embs = snap.embeddings;
    auto vis = snap.visibility;
    const int counted = local.counted;
    const int first_live = snap.n_detached;
    std::vector<std::shared_ptr<Node>> live_nodes;
    for (const auto& v : inputs) live_nodes.push_back(v.node());

    return make_op(Tensor::scalar(value), inputs,
                   [=, picks = std::move(picks), embs = std::move(embs),
                    vis = std::move(vis)](Node& n) {
        const double g = n.grad[0] / counted;
        Tensor full({N, K, C});  // gradient over all rows; detached rows discarded
        for (const auto& p : picks) {
            if (!p.active) continue;
            detail::accumulate_pair_grad(embs, vis, p.anchor, p.pos, g, full);
            detail::accumulate_pair_grad(embs, vis, p.anchor, p.neg, -g, full);
        }
        for (int k = 0; k < K; ++k) {
            live_nodes[(size_t)k]->ensure_grad();
            Tensor& dst = live_nodes[(size_t)k]->grad;
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) dst.at(b, c) += full.at(first_live + b, k, c);
        }
    });
}

// ---------------------------------------------------------------------------
// Baseline: the same part-averaged batch-hard triplet restricted to the
// current batch (no memory). Implemented directly over the batch vars as an
// independent code path; with a single-batch memory the two must agree.
// ---------------------------------------------------------------------------
inline Var part_average_triplet_op(const std::vector<Var>& parts,
                                   const std::vector<std::vector<bool>>& vis,
                                   const std::vector<int>& ids, double margin,
                                   TripletDiagnostics* diag = nullptr) {
    const int K = (int)parts.size();
    check_config(K > 0, "part triplet: no parts");
    const int B = parts[0].value().dim(0), C = parts[0].value().dim(1);
    check_config((int)ids.size() == B && (int)vis.size() == B, "part triplet: batch mismatch");

    Tensor embs({B, K, C});
    for (int k = 0; k < K; ++k) {
        const Tensor& v = parts[(size_t)k].value();
        check_numeric(v.dim(0) == B && v.dim(1) == C, "part triplet: shape mismatch");
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) embs.at(b, k, c) = v.at(b, c);
    }
    std::vector<int> anchors(B);
    for (int i = 0; i < B; ++i) anchors[(size_t)i] = i;

    TripletDiagnostics local;
    PartDistanceMatrix m = part_distance_matrix(embs, vis);
    auto picks = detail::pick_triplets(m, ids, anchors, margin, &local);
    if (diag) *diag = local;
    if (local.counted == 0) return Var(Tensor::scalar(0.0), false);
    const double value = detail::hinge_total(picks, margin) / local.counted;

    const int counted = local.counted;
    std::vector<std::shared_ptr<Node>> nodes;
    for (const auto& v : parts) nodes.push_back(v.node());
    return make_op(Tensor::scalar(value), parts,
                   [=, picks = std::move(picks), embs = std::move(embs), vis = vis](Node& n) {
        const double g = n.grad[0] / counted;
        Tensor full({B, K, C});
        for (const auto& p : picks) {
            if (!p.active) continue;
            detail::accumulate_pair_grad(embs, vis, p.anchor, p.pos, g, full);
            detail::accumulate_pair_grad(embs, vis, p.anchor, p.neg, -g, full);
        }
        for (int k = 0; k < K; ++k) {
            nodes[(size_t)k]->ensure_grad();
            Tensor& dst = nodes[(size_t)k]->grad;
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) dst.at(b, c) += full.at(b, k, c);
        }
    });
}

// ---------------------------------------------------------------------------
// Baseline: center-based part triplet. Each (identity, part) pair present in
// the batch gets a center (mean over samples where the part is visible);
// an anchor is pulled toward its own identity's centers and pushed from the
// nearest other identity's, averaging distances over usable parts.
// ---------------------------------------------------------------------------
inline Var part_center_triplet_op(const std::vector<Var>& parts,
                                  const std::vector<std::vector<bool>>& vis,
                                  const std::vector<int>& ids, double margin,
                                  TripletDiagnostics* diag = nullptr) {
    const int K = (int)parts.size();
    check_config(K > 0, "center triplet: no parts");
    const int B = parts[0].value().dim(0), C = parts[0].value().dim(1);
    check_config((int)ids.size() == B && (int)vis.size() == B, "center triplet: batch mismatch");

    Tensor embs({B, K, C});
    for (int k = 0; k < K; ++k) {
        const Tensor& v = parts[(size_t)k].value();
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) embs.at(b, k, c) = v.at(b, c);
    }

    // Distinct identities in first-appearance order.
    std::vector<int> uniq;
    for (int b = 0; b < B; ++b)
        if (std::find(uniq.begin(), uniq.end(), ids[(size_t)b]) == uniq.end())
            uniq.push_back(ids[(size_t)b]);
    const int Y = (int)uniq.size();

    Tensor centers({Y, K, C});
    std::vector<std::vector<int>> counts(Y, std::vector<int>(K, 0));
    for (int b = 0; b < B; ++b) {
        const int y = (int)(std::find(uniq.begin(), uniq.end(), ids[(size_t)b]) - uniq.begin());
        for (int k = 0; k < K; ++k) {
            if (!vis[(size_t)b][(size_t)k]) continue;
            ++counts[(size_t)y][(size_t)k];
            for (int c = 0; c < C; ++c) centers.at(y, k, c) += embs.at(b, k, c);
        }
    }
    for (int y = 0; y < Y; ++y)
        for (int k = 0; k < K; ++k)
            if (counts[(size_t)y][(size_t)k] > 0)
                for (int c = 0; c < C; ++c) centers.at(y, k, c) /= counts[(size_t)y][(size_t)k];

    // Distance from anchor b to identity y's centers over usable parts.
    auto center_distance = [&](int b, int y, std::vector<int>* used) -> double {
        int s = 0;
        double sum = 0.0;
        for (int k = 0; k < K; ++k) {
            if (!vis[(size_t)b][(size_t)k] || counts[(size_t)y][(size_t)k] == 0) continue;
            double d2 = 0.0;
            for (int c = 0; c < C; ++c) {
                const double d = embs.at(b, k, c) - centers.at(y, k, c);
                d2 += d * d;
            }
            sum += std::sqrt(d2);
            if (used) used->push_back(k);
            ++s;
        }
        return s > 0 ? sum / s : -1.0;
    };

    struct Pick {
        int anchor, own_y, neg_y;
        bool active;
    };
    std::vector<Pick> picks;
    TripletDiagnostics local;
    double total = 0.0;
    for (int b = 0; b < B; ++b) {
        const int y = (int)(std::find(uniq.begin(), uniq.end(), ids[(size_t)b]) - uniq.begin());
        const double d_own = center_distance(b, y, nullptr);
        double d_neg = -1.0;
        int neg_y = -1;
        for (int yy = 0; yy < Y; ++yy) {
            if (yy == y) continue;
            const double d = center_distance(b, yy, nullptr);
            if (d < 0.0) continue;
            if (d_neg < 0.0 || d < d_neg) {
                d_neg = d;
                neg_y = yy;
            }
        }
        if (d_own < 0.0 || neg_y < 0) {
            ++local.degenerate;
            continue;
        }
        const double h = d_own - d_neg + margin;
        ++local.counted;
        if (h > 0.0) {
            total += h;
            ++local.active;
        }
        picks.push_back({b, y, neg_y, h > 0.0});
    }
    if (diag) *diag = local;
    if (local.counted == 0) return Var(Tensor::scalar(0.0), false);
    const double value = total / local.counted;

    const int counted = local.counted;
    std::vector<std::shared_ptr<Node>> nodes;
    for (const auto& v : parts) nodes.push_back(v.node());
    auto id_index = [uniq](int id) {
        return (int)(std::find(uniq.begin(), uniq.end(), id) - uniq.begin());
    };

    return make_op(Tensor::scalar(value), parts,
                   [=, picks = std::move(picks), embs = std::move(embs),
                    centers = std::move(centers), counts = std::move(counts),
                    vis = vis, ids = ids](Node& n) {
        const double g = n.grad[0] / counted;
        Tensor full({B, K, C});
        auto add_center_term = [&](int b, int y, double coef) {
            // d(b,y) = mean_k ||E_bk - C_yk|| over usable parts
            std::vector<int> used;
            for (int k = 0; k < K; ++k)
                if (vis[(size_t)b][(size_t)k] && counts[(size_t)y][(size_t)k] > 0)
                    used.push_back(k);
            if (used.empty()) return;
            const double inv_s = 1.0 / used.size();
            for (int k : used) {
                double d2 = 0.0;
                for (int c = 0; c < C; ++c) {
                    const double d = embs.at(b, k, c) - centers.at(y, k, c);
                    d2 += d * d;
                }
                const double dist = std::sqrt(d2);
                if (dist <= 0.0) continue;
                const double scale = coef * inv_s / dist;
                for (int c = 0; c < C; ++c) {
                    const double u = (embs.at(b, k, c) - centers.at(y, k, c)) * scale;
                    full.at(b, k, c) += u;
                    // center depends on every visible sample of identity y
                    const double share = 1.0 / counts[(size_t)y][(size_t)k];
                    for (int bb = 0; bb < B; ++bb)
                        if (id_index(ids[(size_t)bb]) == y && vis[(size_t)bb][(size_t)k])
                            full.at(bb, k, c) -= u * share;
                }
            }
        };
        for (const auto& p : picks) {
            if (!p.active) continue;
            add_center_term(p.anchor, p.own_y, g);
            add_center_term(p.anchor, p.neg_y, -g);
        }
        for (int k = 0; k < K; ++k) {
            nodes[(size_t)k]->ensure_grad();
            Tensor& dst = nodes[(size_t)k]->grad;
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) dst.at(b, c) += full.at(b, k, c);
        }
    });
}

// ---------------------------------------------------------------------------
// Parsing objective: label-smoothed pixel cross-entropy on the predicted
// probabilities plus a total-variation smoothness term, normalized by pixel
// count per image and averaged over the batch.
// ---------------------------------------------------------------------------
inline Var parsing_loss_op(const Var& probs, const Tensor& labels, double eps_ls,
                           double gamma) {
    const Tensor& pv = probs.value();
    check_numeric(pv.ndim() == 4, "parsing loss: probs must be [B,N,H,W]");
    const int B = pv.dim(0), N = pv.dim(1), H = pv.dim(2), W = pv.dim(3);
    check_numeric(labels.ndim() == 3 && labels.dim(0) == B && labels.dim(1) == H &&
                      labels.dim(2) == W,
                  "parsing loss: label shape mismatch");
    const double q_on = 1.0 - eps_ls * (double(N - 1) / N);
    const double q_off = eps_ls / N;

    double total = 0.0;
    for (int b = 0; b < B; ++b) {
        double ce = 0.0, tv = 0.0;
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                const double lv = labels.at(b, h, w);
                const int t = (int)lv;
                check_config(lv == (double)t && t >= 0 && t < N,
                             "parsing loss: label out of range");
                for (int j = 0; j < N; ++j) {
                    const double q = (j == t) ? q_on : q_off;
                    ce -= q * std::log(std::max(pv.at(b, j, h, w), 1e-12));
                }
            }
        for (int j = 0; j < N; ++j) {
            for (int h = 0; h + 1 < H; ++h)
                for (int w = 0; w < W; ++w)
                    tv += std::fabs(pv.at(b, j, h + 1, w) - pv.at(b, j, h, w));
            for (int h = 0; h < H; ++h)
                for (int w = 0; w + 1 < W; ++w)
                    tv += std::fabs(pv.at(b, j, h, w + 1) - pv.at(b, j, h, w));
        }
        total += (ce + gamma * tv) / ((double)H * W);
    }
    total /= B;

    auto pnode = probs.node();
    Tensor labels_c = labels;
    return make_op(Tensor::scalar(total), {probs}, [=, labels = std::move(labels_c)](Node& n) {
        pnode->ensure_grad();
        Tensor& dst = pnode->grad;
        const Tensor& p = pnode->value;
        const double g = n.grad[0] / ((double)B * H * W);
        auto sgn = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
        for (int b = 0; b < B; ++b) {
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    const int t = (int)labels.at(b, h, w);
                    for (int j = 0; j < N; ++j) {
                        const double q = (j == t) ? q_on : q_off;
                        if (p.at(b, j, h, w) > 1e-12)
                            dst.at(b, j, h, w) -= g * q / p.at(b, j, h, w);
                    }
                }
            for (int j = 0; j < N; ++j) {
                for (int h = 0; h + 1 < H; ++h)
                    for (int w = 0; w < W; ++w) {
                        const double s = sgn(p.at(b, j, h + 1, w) - p.at(b, j, h, w));
                        dst.at(b, j, h + 1, w) += g * gamma * s;
                        dst.at(b, j, h, w) -= g * gamma * s;
                    }
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w + 1 < W; ++w) {
                        const double s = sgn(p.at(b, j, h, w + 1) - p.at(b, j, h, w));
                        dst.at(b, j, h, w + 1) += g * gamma * s;
                        dst.at(b, j, h, w) -= g * gamma * s;
                    }
            }
        }
    });
}

// Identity classification loss over all heads (global + foreground + parts).
inline Var identity_ce_loss(const std::vector<Var>& head_logits, const std::vector<int>& labels,
                            double eps_ls, bool sum_heads) {
    check_config(!head_logits.empty(), "identity loss: no heads");
    std::vector<Var> terms;
    terms.reserve(head_logits.size());
    for (const auto& l : head_logits) terms.push_back(smoothed_ce(l, labels, eps_ls));
    const double coeff = sum_heads ? 1.0 : 1.0 / (double)terms.size();
    return add_scalars(terms, std::vector<double>(terms.size(), coeff));
}

// Weighted sum of the three objectives; rejects non-finite inputs by name.
inline Var total_objective(const Var& identity_loss, const Var& triplet_loss,
                           const Var& parsing_loss, double lambda_parsing) {
    check_numeric(std::isfinite(identity_loss.value()[0]), "identity loss is not finite");
    check_numeric(std::isfinite(triplet_loss.value()[0]), "triplet loss is not finite");
    check_numeric(std::isfinite(parsing_loss.value()[0]), "parsing loss is not finite");
    return add_scalars({identity_loss, triplet_loss, parsing_loss},
                       {1.0, 1.0, lambda_parsing});
}

}  // namespace drop
