#pragma once

#include <string>
#include <vector>

#include "drop/backbone.hpp"
#include "drop/layers.hpp"
#include "drop/parsing.hpp"

namespace drop {

// ---------------------------------------------------------------------------
// Re-identification branch: pooled appearance embeddings per image.
//
// The branch consumes a fused mid-resolution feature map built from the
// last three pyramid stages, pools it three ways (global average, weighted
// foreground, weighted per-part), and projects each pooled vector to the
// embedding dimension. Identity classification runs through per-head
// feature normalization followed by a bias-free classifier; retrieval uses
// the normalized vectors, metric learning uses the raw projections.
// ---------------------------------------------------------------------------

struct ReidBranchConfig {
    int embedding_dim = 64;
    // One projection shared by all part heads keeps the parameter count
    // independent of the part count; per-part classifiers stay separate.
    bool share_part_projection = true;

    void validate() const {
        check_config(embedding_dim > 0, "reid: embedding_dim must be positive");
    }
};

// Fuse stages 2..4 at stage-2 resolution: upsample the coarser maps and
// concatenate along channels. Output [B, c2+c3+c4, H2, W2].
inline Var build_reid_features(const FeaturePyramid& pyr) {
    const Tensor& p2 = pyr.p(2).value();
    const int H2 = p2.dim(2), W2 = p2.dim(3);
    return concat_channels(
        {pyr.p(2), upsample_bilinear(pyr.p(3), H2, W2), upsample_bilinear(pyr.p(4), H2, W2)});
}

// Pooling weights at feature resolution, derived from a parsing prediction.
// These are plain tensors: the pooling path treats region weights as fixed
// per step, so no gradient flows from the embeddings back into the parser.
struct PoolingWeights {
    Tensor foreground;           // [B,H,W]
    std::vector<Tensor> parts;   // K entries, each [B,H,W]
};

// Downsample prediction maps (at parsing resolution) to the feature
// resolution by area averaging and slice out per-part planes.
inline PoolingWeights pooling_weights_from_parsing(const ParsingPrediction& pred, int H, int W) {
    const Tensor& probs = pred.probs.value();
    const int B = probs.dim(0), K = pred.k_parts;
    PoolingWeights out;
    {
        Tensor fg4({B, 1, pred.foreground.dim(1), pred.foreground.dim(2)});
        for (int64_t i = 0; i < pred.foreground.numel(); ++i) fg4[i] = pred.foreground[i];
        Tensor down = avgpool_area_tensor(fg4, H, W);
        out.foreground = Tensor({B, H, W});
        for (int64_t i = 0; i < out.foreground.numel(); ++i) out.foreground[i] = down[i];
    }
    out.parts.reserve(K);
    for (int k = 0; k < K; ++k) {
        Tensor plane({B, 1, probs.dim(2), probs.dim(3)});
        for (int b = 0; b < B; ++b)
            for (int h = 0; h < probs.dim(2); ++h)
                for (int w = 0; w < probs.dim(3); ++w)
                    plane.at(b, 0, h, w) = probs.at(b, k + 1, h, w);
        Tensor down = avgpool_area_tensor(plane, H, W);
        Tensor p({B, H, W});
        for (int64_t i = 0; i < p.numel(); ++i) p[i] = down[i];
        out.parts.push_back(std::move(p));
    }
    return out;
}

// Raw (pre-normalization) embeddings for one forward pass.
struct EmbeddingVars {
    Var global;              // [B,C]
    Var foreground;          // [B,C]
    std::vector<Var> parts;  // K entries, each [B,C]
};

// Feature normalization + bias-free identity classifier. The normalized
// vector (not the logits) is what retrieval compares.
struct IdentityHead {
    BatchNorm1d bn;
    Linear cls;

    IdentityHead() = default;
    IdentityHead(int dim, int n_ids, Rng& g) : bn(dim), cls() {
        cls.w = Var::leaf(randn({n_ids, dim}, g, 0.01));  // no bias
    }

    struct Out {
        Var normalized;  // [B,C]
        Var logits;      // [B,n_ids]
    };
    Out forward(const Var& emb, bool training) {
        Out o;
        o.normalized = bn.forward(emb, training);
        o.logits = linear(o.normalized, cls.w, Var());
        return o;
    }

    void register_into(ParamRegistry& reg, const std::string& prefix) {
        bn.register_into(reg, prefix + ".bn");
        reg.add(prefix + ".cls.w", cls.w);
    }
};

struct ReidBranch {
    ReidBranchConfig cfg;
    int c_cat = 0, k_parts = 0, n_ids = 0;

    Linear fc_global;             // c_cat   -> C
    Linear fc_foreground;         // 2*c_cat -> C
    std::vector<Linear> fc_part;  // 1 entry if shared, else K

    IdentityHead head_global, head_foreground;
    std::vector<IdentityHead> head_part;  // always K entries

    ReidBranch() = default;
    ReidBranch(const ReidBranchConfig& cfg_, int c_cat_, int k_parts_, int n_ids_, Rng& g)
        : cfg(cfg_), c_cat(c_cat_), k_parts(k_parts_), n_ids(n_ids_) {
        cfg.validate();
        check_config(c_cat > 0 && k_parts > 0 && n_ids > 0, "reid: bad dimensions");
        const int C = cfg.embedding_dim;
        fc_global = Linear(c_cat, C, true, g);
        fc_foreground = Linear(2 * c_cat, C, true, g);
        const int n_proj = cfg.share_part_projection ? 1 : k_parts;
        for (int i = 0; i < n_proj; ++i) fc_part.emplace_back(2 * c_cat, C, true, g);
        head_global = IdentityHead(C, n_ids, g);
        head_foreground = IdentityHead(C, n_ids, g);
        for (int k = 0; k < k_parts; ++k) head_part.emplace_back(C, n_ids, g);
    }

    // feat: [B,c_cat,H,W]; weights at the same spatial size.
    EmbeddingVars pool(const Var& feat, const PoolingWeights& weights) const {
        const Tensor& fv = feat.value();
        check_numeric(fv.dim(1) == c_cat, "reid: channel mismatch");
        check_numeric((int)weights.parts.size() == k_parts, "reid: part count mismatch");
        check_numeric(weights.foreground.dim(1) == fv.dim(2) &&
                          weights.foreground.dim(2) == fv.dim(3),
                      "reid: weight resolution mismatch");
        EmbeddingVars out;
        out.global = fc_global.forward(gap(feat));
        out.foreground = fc_foreground.forward(weighted_pool_op(feat, weights.foreground));
        out.parts.reserve(k_parts);
        for (int k = 0; k < k_parts; ++k) {
            const Linear& fc = fc_part[cfg.share_part_projection ? 0 : k];
            out.parts.push_back(fc.forward(weighted_pool_op(feat, weights.parts[k])));
        }
        return out;
    }

    struct HeadOutputs {
        std::vector<Var> logits;      // K+2 logit sets: global, foreground, parts...
        std::vector<Var> normalized;  // matching normalized embeddings
    };
    HeadOutputs classify(const EmbeddingVars& embs, bool training) {
        HeadOutputs out;
        auto g = head_global.forward(embs.global, training);
        out.logits.push_back(g.logits);
        out.normalized.push_back(g.normalized);
        auto f = head_foreground.forward(embs.foreground, training);
        out.logits.push_back(f.logits);
        out.normalized.push_back(f.normalized);
        for (int k = 0; k < k_parts; ++k) {
            auto p = head_part[k].forward(embs.parts[k], training);
            out.logits.push_back(p.logits);
            out.normalized.push_back(p.normalized);
        }
        return out;
    }

    void register_into(ParamRegistry& reg, const std::string& prefix) {
        fc_global.register_into(reg, prefix + ".fc_global");
        fc_foreground.register_into(reg, prefix + ".fc_foreground");
        for (size_t i = 0; i < fc_part.size(); ++i)
            fc_part[i].register_into(reg, prefix + ".fc_part" + std::to_string(i));
        head_global.register_into(reg, prefix + ".head_global");
        head_foreground.register_into(reg, prefix + ".head_foreground");
        for (int k = 0; k < k_parts; ++k)
            head_part[k].register_into(reg, prefix + ".head_part" + std::to_string(k));
    }
};

}  // namespace drop
