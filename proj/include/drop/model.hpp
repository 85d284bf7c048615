#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "drop/config.hpp"

namespace drop {

// ---------------------------------------------------------------------------
// Full model: backbone pyramid, a parsing path, and the ReID branch.
//
// With decouple=true the parsing branch reads the pyramid directly and emits
// masks at stage-1 resolution; the ReID branch reads a separate fusion of
// stages 2..4. With decouple=false (ablation baseline) a single 1x1 head
// parses the ReID feature map itself, so both tasks share one representation.
// ---------------------------------------------------------------------------

struct DropModel {
    BackboneConfig bcfg;
    ParsingBranchConfig pcfg;
    ReidBranchConfig rcfg;
    bool decouple = true;
    int n_identities = 0;

    Backbone backbone;
    ParsingBranch parsing_branch;
    SharedParsingHead shared_head;
    ReidBranch reid;
    ParamRegistry registry;

    DropModel() = default;
    // The registry stores raw pointers into member layers (BN running stats),
    // so a constructed model must stay put. Hold it by unique_ptr if needed.
    DropModel(const DropModel&) = delete;
    DropModel& operator=(const DropModel&) = delete;
    DropModel(DropModel&&) = delete;
    DropModel& operator=(DropModel&&) = delete;

    DropModel(const RunConfig& cfg, int n_ids, Rng& g)
        : bcfg(cfg.backbone),
          pcfg(cfg.parsing),
          rcfg(cfg.reid),
          decouple(cfg.decouple),
          n_identities(n_ids) {
        check_config(n_ids >= 2, "model: need at least 2 identities");
        backbone = Backbone(bcfg, g);
        if (decouple)
            parsing_branch = ParsingBranch(pcfg, bcfg, g);
        else
            shared_head =
                SharedParsingHead(c_cat(), pcfg.k_parts, pcfg.visibility_threshold, g);
        reid = ReidBranch(rcfg, c_cat(), pcfg.k_parts, n_ids, g);

        backbone.register_into(registry, "backbone");
        if (decouple)
            parsing_branch.register_into(registry, "parsing");
        else
            shared_head.register_into(registry, "parsing_shared");
        reid.register_into(registry, "reid");
    }

    int c_cat() const {
        return bcfg.stage_channels[1] + bcfg.stage_channels[2] + bcfg.stage_channels[3];
    }

    // image -> parsing-mask downsampling factor
    int mask_factor() const { return bcfg.stem_stride * (decouple ? 1 : 2); }

    struct Forward {
        FeaturePyramid pyramid;
        Var fused;  // [B, c_cat, H2, W2]
        ParsingPrediction parsing;
        PoolingWeights weights;
        EmbeddingVars embeddings;
        ReidBranch::HeadOutputs heads;
    };

    Forward forward(const Var& images, bool training) {
        Forward f;
        f.pyramid = backbone.forward(images, training);
        f.fused = build_reid_features(f.pyramid);
        if (decouple)
            f.parsing = parsing_branch.parse(f.pyramid, training);
        else
            f.parsing = shared_head.parse(f.fused);
        f.weights =
            pooling_weights_from_parsing(f.parsing, f.fused.value().dim(2), f.fused.value().dim(3));
        f.embeddings = reid.pool(f.fused, f.weights);
        f.heads = reid.classify(f.embeddings, training);
        return f;
    }
};

// --- batching helpers -------------------------------------------------------

inline Tensor stack_images(const std::vector<Sample>& samples) {
    check_config(!samples.empty(), "batch: no samples");
    const int H = samples[0].image.dim(1), W = samples[0].image.dim(2);
    Tensor out({(int)samples.size(), 3, H, W});
    for (size_t b = 0; b < samples.size(); ++b) {
        const Tensor& im = samples[b].image;
        check_config(im.dim(1) == H && im.dim(2) == W, "batch: inconsistent image sizes");
        std::copy(im.data(), im.data() + im.numel(), out.data() + (int64_t)b * im.numel());
    }
    return out;
}

// ground-truth masks at parsing resolution, [B,h,w]
inline Tensor stack_masks(const std::vector<Sample>& samples, int factor) {
    check_config(!samples.empty(), "batch: no samples");
    Tensor first = downsample_mask_majority(samples[0].mask, factor);
    const int h = first.dim(0), w = first.dim(1);
    Tensor out({(int)samples.size(), h, w});
    for (size_t b = 0; b < samples.size(); ++b) {
        Tensor m = b == 0 ? first : downsample_mask_majority(samples[b].mask, factor);
        std::copy(m.data(), m.data() + m.numel(), out.data() + (int64_t)b * m.numel());
    }
    return out;
}

inline std::vector<int> stack_labels(const std::vector<Sample>& samples) {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.identity);
    return out;
}

// Fraction of pixels whose argmax class matches the ground-truth label.
// probs [B,K+1,h,w], masks [B,h,w].
inline double parsing_pixel_accuracy(const Tensor& probs, const Tensor& masks) {
    check_config(probs.ndim() == 4 && masks.ndim() == 3, "accuracy: rank mismatch");
    const int B = probs.dim(0), C = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
    check_config(masks.dim(0) == B && masks.dim(1) == h && masks.dim(2) == w,
                 "accuracy: shape mismatch");
    int64_t correct = 0;
    for (int b = 0; b < B; ++b)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                int best = 0;
                for (int c = 1; c < C; ++c)
                    if (probs.at(b, c, y, x) > probs.at(b, best, y, x)) best = c;
                if (best == (int)masks.at(b, y, x)) ++correct;
            }
    return (double)correct / ((int64_t)B * h * w);
}

namespace detail {
inline std::vector<double> l2_normalized_row(const Tensor& t, int row) {
    const int C = t.dim(1);
    std::vector<double> v((size_t)C);
    double norm = 0.0;
    for (int c = 0; c < C; ++c) {
        v[(size_t)c] = t.at(row, c);
        norm += v[(size_t)c] * v[(size_t)c];
    }
    norm = std::max(std::sqrt(norm), 1e-12);
    for (auto& x : v) x /= norm;
    return v;
}
}  // namespace detail

// Evaluation-mode embedding extraction: normalized head outputs plus the
// predicted part visibility, one record per sample.
inline std::vector<RetrievalRecord> extract_records(DropModel& model,
                                                    const std::vector<Sample>& samples,
                                                    const std::vector<int>& indices,
                                                    int batch_size) {
    check_config(batch_size >= 1, "extract: batch_size must be >= 1");
    std::vector<RetrievalRecord> out;
    out.reserve(indices.size());
    for (size_t start = 0; start < indices.size(); start += (size_t)batch_size) {
        const size_t end = std::min(indices.size(), start + (size_t)batch_size);
        std::vector<Sample> chunk;
        chunk.reserve(end - start);
        for (size_t i = start; i < end; ++i) chunk.push_back(samples[(size_t)indices[i]]);
        Var images(stack_images(chunk), false);
        auto f = model.forward(images, false);
        const int K = f.parsing.k_parts;
        for (size_t b = 0; b < chunk.size(); ++b) {
            RetrievalRecord r;
            r.identity = chunk[b].identity;
            r.camera = chunk[b].camera;
            r.global = detail::l2_normalized_row(f.heads.normalized[0].value(), (int)b);
            r.foreground = detail::l2_normalized_row(f.heads.normalized[1].value(), (int)b);
            r.parts.reserve((size_t)K);
            for (int k = 0; k < K; ++k)
                r.parts.push_back(
                    detail::l2_normalized_row(f.heads.normalized[(size_t)k + 2].value(), (int)b));
            r.visibility.assign(f.parsing.visibility[b].begin(), f.parsing.visibility[b].end());
            out.push_back(std::move(r));
        }
    }
    return out;
}

// Parsing accuracy over a list of samples, evaluated in chunks.
inline double dataset_parsing_accuracy(DropModel& model, const std::vector<Sample>& samples,
                                       const std::vector<int>& indices, int batch_size) {
    check_config(!indices.empty(), "accuracy: no samples");
    double weighted = 0.0;
    int64_t total = 0;
    for (size_t start = 0; start < indices.size(); start += (size_t)batch_size) {
        const size_t end = std::min(indices.size(), start + (size_t)batch_size);
        std::vector<Sample> chunk;
        for (size_t i = start; i < end; ++i) chunk.push_back(samples[(size_t)indices[i]]);
        Var images(stack_images(chunk), false);
        auto f = model.forward(images, false);
        Tensor masks = stack_masks(chunk, model.mask_factor());
        weighted += parsing_pixel_accuracy(f.parsing.probs.value(), masks) *
                    (double)((end - start));
        total += (int64_t)(end - start);
    }
    return weighted / (double)total;
}

}  // namespace drop
