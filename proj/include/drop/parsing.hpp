#pragma once

#include <string>
#include <vector>

#include "drop/backbone.hpp"

namespace drop {

enum class FusionMode { Cascade, Direct };
enum class PositionMode { None, OneDHeight, TwoD };

struct ParsingBranchConfig {
    int k_parts = 8;
    int reduced_channels = 32;
    FusionMode fusion = FusionMode::Cascade;
    PositionMode position = PositionMode::OneDHeight;
    double visibility_threshold = 0.4;

    void validate(const BackboneConfig& bb) const {
        check_config(k_parts >= 1, "parsing: k_parts must be >= 1");
        check_config(reduced_channels >= 1, "parsing: reduced_channels must be >= 1");
        int cmin = bb.stage_channels[0];
        for (int c : bb.stage_channels) cmin = std::min(cmin, c);
        check_config(reduced_channels <= cmin,
                     "parsing: reduced_channels must not exceed min(stage_channels)");
        check_config(visibility_threshold >= 0.0 && visibility_threshold <= 1.0,
                     "parsing: visibility_threshold must be in [0,1]");
    }
};

// Per-pixel class probabilities plus the quantities derived from them.
struct ParsingPrediction {
    Var probs;          // [B, K+1, H, W]; class 0 = background
    Tensor foreground;  // [B, H, W]: max over part classes per pixel
    std::vector<std::vector<double>> visibility_scores;  // [B][K], spatial max of part prob
    std::vector<std::vector<bool>> visibility;           // score > threshold
    int k_parts = 0;
    double threshold = 0.4;

    int height() const { return probs.value().dim(2); }
    int width() const { return probs.value().dim(3); }
};

inline ParsingPrediction derive_prediction(const Var& probs, double threshold) {
    const Tensor& p = probs.value();
    const int B = p.dim(0), C = p.dim(1), H = p.dim(2), W = p.dim(3);
    const int K = C - 1;
    ParsingPrediction out;
    out.probs = probs;
    out.k_parts = K;
    out.threshold = threshold;
    out.foreground = Tensor({B, H, W});
    out.visibility_scores.assign(B, std::vector<double>(K, 0.0));
    out.visibility.assign(B, std::vector<bool>(K, false));
    const int64_t plane = (int64_t)H * W;
    for (int b = 0; b < B; ++b) {
        for (int k = 1; k <= K; ++k) {
            const double* pp = p.data() + ((int64_t)(b * C + k)) * plane;
            double smax = 0.0;
            for (int64_t i = 0; i < plane; ++i) {
                smax = std::max(smax, pp[i]);
                double& f = out.foreground.data()[(int64_t)b * plane + i];
                if (k == 1 || pp[i] > f) f = pp[i];
            }
            out.visibility_scores[b][k - 1] = smax;
            out.visibility[b][k - 1] = smax > threshold;
        }
    }
    return out;
}

// Normalized coordinate planes fed to the position encoder. 1-channel height
// map in 1d mode, height+width maps in 2d mode. Degenerate axes get 0.
inline Tensor position_coordinates(int H, int W, PositionMode mode) {
    int ch = mode == PositionMode::TwoD ? 2 : 1;
    Tensor t({1, ch, H, W});
    for (int h = 0; h < H; ++h) {
        double hv = H > 1 ? (double)h / (H - 1) : 0.0;
        for (int w = 0; w < W; ++w) t.at(0, 0, h, w) = hv;
    }
    if (mode == PositionMode::TwoD)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) t.at(0, 1, h, w) = W > 1 ? (double)w / (W - 1) : 0.0;
    return t;
}

// Position-aware parsing branch: channel-reduction + detail-preserving
// upsampling over the pyramid, an additive learned position embedding, and
// a 1x1 classification head with per-pixel softmax.
struct ParsingBranch {
    ParsingBranchConfig cfg;
    std::vector<Conv2d> cr_conv;      // 1x1, zero-init bias
    std::vector<BatchNorm2d> cr_bn;
    Conv2d pos_conv1, pos_conv2;      // 3x3, width-clamped padding
    BatchNorm2d pos_bn1, pos_bn2;
    Conv2d head;                      // 1x1: C_r -> K+1

    ParsingBranch() = default;
    ParsingBranch(const ParsingBranchConfig& c, const BackboneConfig& bb, Rng& g) : cfg(c) {
        cfg.validate(bb);
        for (int i = 0; i < 4; ++i) {
            cr_conv.emplace_back(bb.stage_channels[static_cast<size_t>(i)], cfg.reduced_channels,
                                 1, 1, 0, true, g);
            cr_bn.emplace_back(cfg.reduced_channels);
        }
        if (cfg.position != PositionMode::None) {
            int in_ch = cfg.position == PositionMode::TwoD ? 2 : 1;
            pos_conv1 = Conv2d(in_ch, cfg.reduced_channels, 3, 1, 1, false, g, PadMode::WidthClamp);
            pos_bn1 = BatchNorm2d(cfg.reduced_channels);
            pos_conv2 = Conv2d(cfg.reduced_channels, cfg.reduced_channels, 3, 1, 1, false, g,
                               PadMode::WidthClamp);
            pos_bn2 = BatchNorm2d(cfg.reduced_channels);
        }
        head = Conv2d(cfg.reduced_channels, cfg.k_parts + 1, 1, 1, 0, true, g);
    }

    Var channel_reduce(const Var& stage, int i, bool training) {
        return cr_bn[static_cast<size_t>(i)].forward(
            cr_conv[static_cast<size_t>(i)].forward(stage), training);
    }

    // Detail-preserving upsampling to stage-1 resolution.
    Var fuse_pyramid(const FeaturePyramid& pyr, bool training) {
        const int H1 = pyr.p(1).value().dim(2), W1 = pyr.p(1).value().dim(3);
        Var out;
        if (cfg.fusion == FusionMode::Direct) {
            out = channel_reduce(pyr.p(1), 0, training);
            for (int i = 2; i <= 4; ++i) {
                Var r = channel_reduce(pyr.p(i), i - 1, training);
                out = add(out, upsample_bilinear(r, H1, W1));
            }
        } else {
            // top-down: repeatedly 2x-upsample and sum into the next stage up
            Var t = channel_reduce(pyr.p(4), 3, training);
            for (int i = 3; i >= 2; --i) {
                const Tensor& s = pyr.p(i).value();
                t = add(channel_reduce(pyr.p(i), i - 1, training),
                        upsample_bilinear(t, s.dim(2), s.dim(3)));
            }
            out = add(channel_reduce(pyr.p(1), 0, training), upsample_bilinear(t, H1, W1));
        }
        check_numeric(out.value().dim(2) == H1 && out.value().dim(3) == W1,
                      "parsing: fused map not at stage-1 resolution");
        return out;
    }

    // Learned embedding of normalized image coordinates, shape [1, C_r, H, W];
    // all-zero in mode none.
    Var position_embedding(int H, int W, bool training) {
        if (cfg.position == PositionMode::None)
            return Var(Tensor({1, cfg.reduced_channels, H, W}), false);
        Var coords(position_coordinates(H, W, cfg.position), false);
        Var h = relu(pos_bn1.forward(pos_conv1.forward(coords), training));
        return pos_bn2.forward(pos_conv2.forward(h), training);
    }

    ParsingPrediction parse(const FeaturePyramid& pyr, bool training) {
        Var fused = fuse_pyramid(pyr, training);
        Var pos = position_embedding(fused.value().dim(2), fused.value().dim(3), training);
        Var logits = head.forward(add(fused, pos));
        return derive_prediction(softmax_channels(logits), cfg.visibility_threshold);
    }

    void register_into(ParamRegistry& reg, const std::string& prefix) {
        for (int i = 0; i < 4; ++i) {
            cr_conv[static_cast<size_t>(i)].register_into(reg, prefix + ".cr" + std::to_string(i + 1));
            cr_bn[static_cast<size_t>(i)].register_into(reg,
                                                        prefix + ".cr" + std::to_string(i + 1) + ".bn");
        }
        if (cfg.position != PositionMode::None) {
            pos_conv1.register_into(reg, prefix + ".pos.conv1");
            pos_bn1.register_into(reg, prefix + ".pos.bn1");
            pos_conv2.register_into(reg, prefix + ".pos.conv2");
            pos_bn2.register_into(reg, prefix + ".pos.bn2");
        }
        head.register_into(reg, prefix + ".head");
    }
};

// Ablation baseline head (no decoupling): parses directly from the shared
// ReID feature map instead of the fused pyramid features.
struct SharedParsingHead {
    Conv2d head;
    double visibility_threshold = 0.4;

    SharedParsingHead() = default;
    SharedParsingHead(int in_channels, int k_parts, double vis_threshold, Rng& g)
        : head(in_channels, k_parts + 1, 1, 1, 0, true, g), visibility_threshold(vis_threshold) {}

    ParsingPrediction parse(const Var& feat) {
        return derive_prediction(softmax_channels(head.forward(feat)), visibility_threshold);
    }

    void register_into(ParamRegistry& reg, const std::string& prefix) {
        head.register_into(reg, prefix + ".head");
    }
};

}  // namespace drop
