#pragma once

#include <string>
#include <vector>

#include "drop/layers.hpp"

namespace drop {

struct BackboneConfig {
    int input_height = 64;
    int input_width = 32;
    std::vector<int> stage_channels = {16, 32, 64, 128};
    int stem_stride = 4;
    int blocks_per_stage = 1;

    void validate() const {
        check_config(stage_channels.size() == 4, "backbone: expected 4 stage channel counts");
        for (int c : stage_channels) check_config(c > 0, "backbone: channels must be positive");
        for (size_t i = 1; i < 4; ++i)
            check_config(stage_channels[i] > stage_channels[i - 1],
                         "backbone: stage_channels must be strictly increasing");
        check_config(stem_stride >= 1 && (stem_stride & (stem_stride - 1)) == 0,
                     "backbone: stem_stride must be a power of two");
        int div = stem_stride * 8;
        check_config(input_height % div == 0 && input_width % div == 0,
                     "backbone: input dims must be divisible by stem_stride * 8");
        check_config(blocks_per_stage >= 1, "backbone: blocks_per_stage must be >= 1");
    }

    // stage index i in [0,4): spatial dims of P_{i+1}
    int stage_h(int i) const { return input_height / stem_stride >> i; }
    int stage_w(int i) const { return input_width / stem_stride >> i; }
};

// Four multi-resolution stage outputs P_1..P_4; each stage halves the
// previous stage's spatial dims.
struct FeaturePyramid {
    std::vector<Var> stages;  // size 4, [B, C_i, H_i, W_i]

    const Var& p(int i) const { return stages[static_cast<size_t>(i - 1)]; }  // 1-based
    int batch() const { return stages[0].value().dim(0); }
};

inline void validate_pyramid(const FeaturePyramid& pyr, const BackboneConfig& cfg) {
    check_numeric(pyr.stages.size() == 4, "pyramid: expected 4 stages");
    for (int i = 0; i < 4; ++i) {
        const Tensor& t = pyr.stages[static_cast<size_t>(i)].value();
        check_numeric(t.ndim() == 4, "pyramid: stage rank mismatch");
        check_numeric(t.dim(1) == cfg.stage_channels[static_cast<size_t>(i)] &&
                          t.dim(2) == cfg.stage_h(i) && t.dim(3) == cfg.stage_w(i),
                      "pyramid: stage " + std::to_string(i + 1) + " shape contract violated");
        check_numeric(t.all_finite(),
                      "pyramid: non-finite activations at stage " + std::to_string(i + 1));
    }
}

// Small multi-stage CNN standing in for a full-size pretrained backbone: a stem of
// stride-2 convs followed by four stages of residual blocks with stride-2
// transitions between stages.
struct Backbone {
    BackboneConfig cfg;
    std::vector<ConvBnRelu> stem;
    std::vector<ConvBnRelu> transitions;              // stages 2..4
    std::vector<std::vector<ResidualBlock>> stages;   // per stage

    Backbone() = default;
    Backbone(const BackboneConfig& c, Rng& g) : cfg(c) {
        cfg.validate();
        int steps = 0;
        for (int s = cfg.stem_stride; s > 1; s /= 2) ++steps;
        int ci = 3;
        for (int i = 0; i < std::max(steps, 1); ++i) {
            int stride = steps == 0 ? 1 : 2;
            stem.emplace_back(ci, cfg.stage_channels[0], stride, g);
            ci = cfg.stage_channels[0];
        }
        for (int s = 0; s < 4; ++s) {
            if (s > 0)
                transitions.emplace_back(cfg.stage_channels[s - 1], cfg.stage_channels[s], 2, g);
            std::vector<ResidualBlock> blocks;
            for (int b = 0; b < cfg.blocks_per_stage; ++b)
                blocks.emplace_back(cfg.stage_channels[s], g);
            stages.push_back(std::move(blocks));
        }
    }

    FeaturePyramid forward(const Var& image, bool training) {
        const Tensor& x = image.value();
        check_config(x.ndim() == 4 && x.dim(1) == 3 && x.dim(2) == cfg.input_height &&
                         x.dim(3) == cfg.input_width,
                     "backbone: image dims do not match config");
        Var h = image;
        for (auto& s : stem) h = s.forward(h, training);
        FeaturePyramid pyr;
        for (int s = 0; s < 4; ++s) {
            if (s > 0) h = transitions[static_cast<size_t>(s - 1)].forward(h, training);
            for (auto& blk : stages[static_cast<size_t>(s)]) h = blk.forward(h, training);
            pyr.stages.push_back(h);
        }
        validate_pyramid(pyr, cfg);
        return pyr;
    }

    void register_into(ParamRegistry& reg, const std::string& prefix) {
        for (size_t i = 0; i < stem.size(); ++i)
            stem[i].register_into(reg, prefix + ".stem" + std::to_string(i));
        for (size_t s = 0; s < stages.size(); ++s) {
            if (s > 0)
                transitions[s - 1].register_into(reg, prefix + ".trans" + std::to_string(s + 1));
            for (size_t b = 0; b < stages[s].size(); ++b)
                stages[s][b].register_into(
                    reg, prefix + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(b));
        }
    }
};

}  // namespace drop
