#include <gtest/gtest.h>

#include "drop/backbone.hpp"
#include "drop/parsing.hpp"
#include "drop/reid.hpp"
#include "oracles.hpp"

using drop::BackboneConfig;
using drop::FusionMode;
using drop::ParsingBranch;
using drop::ParsingBranchConfig;
using drop::PositionMode;
using drop::Rng;
using drop::Tensor;
using drop::Var;

namespace {

BackboneConfig small_backbone_cfg() {
  BackboneConfig c;
  c.input_height = 32;
  c.input_width = 16;
  c.stage_channels = {8, 12, 16, 24};
  c.stem_stride = 1;
  c.blocks_per_stage = 1;
  return c;
}

ParsingBranchConfig small_parsing_cfg() {
  ParsingBranchConfig c;
  c.k_parts = 4;
  c.reduced_channels = 6;
  return c;
}

}  // namespace

TEST(Backbone, PyramidShapesAndHalving) {
  Rng rng(101);
  BackboneConfig cfg = small_backbone_cfg();
  drop::Backbone bb(cfg, rng);
  Var img = Var::leaf(drop::rand_uniform({2, 3, 32, 16}, rng, 0.0, 1.0), false);
  auto pyr = bb.forward(img, true);
  ASSERT_EQ(pyr.stages.size(), 4u);
  for (int i = 0; i < 4; ++i) {
    const Tensor& v = pyr.stages[i].value();
    EXPECT_EQ(v.dim(0), 2);
    EXPECT_EQ(v.dim(1), cfg.stage_channels[i]);
    EXPECT_EQ(v.dim(2), cfg.stage_h(i));
    EXPECT_EQ(v.dim(3), cfg.stage_w(i));
    if (i > 0) {
      EXPECT_EQ(v.dim(2) * 2, pyr.stages[i - 1].value().dim(2));
      EXPECT_EQ(v.dim(3) * 2, pyr.stages[i - 1].value().dim(3));
    }
    EXPECT_TRUE(v.all_finite());
  }
}

TEST(Backbone, ConfigValidation) {
  Rng rng(102);
  BackboneConfig bad = small_backbone_cfg();
  bad.stage_channels = {8, 8, 16, 24};  // not strictly increasing
  EXPECT_THROW(drop::Backbone(bad, rng), drop::ConfigError);
  bad = small_backbone_cfg();
  bad.input_height = 30;  // not divisible by stride budget
  EXPECT_THROW(drop::Backbone(bad, rng), drop::ConfigError);
  bad = small_backbone_cfg();
  bad.stem_stride = 3;  // not a power of two
  EXPECT_THROW(drop::Backbone(bad, rng), drop::ConfigError);
}

TEST(Backbone, WrongInputSizeRejected) {
  Rng rng(103);
  drop::Backbone bb(small_backbone_cfg(), rng);
  Var img = Var::leaf(Tensor({1, 3, 16, 16}), false);
  EXPECT_THROW(bb.forward(img, true), drop::ConfigError);
}

TEST(ParsingBranch, OutputAtFullStageResolutionBothFusionModes) {
  Rng rng(111);
  BackboneConfig bcfg = small_backbone_cfg();
  drop::Backbone bb(bcfg, rng);
  Var img = Var::leaf(drop::rand_uniform({2, 3, 32, 16}, rng, 0.0, 1.0), false);
  auto pyr = bb.forward(img, false);

  for (FusionMode fm : {FusionMode::Cascade, FusionMode::Direct}) {
    ParsingBranchConfig pcfg = small_parsing_cfg();
    pcfg.fusion = fm;
    Rng prng(112);
    ParsingBranch pb(pcfg, bcfg, prng);
    auto pred = pb.parse(pyr, false);
    // Parsing maps live at the finest (stage-1) resolution.
    EXPECT_EQ(pred.probs.value().dim(1), pcfg.k_parts + 1);
    EXPECT_EQ(pred.probs.value().dim(2), bcfg.stage_h(0));
    EXPECT_EQ(pred.probs.value().dim(3), bcfg.stage_w(0));
    EXPECT_TRUE(pred.probs.value().all_finite());
  }
}

TEST(ParsingBranch, ProbabilitiesSumToOneAndForegroundIsMax) {
  Rng rng(113);
  BackboneConfig bcfg = small_backbone_cfg();
  drop::Backbone bb(bcfg, rng);
  ParsingBranch pb(small_parsing_cfg(), bcfg, rng);
  Var img = Var::leaf(drop::rand_uniform({2, 3, 32, 16}, rng, 0.0, 1.0), false);
  auto pred = pb.parse(bb.forward(img, true), true);

  const Tensor& p = pred.probs.value();
  for (int b = 0; b < p.dim(0); ++b)
    for (int h = 0; h < p.dim(2); ++h)
      for (int w = 0; w < p.dim(3); ++w) {
        double s = 0.0, mx = 0.0;
        for (int c = 0; c < p.dim(1); ++c) {
          s += p.at(b, c, h, w);
          if (c >= 1) mx = std::max(mx, p.at(b, c, h, w));
        }
        ASSERT_NEAR(s, 1.0, 1e-5);
        ASSERT_DOUBLE_EQ(pred.foreground.at(b, h, w), mx);
      }
}

TEST(ParsingBranch, VisibilityFromConstructedProbabilities) {
  // Hand-built probability maps: part 1 peaks at 0.9, part 2 at 0.25, with
  // a 0.4 threshold only part 1 counts as visible.
  Tensor probs({1, 3, 2, 2});
  auto set_pixel = [&](int h, int w, double bg, double p1, double p2) {
    probs.at(0, 0, h, w) = bg;
    probs.at(0, 1, h, w) = p1;
    probs.at(0, 2, h, w) = p2;
  };
  set_pixel(0, 0, 0.05, 0.90, 0.05);
  set_pixel(0, 1, 0.60, 0.15, 0.25);
  set_pixel(1, 0, 0.70, 0.20, 0.10);
  set_pixel(1, 1, 0.65, 0.15, 0.20);
  auto pred = drop::derive_prediction(Var(probs, false), 0.4);
  ASSERT_EQ(pred.k_parts, 2);
  EXPECT_NEAR(pred.visibility_scores[0][0], 0.90, 1e-12);
  EXPECT_NEAR(pred.visibility_scores[0][1], 0.25, 1e-12);
  EXPECT_TRUE(pred.visibility[0][0]);
  EXPECT_FALSE(pred.visibility[0][1]);
  EXPECT_DOUBLE_EQ(pred.foreground.at(0, 0, 0), 0.90);
  EXPECT_DOUBLE_EQ(pred.foreground.at(0, 1, 1), 0.20);
}

TEST(ParsingBranch, PositionEncodingIsHeightOnly) {
  // The 1-d height encoding must be constant across image columns: feed a
  // width-constant pyramid and check the logits stay width-constant, then
  // check the raw coordinate plane directly.
  Tensor coords = drop::position_coordinates(5, 3, PositionMode::OneDHeight);
  ASSERT_EQ(coords.dim(1), 1);
  for (int h = 0; h < 5; ++h)
    for (int w = 0; w < 3; ++w) ASSERT_DOUBLE_EQ(coords.at(0, 0, h, w), h / 4.0);

  Tensor c2 = drop::position_coordinates(4, 4, PositionMode::TwoD);
  ASSERT_EQ(c2.dim(1), 2);
  ASSERT_DOUBLE_EQ(c2.at(0, 1, 2, 3), 1.0);  // x plane, last column
  ASSERT_DOUBLE_EQ(c2.at(0, 0, 3, 1), 1.0);  // y plane, last row

  Rng rng(114);
  ParsingBranchConfig pcfg = small_parsing_cfg();
  BackboneConfig bcfg = small_backbone_cfg();
  ParsingBranch pb(pcfg, bcfg, rng);
  Var emb = pb.position_embedding(8, 4, false);
  const Tensor& e = emb.value();
  ASSERT_EQ(e.dim(1), pcfg.reduced_channels);
  for (int c = 0; c < e.dim(1); ++c)
    for (int h = 0; h < e.dim(2); ++h)
      for (int w = 1; w < e.dim(3); ++w)
        ASSERT_NEAR(e.at(0, c, h, w), e.at(0, c, h, 0), 1e-10);
}

TEST(ParsingBranch, PositionModeNoneIsZero) {
  Rng rng(115);
  ParsingBranchConfig pcfg = small_parsing_cfg();
  pcfg.position = PositionMode::None;
  ParsingBranch pb(pcfg, small_backbone_cfg(), rng);
  Var emb = pb.position_embedding(8, 4, false);
  EXPECT_DOUBLE_EQ(emb.value().max_abs(), 0.0);
}

TEST(ReidBranch, FusedFeatureShape) {
  Rng rng(121);
  BackboneConfig bcfg = small_backbone_cfg();
  drop::Backbone bb(bcfg, rng);
  Var img = Var::leaf(drop::rand_uniform({2, 3, 32, 16}, rng, 0.0, 1.0), false);
  auto pyr = bb.forward(img, false);
  Var fused = drop::build_reid_features(pyr);
  const int c_cat = bcfg.stage_channels[1] + bcfg.stage_channels[2] + bcfg.stage_channels[3];
  EXPECT_EQ(fused.value().dim(1), c_cat);
  EXPECT_EQ(fused.value().dim(2), bcfg.stage_h(1));
  EXPECT_EQ(fused.value().dim(3), bcfg.stage_w(1));
  EXPECT_TRUE(fused.value().all_finite());
}

TEST(ReidBranch, EmbeddingsAndHeads) {
  Rng rng(122);
  BackboneConfig bcfg = small_backbone_cfg();
  drop::Backbone bb(bcfg, rng);
  ParsingBranchConfig pcfg = small_parsing_cfg();
  ParsingBranch pb(pcfg, bcfg, rng);
  drop::ReidBranchConfig rcfg;
  rcfg.embedding_dim = 16;
  const int c_cat = bcfg.stage_channels[1] + bcfg.stage_channels[2] + bcfg.stage_channels[3];
  drop::ReidBranch rb(rcfg, c_cat, pcfg.k_parts, 7, rng);

  Var img = Var::leaf(drop::rand_uniform({3, 3, 32, 16}, rng, 0.0, 1.0), false);
  auto pyr = bb.forward(img, true);
  auto pred = pb.parse(pyr, true);
  Var fused = drop::build_reid_features(pyr);
  auto weights =
      drop::pooling_weights_from_parsing(pred, fused.value().dim(2), fused.value().dim(3));
  ASSERT_EQ((int)weights.parts.size(), pcfg.k_parts);

  auto embs = rb.pool(fused, weights);
  EXPECT_EQ(embs.global.value().dim(1), 16);
  EXPECT_EQ(embs.foreground.value().dim(1), 16);
  ASSERT_EQ((int)embs.parts.size(), pcfg.k_parts);
  for (const auto& p : embs.parts) EXPECT_TRUE(p.value().all_finite());

  auto heads = rb.classify(embs, true);
  ASSERT_EQ((int)heads.logits.size(), pcfg.k_parts + 2);
  for (const auto& l : heads.logits) {
    EXPECT_EQ(l.value().dim(0), 3);
    EXPECT_EQ(l.value().dim(1), 7);
    EXPECT_TRUE(l.value().all_finite());
  }
}

TEST(ReidBranch, PoolingWeightsAreGradientFree) {
  // Region weights are data, not graph nodes: pooling must not link the
  // embedding graph back into the parser's probability maps.
  Rng rng(123);
  BackboneConfig bcfg = small_backbone_cfg();
  drop::Backbone bb(bcfg, rng);
  ParsingBranchConfig pcfg = small_parsing_cfg();
  ParsingBranch pb(pcfg, bcfg, rng);
  Var img = Var::leaf(drop::rand_uniform({1, 3, 32, 16}, rng, 0.0, 1.0), false);
  auto pyr = bb.forward(img, true);
  auto pred = pb.parse(pyr, true);
  Var fused = drop::build_reid_features(pyr);
  auto weights =
      drop::pooling_weights_from_parsing(pred, fused.value().dim(2), fused.value().dim(3));

  drop::ReidBranchConfig rcfg;
  rcfg.embedding_dim = 8;
  const int c_cat = bcfg.stage_channels[1] + bcfg.stage_channels[2] + bcfg.stage_channels[3];
  drop::ReidBranch rb(rcfg, c_cat, pcfg.k_parts, 4, rng);
  auto embs = rb.pool(fused, weights);

  drop::backward(drop::sum_all(embs.foreground));
  // The parsing head's conv weight is reachable only through the parsing
  // loss; an embedding backward pass must leave it untouched.
  EXPECT_DOUBLE_EQ(pb.head.w.grad_or_zero().max_abs(), 0.0);
}
