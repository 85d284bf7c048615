#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include "drop/synthetic.hpp"

using drop::Dataset;
using drop::Rng;
using drop::Sample;
using drop::SyntheticConfig;
using drop::Tensor;

namespace {

SyntheticConfig tiny_cfg() {
  SyntheticConfig cfg;
  cfg.n_identities = 4;
  cfg.images_per_identity = 8;
  cfg.height = 64;
  cfg.width = 32;
  cfg.k_parts = 8;
  cfg.occlusion_prob = 0.5;
  cfg.seed = 7;
  return cfg;
}

bool samples_equal(const Sample& a, const Sample& b) {
  return a.image == b.image && a.mask == b.mask && a.identity == b.identity &&
         a.camera == b.camera && a.occluded == b.occluded && a.split == b.split;
}

}  // namespace

TEST(Identities, SeparationAndDeterminism) {
  SyntheticConfig cfg = tiny_cfg();
  auto ids1 = drop::generate_identities(cfg);
  auto ids2 = drop::generate_identities(cfg);
  ASSERT_EQ(ids1.size(), 4u);
  for (size_t i = 0; i < ids1.size(); ++i)
    for (int k = 0; k < 8; ++k)
      for (int c = 0; c < 3; ++c)
        ASSERT_DOUBLE_EQ(ids1[i].part_colors[k][c], ids2[i].part_colors[k][c]);
  for (size_t i = 0; i < ids1.size(); ++i)
    for (size_t j = i + 1; j < ids1.size(); ++j)
      EXPECT_GE(drop::appearance_distance(ids1[i], ids1[j]), cfg.color_separation);
}

TEST(Identities, ImpossibleSeparationHitsAttemptBudget) {
  SyntheticConfig cfg = tiny_cfg();
  cfg.n_identities = 50;
  cfg.color_separation = 1.19;  // nearly the color-cube diagonal: unsatisfiable
  EXPECT_THROW(drop::generate_identities(cfg), drop::ConfigError);
}

TEST(Render, MaskPixelsCarryExactPartColors) {
  SyntheticConfig cfg = tiny_cfg();
  auto ids = drop::generate_identities(cfg);
  Rng g(99);
  Sample s = drop::render_core(ids[0], cfg, g, false);
  int part_pixels = 0;
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x) {
      const int lbl = (int)s.mask.at(y, x);
      ASSERT_GE(lbl, 0);
      ASSERT_LE(lbl, cfg.k_parts);
      if (lbl == 0) continue;
      ++part_pixels;
      for (int c = 0; c < 3; ++c)
        ASSERT_DOUBLE_EQ(s.image.at(c, y, x), ids[0].part_colors[lbl - 1][c]);
    }
  // the figure occupies a sensible share of the frame
  EXPECT_GT(part_pixels, cfg.height * cfg.width / 10);
  EXPECT_LT(part_pixels, cfg.height * cfg.width * 2 / 3);
}

TEST(Render, AllPartsPresentWhenUnoccluded) {
  SyntheticConfig cfg = tiny_cfg();
  auto ids = drop::generate_identities(cfg);
  Rng g(123);
  Sample s = drop::render_core(ids[1], cfg, g, false);
  std::set<int> seen;
  for (int64_t i = 0; i < s.mask.numel(); ++i) seen.insert((int)s.mask[i]);
  for (int k = 0; k <= 8; ++k) EXPECT_TRUE(seen.count(k)) << "missing label " << k;
}

TEST(Render, BoxOccluderRemovesLowerBodyLabels) {
  SyntheticConfig cfg = tiny_cfg();
  auto ids = drop::generate_identities(cfg);
  for (int trial = 0; trial < 20; ++trial) {
    Rng g(500 + trial);
    Sample s = drop::render_core(ids[trial % 4], cfg, g, true);
    std::set<int> seen;
    for (int64_t i = 0; i < s.mask.numel(); ++i) seen.insert((int)s.mask[i]);
    EXPECT_TRUE(seen.count(1));  // head survives
    EXPECT_TRUE(seen.count(2));  // torso survives
    for (int k = 5; k <= 8; ++k) EXPECT_FALSE(seen.count(k)) << "leg/foot label " << k;
  }
}

TEST(Render, SecondPersonOccluderLabelsBackground) {
  SyntheticConfig cfg = tiny_cfg();
  cfg.occluder = drop::OccluderKind::SecondPerson;
  auto ids = drop::generate_identities(cfg);
  Rng g(321);
  Sample occluded = drop::render_core(ids[0], cfg, g, true);
  Rng g2(321);
  Sample clean = drop::render_core(ids[0], cfg, g2, false);
  // Occlusion may only remove part labels, never invent them.
  int removed = 0;
  for (int64_t i = 0; i < clean.mask.numel(); ++i) {
    if (occluded.mask[i] != clean.mask[i]) {
      ASSERT_EQ((int)occluded.mask[i], 0);
      ++removed;
    }
  }
  EXPECT_GT(removed, 20);  // the walker actually covers part of the figure
}

TEST(Render, CameraTransformShiftsBrightness) {
  SyntheticConfig cfg = tiny_cfg();
  auto ids = drop::generate_identities(cfg);
  Rng g(77);
  Sample s = drop::render_core(ids[0], cfg, g, false);
  Tensor cam0 = s.image, cam1 = s.image;
  Rng n0(1), n1(1);
  drop::apply_camera(cam0, 0, n0);
  drop::apply_camera(cam1, 1, n1);
  double m0 = 0.0, m1 = 0.0;
  for (int64_t i = 0; i < cam0.numel(); ++i) {
    m0 += cam0[i];
    m1 += cam1[i];
  }
  EXPECT_GT(m1 / cam1.numel(), m0 / cam0.numel() + 0.01);
  EXPECT_THROW(drop::apply_camera(cam0, 2, n0), drop::ConfigError);
}

TEST(Dataset, DeterministicPerSeedAndSplitLayout) {
  SyntheticConfig cfg = tiny_cfg();
  Dataset a = drop::generate_dataset(cfg);
  Dataset b = drop::generate_dataset(cfg);
  ASSERT_EQ(a.samples.size(), 32u);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  for (size_t i = 0; i < a.samples.size(); ++i)
    ASSERT_TRUE(samples_equal(a.samples[i], b.samples[i])) << "sample " << i;

  cfg.seed = 8;
  Dataset c = drop::generate_dataset(cfg);
  bool any_diff = false;
  for (size_t i = 0; i < a.samples.size() && !any_diff; ++i)
    any_diff = !(a.samples[i].image == c.samples[i].image);
  EXPECT_TRUE(any_diff);

  // fractions 0.5 / 0.25 over 8 images: 4 train, 2 query, 2 gallery per id
  EXPECT_EQ(a.train_indices.size(), 16u);
  EXPECT_EQ(a.query_indices.size(), 8u);
  EXPECT_EQ(a.gallery_indices.size(), 8u);
  for (int qi : a.query_indices) {
    const Sample& q = a.samples[qi];
    EXPECT_TRUE(q.occluded);  // occlude_queries defaults to true
    // every query identity has a cross-camera gallery positive
    bool has_cross = false;
    for (int gi : a.gallery_indices) {
      const Sample& g = a.samples[gi];
      if (g.identity == q.identity && g.camera != q.camera) has_cross = true;
      EXPECT_FALSE(g.occluded);  // gallery is never occluded
    }
    EXPECT_TRUE(has_cross);
  }
}

TEST(Dataset, WriteLoadRoundTrip) {
  namespace fs = std::filesystem;
  SyntheticConfig cfg = tiny_cfg();
  cfg.n_identities = 2;
  cfg.images_per_identity = 8;
  Dataset ds = drop::generate_dataset(cfg);
  const std::string dir = (fs::temp_directory_path() / "drop_ds_test").string();
  fs::remove_all(dir);
  drop::write_dataset(ds, dir);
  Dataset back = drop::load_dataset(dir);

  ASSERT_EQ(back.samples.size(), ds.samples.size());
  EXPECT_EQ(back.cfg.k_parts, cfg.k_parts);
  EXPECT_EQ(back.cfg.seed, cfg.seed);
  EXPECT_EQ(back.train_indices, ds.train_indices);
  EXPECT_EQ(back.query_indices, ds.query_indices);
  EXPECT_EQ(back.gallery_indices, ds.gallery_indices);
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const Sample& s = ds.samples[i];
    const Sample& t = back.samples[i];
    EXPECT_EQ(s.identity, t.identity);
    EXPECT_EQ(s.camera, t.camera);
    EXPECT_EQ(s.split, t.split);
    EXPECT_EQ(s.occluded, t.occluded);
    ASSERT_TRUE(s.mask == t.mask);  // labels survive exactly
    double max_err = 0.0;           // images survive 8-bit quantization
    for (int64_t j = 0; j < s.image.numel(); ++j)
      max_err = std::max(max_err, std::fabs(s.image[j] - t.image[j]));
    ASSERT_LE(max_err, 0.5 / 255.0 + 1e-12);
  }
  fs::remove_all(dir);
}

TEST(Dataset, ManifestKeyOrderIsStable) {
  namespace fs = std::filesystem;
  SyntheticConfig cfg = tiny_cfg();
  cfg.n_identities = 2;
  Dataset ds = drop::generate_dataset(cfg);
  const std::string dir = (fs::temp_directory_path() / "drop_ds_manifest").string();
  fs::remove_all(dir);
  drop::write_dataset(ds, dir);
  std::ifstream in(dir + "/manifest.json");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  // top-level keys appear in the documented order
  size_t p_format = text.find("\"format\"");
  size_t p_seed = text.find("\"seed\"");
  size_t p_height = text.find("\"height\"");
  size_t p_samples = text.find("\"samples\"");
  ASSERT_NE(p_format, std::string::npos);
  EXPECT_LT(p_format, p_seed);
  EXPECT_LT(p_seed, p_height);
  EXPECT_LT(p_height, p_samples);
  // per-sample keys too
  size_t p_index = text.find("\"index\"", p_samples);
  size_t p_identity = text.find("\"identity\"", p_samples);
  size_t p_camera = text.find("\"camera\"", p_samples);
  EXPECT_LT(p_index, p_identity);
  EXPECT_LT(p_identity, p_camera);
  fs::remove_all(dir);
}

TEST(Augment, FlipIsInvolutionAndSwapsSides) {
  SyntheticConfig cfg = tiny_cfg();
  auto ids = drop::generate_identities(cfg);
  Rng g(42);
  Sample s = drop::render_core(ids[0], cfg, g, false);
  Sample once = drop::flip_sample(s, cfg.k_parts);
  Sample twice = drop::flip_sample(once, cfg.k_parts);
  EXPECT_TRUE(s.image == twice.image);
  EXPECT_TRUE(s.mask == twice.mask);

  // a right-arm pixel must land on the left-arm label after mirroring
  const auto map = drop::flip_label_map(8);
  EXPECT_EQ(map[3], 4);
  EXPECT_EQ(map[4], 3);
  EXPECT_EQ(map[5], 6);
  EXPECT_EQ(map[7], 8);
  EXPECT_EQ(drop::flip_label_map(5), (std::vector<int>{0, 1, 2, 3, 4, 5}));
  bool checked = false;
  for (int y = 0; y < cfg.height && !checked; ++y)
    for (int x = 0; x < cfg.width && !checked; ++x)
      if ((int)s.mask.at(y, x) == 3) {
        EXPECT_EQ((int)once.mask.at(y, cfg.width - 1 - x), 4);
        checked = true;
      }
  EXPECT_TRUE(checked);
}

TEST(Augment, ErasedRegionsBecomeBackground) {
  SyntheticConfig cfg = tiny_cfg();
  auto ids = drop::generate_identities(cfg);
  Rng g(43);
  Sample s = drop::render_core(ids[0], cfg, g, false);
  drop::AugmentConfig aug;
  aug.flip_prob = 0.0;
  aug.pad = 0;
  aug.erase_prob = 1.0;
  Rng ag(44);
  Sample out = drop::augment_sample(s, aug, cfg.k_parts, ag);
  // erasing only clears labels, never creates them
  int cleared = 0;
  for (int64_t i = 0; i < s.mask.numel(); ++i) {
    if (out.mask[i] != s.mask[i]) {
      ASSERT_EQ((int)out.mask[i], 0);
      ++cleared;
    }
  }
  EXPECT_GT(cleared, 0);
}

TEST(Augment, PadCropKeepsShapeAndLabels) {
  SyntheticConfig cfg = tiny_cfg();
  auto ids = drop::generate_identities(cfg);
  Rng g(45);
  Sample s = drop::render_core(ids[0], cfg, g, false);
  drop::AugmentConfig aug;
  aug.flip_prob = 0.0;
  aug.pad = 2;
  aug.erase_prob = 0.0;
  Rng ag(46);
  Sample out = drop::augment_sample(s, aug, cfg.k_parts, ag);
  EXPECT_TRUE(out.image.same_shape(s.image));
  EXPECT_TRUE(out.mask.same_shape(s.mask));
  for (int64_t i = 0; i < out.mask.numel(); ++i) {
    const int lbl = (int)out.mask[i];
    EXPECT_GE(lbl, 0);
    EXPECT_LE(lbl, cfg.k_parts);
  }
}

TEST(MaskDownsample, MajorityVoteWithTiesToSmallerLabel) {
  Tensor mask({4, 4});
  // upper-left block: three 2s and one 1 -> 2
  mask.at(0, 0) = 2;
  mask.at(0, 1) = 2;
  mask.at(1, 0) = 2;
  mask.at(1, 1) = 1;
  // upper-right block: two 3s, two 5s -> tie, smaller label wins -> 3
  mask.at(0, 2) = 3;
  mask.at(0, 3) = 5;
  mask.at(1, 2) = 5;
  mask.at(1, 3) = 3;
  // lower-left: all zeros -> 0; lower-right: 0,0,7,7 -> tie -> 0
  mask.at(2, 2) = 7;
  mask.at(3, 3) = 7;
  Tensor out = drop::downsample_mask_majority(mask, 2);
  EXPECT_DOUBLE_EQ(out.at(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(out.at(0, 1), 3.0);
  EXPECT_DOUBLE_EQ(out.at(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(out.at(1, 1), 0.0);
  EXPECT_THROW(drop::downsample_mask_majority(mask, 3), drop::ConfigError);
}

TEST(SyntheticConfig, Validation) {
  SyntheticConfig cfg = tiny_cfg();
  cfg.k_parts = 6;
  EXPECT_THROW(cfg.validate(), drop::ConfigError);
  cfg = tiny_cfg();
  cfg.train_fraction = 0.9;
  cfg.query_fraction = 0.2;
  EXPECT_THROW(cfg.validate(), drop::ConfigError);
  cfg = tiny_cfg();
  cfg.occlusion_prob = 1.5;
  EXPECT_THROW(cfg.validate(), drop::ConfigError);
}

TEST(ImageIo, PpmPgmRoundTrip) {
  namespace fs = std::filesystem;
  Rng g(55);
  Tensor img = drop::rand_uniform({3, 10, 6}, g, 0.0, 1.0);
  const std::string p1 = (fs::temp_directory_path() / "drop_io_test.ppm").string();
  drop::write_ppm(p1, img);
  Tensor back = drop::read_ppm(p1);
  ASSERT_TRUE(back.same_shape(img));
  for (int64_t i = 0; i < img.numel(); ++i)
    ASSERT_LE(std::fabs(back[i] - img[i]), 0.5 / 255.0 + 1e-12);
  // writing the loaded image again reproduces the file bit for bit
  const std::string p2 = (fs::temp_directory_path() / "drop_io_test2.ppm").string();
  drop::write_ppm(p2, back);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  EXPECT_EQ(s1, s2);

  Tensor mask({5, 4});
  for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = (double)(i % 9);
  const std::string p3 = (fs::temp_directory_path() / "drop_io_test.pgm").string();
  drop::write_pgm(p3, mask);
  EXPECT_TRUE(drop::read_pgm(p3) == mask);

  EXPECT_THROW(drop::read_ppm("/nonexistent/nowhere.ppm"), drop::IoError);
  fs::remove(p1);
  fs::remove(p2);
  fs::remove(p3);
}

TEST(ImageIo, RankingStripLayout) {
  Tensor q = Tensor::full({3, 8, 4}, 0.5);
  std::vector<Tensor> ranked{Tensor::full({3, 8, 4}, 0.3), Tensor::full({3, 8, 4}, 0.7)};
  Tensor strip = drop::compose_ranking_strip(q, ranked, {true, false});
  // 3 tiles of (4+4) wide plus 2 gaps of 4
  EXPECT_EQ(strip.dim(2), 3 * 8 + 2 * 4);
  EXPECT_EQ(strip.dim(1), 8 + 4);
  // first ranked tile framed green, second red
  EXPECT_GT(strip.at(1, 0, 8 + 4), 0.5);
  EXPECT_GT(strip.at(0, 0, 2 * (8 + 4)), 0.5);
}
