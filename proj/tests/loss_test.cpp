#include <gtest/gtest.h>

#include <cmath>

#include "drop/losses.hpp"
#include "drop/memory_bank.hpp"
#include "drop/ops.hpp"
#include "drop/rng.hpp"
#include "oracles.hpp"

using drop::PartsMemoryBank;
using drop::Rng;
using drop::Tensor;
using drop::TripletDiagnostics;
using drop::Var;

namespace {

std::vector<std::vector<bool>> full_vis(int n, int k) {
  return std::vector<std::vector<bool>>(n, std::vector<bool>(k, true));
}

// Random visibility with every row keeping at least one visible part.
std::vector<std::vector<bool>> random_vis(int n, int k, Rng& rng) {
  auto vis = full_vis(n, k);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < k; ++j) vis[i][j] = drop::uniform(rng, 0.0, 1.0) < 0.7;
    if (std::none_of(vis[i].begin(), vis[i].end(), [](bool b) { return b; }))
      vis[i][drop::uniform_int(rng, 0, k - 1)] = true;
  }
  return vis;
}

std::vector<Var> leaves_from_rows(const Tensor& embs) {
  const int N = embs.dim(0), K = embs.dim(1), C = embs.dim(2);
  std::vector<Var> parts;
  for (int k = 0; k < K; ++k) {
    Tensor t({N, C});
    for (int b = 0; b < N; ++b)
      for (int c = 0; c < C; ++c) t.at(b, c) = embs.at(b, k, c);
    parts.push_back(Var::leaf(t));
  }
  return parts;
}

}  // namespace

TEST(PartDistances, MatchesBruteForce) {
  Rng rng(201);
  for (int trial = 0; trial < 40; ++trial) {
    const int N = drop::uniform_int(rng, 2, 7), K = drop::uniform_int(rng, 1, 5),
              C = drop::uniform_int(rng, 1, 6);
    Tensor embs = drop::randn({N, K, C}, rng);
    auto vis = random_vis(N, K, rng);
    auto m = drop::part_distance_matrix(embs, vis);
    auto ref = oracle::part_distance_reference(embs, vis);
    for (int k = 0; k < K; ++k)
      for (int a = 0; a < N; ++a)
        for (int b = 0; b < N; ++b) {
          ASSERT_EQ(m.valid.at(k, a, b) != 0.0, ref.valid[k][a][b]);
          if (ref.valid[k][a][b]) ASSERT_NEAR(m.dist.at(k, a, b), ref.dist[k][a][b], 1e-9);
        }
  }
}

TEST(PartDistances, SymmetryAndZeroDiagonal) {
  Rng rng(202);
  Tensor embs = drop::randn({5, 3, 4}, rng);
  auto vis = random_vis(5, 3, rng);
  auto m = drop::part_distance_matrix(embs, vis);
  for (int k = 0; k < 3; ++k)
    for (int a = 0; a < 5; ++a) {
      if (vis[a][k]) EXPECT_DOUBLE_EQ(m.dist.at(k, a, a), 0.0);
      for (int b = 0; b < 5; ++b) {
        EXPECT_DOUBLE_EQ(m.dist.at(k, a, b), m.dist.at(k, b, a));
        EXPECT_DOUBLE_EQ(m.valid.at(k, a, b), m.valid.at(k, b, a));
      }
    }
}

TEST(PartTriplet, HandComputedCase) {
  // N=3, K=2, C=1; ids {0,0,1}; all parts visible.
  Tensor embs({3, 2, 1});
  embs.at(0, 0, 0) = 0.0;
  embs.at(0, 1, 0) = 0.0;
  embs.at(1, 0, 0) = 1.0;
  embs.at(1, 1, 0) = 3.0;
  embs.at(2, 0, 0) = 2.0;
  embs.at(2, 1, 0) = 2.0;
  std::vector<int> ids{0, 0, 1};
  TripletDiagnostics diag;
  double loss =
      drop::part_triplet_value(embs, full_vis(3, 2), ids, {0, 1, 2}, 0.3, &diag);
  // anchor 0: d_ap = 2 (to row 1), d_an = 2 (to row 2) -> hinge 0.3
  // anchor 1: d_ap = 2, d_an = 1 -> hinge 1.3
  // anchor 2: no positive -> degenerate
  EXPECT_NEAR(loss, (0.3 + 1.3) / 2.0, 1e-12);
  EXPECT_EQ(diag.counted, 2);
  EXPECT_EQ(diag.degenerate, 1);

  // Hide part 2 of row 1: distances to row 1 now use part 1 only.
  auto vis = full_vis(3, 2);
  vis[1][1] = false;
  loss = drop::part_triplet_value(embs, vis, ids, {0, 1, 2}, 0.3, &diag);
  // anchor 0: d_ap = 1, d_an = 2 -> hinge max(0, -0.7) = 0
  // anchor 1: d_ap = 1, d_an = 1 -> hinge 0.3
  EXPECT_NEAR(loss, (0.0 + 0.3) / 2.0, 1e-12);
  EXPECT_EQ(diag.counted, 2);
}

TEST(PartTriplet, MatchesBruteForce) {
  Rng rng(203);
  for (int trial = 0; trial < 120; ++trial) {
    const int N = drop::uniform_int(rng, 3, 9), K = drop::uniform_int(rng, 1, 5),
              C = drop::uniform_int(rng, 1, 5);
    Tensor embs = drop::randn({N, K, C}, rng);
    auto vis = random_vis(N, K, rng);
    std::vector<int> ids;
    for (int i = 0; i < N; ++i) ids.push_back(drop::uniform_int(rng, 0, 2));
    std::vector<int> anchors;
    for (int i = 0; i < N; ++i)
      if (drop::uniform(rng, 0.0, 1.0) < 0.7) anchors.push_back(i);
    if (anchors.empty()) anchors.push_back(0);
    const double margin = drop::uniform(rng, 0.0, 0.6);

    TripletDiagnostics diag;
    double loss = drop::part_triplet_value(embs, vis, ids, anchors, margin, &diag);
    auto ref = oracle::part_triplet_reference(embs, vis, ids, anchors, margin);
    ASSERT_NEAR(loss, ref.loss, 1e-9);
    ASSERT_EQ(diag.counted, ref.counted);
    ASSERT_EQ(diag.degenerate, ref.degenerate);
  }
}

TEST(PartTriplet, SingleIdentityBatchIsZeroAndFlagged) {
  Rng rng(204);
  Tensor embs = drop::randn({4, 2, 3}, rng);
  TripletDiagnostics diag;
  double loss = drop::part_triplet_value(embs, full_vis(4, 2), {5, 5, 5, 5}, {0, 1, 2, 3},
                                     0.3, &diag);
  EXPECT_DOUBLE_EQ(loss, 0.0);
  EXPECT_EQ(diag.counted, 0);
  EXPECT_EQ(diag.degenerate, 4);
}

TEST(PartTriplet, NoSharedPartsSkipsCandidate) {
  // Candidate 1 shares no visible part with anchor 0, so candidate 2 is the
  // only positive; candidate 3 is the negative.
  Tensor embs({4, 2, 1});
  embs.at(0, 0, 0) = 0.0;
  embs.at(1, 1, 0) = 9.0;   // would be a huge positive if it were usable
  embs.at(2, 0, 0) = 1.0;
  embs.at(3, 0, 0) = 0.5;
  std::vector<std::vector<bool>> vis{{true, false}, {false, true}, {true, true}, {true, false}};
  TripletDiagnostics diag;
  double loss = drop::part_triplet_value(embs, vis, {0, 0, 0, 1}, {0}, 0.3, &diag);
  // d(0,2) over part 1 = 1.0; d(0,3) = 0.5 -> hinge = 1.0 - 0.5 + 0.3 = 0.8
  EXPECT_NEAR(loss, 0.8, 1e-12);
  EXPECT_EQ(diag.counted, 1);
}

TEST(BankedTriplet, FiniteDifferenceThroughMemoryBank) {
  const int B = 4, K = 3, C = 4;
  Rng rng(205);
  Tensor old_embs = drop::randn({B, K, C}, rng);
  auto old_vis = random_vis(B, K, rng);
  std::vector<int> old_ids{0, 1, 2, 0};
  Tensor cur = drop::randn({B, K, C}, rng);
  auto cur_vis = random_vis(B, K, rng);
  std::vector<int> cur_ids{0, 1, 1, 2};

  std::vector<Var> leaves = leaves_from_rows(cur);
  auto make_loss = [&]() {
    PartsMemoryBank bank(2, B, K, C);
    bank.push_values(old_embs, old_vis, old_ids);
    bank.push(leaves, cur_vis, cur_ids);
    return drop::banked_triplet_op(bank.snapshot(), 0.3, nullptr);
  };
  auto rep = oracle::fd_check(leaves, make_loss);
  EXPECT_GT(rep.checked, 0);
  EXPECT_LT(rep.max_rel_err, 1e-3);
}

TEST(BankedTriplet, GradientsReachOnlyNewestBatch) {
  const int B = 3, K = 2, C = 3;
  Rng rng(206);
  std::vector<Var> old_parts, new_parts;
  for (int k = 0; k < K; ++k) {
    old_parts.push_back(Var::leaf(drop::randn({B, C}, rng)));
    new_parts.push_back(Var::leaf(drop::randn({B, C}, rng)));
  }
  PartsMemoryBank bank(2, B, K, C);
  bank.push(old_parts, full_vis(B, K), {0, 1, 2});
  bank.push(new_parts, full_vis(B, K), {0, 1, 2});
  TripletDiagnostics diag;
  Var loss = drop::banked_triplet_op(bank.snapshot(), 0.3, &diag);
  ASSERT_GT(diag.counted, 0);
  drop::backward(loss);
  double old_grad = 0.0, new_grad = 0.0;
  for (int k = 0; k < K; ++k) {
    old_grad += old_parts[k].grad_or_zero().max_abs();
    new_grad += new_parts[k].grad_or_zero().max_abs();
  }
  EXPECT_DOUBLE_EQ(old_grad, 0.0);
  EXPECT_GT(new_grad, 0.0);
}

TEST(PartAverageTriplet, EqualsBankedWithSingleBatchMemory) {
  Rng rng(207);
  for (int trial = 0; trial < 30; ++trial) {
    const int B = 6, K = 3, C = 4;
    Tensor embs = drop::randn({B, K, C}, rng);
    // both full and partial visibility must agree
    auto vis = (trial % 2 == 0) ? full_vis(B, K) : random_vis(B, K, rng);
    std::vector<int> ids;
    for (int i = 0; i < B; ++i) ids.push_back(drop::uniform_int(rng, 0, 2));

    auto parts = leaves_from_rows(embs);
    TripletDiagnostics d1, d2;
    Var direct = drop::part_average_triplet_op(parts, vis, ids, 0.3, &d1);

    PartsMemoryBank bank(1, B, K, C);
    bank.push(parts, vis, ids);
    Var banked = drop::banked_triplet_op(bank.snapshot(), 0.3, &d2);

    ASSERT_NEAR(direct.value()[0], banked.value()[0], 1e-6);
    ASSERT_EQ(d1.counted, d2.counted);
    ASSERT_EQ(d1.degenerate, d2.degenerate);
  }
}

TEST(PartAverageTriplet, FiniteDifference) {
  Rng rng(208);
  const int B = 5, K = 2, C = 3;
  Tensor embs = drop::randn({B, K, C}, rng);
  auto vis = random_vis(B, K, rng);
  std::vector<int> ids{0, 0, 1, 1, 2};
  auto leaves = leaves_from_rows(embs);
  auto rep = oracle::fd_check(
      leaves, [&]() { return drop::part_average_triplet_op(leaves, vis, ids, 0.3, nullptr); });
  EXPECT_LT(rep.max_rel_err, 1e-3);
}

TEST(PartCenterTriplet, FiniteDifferenceAndDegenerate) {
  Rng rng(209);
  const int B = 6, K = 2, C = 3;
  Tensor embs = drop::randn({B, K, C}, rng);
  auto vis = random_vis(B, K, rng);
  std::vector<int> ids{0, 0, 1, 1, 2, 2};
  auto leaves = leaves_from_rows(embs);
  TripletDiagnostics diag;
  Var loss = drop::part_center_triplet_op(leaves, vis, ids, 0.3, &diag);
  EXPECT_GT(diag.counted, 0);
  auto rep = oracle::fd_check(
      leaves, [&]() { return drop::part_center_triplet_op(leaves, vis, ids, 0.3, nullptr); });
  EXPECT_LT(rep.max_rel_err, 1e-3);

  // single identity: no negative centers exist
  TripletDiagnostics d2;
  Var zero = drop::part_center_triplet_op(leaves, vis, {3, 3, 3, 3, 3, 3}, 0.3, &d2);
  EXPECT_DOUBLE_EQ(zero.value()[0], 0.0);
  EXPECT_EQ(d2.counted, 0);
  EXPECT_EQ(d2.degenerate, B);
}

TEST(ParsingLoss, HandComputedCase) {
  // 1x2 image, two classes, eps 0.1, gamma 0.5.
  Tensor probs({1, 2, 1, 2});
  probs.at(0, 0, 0, 0) = 0.8;
  probs.at(0, 1, 0, 0) = 0.2;
  probs.at(0, 0, 0, 1) = 0.3;
  probs.at(0, 1, 0, 1) = 0.7;
  Tensor labels({1, 1, 2});
  labels.at(0, 0, 0) = 0.0;
  labels.at(0, 0, 1) = 1.0;
  const double q_on = 0.95, q_off = 0.05;
  const double ce = -(q_on * std::log(0.8) + q_off * std::log(0.2)) -
                    (q_off * std::log(0.3) + q_on * std::log(0.7));
  const double tv = std::fabs(0.3 - 0.8) + std::fabs(0.7 - 0.2);
  const double expect = (ce + 0.5 * tv) / 2.0;
  Var loss = drop::parsing_loss_op(Var(probs, false), labels, 0.1, 0.5);
  EXPECT_NEAR(loss.value()[0], expect, 1e-12);
}

TEST(ParsingLoss, MatchesBruteForce) {
  Rng rng(210);
  for (int trial = 0; trial < 120; ++trial) {
    const int B = drop::uniform_int(rng, 1, 3), N = drop::uniform_int(rng, 2, 6),
              H = drop::uniform_int(rng, 2, 5), W = drop::uniform_int(rng, 2, 5);
    Var logits = Var(drop::randn({B, N, H, W}, rng, 2.0), false);
    Var probs = drop::softmax_channels(logits);
    Tensor labels({B, H, W});
    for (int64_t i = 0; i < labels.numel(); ++i)
      labels[i] = drop::uniform_int(rng, 0, N - 1);
    double got = drop::parsing_loss_op(probs, labels, 0.1, 0.5).value()[0];
    double want = oracle::parsing_loss_reference(probs.value(), labels, 0.1, 0.5);
    ASSERT_NEAR(got, want, 1e-9);
  }
}

TEST(ParsingLoss, FiniteDifferenceThroughSoftmax) {
  Rng rng(211);
  Var logits = Var::leaf(drop::randn({2, 3, 4, 3}, rng, 1.5));
  Tensor labels({2, 4, 3});
  for (int64_t i = 0; i < labels.numel(); ++i) labels[i] = drop::uniform_int(rng, 0, 2);
  std::vector<Var> leaves{logits};
  auto rep = oracle::fd_check(leaves, [&]() {
    return drop::parsing_loss_op(drop::softmax_channels(logits), labels, 0.1, 0.5);
  });
  EXPECT_LT(rep.max_rel_err, 1e-3);
}

TEST(ParsingLoss, RejectsBadLabels) {
  Tensor probs = Tensor::full({1, 2, 2, 2}, 0.5);
  Tensor labels({1, 2, 2});
  labels[0] = 2.0;  // out of range for two classes
  EXPECT_THROW(drop::parsing_loss_op(Var(probs, false), labels, 0.1, 0.5),
               drop::ConfigError);
  labels[0] = 0.5;  // not an integer
  EXPECT_THROW(drop::parsing_loss_op(Var(probs, false), labels, 0.1, 0.5),
               drop::ConfigError);
}

TEST(IdentityCeLoss, AveragesOrSumsHeads) {
  Rng rng(212);
  std::vector<Var> heads;
  std::vector<int> labels{1, 0};
  double sum = 0.0;
  for (int i = 0; i < 4; ++i) {
    Tensor t = drop::randn({2, 3}, rng);
    heads.push_back(Var(t, false));
    sum += oracle::smoothed_ce_reference(t, labels, 0.1);
  }
  EXPECT_NEAR(drop::identity_ce_loss(heads, labels, 0.1, false).value()[0], sum / 4, 1e-10);
  EXPECT_NEAR(drop::identity_ce_loss(heads, labels, 0.1, true).value()[0], sum, 1e-10);
}

TEST(TotalObjective, WeightsAndNaNDetection) {
  Var a = Var(Tensor::scalar(1.0), false);
  Var b = Var(Tensor::scalar(2.0), false);
  Var c = Var(Tensor::scalar(3.0), false);
  EXPECT_NEAR(drop::total_objective(a, b, c, 0.4).value()[0], 1.0 + 2.0 + 1.2, 1e-12);

  Var bad = Var(Tensor::scalar(std::numeric_limits<double>::quiet_NaN()), false);
  try {
    drop::total_objective(a, bad, c, 0.4);
    FAIL() << "expected NumericalError";
  } catch (const drop::NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("triplet"), std::string::npos);
  }
}

TEST(LossConfig, Validation) {
  drop::LossConfig cfg;
  cfg.validate();
  cfg.epsilon_ls = 1.0;
  EXPECT_THROW(cfg.validate(), drop::ConfigError);
  cfg = drop::LossConfig();
  cfg.margin = -0.1;
  EXPECT_THROW(cfg.validate(), drop::ConfigError);
}
