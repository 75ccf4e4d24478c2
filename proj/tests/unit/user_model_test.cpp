#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numbers>

#include "grad_check.hpp"
#include "speedyfeed/errors.hpp"
#include "speedyfeed/user_model.hpp"

namespace speedyfeed::model {
namespace {

using ad::Tensor;

Tensor RandomMatrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.Normal(0.0, scale);
  return Tensor::FromData({rows, cols}, v);
}

// Brute-force softmax-weighted sum over rows [0, t) whose mask entry is set.
std::vector<double> PrefixLoop(const Tensor& theta, const Tensor& a, std::size_t t,
                               const ad::Mask* mask = nullptr) {
  const std::size_t d = theta.dim(1);
  std::vector<double> w(t, 0.0);
  double mx = -1e300;
  for (std::size_t l = 0; l < t; ++l) {
    if (mask && !(*mask)[l]) continue;
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += a[c] * theta.at(l, c);
    w[l] = s;
    mx = std::max(mx, s);
  }
  double z = 0.0;
  for (std::size_t l = 0; l < t; ++l) {
    if (mask && !(*mask)[l]) { w[l] = 0.0; continue; }
    w[l] = std::exp(w[l] - mx);
    z += w[l];
  }
  std::vector<double> out(d, 0.0);
  for (std::size_t l = 0; l < t; ++l)
    for (std::size_t c = 0; c < d; ++c) out[c] += w[l] / z * theta.at(l, c);
  return out;
}

class UserModelTest : public ::testing::Test {
 protected:
  UserModelTest() : rng_(17), model_(6, params_, rng_) {}
  ad::ParameterSet params_;
  Rng rng_;
  UserModel model_;
};

TEST_F(UserModelTest, PrefixSingleAndIdentical) {
  const Tensor one = RandomMatrix(1, 6, rng_);
  const Tensor mu = model_.EmbedPrefix(one);
  for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(mu[c], one[c]);

  std::vector<double> rows;
  for (int i = 0; i < 4; ++i) rows.insert(rows.end(), one.data().begin(), one.data().end());
  const Tensor same = model_.EmbedPrefix(Tensor::FromData({4, 6}, rows));
  for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(same[c], one[c], 1e-15);

  EXPECT_THROW(model_.EmbedPrefix(Tensor::Zeros({0, 6})), DimensionError);
}

TEST_F(UserModelTest, PrefixMatchesLoop) {
  const Tensor theta = RandomMatrix(7, 6, rng_);
  const Tensor mu = model_.EmbedPrefix(theta);
  const auto expected = PrefixLoop(theta, model_.attention(), 7);
  for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(mu[c], expected[c], 1e-12);
}

TEST_F(UserModelTest, IncrementalEqualsRecomputation) {
  const Tensor theta = RandomMatrix(50, 6, rng_, 3.0);
  const Tensor all = model_.AllPrefixEmbeddings(theta);
  ASSERT_EQ(all.shape(), (ad::Shape{49, 6}));
  for (std::size_t t = 1; t < 50; ++t) {
    const Tensor mu = model_.EmbedPrefix(ad::SliceRows(theta, 0, t));
    for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(all.at(t - 1, c), mu[c], 1e-10);
  }
  const Tensor two = model_.AllPrefixEmbeddings(ad::SliceRows(theta, 0, 2));
  ASSERT_EQ(two.shape(), (ad::Shape{1, 6}));
  for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(two.at(0, c), theta.at(0, c));
}

TEST_F(UserModelTest, IncrementalRespectsMask) {
  const Tensor theta = RandomMatrix(9, 6, rng_);
  const ad::Mask mask = {0, 1, 1, 0, 1, 0, 0, 1, 1};
  const Tensor all = model_.AllPrefixEmbeddings(theta, &mask);
  for (std::size_t t = 1; t < 9; ++t) {
    bool any = false;
    for (std::size_t l = 0; l < t; ++l) any |= mask[l] != 0;
    const auto expected = any ? PrefixLoop(theta, model_.attention(), t, &mask)
                              : std::vector<double>(6, 0.0);
    for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(all.at(t - 1, c), expected[c], 1e-12);
  }
}

TEST_F(UserModelTest, Causality) {
  const Tensor theta = RandomMatrix(12, 6, rng_);
  const Tensor base = model_.AllPrefixEmbeddings(theta);
  std::vector<double> v(theta.data().begin(), theta.data().end());
  // Reverse rows 6..11; mu_1..mu_5 depend only on rows 0..4.
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 6; ++c) std::swap(v[(6 + i) * 6 + c], v[(11 - i) * 6 + c]);
  const Tensor permuted = model_.AllPrefixEmbeddings(Tensor::FromData({12, 6}, v));
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(base.at(t, c), permuted.at(t, c));
}

TEST(PrefixSoftmaxPool, StableForLargeScores) {
  const Tensor scores = Tensor::FromData({4}, {1000.0, -1000.0, 1200.0, 0.0});
  const Tensor values = Tensor::FromData({4, 1}, {1.0, 2.0, 3.0, 4.0});
  const Tensor out = ad::PrefixSoftmaxPool(scores, values);
  EXPECT_DOUBLE_EQ(out[0], 1.0);
  EXPECT_DOUBLE_EQ(out[1], 1.0);
  EXPECT_DOUBLE_EQ(out[2], 3.0);
  EXPECT_DOUBLE_EQ(out[3], 3.0);
}

TEST(PrefixSoftmaxPool, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  Tensor scores = RandomMatrix(8, 1, rng, 2.0);
  Tensor values = RandomMatrix(8, 3, rng);
  const Tensor proj = RandomMatrix(8, 3, rng);
  scores = Tensor::FromData({8}, {scores.data().begin(), scores.data().end()}, true);
  values = Tensor::FromData({8, 3}, {values.data().begin(), values.data().end()}, true);
  for (const ad::Mask& mask : {ad::Mask(8, 1), ad::Mask{0, 1, 0, 1, 1, 0, 1, 1}}) {
    const auto loss = [&] {
      return ad::Sum(ad::Mul(ad::PrefixSoftmaxPool(scores, values, &mask), proj));
    };
    const auto r = testing::CheckGradients(loss, {scores, values}, 1e-6);
    EXPECT_EQ(r.failures, 0u) << r.worst;
  }
}

TEST(Score, InnerProduct) {
  const std::vector<double> x = {1, 0, 0}, y = {0, 1, 0}, u = {0.6, 0.8, 0.0};
  EXPECT_EQ(Score(x, y), 0.0);
  EXPECT_NEAR(Score(u, u), 1.0, 1e-15);
  const std::vector<double> p = {1.5, -2.0, 0.25}, q = {4.0, 0.5, -8.0};
  EXPECT_DOUBLE_EQ(Score(p, q), 1.5 * 4.0 - 2.0 * 0.5 - 0.25 * 8.0);
}

TEST_F(UserModelTest, LossUnderTiesIsLogOfCandidates) {
  std::vector<double> row = {0.3, -0.1, 0.2, 0.5, 0.0, 1.0};
  for (std::size_t ratio : {1u, 3u}) {
    const std::size_t t = 6;
    std::vector<double> theta, neg;
    for (std::size_t i = 0; i < t; ++i) theta.insert(theta.end(), row.begin(), row.end());
    for (std::size_t i = 0; i < (t - 1) * ratio; ++i) neg.insert(neg.end(), row.begin(), row.end());
    const Tensor loss = model_.AutoregressiveLoss(
        Tensor::FromData({t, 6}, theta), Tensor::FromData({(t - 1) * ratio, 6}, neg), ratio);
    EXPECT_NEAR(loss.item(), (t - 1) * std::log(ratio + 1.0), 1e-12);
  }
}

TEST_F(UserModelTest, LossSaturatesForDominantPositive) {
  // theta rows share a direction; the negatives point the other way.
  const std::size_t t = 4;
  std::vector<double> theta, neg;
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t c = 0; c < 6; ++c) theta.push_back(c == 0 ? 30.0 : 0.0);
  for (std::size_t i = 0; i + 1 < t; ++i)
    for (std::size_t c = 0; c < 6; ++c) neg.push_back(c == 0 ? -30.0 : 0.0);
  const Tensor loss = model_.AutoregressiveLoss(Tensor::FromData({t, 6}, theta),
                                                Tensor::FromData({t - 1, 6}, neg), 1);
  EXPECT_GE(loss.item(), 0.0);
  EXPECT_LT(loss.item(), 1e-12);
}

TEST(UserModel, HandSetCaseEqualsPerTimestampLosses) {
  ad::ParameterSet params;
  Rng rng(0);
  UserModel model(2, params, rng);
  auto a = params.Get("user.attention");
  a.mutable_data()[0] = 0.5;
  a.mutable_data()[1] = -1.0;
  const Tensor theta = Tensor::FromData({3, 2}, {1.0, 0.0, 0.0, 1.0, 1.0, 1.0});
  const Tensor neg = Tensor::FromData({2, 2}, {-1.0, 0.5, 0.25, 0.25});
  const double joint = model.AutoregressiveLoss(theta, neg, 1).item();

  // Independent closed form for each target t = 1, 2.
  auto term = [&](std::size_t t) {
    double wsum = 0.0, mu0 = 0.0, mu1 = 0.0;
    for (std::size_t l = 0; l < t; ++l) {
      const double w = std::exp(0.5 * theta.at(l, 0) - 1.0 * theta.at(l, 1));
      wsum += w;
      mu0 += w * theta.at(l, 0);
      mu1 += w * theta.at(l, 1);
    }
    mu0 /= wsum;
    mu1 /= wsum;
    const double pos = mu0 * theta.at(t, 0) + mu1 * theta.at(t, 1);
    const double ng = mu0 * neg.at(t - 1, 0) + mu1 * neg.at(t - 1, 1);
    return -std::log(std::exp(pos) / (std::exp(pos) + std::exp(ng)));
  };
  EXPECT_NEAR(joint, term(1) + term(2), 1e-10);

  double naive = 0.0;
  for (std::size_t t = 1; t < 3; ++t) {
    naive += model.TimestampLoss(ad::SliceRows(theta, 0, t),
                                 ad::Reshape(ad::SliceRows(theta, t, t + 1), {2}),
                                 ad::SliceRows(neg, t - 1, t)).item();
  }
  EXPECT_NEAR(joint, naive, 1e-10);
}

TEST_F(UserModelTest, RandomLossEqualsSumOfTermsWithRatio) {
  const std::size_t t = 15, ratio = 2;
  const Tensor theta = RandomMatrix(t, 6, rng_);
  const Tensor neg = RandomMatrix((t - 1) * ratio, 6, rng_);
  const double joint = model_.AutoregressiveLoss(theta, neg, ratio).item();
  double naive = 0.0;
  for (std::size_t i = 1; i < t; ++i) {
    naive += model_.TimestampLoss(ad::SliceRows(theta, 0, i),
                                  ad::Reshape(ad::SliceRows(theta, i, i + 1), {6}),
                                  ad::SliceRows(neg, (i - 1) * ratio, i * ratio)).item();
  }
  EXPECT_NEAR(joint, naive, 1e-10);
}

TEST_F(UserModelTest, LossGradients) {
  Tensor theta = RandomMatrix(6, 6, rng_);
  Tensor neg = RandomMatrix(10, 6, rng_);
  theta = Tensor::FromData({6, 6}, {theta.data().begin(), theta.data().end()}, true);
  neg = Tensor::FromData({10, 6}, {neg.data().begin(), neg.data().end()}, true);
  const auto loss = [&] { return model_.AutoregressiveLoss(theta, neg, 2); };
  const auto r = testing::CheckGradients(loss, {theta, neg, model_.attention()}, 1e-6);
  EXPECT_EQ(r.failures, 0u) << r.worst;
}

TEST(BuildInstance, FlattensAndTruncates) {
  const auto log = data::ParseUserLog(
      "u # a # 1 # n9,n2 # n5 # b # 2 # n7 #  # c # 3 # n1 # n3,n4");
  const auto full = BuildInstance(log, 100);
  EXPECT_EQ(full.history, (std::vector<std::string>{"n2", "n9", "n7", "n1"}));
  EXPECT_EQ(full.pools[1], std::vector<std::string>{"n5"});
  EXPECT_TRUE(full.pools[2].empty());
  const auto cut = BuildInstance(log, 2);
  EXPECT_EQ(cut.history, (std::vector<std::string>{"n7", "n1"}));
  EXPECT_EQ(cut.pools[1], (std::vector<std::string>{"n3", "n4"}));
}

TEST(SampleNegatives, PoolAndFallback) {
  TrainInstance inst;
  inst.history = {"n1", "n3", "n4"};
  inst.pools = {{}, {"n5", "n9"}, {}};
  const std::vector<std::string> all = {"n1", "n3", "n4", "n5", "n9"};
  Rng rng(8);
  std::map<std::string, int> counts;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const auto neg = SampleNegatives(inst, 1, all, 1, rng);
    ASSERT_EQ(neg.size(), 1u);
    ASSERT_TRUE(neg[0] == "n5" || neg[0] == "n9");
    ++counts[neg[0]];
  }
  const double sigma = std::sqrt(draws * 0.25);
  EXPECT_LE(std::abs(counts["n5"] - draws / 2.0), 3 * sigma);
  for (int i = 0; i < 200; ++i) {
    const auto neg = SampleNegatives(inst, 2, all, 3, rng);
    ASSERT_EQ(neg.size(), 3u);
    for (const auto& n : neg) EXPECT_NE(n, "n4");
  }
  const std::vector<std::string> tiny = {"n4"};
  EXPECT_THROW(SampleNegatives(inst, 2, tiny, 1, rng), DataError);

  Rng a(5), b(5);
  EXPECT_EQ(SampleNegatives(inst, 2, all, 4, a), SampleNegatives(inst, 2, all, 4, b));
}

}  // namespace
}  // namespace speedyfeed::model
