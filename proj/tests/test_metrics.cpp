#include <gtest/gtest.h>

#include "support.hpp"

using namespace p2t;

TEST(Auc, PerfectAndReversed) {
  const std::vector<int> y{0, 1, 0, 1, 1};
  std::vector<double> s(y.begin(), y.end());
  EXPECT_EQ(auc(s, y), 1.0);
  for (double& v : s) v = -v;
  EXPECT_EQ(auc(s, y), 0.0);
}

TEST(Auc, SmallCase) { EXPECT_DOUBLE_EQ(auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}), 0.75); }

TEST(Auc, TiesCountHalf) { EXPECT_DOUBLE_EQ(auc({0.5, 0.5, 0.5}, {0, 1, 1}), 0.5); }

TEST(Auc, Errors) {
  EXPECT_THROW(auc({0.1, 0.2}, {1, 1}), MetricError);
  EXPECT_THROW(auc({0.1, 0.2}, {0, 1, 1}), MetricError);
  EXPECT_THROW(auc({0.1, NAN}, {0, 1}), MetricError);
  EXPECT_THROW(auc({0.1, 0.2}, {0, 2}), MetricError);
}

TEST(Auc, MatchesPairCountingOracle) {
  std::mt19937_64 rng(1);
  for (int c = 0; c < 100; ++c) {
    const std::size_t n = 2 + rng() % 300;
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 20) / 7.0;  // coarse grid, so ties are common
      y[i] = static_cast<int>(rng() % 2);
    }
    y[0] = 0;
    y[1] = 1;
    EXPECT_NEAR(auc(s, y), test::pair_auc(s, y), 1e-12);
  }
}

TEST(Wbauc, OneBinIsAuc) {
  std::mt19937_64 rng(2);
  std::vector<double> s(500);
  std::vector<int> y(500);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    y[i] = static_cast<int>(rng() % 2);
  }
  const std::vector<std::size_t> bins(s.size(), 0);
  EXPECT_EQ(wbauc(s, y, bins, 1).value, auc(s, y));
}

TEST(Wbauc, WeightedMeanOfTwoBins) {
  // Bin 0 ranks perfectly, bin 1 is all ties.
  const std::vector<double> s{0.1, 0.9, 0.2, 0.8, 0.5, 0.5, 0.5, 0.5};
  const std::vector<int> y{0, 1, 0, 1, 0, 1, 0, 1};
  const std::vector<std::size_t> bins{0, 0, 0, 0, 1, 1, 1, 1};
  const WbaucResult r = wbauc(s, y, bins, 2);
  EXPECT_DOUBLE_EQ(r.value, 0.75);
  EXPECT_DOUBLE_EQ(*r.bins[0].auc, 1.0);
  EXPECT_DOUBLE_EQ(*r.bins[1].auc, 0.5);
}

TEST(Wbauc, SingleClassBinsAreExcluded) {
  const std::vector<double> s{0.1, 0.9, 0.3, 0.4};
  const std::vector<int> y{0, 1, 1, 1};
  const std::vector<std::size_t> bins{0, 0, 1, 1};
  const WbaucResult r = wbauc(s, y, bins, 2);
  EXPECT_FALSE(r.bins[1].auc);
  EXPECT_DOUBLE_EQ(r.value, 1.0);
  const std::vector<int> pure{0, 0, 1, 1};
  EXPECT_THROW(wbauc(s, pure, bins, 2), MetricError);
}

TEST(Wbauc, MatchesPairCountingOracle) {
  std::mt19937_64 rng(3);
  for (int c = 0; c < 100; ++c) {
    const std::size_t n = c == 0 ? 500 : 20 + rng() % 400;
    const std::size_t n_bins = 1 + rng() % 10;
    std::vector<double> s(n), keys(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 50) / 11.0;
      keys[i] = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      y[i] = static_cast<int>(rng() % 2);
    }
    const auto bins = assign_bins(keys, n_bins);
    EXPECT_NEAR(wbauc(s, y, bins, n_bins).value, test::pair_wbauc(s, y, bins, n_bins), 1e-12);
  }
}

namespace {

Corpus user_only_corpus(std::size_t n, std::uint64_t seed) {
  json j = test::small_env();
  j["dialogues"] = n;
  j["bin_noise"] = 0.0;
  json a = j["segments"][0];
  a["beta0"] = 1.5;
  a["sparse"] = std::vector<std::vector<double>>{{0.8, 0.2, 0.0}};
  a["prior"] = 0.5;
  json b = a;
  b["beta0"] = -1.5;
  b["sparse"] = std::vector<std::vector<double>>{{0.0, 0.2, 0.8}};
  j["segments"] = json::array({a, b});
  return generate_corpus(synthetic_config_from_json(j), seed);
}

std::vector<double> bcu_scores(const Corpus& train, const Corpus& test) {
  TrainConfig tc;
  tc.lr = 0.01;
  tc.epochs = 5;
  const BcuModel m = train_bcu(train, tc);
  std::vector<double> s;
  for (const auto& d : test.dialogues) s.push_back(bcu_predict(d.user, m));
  return s;
}

}  // namespace

TEST(Evaluate, UserOnlySignalShowsAucWbaucGap) {
  const Corpus c = user_only_corpus(10000, 4);
  const auto [train, test] = split(c, 0.5, 0.5, 4);
  const MetricsReport r = evaluate_scores("bcu", bcu_scores(train, test), test, 10);
  EXPECT_GT(*r.auc, 0.65);
  EXPECT_NEAR(*r.wbauc, 0.5, 0.03);
}

TEST(Evaluate, StrategyOnlySignalGivesChanceForUserScorer) {
  json j = test::small_env();
  j["dialogues"] = 10000;
  j["segments"][0]["weights"] = std::vector<double>{1.5, -1.5, 0.0};
  const Corpus c = generate_corpus(synthetic_config_from_json(j), 5);
  const auto [train, test] = split(c, 0.5, 0.5, 5);
  const MetricsReport r = evaluate_scores("bcu", bcu_scores(train, test), test, 10);
  EXPECT_NEAR(*r.auc, 0.5, 0.03);
  EXPECT_NEAR(*r.wbauc, 0.5, 0.03);
}

TEST(Evaluate, RandomScorerIsChanceOnBothMetrics) {
  SyntheticConfig cfg = test::default_config().environment;
  cfg.dialogues = 10000;
  const Corpus c = generate_corpus(cfg, 6);
  const MetricsReport r = evaluate_scores("random", random_scorer(c.dialogues.size(), 7), c, 10);
  EXPECT_NEAR(*r.auc, 0.5, 0.02);
  EXPECT_NEAR(*r.wbauc, 0.5, 0.02);
}

TEST(Evaluate, TrueParameterHasTheBestAuc) {
  SyntheticConfig cfg = test::default_config().environment;
  cfg.dialogues = 6000;
  std::vector<Episode> eps;
  const Corpus c = generate_corpus(cfg, 8, &eps);
  std::vector<double> truth, bias, rnd = random_scorer(c.dialogues.size(), 9);
  for (std::size_t i = 0; i < eps.size(); ++i) {
    truth.push_back(eps[i].success_probability);
    bias.push_back(c.dialogues[i].bin_key);
  }
  const double best = *evaluate_scores("truth", truth, c, 10).auc;
  EXPECT_GT(best, *evaluate_scores("bin key", bias, c, 10).auc);
  EXPECT_GT(best, *evaluate_scores("random", rnd, c, 10).auc);
}

TEST(Report, TableAndJson) {
  MetricsReport r;
  r.method = "p2t";
  r.auc = 0.71234;
  r.repayment_rate = 0.5;
  const std::string t = format_table({r});
  EXPECT_NE(t.find("0.7123"), std::string::npos);
  EXPECT_NE(t.find("p2t"), std::string::npos);
  const json j = to_json(r);
  EXPECT_TRUE(j["wbauc"].is_null());
  EXPECT_DOUBLE_EQ(j["auc"].get<double>(), 0.71234);
}
