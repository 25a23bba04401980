#include "home/metrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

namespace home {
namespace {

// All positive/negative pairs, ties worth one half.
double brute_auc(const std::vector<double>& s, const std::vector<double>& y) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1.0 && y[j] == 0.0) {
        pairs += 1.0;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

struct Instance {
  std::vector<double> scores, labels;
};

Instance random_instance(std::mt19937_64& rng, std::size_t max_size) {
  std::uniform_int_distribution<std::size_t> size(2, max_size);
  std::uniform_int_distribution<int> coarse(0, 9);
  std::bernoulli_distribution coin(0.4);
  Instance in;
  const std::size_t n = size(rng);
  for (std::size_t i = 0; i < n; ++i) {
    in.scores.push_back(coarse(rng) / 10.0);  // coarse grid forces ties
    in.labels.push_back(coin(rng) ? 1.0 : 0.0);
  }
  in.labels[0] = 1.0;
  in.labels[1] = 0.0;
  return in;
}

TEST(Auc, Examples) {
  EXPECT_EQ(auc(std::vector<double>{0.9, 0.8, 0.1}, std::vector<double>{1, 1, 0}), 1.0);
  EXPECT_EQ(auc(std::vector<double>{0.5, 0.5}, std::vector<double>{1, 0}), 0.5);
  EXPECT_EQ(auc(std::vector<double>{0.2, 0.8, 0.6}, std::vector<double>{1, 0, 1}), 0.0);
}

TEST(Auc, SingleClassIsAnError) {
  EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, std::vector<double>{1, 1}), MetricError);
  EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, std::vector<double>{0, 2}), MetricError);
  EXPECT_THROW(auc(std::vector<double>{0.1}, std::vector<double>{0, 1}), DimensionError);
}

TEST(Auc, MatchesBruteForceOnRandomInstances) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    const Instance in = random_instance(rng, 50);
    EXPECT_NEAR(auc(in.scores, in.labels), brute_auc(in.scores, in.labels), 1e-12);
  }
}

TEST(Auc, InvariantUnderIncreasingTransforms) {
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 200; ++trial) {
    const Instance in = random_instance(rng, 40);
    const double base = auc(in.scores, in.labels);
    std::vector<double> ex, af;
    for (double s : in.scores) {
      ex.push_back(std::exp(s));
      af.push_back(3.0 * s - 7.0);
    }
    EXPECT_EQ(auc(ex, in.labels), base);
    EXPECT_EQ(auc(af, in.labels), base);
  }
}

TEST(Gauc, SingleUserEqualsAuc) {
  const std::vector<double> s{0.3, 0.7, 0.2, 0.9};
  const std::vector<double> y{0, 1, 1, 0};
  EXPECT_EQ(gauc(s, y, std::vector<std::int64_t>{5, 5, 5, 5}), auc(s, y));
}

TEST(Gauc, WeightedExample) {
  // u1: 4 logs with AUC 1; u2: 6 logs with AUC 0.5.
  const std::vector<double> s{0.9, 0.8, 0.2, 0.1, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
  const std::vector<double> y{1, 1, 0, 0, 1, 0, 1, 0, 1, 0};
  const std::vector<std::int64_t> u{1, 1, 1, 1, 2, 2, 2, 2, 2, 2};
  EXPECT_NEAR(gauc(s, y, u), 0.7, 1e-15);
}

TEST(Gauc, SingleClassUsersAreExcluded) {
  const std::vector<double> s{0.9, 0.8, 0.2, 0.1, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.4, 0.6, 0.1};
  const std::vector<double> y{1, 1, 0, 0, 1, 0, 1, 0, 1, 0, 1, 1, 1};
  const std::vector<std::int64_t> u{1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 3, 3, 3};
  EXPECT_NEAR(gauc(s, y, u), 0.7, 1e-15);
  EXPECT_THROW(gauc(std::vector<double>{0.1, 0.2}, std::vector<double>{1, 0}, std::vector<std::int64_t>{1, 2}), MetricError);
}

TEST(Gauc, MatchesHandComposedWeighting) {
  std::mt19937_64 rng(19);
  std::uniform_int_distribution<int> users(1, 6);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> s, y;
    std::vector<std::int64_t> ids;
    std::map<std::int64_t, Instance> groups;
    const int n_users = users(rng);
    for (int u = 0; u < n_users; ++u) {
      Instance in = random_instance(rng, 12);
      if (u % 3 == 2) std::fill(in.labels.begin(), in.labels.end(), 1.0);
      for (std::size_t i = 0; i < in.scores.size(); ++i) {
        s.push_back(in.scores[i]);
        y.push_back(in.labels[i]);
        ids.push_back(100 - u);
      }
      groups[100 - u] = in;
    }
    double num = 0.0, den = 0.0;
    for (const auto& [id, in] : groups) {
      const bool pos = std::count(in.labels.begin(), in.labels.end(), 1.0) > 0;
      const bool neg = std::count(in.labels.begin(), in.labels.end(), 0.0) > 0;
      if (!pos || !neg) continue;
      num += static_cast<double>(in.scores.size()) * brute_auc(in.scores, in.labels);
      den += static_cast<double>(in.scores.size());
    }
    EXPECT_NEAR(gauc(s, y, ids), num / den, 1e-12);
  }
}

TEST(RankingScore, Examples) {
  const std::map<std::string, double> xtrs{{"ctr", 0.5}, {"evtr", 0.25}};
  EXPECT_EQ(ranking_score(xtrs, {{"ctr", 1.0}, {"evtr", 0.0}}), 0.5);
  EXPECT_EQ(ranking_score(xtrs, {{"ctr", 0.0}, {"evtr", 0.0}}), 0.0);
  EXPECT_EQ(ranking_score(xtrs, {{"ctr", 2.0}, {"evtr", 4.0}}), 2.0);
  EXPECT_THROW(ranking_score(xtrs, {{"ctr", 1.0}}), ConfigError);
}

TEST(Evaluate, UndefinedMetricsAreNan) {
  Dataset ds;
  ds.task_names = {"a", "b"};
  ds.features = Matrix::Zero(4, 1);
  ds.labels.resize(4, 2);
  ds.labels << 1, 0, 0, 0, 1, 0, 0, 0;
  ds.user_ids = {1, 1, 2, 2};
  Matrix p(4, 2);
  p << 0.9, 0.1, 0.2, 0.1, 0.4, 0.1, 0.3, 0.1;
  const EvalReport r = evaluate_predictions(p, ds);
  ASSERT_EQ(r.tasks.size(), 2u);
  EXPECT_EQ(r.tasks[0].auc, 1.0);
  EXPECT_EQ(r.tasks[0].gauc, 1.0);
  EXPECT_TRUE(std::isnan(r.tasks[1].auc));
  EXPECT_TRUE(std::isnan(r.tasks[1].gauc));
  EXPECT_EQ(r.tasks[0].positive_rate, 0.5);
}

}  // namespace
}  // namespace home
