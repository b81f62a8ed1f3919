#include <gtest/gtest.h>

#include <set>

#include "test_util.hpp"

using namespace touchbind;

TEST(DatasetProbabilities, TableSizes) {
  const std::vector<std::size_t> sizes{120000, 9300, 183000, 180000};
  const auto p = dataset_probabilities(sizes);
  const double total = 120000.0 + 9300 + 183000 + 180000;
  double sum = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(p[i], sizes[i] / total, 1e-15);
    sum += p[i];
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_NEAR(p[0], 0.24376, 1e-5);
  EXPECT_NEAR(p[1], 0.01889, 1e-5);
  EXPECT_NEAR(p[2], 0.37173, 1e-5);
  EXPECT_NEAR(p[3], 0.36563, 1e-5);
}

TEST(DatasetProbabilities, DegenerateCases) {
  EXPECT_EQ(dataset_probabilities(std::vector<std::size_t>{5}), std::vector<double>{1.0});
  for (double v : dataset_probabilities(std::vector<std::size_t>{100, 100, 100})) EXPECT_NEAR(v, 1.0 / 3, 1e-15);
  EXPECT_THROW(dataset_probabilities(std::vector<std::size_t>{}), ValidationError);
  EXPECT_THROW(dataset_probabilities(std::vector<std::size_t>{3, 0}), ValidationError);
}

TEST(MajorityCount, RoundHalfUp) {
  EXPECT_EQ(majority_count(0.75, 48), 36);
  EXPECT_EQ(majority_count(1.0, 48), 48);
  EXPECT_EQ(majority_count(0.0, 48), 0);
  EXPECT_EQ(majority_count(0.5, 5), 3);  // 2.5 rounds up
  EXPECT_EQ(majority_count(0.3, 5), 2);  // 1.5 rounds up despite binary representation
}

TEST(Sampler, CompositionExactInEveryBatch) {
  MixedSourceSampler s({1000, 500, 2000, 800}, {0.75, 48, 3});
  for (int i = 0; i < 2000; ++i) {
    const auto b = s.draw();
    ASSERT_EQ(b.items.size(), 48u);
    int major = 0;
    std::set<std::size_t> from_selected;
    for (const auto& r : b.items) {
      if (r.dataset == b.selected) {
        ++major;
        from_selected.insert(r.index);
      }
    }
    ASSERT_EQ(major, 36);
    ASSERT_EQ(from_selected.size(), 36u);  // without replacement
  }
}

TEST(Sampler, SigmaOneDrawsOnlySelected) {
  MixedSourceSampler s({300, 300, 300}, {1.0, 48, 4});
  for (int i = 0; i < 200; ++i) {
    const auto b = s.draw();
    for (const auto& r : b.items) ASSERT_EQ(r.dataset, b.selected);
  }
}

TEST(Sampler, SingleDatasetIgnoresSigma) {
  MixedSourceSampler a({200}, {0.1, 16, 5});
  for (int i = 0; i < 100; ++i) {
    const auto b = a.draw();
    ASSERT_EQ(b.items.size(), 16u);
    for (const auto& r : b.items) ASSERT_EQ(r.dataset, 0);
  }
}

TEST(Sampler, RemainderIsSampleUniformOverOthers) {
  // With sigma = 0 every sample comes from the non-selected datasets, in
  // proportion to their sizes.
  MixedSourceSampler s({100, 300, 600}, {0.0, 10, 6});
  std::map<int, std::map<int, double>> counts;
  std::map<int, int> batches;
  for (int i = 0; i < 20000; ++i) {
    const auto b = s.draw();
    ++batches[b.selected];
    for (const auto& r : b.items) {
      ASSERT_NE(r.dataset, b.selected);
      counts[b.selected][r.dataset] += 1;
    }
  }
  // Selected = 2 (size 600): others 100 and 300 -> 1/4, 3/4.
  const double n2 = batches[2] * 10.0;
  EXPECT_NEAR(counts[2][0] / n2, 0.25, 0.02);
  EXPECT_NEAR(counts[2][1] / n2, 0.75, 0.02);
}

TEST(Sampler, SelectionPassesChiSquare) {
  const std::vector<std::size_t> sizes{120000, 9300, 183000, 180000};
  MixedSourceSampler s(sizes, {0.75, 48, 7});
  const auto p = dataset_probabilities(sizes);
  std::vector<double> obs(4, 0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) obs[s.draw().selected] += 1;
  double chi2 = 0;
  for (int k = 0; k < 4; ++k) chi2 += (obs[k] - n * p[k]) * (obs[k] - n * p[k]) / (n * p[k]);
  EXPECT_LT(chi2, 11.345);  // df = 3, alpha = 0.01
}

TEST(Sampler, DeterministicAndRngRestorable) {
  MixedSourceSampler a({50, 70, 90}, {0.75, 12, 9}), b({50, 70, 90}, {0.75, 12, 9});
  for (int i = 0; i < 30; ++i) {
    const auto x = a.draw(), y = b.draw();
    ASSERT_EQ(x.selected, y.selected);
    ASSERT_EQ(x.items, y.items);
  }
  const auto state = rng_state_to_string(a.rng());
  const auto next = a.draw();
  MixedSourceSampler c({50, 70, 90}, {0.75, 12, 0});
  c.set_rng(rng_state_from_string(state));
  EXPECT_EQ(c.draw().items, next.items);
}

TEST(Sampler, SmallPoolFallsBackToReplacement) {
  MixedSourceSampler s({5, 5}, {0.75, 48, 1});
  const auto b = s.draw();
  EXPECT_EQ(b.items.size(), 48u);
  for (const auto& r : b.items) EXPECT_LT(r.index, 5u);
}

TEST(Sampler, UniformDrawCoversUnion) {
  MixedSourceSampler s({100, 900}, {0.75, 20, 2});
  double from_small = 0;
  for (int i = 0; i < 5000; ++i)
    for (const auto& r : s.draw_uniform().items) from_small += r.dataset == 0;
  EXPECT_NEAR(from_small / (5000.0 * 20), 0.1, 0.01);
}

TEST(Sampler, RejectsBadConfig) {
  EXPECT_THROW(MixedSourceSampler({10}, {1.5, 4, 0}), ValidationError);
  EXPECT_THROW(MixedSourceSampler({10}, {0.5, 0, 0}), ValidationError);
}
