#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace touchbind;

namespace {

const std::vector<std::string> kNames = {"wood", "metal", "fabric", "plastic"};

double brute_force_ap(const std::vector<std::uint8_t>& rel) {
  int positives = 0;
  for (auto r : rel) positives += r;
  double sum = 0;
  for (std::size_t k = 0; k < rel.size(); ++k) {
    if (!rel[k]) continue;
    int hits = 0;
    for (std::size_t j = 0; j <= k; ++j) hits += rel[j];
    sum += static_cast<double>(hits) / (k + 1);
  }
  return sum / positives;
}

}  // namespace

TEST(ZeroShot, PromptEmbeddingClassifiesItself) {
  const AnchorSpace a(AnchorConfig{}, kNames);
  PromptTemplateRegistry reg;
  for (int c = 0; c < 4; ++c) {
    const auto e = a.text("This feels like [CLS]", c, reg);
    const auto r = zero_shot_classify(e, kNames, "This feels like [CLS]", reg, a);
    EXPECT_EQ(r.prediction, c);
    EXPECT_EQ(r.scores.size(), 4);
  }
}

TEST(ZeroShot, ScaleInvariantAndErrors) {
  const AnchorSpace a(AnchorConfig{}, kNames);
  PromptTemplateRegistry reg;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    const Eigen::VectorXd e = tbtest::random_unit(32, rng);
    EXPECT_EQ(zero_shot_classify(e, kNames, "Touch of [CLS]", reg, a).prediction,
              zero_shot_classify(7.5 * e, kNames, "Touch of [CLS]", reg, a).prediction);
  }
  const Eigen::VectorXd e = tbtest::random_unit(32, rng);
  EXPECT_THROW(zero_shot_classify(e, kNames, "Smells like [CLS]", reg, a), ValidationError);
  const std::vector<std::string> bad = {"wood", "granite"};
  EXPECT_THROW(zero_shot_classify(e, bad, "Touch of [CLS]", reg, a), ValidationError);
  const std::vector<std::string> one = {"wood"};
  EXPECT_THROW(zero_shot_classify(e, one, "Touch of [CLS]", reg, a), ValidationError);
}

TEST(ZeroShot, ArgmaxTiesGoLow) {
  Eigen::VectorXd s(4);
  s << 0.2, 0.7, 0.7, 0.1;
  EXPECT_EQ(argmax_lowest(s), 1);
}

TEST(ZeroShot, PermutingClassesPermutesPrediction) {
  const AnchorSpace a(AnchorConfig{}, kNames);
  PromptTemplateRegistry reg;
  std::mt19937_64 rng(2);
  const std::vector<std::string> shuffled = {"fabric", "wood", "plastic", "metal"};
  for (int i = 0; i < 200; ++i) {
    const Eigen::VectorXd e = tbtest::random_unit(32, rng);
    const int p = zero_shot_classify(e, kNames, "This feels like [CLS]", reg, a).prediction;
    const int q = zero_shot_classify(e, shuffled, "This feels like [CLS]", reg, a).prediction;
    EXPECT_EQ(kNames[p], shuffled[q]);
  }
}

TEST(Grasp, PhraseEmbeddingsAndTie) {
  const AnchorSpace a(AnchorConfig{}, kNames);
  EXPECT_EQ(zero_shot_grasp(a.grasp_text(0), a), 0);
  EXPECT_EQ(zero_shot_grasp(a.grasp_text(1), a), 1);
  // Equal (zero) scores resolve to stable.
  const Eigen::VectorXd e = Eigen::VectorXd::Zero(32);
  EXPECT_EQ(zero_shot_grasp(e, a), 0);
}

TEST(LinearProbe, SeparableTwoClasses) {
  Eigen::MatrixXd x(20, 3);
  std::vector<int> y(20);
  for (int i = 0; i < 20; ++i) {
    x.row(i) = Eigen::RowVector3d(i % 2 ? -1 : 1, 0, 0);
    y[i] = i % 2;
  }
  EXPECT_DOUBLE_EQ(linear_probe(x, y, x, y).accuracy, 1.0);
}

TEST(LinearProbe, IdenticalFeaturesGiveMajorityFrequency) {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(10, 4);
  const std::vector<int> y{0, 0, 0, 0, 0, 0, 1, 1, 2, 2};
  EXPECT_NEAR(linear_probe(x, y, x, y).accuracy, 0.6, 1e-12);
}

TEST(LinearProbe, UnseenTestClassCountedWrong) {
  Eigen::MatrixXd x(4, 2);
  x << 1, 0, 0, 1, 1, 0, 0, 1;
  const std::vector<int> ytr{0, 1, 0, 1};
  const Eigen::MatrixXd xt = x.topRows(3);
  const std::vector<int> yte{0, 1, 2};
  const auto r = linear_probe(x, ytr, xt, yte);
  EXPECT_EQ(r.unseen_test_samples, 1);
  EXPECT_NEAR(r.accuracy, 2.0 / 3.0, 1e-12);
  EXPECT_THROW(linear_probe(x, std::vector<int>{0, 0, 0, 0}, x, ytr), ValidationError);
}

TEST(LinearProbe, MoreIterationsNoWorse) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  Eigen::MatrixXd x(120, 5);
  std::vector<int> y(120);
  for (int i = 0; i < 120; ++i) {
    y[i] = i % 3;
    for (int d = 0; d < 5; ++d) x(i, d) = 0.4 * n(rng) + (d == y[i] ? 1.0 : 0.0);
  }
  const auto short_run = linear_probe(x, y, x, y, {50, 0.1, 1e-4});
  const auto long_run = linear_probe(x, y, x, y, {500, 0.1, 1e-4});
  EXPECT_GE(long_run.train_accuracy, short_run.train_accuracy);
}

TEST(AveragePrecision, HandValues) {
  EXPECT_DOUBLE_EQ(*average_precision(std::vector<std::uint8_t>{1, 1, 1, 0, 0}), 1.0);
  EXPECT_NEAR(*average_precision(std::vector<std::uint8_t>{1, 0, 1}), 5.0 / 6.0, 1e-15);
  for (int k = 1; k <= 7; ++k) {
    std::vector<std::uint8_t> rel(7, 0);
    rel[k - 1] = 1;
    EXPECT_NEAR(*average_precision(rel), 1.0 / k, 1e-15);
  }
  EXPECT_FALSE(average_precision(std::vector<std::uint8_t>{0, 0, 0}).has_value());
}

TEST(AveragePrecision, MatchesBruteForce) {
  std::mt19937_64 rng(4);
  std::bernoulli_distribution coin(0.3);
  for (int t = 0; t < 1000; ++t) {
    std::vector<std::uint8_t> rel(1 + rng() % 40);
    for (auto& r : rel) r = coin(rng);
    rel[rng() % rel.size()] = 1;
    EXPECT_NEAR(*average_precision(rel), brute_force_ap(rel), 1e-12);
  }
}

TEST(Retrieval, ExactMatchGalleryIsPerfect) {
  AnchorConfig c;
  c.beta = 0.0;
  const AnchorSpace a(c, kNames);
  std::mt19937_64 rng(5);
  RetrievalTask task;
  task.queries.resize(40, 32);
  task.gallery.resize(40, 32);
  for (int i = 0; i < 40; ++i) {
    LatentSample l;
    l.material_class = i % 4;
    l.object_id = i % 4;  // one object per class
    task.queries.row(i) = a.vision(l).transpose();
    task.gallery.row(i) = a.vision(l).transpose();
    task.query_labels.push_back(l.object_id);
    task.gallery_labels.push_back(l.object_id);
  }
  const auto r = cross_modal_retrieval(task);
  EXPECT_DOUBLE_EQ(r.mean_ap, 1.0);
  EXPECT_EQ(r.scored_queries, 40);
}

TEST(Retrieval, ExcludesQueriesWithoutPositives) {
  std::mt19937_64 rng(6);
  RetrievalTask task;
  task.queries.resize(3, 4);
  task.gallery.resize(2, 4);
  for (int i = 0; i < 3; ++i) task.queries.row(i) = tbtest::random_unit(4, rng).transpose();
  for (int i = 0; i < 2; ++i) task.gallery.row(i) = tbtest::random_unit(4, rng).transpose();
  task.query_labels = {0, 1, 9};
  task.gallery_labels = {0, 1};
  const auto r = cross_modal_retrieval(task);
  EXPECT_EQ(r.scored_queries, 2);
  EXPECT_EQ(r.excluded_queries, 1);
  RetrievalTask empty = task;
  empty.gallery.resize(0, 4);
  empty.gallery_labels.clear();
  EXPECT_THROW(cross_modal_retrieval(empty), ValidationError);
}

// Random embeddings: the expected AP of a uniformly random ranking, estimated
// by shuffling relevance lists, must match the measured mAP.
TEST(Retrieval, RandomEmbeddingsMatchPermutationOracle) {
  std::mt19937_64 rng(7);
  RetrievalTask task;
  const int objects = 10, points = 20, n = objects * points;
  task.queries.resize(n, 32);
  task.gallery.resize(n, 32);
  for (int i = 0; i < n; ++i) {
    task.queries.row(i) = tbtest::random_unit(32, rng).transpose();
    task.gallery.row(i) = tbtest::random_unit(32, rng).transpose();
    task.query_labels.push_back(i / points);
    task.gallery_labels.push_back(i / points);
  }
  const double measured = cross_modal_retrieval(task).mean_ap;
  std::vector<std::uint8_t> rel(n, 0);
  std::fill(rel.begin(), rel.begin() + points, 1);
  double oracle = 0;
  const int trials = 4000;
  for (int t = 0; t < trials; ++t) {
    std::shuffle(rel.begin(), rel.end(), rng);
    oracle += brute_force_ap(rel) / trials;
  }
  EXPECT_NEAR(measured, oracle, 0.05);
}

TEST(Retrieval, GalleryPermutationInvariant) {
  std::mt19937_64 rng(8);
  RetrievalTask task;
  task.queries.resize(30, 8);
  task.gallery.resize(30, 8);
  for (int i = 0; i < 30; ++i) {
    task.queries.row(i) = tbtest::random_unit(8, rng).transpose();
    task.gallery.row(i) = tbtest::random_unit(8, rng).transpose();
    task.query_labels.push_back(i % 5);
    task.gallery_labels.push_back(i % 5);
  }
  std::vector<int> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  RetrievalTask p = task;
  for (int i = 0; i < 30; ++i) {
    p.gallery.row(i) = task.gallery.row(perm[i]);
    p.gallery_labels[i] = task.gallery_labels[perm[i]];
  }
  EXPECT_NEAR(cross_modal_retrieval(task).mean_ap, cross_modal_retrieval(p).mean_ap, 1e-12);
}

TEST(Ablation, GridScheduleAndMedian) {
  EXPECT_EQ(ablation_cells(0.75, {0.0, 0.5, 0.75, 1.0}).size(), 8u);
  EXPECT_DOUBLE_EQ(median_of({0.3, 0.1, 0.2}), 0.2);
  EXPECT_DOUBLE_EQ(median_of({0.4, std::nan(""), 0.2}), 0.3);
  EXPECT_TRUE(std::isnan(median_of({})));
}

TEST(Ablation, TinyGridRunsAndReports) {
  const Dataset ds = generate_world(tbtest::small_world(40), 3);
  const AnchorSpace a(AnchorConfig{}, ds.manifest.class_names);
  EncoderConfig enc;
  enc.dim = 8;
  enc.heads = 2;
  enc.blocks = 1;
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 8;
  AblationOptions opts;
  opts.jobs = 2;
  const auto r = run_ablation_grid(ds, a, enc, tc, opts);
  EXPECT_EQ(r.scheduled_runs, 24);
  EXPECT_EQ(r.distinct_runs, 21);
  ASSERT_EQ(r.cells.size(), 8u);
  EXPECT_EQ(r.at("full").accuracy, r.at(sigma_cell_id(0.75)).accuracy);
  for (const auto& c : r.cells) {
    ASSERT_EQ(c.accuracy.size(), 3u);
    for (double acc : c.accuracy) {
      EXPECT_GE(acc, 0.0);
      EXPECT_LE(acc, 1.0);
    }
  }
  const json j = ablation_report_json(r);
  EXPECT_EQ(j.at("cells").size(), 8u);
  EXPECT_NE(ablation_report_csv(r).find("baseline,0,0,0.75,0,"), std::string::npos);
  EXPECT_NE(sigma_sweep_svg(r).find("<svg"), std::string::npos);
}
