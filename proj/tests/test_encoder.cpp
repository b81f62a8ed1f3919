#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace touchbind;

namespace {

struct GradCase {
  EncoderParams<double> params;
  std::vector<Image> images;
  RawBatch batch;
};

// Tiny config with every parameter perturbed away from its structured init
// so no gradient path is trivially zero.
GradCase make_grad_case(int batch, std::vector<int> sensors, std::uint64_t seed) {
  const auto cfg = tbtest::tiny_encoder();
  GradCase g{init_params<double>(cfg, seed), {}, {}};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.3);
  for (double& v : g.params.data()) v += n(rng);
  for (int b = 0; b < batch; ++b) g.images.push_back(tbtest::random_image(8, 8, rng));
  for (const auto& img : g.images) g.batch.images.push_back(&img);
  g.batch.sensors = std::move(sensors);
  g.batch.anchors.resize(batch, cfg.out_dim);
  for (int b = 0; b < batch; ++b) g.batch.anchors.row(b) = tbtest::random_unit(cfg.out_dim, rng).transpose();
  return g;
}

double batch_loss(const EncoderParams<double>& p, const RawBatch& batch, double tau) {
  ForwardCache<double> cache;
  const auto& e = encoder_forward<double>(p, batch.images, batch.sensors, cache);
  return total_loss(e, batch.anchors, tau);
}

}  // namespace

TEST(EncoderConfig, Validation) {
  EncoderConfig c;
  EXPECT_NO_THROW(c.validate());
  c.dim = 65;
  EXPECT_THROW(c.validate(), ValidationError);
  c = EncoderConfig{};
  c.height = 30;
  EXPECT_THROW(c.validate(), ValidationError);
  c = EncoderConfig{};
  c.prefix_len = -1;
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_THROW(init_params<float>(EncoderConfig{.dim = 65}, 1), ValidationError);
}

TEST(EncoderConfig, LargeScaleAccepted) {
  EncoderConfig c;
  c.height = c.width = 224;
  c.patch = 14;
  c.dim = 1024;
  c.blocks = 24;
  c.heads = 16;
  c.out_dim = 1024;
  EXPECT_NO_THROW(c.validate());
  const ParamLayout lay(c);
  EXPECT_EQ(lay.blocks.size(), 24u);
  EXPECT_EQ(lay.slots[lay.tokens].rows, 15);
}

TEST(InitParams, DeterministicAndScaled) {
  const EncoderConfig c;
  const auto a = init_params<float>(c, 5), b = init_params<float>(c, 5), d = init_params<float>(c, 6);
  EXPECT_EQ(a.data(), b.data());
  EXPECT_NE(a.data(), d.data());
  const auto w = a.span(a.layout().patch_w);
  ASSERT_GE(w.size(), 10000u);
  double sq = 0, mean = 0;
  for (float v : w) mean += v;
  mean /= w.size();
  for (float v : w) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / (w.size() - 1));
  EXPECT_GE(sd, 0.018);
  EXPECT_LE(sd, 0.022);
  for (float v : a.span(a.layout().patch_b)) EXPECT_EQ(v, 0.0f);
  for (float v : a.span(a.layout().norm_w)) EXPECT_EQ(v, 1.0f);
}

TEST(InitParams, FloatAndDoubleAgree) {
  const EncoderConfig c;
  const auto f = init_params<float>(c, 3);
  const auto d = init_params<double>(c, 3);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_EQ(f.data()[i], static_cast<float>(d.data()[i]));
}

TEST(EncodeTouch, UnitNormAndSensorDependence) {
  const EncoderConfig c;
  const auto p = init_params<float>(c, 1);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    const auto img = tbtest::random_image(32, 32, rng);
    const auto e0 = encode_touch(img, 0, p);
    const auto e1 = encode_touch(img, 1, p);
    EXPECT_NEAR(e0.norm(), 1.0, 1e-6);
    EXPECT_GT((e0 - e1).norm(), 0.0);
  }
}

TEST(EncodeTouch, NoPrefixIgnoresSensor) {
  EncoderConfig c;
  c.prefix_len = 0;
  const auto p = init_params<float>(c, 1);
  std::mt19937_64 rng(3);
  const auto img = tbtest::random_image(32, 32, rng);
  const auto e0 = encode_touch(img, 0, p), e2 = encode_touch(img, 2, p);
  for (int i = 0; i < e0.size(); ++i) EXPECT_EQ(e0[i], e2[i]);
}

TEST(EncodeTouch, InputErrors) {
  const auto p = init_params<float>(EncoderConfig{}, 1);
  std::mt19937_64 rng(4);
  EXPECT_THROW(encode_touch(tbtest::random_image(16, 16, rng), 0, p), ValidationError);
  EXPECT_THROW(encode_touch(tbtest::random_image(32, 32, rng), 3, p), ValidationError);
  EXPECT_THROW(encode_touch(tbtest::random_image(32, 32, rng), -1, p), ValidationError);
}

TEST(EncodeTouch, BatchMatchesSingle) {
  const auto p = init_params<double>(EncoderConfig{}, 9);
  std::mt19937_64 rng(5);
  std::vector<Image> imgs;
  for (int i = 0; i < 5; ++i) imgs.push_back(tbtest::random_image(32, 32, rng));
  std::vector<const Image*> ptrs;
  for (auto& im : imgs) ptrs.push_back(&im);
  const std::vector<int> sens{0, 1, 2, 1, 0};
  const Eigen::MatrixXd batch = encode_batch<double>(p, ptrs, sens, 2);
  for (int i = 0; i < 5; ++i) EXPECT_LE((batch.row(i).transpose() - encode_touch(imgs[i], sens[i], p)).norm(), 1e-12);
}

// Central differences (eps 1e-4, double) against the analytic backward pass,
// tensor by tensor, including the sensor-token bank.
TEST(EncoderGradient, MatchesFiniteDifferences) {
  auto g = make_grad_case(3, {0, 1, 2}, 11);
  const double tau = 0.07, eps = 1e-4;
  const auto lg = loss_gradient<double>(g.params, g.batch, tau);
  ASSERT_GT(lg.loss, 0.0);
  for (std::size_t s = 0; s < g.params.slots().size(); ++s) {
    const auto& slot = g.params.slots()[s];
    double worst = 0;
    for (std::size_t i = 0; i < slot.size(); ++i) {
      double& v = g.params.data()[slot.offset + i];
      const double keep = v;
      v = keep + eps;
      const double up = batch_loss(g.params, g.batch, tau);
      v = keep - eps;
      const double down = batch_loss(g.params, g.batch, tau);
      v = keep;
      const double numeric = (up - down) / (2 * eps);
      const double analytic = lg.grads.data()[slot.offset + i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
    EXPECT_LT(worst, 1e-3) << slot.name;
  }
}

TEST(EncoderGradient, SensorLocalityIsExact) {
  auto g = make_grad_case(4, {0, 0, 0, 0}, 12);
  const auto lg = loss_gradient<double>(g.params, g.batch, 0.07);
  EXPECT_GT(lg.grads.sensor_block(0).cwiseAbs().maxCoeff(), 0.0);
  for (int k = 1; k < 3; ++k) EXPECT_EQ(lg.grads.sensor_block(k).cwiseAbs().maxCoeff(), 0.0) << k;
}

TEST(EncoderGradient, SingletonBatchHasZeroGradient) {
  auto g = make_grad_case(1, {1}, 13);
  const auto lg = loss_gradient<double>(g.params, g.batch, 0.07);
  EXPECT_EQ(lg.loss, 0.0);
  for (double v : lg.grads.data()) ASSERT_EQ(v, 0.0);
}

TEST(Prototypes, ArithmeticMean) {
  Image a(4, 4), b(4, 4);
  std::fill(a.pixels.begin(), a.pixels.end(), 0.2f);
  std::fill(b.pixels.begin(), b.pixels.end(), 0.4f);
  const Image* imgs[] = {&a, &b};
  const int sens[] = {0, 0};
  const auto p = compute_prototypes(imgs, sens, 1);
  for (double v : p.values[0]) EXPECT_NEAR(v, 0.3, 1e-7);
  const Image* one[] = {&a};
  EXPECT_THROW(compute_prototypes(one, std::span<const int>(sens, 1), 2), ValidationError);
}

TEST(Prototypes, DatasetPrototypesMatchPixelAverage) {
  const Dataset ds = generate_world(tbtest::small_world(500), 3);
  const auto protos = compute_prototypes(ds);
  std::vector<Rgb> sum(3, Rgb{0, 0, 0});
  std::vector<double> count(3, 0);
  for (const auto& s : ds.samples) {
    if (s.split != Split::kTrain) continue;
    for (std::size_t i = 0; i < s.touch.pixels.size(); ++i) sum[s.touch.sensor_id][i % 3] += s.touch.pixels[i];
    count[s.touch.sensor_id] += s.touch.pixels.size() / 3;
  }
  for (int k = 0; k < 3; ++k) {
    double d = 0;
    for (int c = 0; c < 3; ++c) d += std::abs(sum[k][c] / count[k] - protos.values[k][c]);
    EXPECT_LE(d, 0.05);
    EXPECT_LE(d, 1e-6);  // equal-size images: mean of means is the pixel mean
  }
}

TEST(ResolveSensor, BasicCases) {
  SensorPrototypes bank{{{0.1, 0.1, 0.1}, {0.5, 0.2, 0.2}}};
  Image img(4, 4);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(bank.values[1][i % 3]);
  EXPECT_EQ(resolve_sensor(img, bank), 1);
  EXPECT_EQ(resolve_sensor(img, SensorPrototypes{{{0.9, 0.9, 0.9}}}), 0);
  EXPECT_THROW(resolve_sensor(img, SensorPrototypes{}), ValidationError);
  SensorPrototypes tie{{{0.4, 0.4, 0.4}, {0.6, 0.6, 0.6}}};
  std::fill(img.pixels.begin(), img.pixels.end(), 0.5f);
  EXPECT_EQ(resolve_sensor(img, tie), 0);
}

TEST(ResolveSensor, PermutationConsistent) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 200; ++t) {
    SensorPrototypes bank;
    for (int k = 0; k < 4; ++k) bank.values.push_back({u(rng), u(rng), u(rng)});
    const auto img = tbtest::random_image(4, 4, rng);
    std::vector<int> perm{0, 1, 2, 3};
    std::shuffle(perm.begin(), perm.end(), rng);
    SensorPrototypes permuted;
    for (int k = 0; k < 4; ++k) permuted.values.push_back(bank.values[perm[k]]);
    EXPECT_EQ(perm[resolve_sensor(img, permuted)], resolve_sensor(img, bank));
  }
}

TEST(ResolveSensor, HeldOutSyntheticImagesResolvePerfectly) {
  const auto w = WorldConfig::toy();
  const Dataset train = generate_world(tbtest::small_world(300), 1);
  const auto protos = compute_prototypes(train);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 1);
  for (int k = 0; k < 3; ++k) {
    int hits = 0;
    for (int i = 0; i < 1000; ++i) {
      LatentSample l;
      l.material_class = i % 4;
      l.texture_frequency = w.class_frequency(l.material_class);
      l.contact_depth = 0.15 + 0.85 * u(rng);
      l.contact_center = {0.2 + 0.6 * u(rng), 0.2 + 0.6 * u(rng)};
      const auto img = render_touch(l, w.sensors[k], rng(), 32, 32, w.imprint);
      hits += resolve_sensor(img, protos) == k;
    }
    EXPECT_EQ(hits, 1000) << "sensor " << k;
  }
}
