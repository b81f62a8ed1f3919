#pragma once

// Touch encoder: a small pre-norm vision transformer over image patches with
// learnable per-sensor prefix tokens.
//
//   sequence = [ s_k (L prefix tokens) ; patch_i * W_p + b_p + pos_i ]
//   x <- x + Attn(LN1(x)),  x <- x + MLP(LN2(x))      (n_blocks times)
//   e = normalize( mean_{patch rows}(LN_f(x)) * W_head )
//
// Prefix tokens carry no positional encoding and are excluded from pooling.
// Forward and backward are written out by hand and batched: all linear
// layers run on the stacked (B*T x D) token matrix. The scalar type is a
// template parameter so training runs in float and gradient checks in double.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "touchbind/common.hpp"
#include "touchbind/datagen.hpp"

namespace touchbind {

struct EncoderConfig {
  int height = 32;
  int width = 32;
  int patch = 8;
  int dim = 64;
  int blocks = 2;
  int heads = 4;
  int out_dim = 32;
  int prefix_len = 5;
  int num_sensors = 3;
  int mlp_ratio = 4;

  int grid_h() const { return height / patch; }
  int grid_w() const { return width / patch; }
  int patches() const { return grid_h() * grid_w(); }
  int tokens() const { return prefix_len + patches(); }
  int patch_features() const { return patch * patch * 3; }
  int head_dim() const { return dim / heads; }
  int hidden() const { return dim * mlp_ratio; }

  void validate() const {
    require(height > 0 && width > 0 && patch > 0, "encoder: sizes must be positive");
    require(height % patch == 0 && width % patch == 0,
            "encoder: image " + std::to_string(height) + "x" + std::to_string(width) +
                " is not divisible by patch size " + std::to_string(patch));
    require(dim > 0 && heads > 0, "encoder: dim and heads must be positive");
    require(dim % heads == 0, "encoder: token dim " + std::to_string(dim) + " is not divisible by " +
                                  std::to_string(heads) + " heads");
    require(blocks >= 0, "encoder: blocks must be >= 0");
    require(out_dim > 0, "encoder: output dim must be positive");
    require(prefix_len >= 0, "encoder: prefix_len must be >= 0");
    require(num_sensors >= 1, "encoder: need at least one sensor");
    require(mlp_ratio >= 1, "encoder: mlp_ratio must be >= 1");
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

inline void to_json(json& j, const EncoderConfig& c) {
  j = json{{"H", c.height},          {"W", c.width},       {"P", c.patch},    {"D", c.dim},
           {"n_blocks", c.blocks},   {"n_heads", c.heads}, {"C", c.out_dim},  {"L", c.prefix_len},
           {"K", c.num_sensors},     {"mlp_ratio", c.mlp_ratio}};
}

inline void from_json(const json& j, EncoderConfig& c) {
  check_keys(j, {"H", "W", "P", "D", "n_blocks", "n_heads", "C", "L", "K", "mlp_ratio"}, "encoder config");
  read_opt(j, "H", c.height);
  read_opt(j, "W", c.width);
  read_opt(j, "P", c.patch);
  read_opt(j, "D", c.dim);
  read_opt(j, "n_blocks", c.blocks);
  read_opt(j, "n_heads", c.heads);
  read_opt(j, "C", c.out_dim);
  read_opt(j, "L", c.prefix_len);
  read_opt(j, "K", c.num_sensors);
  read_opt(j, "mlp_ratio", c.mlp_ratio);
}

struct TensorSlot {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

/// Slot indices into the flat parameter layout.
struct ParamLayout {
  struct Block {
    int norm1_w, norm1_b, qkv_w, qkv_b, proj_w, proj_b, norm2_w, norm2_b, fc1_w, fc1_b, fc2_w, fc2_b;
  };
  std::vector<TensorSlot> slots;
  int patch_w = 0, patch_b = 0, pos = 0, tokens = 0, norm_w = 0, norm_b = 0, head_w = 0;
  std::vector<Block> blocks;
  std::size_t total = 0;

  explicit ParamLayout(const EncoderConfig& c) {
    auto add = [this](std::string name, int rows, int cols) {
      slots.push_back({std::move(name), rows, cols, total});
      total += slots.back().size();
      return static_cast<int>(slots.size() - 1);
    };
    const int d = c.dim;
    patch_w = add("patch_embed.weight", c.patch_features(), d);
    patch_b = add("patch_embed.bias", 1, d);
    pos = add("pos_embed", c.patches(), d);
    tokens = add("sensor_tokens", c.num_sensors * c.prefix_len, d);
    for (int b = 0; b < c.blocks; ++b) {
      const std::string p = "blocks." + std::to_string(b) + ".";
      Block blk{};
      blk.norm1_w = add(p + "norm1.weight", 1, d);
      blk.norm1_b = add(p + "norm1.bias", 1, d);
      blk.qkv_w = add(p + "attn.qkv.weight", d, 3 * d);
      blk.qkv_b = add(p + "attn.qkv.bias", 1, 3 * d);
      blk.proj_w = add(p + "attn.proj.weight", d, d);
      blk.proj_b = add(p + "attn.proj.bias", 1, d);
      blk.norm2_w = add(p + "norm2.weight", 1, d);
      blk.norm2_b = add(p + "norm2.bias", 1, d);
      blk.fc1_w = add(p + "mlp.fc1.weight", d, c.hidden());
      blk.fc1_b = add(p + "mlp.fc1.bias", 1, c.hidden());
      blk.fc2_w = add(p + "mlp.fc2.weight", c.hidden(), d);
      blk.fc2_b = add(p + "mlp.fc2.bias", 1, d);
      blocks.push_back(blk);
    }
    norm_w = add("norm.weight", 1, d);
    norm_b = add("norm.bias", 1, d);
    head_w = add("head.weight", d, c.out_dim);
  }
};

/// Over-aligned so vectorized reductions split into the same packets on
/// every allocation; results are then bitwise reproducible.
template <typename S>
using AlignedVector = std::vector<S, Eigen::aligned_allocator<S>>;

/// Flat storage of every trainable tensor. Also used for gradient sets.
template <typename S>
class EncoderParams {
 public:
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapMat = Eigen::Map<Mat>;
  using ConstMapMat = Eigen::Map<const Mat>;

  EncoderParams() : EncoderParams(EncoderConfig{}) {}
  explicit EncoderParams(const EncoderConfig& config)
      : config_(config), layout_(config), data_(layout_.total, S(0)) {}

  const EncoderConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  const std::vector<TensorSlot>& slots() const { return layout_.slots; }
  AlignedVector<S>& data() { return data_; }
  const AlignedVector<S>& data() const { return data_; }
  std::size_t size() const { return data_.size(); }

  MapMat mat(int slot) {
    const auto& s = layout_.slots[slot];
    return MapMat(data_.data() + s.offset, s.rows, s.cols);
  }
  ConstMapMat mat(int slot) const {
    const auto& s = layout_.slots[slot];
    return ConstMapMat(data_.data() + s.offset, s.rows, s.cols);
  }
  std::span<S> span(int slot) { return {data_.data() + layout_.slots[slot].offset, layout_.slots[slot].size()}; }
  std::span<const S> span(int slot) const {
    return {data_.data() + layout_.slots[slot].offset, layout_.slots[slot].size()};
  }

  int slot_index(std::string_view name) const {
    for (std::size_t i = 0; i < layout_.slots.size(); ++i)
      if (layout_.slots[i].name == name) return static_cast<int>(i);
    throw ValidationError("no parameter tensor named '" + std::string(name) + "'");
  }

  /// Rows of the sensor-token tensor that belong to sensor k.
  auto sensor_block(int k) { return mat(layout_.tokens).middleRows(k * config_.prefix_len, config_.prefix_len); }
  auto sensor_block(int k) const {
    return mat(layout_.tokens).middleRows(k * config_.prefix_len, config_.prefix_len);
  }

  void set_zero() { std::fill(data_.begin(), data_.end(), S(0)); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](S v) { return std::isfinite(v); });
  }

  template <typename T>
  EncoderParams<T> cast() const {
    EncoderParams<T> out(config_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<T>(data_[i]);
    return out;
  }

 private:
  EncoderConfig config_;
  ParamLayout layout_;
  AlignedVector<S> data_;
};

/// Weights ~ N(0, 0.02^2), sensor tokens and positions likewise, biases zero,
/// norm gains one. Draws in double so float and double params agree.
template <typename S = float>
EncoderParams<S> init_params(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  EncoderParams<S> p(config);
  const ParamLayout& lay = p.layout();
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 0.02);
  auto fill_gauss = [&](int slot) {
    for (S& v : p.span(slot)) v = static_cast<S>(gauss(rng));
  };
  auto fill_ones = [&](int slot) {
    for (S& v : p.span(slot)) v = S(1);
  };
  fill_gauss(lay.patch_w);
  fill_gauss(lay.pos);
  fill_gauss(lay.tokens);
  for (const auto& b : lay.blocks) {
    fill_ones(b.norm1_w);
    fill_gauss(b.qkv_w);
    fill_gauss(b.proj_w);
    fill_ones(b.norm2_w);
    fill_gauss(b.fc1_w);
    fill_gauss(b.fc2_w);
  }
  fill_ones(lay.norm_w);
  fill_gauss(lay.head_w);
  return p;
}

namespace detail {

template <typename S>
using Mat = typename EncoderParams<S>::Mat;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

inline constexpr double kLayerNormEps = 1e-5;

template <typename S>
void layer_norm_forward(const Mat<S>& x, const auto& gain, const auto& bias, Mat<S>& xhat, Vec<S>& rstd, Mat<S>& y) {
  const Eigen::Index n = x.rows(), d = x.cols();
  xhat.resize(n, d);
  rstd.resize(n);
  y.resize(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const S mean = x.row(r).mean();
    const S var = (x.row(r).array() - mean).square().mean();
    const S rs = S(1) / std::sqrt(var + S(kLayerNormEps));
    rstd[r] = rs;
    xhat.row(r) = (x.row(r).array() - mean) * rs;
  }
  y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
}

/// Returns dx; accumulates gain/bias gradients.
template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const Mat<S>& xhat, const Vec<S>& rstd, const auto& gain,
                           auto dgain, auto dbias) {
  dgain += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbias += dy.colwise().sum();
  const Mat<S> dxhat = dy.array().rowwise() * gain.row(0).array();
  Mat<S> dx(dy.rows(), dy.cols());
  const S inv_d = S(1) / static_cast<S>(dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const S m1 = dxhat.row(r).sum() * inv_d;
    const S m2 = dxhat.row(r).dot(xhat.row(r)) * inv_d;
    dx.row(r) = rstd[r] * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
  }
  return dx;
}

template <typename S>
S gelu(S x) {
  return S(0.5) * x * (S(1) + std::erf(x * S(std::numbers::sqrt2 / 2)));
}

template <typename S>
S gelu_grad(S x) {
  const S cdf = S(0.5) * (S(1) + std::erf(x * S(std::numbers::sqrt2 / 2)));
  const S pdf = std::exp(S(-0.5) * x * x) * S(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

}  // namespace detail

/// Intermediate activations kept for the backward pass.
template <typename S>
struct ForwardCache {
  using Mat = detail::Mat<S>;
  using Vec = detail::Vec<S>;
  struct Block {
    Mat x_in, xhat1, h1, qkv, attn, o, x_mid, xhat2, h2, u, a;
    Vec rstd1, rstd2;
  };
  int batch = 0;
  std::vector<int> sensors;
  Mat patches;
  std::vector<Block> blocks;
  Mat x_out, xhat_f, x_f;
  Vec rstd_f;
  Mat pooled, z;
  Vec z_norm;
  Mat embeddings;  // B x C, unit rows
};

/// Flattens an image into (patches x P*P*3) rows, patch-major in raster order,
/// each patch row-major and channel-last.
template <typename S>
void extract_patches(const Image& img, const EncoderConfig& c, Eigen::Ref<detail::Mat<S>> out) {
  const int p = c.patch;
  for (int gy = 0; gy < c.grid_h(); ++gy) {
    for (int gx = 0; gx < c.grid_w(); ++gx) {
      const int row = gy * c.grid_w() + gx;
      int col = 0;
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
          for (int ch = 0; ch < 3; ++ch) out(row, col++) = static_cast<S>(img.at(gy * p + y, gx * p + x, ch));
    }
  }
}

template <typename S>
void check_encoder_input(const Image& img, int sensor, const EncoderConfig& c) {
  require(img.height == c.height && img.width == c.width,
          "image size " + std::to_string(img.height) + "x" + std::to_string(img.width) + " does not match encoder " +
              std::to_string(c.height) + "x" + std::to_string(c.width));
  require(sensor >= 0 && sensor < c.num_sensors,
          "sensor index " + std::to_string(sensor) + " out of range [0," + std::to_string(c.num_sensors) + ")");
}

/// Batched forward pass. Fills `cache` and returns the unit embeddings (B x C).
template <typename S>
const detail::Mat<S>& encoder_forward(const EncoderParams<S>& params, std::span<const Image* const> images,
                                      std::span<const int> sensors, ForwardCache<S>& cache) {
  using Mat = detail::Mat<S>;
  const EncoderConfig& c = params.config();
  const ParamLayout& lay = params.layout();
  require(images.size() == sensors.size(), "encoder: images and sensor ids differ in count");
  const int bsz = static_cast<int>(images.size());
  const int np = c.patches(), len = c.prefix_len, t = c.tokens(), d = c.dim;
  const int nh = c.heads, dh = c.head_dim();
  for (int b = 0; b < bsz; ++b) check_encoder_input<S>(*images[b], sensors[b], c);

  cache.batch = bsz;
  cache.sensors.assign(sensors.begin(), sensors.end());
  cache.patches.resize(static_cast<Eigen::Index>(bsz) * np, c.patch_features());
  for (int b = 0; b < bsz; ++b) {
    extract_patches<S>(*images[b], c, cache.patches.middleRows(static_cast<Eigen::Index>(b) * np, np));
  }

  Mat x(static_cast<Eigen::Index>(bsz) * t, d);
  {
    Mat emb = cache.patches * params.mat(lay.patch_w);
    emb.rowwise() += params.mat(lay.patch_b).row(0);
    const auto pos = params.mat(lay.pos);
    for (int b = 0; b < bsz; ++b) {
      const Eigen::Index base = static_cast<Eigen::Index>(b) * t;
      if (len > 0) x.middleRows(base, len) = params.sensor_block(sensors[b]);
      x.middleRows(base + len, np) = emb.middleRows(static_cast<Eigen::Index>(b) * np, np) + pos;
    }
  }

  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  cache.blocks.resize(lay.blocks.size());
  for (std::size_t bi = 0; bi < lay.blocks.size(); ++bi) {
    const auto& L = lay.blocks[bi];
    auto& k = cache.blocks[bi];
    k.x_in = x;
    detail::layer_norm_forward<S>(x, params.mat(L.norm1_w), params.mat(L.norm1_b), k.xhat1, k.rstd1, k.h1);
    k.qkv.noalias() = k.h1 * params.mat(L.qkv_w);
    k.qkv.rowwise() += params.mat(L.qkv_b).row(0);
    k.attn.resize(static_cast<Eigen::Index>(bsz) * nh * t, t);
    k.o.resize(x.rows(), d);
    for (int b = 0; b < bsz; ++b) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(b) * t;
      for (int h = 0; h < nh; ++h) {
        const auto q = k.qkv.block(r0, h * dh, t, dh);
        const auto kk = k.qkv.block(r0, d + h * dh, t, dh);
        const auto v = k.qkv.block(r0, 2 * d + h * dh, t, dh);
        auto a = k.attn.middleRows((static_cast<Eigen::Index>(b) * nh + h) * t, t);
        a.noalias() = (q * kk.transpose()) * scale;
        for (int r = 0; r < t; ++r) {
          const S mx = a.row(r).maxCoeff();
          a.row(r) = (a.row(r).array() - mx).exp();
          a.row(r) /= a.row(r).sum();
        }
        k.o.block(r0, h * dh, t, dh).noalias() = a * v;
      }
    }
    Mat y = k.o * params.mat(L.proj_w);
    y.rowwise() += params.mat(L.proj_b).row(0);
    x += y;
    k.x_mid = x;
    detail::layer_norm_forward<S>(x, params.mat(L.norm2_w), params.mat(L.norm2_b), k.xhat2, k.rstd2, k.h2);
    k.u.noalias() = k.h2 * params.mat(L.fc1_w);
    k.u.rowwise() += params.mat(L.fc1_b).row(0);
    k.a = k.u.unaryExpr([](S v) { return detail::gelu(v); });
    Mat m = k.a * params.mat(L.fc2_w);
    m.rowwise() += params.mat(L.fc2_b).row(0);
    x += m;
  }
  cache.x_out = x;
  detail::layer_norm_forward<S>(x, params.mat(lay.norm_w), params.mat(lay.norm_b), cache.xhat_f, cache.rstd_f,
                                cache.x_f);

  cache.pooled.resize(bsz, d);
  for (int b = 0; b < bsz; ++b) {
    cache.pooled.row(b) = cache.x_f.middleRows(static_cast<Eigen::Index>(b) * t + len, np).colwise().mean();
  }
  cache.z.noalias() = cache.pooled * params.mat(lay.head_w);
  cache.z_norm.resize(bsz);
  cache.embeddings.resize(bsz, c.out_dim);
  for (int b = 0; b < bsz; ++b) {
    const S n = cache.z.row(b).norm();
    if (!(n > S(0)) || !std::isfinite(n)) throw RuntimeFailure("encoder produced a zero or non-finite embedding");
    cache.z_norm[b] = n;
    cache.embeddings.row(b) = cache.z.row(b) / n;
  }
  return cache.embeddings;
}

/// Backpropagates dL/d(embeddings) (B x C) and accumulates into `grads`.
template <typename S>
void encoder_backward(const EncoderParams<S>& params, const ForwardCache<S>& cache,
                      const detail::Mat<S>& d_embeddings, EncoderParams<S>& grads) {
  using Mat = detail::Mat<S>;
  const EncoderConfig& c = params.config();
  const ParamLayout& lay = params.layout();
  const int bsz = cache.batch;
  const int np = c.patches(), len = c.prefix_len, t = c.tokens(), d = c.dim;
  const int nh = c.heads, dh = c.head_dim();

  // e = z / |z|  =>  dz = (de - e (e . de)) / |z|
  Mat dz(bsz, c.out_dim);
  for (int b = 0; b < bsz; ++b) {
    const auto e = cache.embeddings.row(b);
    dz.row(b) = (d_embeddings.row(b) - e * e.dot(d_embeddings.row(b))) / cache.z_norm[b];
  }
  grads.mat(lay.head_w).noalias() += cache.pooled.transpose() * dz;
  const Mat dpooled = dz * params.mat(lay.head_w).transpose();

  Mat dxf = Mat::Zero(static_cast<Eigen::Index>(bsz) * t, d);
  for (int b = 0; b < bsz; ++b) {
    dxf.middleRows(static_cast<Eigen::Index>(b) * t + len, np).rowwise() = dpooled.row(b) / static_cast<S>(np);
  }
  Mat dx = detail::layer_norm_backward<S>(dxf, cache.xhat_f, cache.rstd_f, params.mat(lay.norm_w),
                                          grads.mat(lay.norm_w), grads.mat(lay.norm_b));

  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  for (int bi = static_cast<int>(lay.blocks.size()) - 1; bi >= 0; --bi) {
    const auto& L = lay.blocks[bi];
    const auto& k = cache.blocks[bi];

    // MLP branch
    grads.mat(L.fc2_w).noalias() += k.a.transpose() * dx;
    grads.mat(L.fc2_b) += dx.colwise().sum();
    Mat du = dx * params.mat(L.fc2_w).transpose();
    du.array() *= k.u.unaryExpr([](S v) { return detail::gelu_grad(v); }).array();
    grads.mat(L.fc1_w).noalias() += k.h2.transpose() * du;
    grads.mat(L.fc1_b) += du.colwise().sum();
    const Mat dh2 = du * params.mat(L.fc1_w).transpose();
    dx += detail::layer_norm_backward<S>(dh2, k.xhat2, k.rstd2, params.mat(L.norm2_w), grads.mat(L.norm2_w),
                                         grads.mat(L.norm2_b));

    // attention branch
    grads.mat(L.proj_w).noalias() += k.o.transpose() * dx;
    grads.mat(L.proj_b) += dx.colwise().sum();
    const Mat dout = dx * params.mat(L.proj_w).transpose();
    Mat dqkv(k.qkv.rows(), k.qkv.cols());
    Mat da(t, t);
    for (int b = 0; b < bsz; ++b) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(b) * t;
      for (int h = 0; h < nh; ++h) {
        const auto q = k.qkv.block(r0, h * dh, t, dh);
        const auto kk = k.qkv.block(r0, d + h * dh, t, dh);
        const auto v = k.qkv.block(r0, 2 * d + h * dh, t, dh);
        const auto a = k.attn.middleRows((static_cast<Eigen::Index>(b) * nh + h) * t, t);
        const auto dob = dout.block(r0, h * dh, t, dh);
        da.noalias() = dob * v.transpose();
        dqkv.block(r0, 2 * d + h * dh, t, dh).noalias() = a.transpose() * dob;
        for (int r = 0; r < t; ++r) {
          const S s = da.row(r).dot(a.row(r));
          da.row(r) = (a.row(r).array() * (da.row(r).array() - s)) * scale;
        }
        dqkv.block(r0, h * dh, t, dh).noalias() = da * kk;
        dqkv.block(r0, d + h * dh, t, dh).noalias() = da.transpose() * q;
      }
    }
    grads.mat(L.qkv_w).noalias() += k.h1.transpose() * dqkv;
    grads.mat(L.qkv_b) += dqkv.colwise().sum();
    const Mat dh1 = dqkv * params.mat(L.qkv_w).transpose();
    dx += detail::layer_norm_backward<S>(dh1, k.xhat1, k.rstd1, params.mat(L.norm1_w), grads.mat(L.norm1_w),
                                         grads.mat(L.norm1_b));
  }

  // input tokens
  Mat dpatch(static_cast<Eigen::Index>(bsz) * np, d);
  auto dpos = grads.mat(lay.pos);
  for (int b = 0; b < bsz; ++b) {
    const Eigen::Index base = static_cast<Eigen::Index>(b) * t;
    if (len > 0) grads.sensor_block(cache.sensors[b]) += dx.middleRows(base, len);
    const auto rows = dx.middleRows(base + len, np);
    dpos += rows;
    dpatch.middleRows(static_cast<Eigen::Index>(b) * np, np) = rows;
  }
  grads.mat(lay.patch_w).noalias() += cache.patches.transpose() * dpatch;
  grads.mat(lay.patch_b) += dpatch.colwise().sum();
}

/// Embeds a list of images in chunks; returns B x C unit rows in double.
template <typename S>
Eigen::MatrixXd encode_batch(const EncoderParams<S>& params, std::span<const Image* const> images,
                             std::span<const int> sensors, std::size_t chunk = 128) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), params.config().out_dim);
  ForwardCache<S> cache;
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const std::size_t n = std::min(chunk, images.size() - start);
    const auto& e = encoder_forward<S>(params, images.subspan(start, n), sensors.subspan(start, n), cache);
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n)) = e.template cast<double>();
  }
  return out;
}

/// Unit-norm embedding of one tactile image under sensor token block `sensor`.
template <typename S>
Eigen::VectorXd encode_touch(const Image& image, int sensor, const EncoderParams<S>& params) {
  const Image* imgs[] = {&image};
  const int sens[] = {sensor};
  ForwardCache<S> cache;
  const auto& e = encoder_forward<S>(params, imgs, sens, cache);
  return e.row(0).transpose().template cast<double>();
}

// --- sensor prototypes --------------------------------------------------------

/// Mean raw pixel per sensor, computed over training images after fitting.
struct SensorPrototypes {
  std::vector<Rgb> values;
};

inline SensorPrototypes compute_prototypes(std::span<const Image* const> images, std::span<const int> sensors,
                                           int num_sensors) {
  require(images.size() == sensors.size(), "prototypes: images and sensor ids differ in count");
  std::vector<Rgb> sum(num_sensors, Rgb{0, 0, 0});
  std::vector<std::size_t> count(num_sensors, 0);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const int k = sensors[i];
    require(k >= 0 && k < num_sensors, "prototypes: sensor id out of range");
    const Rgb m = images[i]->mean_pixel();
    for (int c = 0; c < 3; ++c) sum[k][c] += m[c];
    ++count[k];
  }
  SensorPrototypes out;
  for (int k = 0; k < num_sensors; ++k) {
    require(count[k] > 0, "prototypes: sensor " + std::to_string(k) + " has no training images");
    Rgb p;
    for (int c = 0; c < 3; ++c) p[c] = sum[k][c] / static_cast<double>(count[k]);
    out.values.push_back(p);
  }
  return out;
}

/// Prototypes from the training split of a dataset, using each sample's
/// recorded sensor id.
inline SensorPrototypes compute_prototypes(const Dataset& ds) {
  std::vector<const Image*> imgs;
  std::vector<int> sensors;
  for (const auto& s : ds.samples) {
    if (s.split != Split::kTrain) continue;
    imgs.push_back(&s.touch);
    sensors.push_back(s.touch.sensor_id);
  }
  return compute_prototypes(imgs, sensors, ds.manifest.num_sensors);
}

/// argmin_k L1(mean pixel, prototype k); ties go to the lowest index.
inline int resolve_sensor(const Image& image, const SensorPrototypes& bank) {
  require(!bank.values.empty(), "resolve_sensor: empty prototype bank");
  const Rgb m = image.mean_pixel();
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < bank.values.size(); ++k) {
    double dist = 0;
    for (int c = 0; c < 3; ++c) dist += std::abs(m[c] - bank.values[k][c]);
    if (dist < best_d) {
      best_d = dist;
      best = static_cast<int>(k);
    }
  }
  return best;
}

}  // namespace touchbind
