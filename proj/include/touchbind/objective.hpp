#pragma once

// Symmetric InfoNCE between touch embeddings and frozen anchor embeddings.
//
//   L_t2v = -(1/B) sum_i log softmax_j( t_i . v_j / tau )[i]
//   L_v2t = -(1/B) sum_i log softmax_j( v_i . t_j / tau )[i]
//   L     = L_t2v + L_v2t
//
// The positive stays in the denominator. Rows are shifted by their max
// before exponentiation.

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <vector>

#include "touchbind/common.hpp"
#include "touchbind/encoder.hpp"

namespace touchbind {

struct LossConfig {
  double temperature = 0.07;
};

namespace detail {

inline void check_pair_batch(const Eigen::MatrixXd& touch, const Eigen::MatrixXd& vision, double tau) {
  if (!(tau > 0.0)) throw ValidationError("temperature must be positive");
  require(touch.rows() == vision.rows() && touch.cols() == vision.cols(),
          "pair batch: touch and vision embeddings differ in shape");
  require(touch.rows() >= 1, "pair batch: need at least one pair");
  if (!touch.allFinite() || !vision.allFinite()) throw ValidationError("pair batch: non-finite embedding");
}

/// Row-wise log-softmax with max subtraction.
inline Eigen::MatrixXd log_softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

/// Mean of -log softmax(row)[i] over rows of `logits`, which has the
/// positives on the diagonal.
inline double directional_nce(const Eigen::MatrixXd& logits) {
  const Eigen::MatrixXd ls = log_softmax_rows(logits);
  return std::max(0.0, -ls.diagonal().mean());
}

}  // namespace detail

/// Touch-to-vision direction. Rows of both matrices are embeddings.
inline double info_nce_t2v(const Eigen::MatrixXd& touch, const Eigen::MatrixXd& vision, double tau) {
  detail::check_pair_batch(touch, vision, tau);
  if (touch.rows() == 1) return 0.0;
  return detail::directional_nce(touch * vision.transpose() / tau);
}

/// Vision-to-touch direction: denominators sum over touch embeddings.
inline double info_nce_v2t(const Eigen::MatrixXd& touch, const Eigen::MatrixXd& vision, double tau) {
  detail::check_pair_batch(touch, vision, tau);
  if (touch.rows() == 1) return 0.0;
  return detail::directional_nce(vision * touch.transpose() / tau);
}

inline double total_loss(const Eigen::MatrixXd& touch, const Eigen::MatrixXd& vision, double tau) {
  return info_nce_t2v(touch, vision, tau) + info_nce_v2t(touch, vision, tau);
}

/// total_loss and its gradient with respect to the touch rows; the vision
/// side is frozen and receives nothing.
template <typename S>
struct LossWithGrad {
  double loss = 0.0;
  detail::Mat<S> d_touch;
};

template <typename S>
LossWithGrad<S> total_loss_with_grad(const detail::Mat<S>& touch, const detail::Mat<S>& vision, double tau) {
  const Eigen::MatrixXd t = touch.template cast<double>();
  const Eigen::MatrixXd v = vision.template cast<double>();
  detail::check_pair_batch(t, v, tau);
  const Eigen::Index b = t.rows();
  LossWithGrad<S> out;
  out.d_touch = detail::Mat<S>::Zero(b, t.cols());
  if (b == 1) return out;

  const Eigen::MatrixXd logits = t * v.transpose() / tau;  // [i][j] = t_i . v_j / tau
  const Eigen::MatrixXd ls_rows = detail::log_softmax_rows(logits);
  const Eigen::MatrixXd ls_cols = detail::log_softmax_rows(logits.transpose()).transpose();
  out.loss = std::max(0.0, -ls_rows.diagonal().mean()) + std::max(0.0, -ls_cols.diagonal().mean());
  if (!std::isfinite(out.loss)) throw RuntimeFailure("non-finite contrastive loss");

  // d/dlogits of both directions: (softmax - I) / B, row- and column-wise.
  Eigen::MatrixXd g = ls_rows.array().exp().matrix() + ls_cols.array().exp().matrix();
  g.diagonal().array() -= 2.0;
  g /= static_cast<double>(b);
  out.d_touch = ((g * v) / tau).template cast<S>();
  return out;
}

/// One (image, sensor token block, frozen anchor embedding) triple per row.
struct RawBatch {
  std::vector<const Image*> images;
  std::vector<int> sensors;
  Eigen::MatrixXd anchors;  // B x C
};

template <typename S>
struct LossGradient {
  double loss = 0.0;
  EncoderParams<S> grads;
};

/// Gradient of total_loss through the encoder for every parameter tensor.
template <typename S>
LossGradient<S> loss_gradient(const EncoderParams<S>& params, const RawBatch& batch, double tau,
                              ForwardCache<S>* reuse = nullptr) {
  ForwardCache<S> local;
  ForwardCache<S>& cache = reuse ? *reuse : local;
  const auto& emb = encoder_forward<S>(params, batch.images, batch.sensors, cache);
  const detail::Mat<S> anchors = batch.anchors.template cast<S>();
  auto lg = total_loss_with_grad<S>(emb, anchors, tau);
  LossGradient<S> out{lg.loss, EncoderParams<S>(params.config())};
  encoder_backward<S>(params, cache, lg.d_touch, out.grads);
  return out;
}

}  // namespace touchbind
