#pragma once

// Alignment training loop: mixed-source batches, symmetric InfoNCE against
// the frozen anchor, global-norm clipping, AdamW with decoupled weight decay
// and a cosine learning-rate schedule.

#include <cmath>
#include <filesystem>
#include <functional>
#include <numbers>
#include <optional>
#include <ostream>
#include <vector>

#include "touchbind/anchor.hpp"
#include "touchbind/checkpoint.hpp"
#include "touchbind/config.hpp"
#include "touchbind/datagen.hpp"
#include "touchbind/encoder.hpp"
#include "touchbind/objective.hpp"
#include "touchbind/sampler.hpp"

namespace touchbind {

/// base_lr * 0.5 * (1 + cos(pi * step / total_steps)), after an optional
/// linear warmup over the first `warmup` steps.
inline double lr_at(std::int64_t step, std::int64_t total_steps, double base_lr, std::int64_t warmup = 0) {
  require(total_steps > 0, "lr schedule: total_steps must be positive");
  require(step >= 0 && step <= total_steps, "lr schedule: step outside [0, total_steps]");
  if (step < warmup) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const double span = static_cast<double>(total_steps - warmup);
  const double progress = span > 0 ? static_cast<double>(step - warmup) / span : 1.0;
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

inline OptimizerState make_optimizer_state(std::size_t n) { return {std::vector<float>(n, 0.f), std::vector<float>(n, 0.f), 0}; }

/// Scales `grads` in place to global L2 norm <= max_norm; returns the
/// pre-clip norm.
inline double clip_global_norm(EncoderParams<float>& grads, double max_norm) {
  double sq = 0;
  for (float g : grads.data()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const float s = static_cast<float>(max_norm / norm);
    for (float& g : grads.data()) g *= s;
  }
  return norm;
}

/// One AdamW update with decoupled weight decay:
///   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
inline void adamw_update(EncoderParams<float>& params, OptimizerState& state, const EncoderParams<float>& grads,
                         double lr, const TrainConfig& cfg) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  auto& theta = params.data();
  const auto& g = grads.data();
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double gi = g[i];
    const double m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * gi;
    const double v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * gi * gi;
    state.m[i] = static_cast<float>(m);
    state.v[i] = static_cast<float>(v);
    const double update = (m / bc1) / (std::sqrt(v / bc2) + cfg.adam_eps) + cfg.weight_decay * theta[i];
    theta[i] = static_cast<float>(theta[i] - lr * update);
  }
}

/// Forward, loss, backward, clip and update. Returns the batch loss.
inline double train_step(EncoderParams<float>& params, OptimizerState& state, const RawBatch& batch, double lr,
                         const TrainConfig& cfg, ForwardCache<float>* cache = nullptr) {
  auto lg = loss_gradient<float>(params, batch, cfg.temperature, cache);
  if (!std::isfinite(lg.loss) || !lg.grads.all_finite()) {
    throw RuntimeFailure("non-finite loss or gradient at optimizer step " + std::to_string(state.step) +
                         " (lr=" + std::to_string(lr) + ", loss=" + std::to_string(lg.loss) + ")");
  }
  clip_global_norm(lg.grads, cfg.grad_clip);
  adamw_update(params, state, lg.grads, lr, cfg);
  return lg.loss;
}

/// Encoder shape for a dataset/anchor pair; the ablation switch sets L = 0.
inline EncoderConfig resolve_encoder_config(EncoderConfig base, const DatasetManifest& m, const AnchorSpace& anchor,
                                            const TrainConfig& train) {
  base.height = m.height;
  base.width = m.width;
  base.num_sensors = m.num_sensors;
  base.out_dim = anchor.dim();
  if (!train.use_sensor_tokens) base.prefix_len = 0;
  base.validate();
  return base;
}

inline Eigen::MatrixXd vision_anchors(const Dataset& ds, const AnchorSpace& anchor) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(ds.samples.size()), anchor.dim());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = anchor.vision(ds.samples[i].latent).transpose();
  }
  return out;
}

/// Mean total_loss over consecutive chunks of `batch_size` samples of a
/// split, with sensors resolved through the prototypes.
inline double split_loss(const EncoderParams<float>& params, const SensorPrototypes& protos, const Dataset& ds,
                         const Eigen::MatrixXd& anchors, Split split, int batch_size, double tau) {
  const auto idx = ds.indices_in(split);
  double sum = 0;
  int chunks = 0;
  ForwardCache<float> cache;
  for (std::size_t start = 0; start + 2 <= idx.size(); start += batch_size) {
    const std::size_t n = std::min<std::size_t>(batch_size, idx.size() - start);
    if (n < 2) break;
    std::vector<const Image*> imgs;
    std::vector<int> sensors;
    Eigen::MatrixXd v(static_cast<Eigen::Index>(n), anchors.cols());
    for (std::size_t i = 0; i < n; ++i) {
      const auto& s = ds.samples[idx[start + i]];
      imgs.push_back(&s.touch);
      sensors.push_back(resolve_sensor(s.touch, protos));
      v.row(static_cast<Eigen::Index>(i)) = anchors.row(static_cast<Eigen::Index>(idx[start + i]));
    }
    const auto& e = encoder_forward<float>(params, imgs, sensors, cache);
    sum += total_loss(e.cast<double>(), v, tau);
    ++chunks;
  }
  return chunks ? sum / chunks : 0.0;
}

struct EpochRecord {
  std::int64_t step = 0;
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct FitOptions {
  std::filesystem::path out_dir;                // empty: nothing written
  std::optional<Checkpoint> resume;             // continue a checkpoint that carries resume state
  std::int64_t stop_after_step = -1;            // >= 0: return a resumable checkpoint at this step
  std::function<void(const EpochRecord&)> on_epoch;
};

inline json epoch_record_json(const EpochRecord& r) {
  return json{{"step", r.step}, {"epoch", r.epoch}, {"loss", r.loss}, {"lr", r.lr}};
}

/// Trains a touch encoder on the training split and returns the final
/// checkpoint (with prototypes, validation loss and loss history). When
/// `options.out_dir` is set, writes checkpoint files and metrics.jsonl there.
inline Checkpoint fit(const Dataset& ds, const AnchorSpace& anchor, const EncoderConfig& encoder_base,
                      const TrainConfig& cfg, const FitOptions& options = {}) {
  cfg.validate();
  require(anchor.num_classes() == ds.manifest.num_classes, "fit: anchor and dataset disagree on class count");
  const EncoderConfig enc = resolve_encoder_config(encoder_base, ds.manifest, anchor, cfg);

  std::vector<std::vector<std::size_t>> pools(ds.manifest.datasets.size());
  std::size_t n_train = 0;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (ds.samples[i].split != Split::kTrain) continue;
    pools[ds.samples[i].dataset].push_back(i);
    ++n_train;
  }
  std::vector<std::size_t> pool_sizes;
  for (const auto& p : pools) {
    require(!p.empty(), "fit: a dataset has no training samples");
    pool_sizes.push_back(p.size());
  }
  const Eigen::MatrixXd anchors = vision_anchors(ds, anchor);

  const std::int64_t steps_per_epoch =
      static_cast<std::int64_t>((n_train + static_cast<std::size_t>(cfg.batch_size) - 1) / cfg.batch_size);
  const std::int64_t total_steps = steps_per_epoch * cfg.epochs;

  Checkpoint ck;
  ck.train = cfg;
  ck.anchor = anchor.config();
  ck.class_names = anchor.class_names();
  ck.dataset_seed = ds.manifest.seed;
  ck.total_steps = total_steps;

  MixedSourceSampler sampler(pool_sizes, SamplerConfig{cfg.sigma, cfg.batch_size, derive_seed(cfg.seed, 0x73616dULL)});
  EncoderParams<float> params = init_params<float>(enc, derive_seed(cfg.seed, 0x696e6974ULL));
  OptimizerState opt = make_optimizer_state(params.size());
  std::int64_t start_step = 0;
  double epoch_sum = 0;
  std::int64_t epoch_count = 0;
  json history = json::array();

  if (options.resume) {
    const Checkpoint& r = *options.resume;
    require(r.resume.has_value(), "fit: checkpoint carries no resume state");
    require(r.train == cfg, "fit: resume checkpoint was trained with a different train config");
    require(r.encoder() == enc, "fit: resume checkpoint has a different encoder config");
    require(r.total_steps == total_steps && r.dataset_seed == ds.manifest.seed,
            "fit: resume checkpoint belongs to a different dataset or schedule");
    params = r.params;
    opt = r.resume->optimizer;
    sampler.set_rng(rng_state_from_string(r.resume->rng_state));
    start_step = r.step;
    epoch_sum = r.resume->epoch_loss_sum;
    epoch_count = r.resume->epoch_loss_count;
    if (r.metrics.contains("history")) history = r.metrics.at("history");
  }

  std::optional<std::ofstream> metrics_log;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    metrics_log.emplace(options.out_dir / "metrics.jsonl", start_step == 0 ? std::ios::trunc : std::ios::app);
    if (!*metrics_log) throw RuntimeFailure("cannot open metrics log in " + options.out_dir.string());
  }

  auto snapshot = [&](std::int64_t step, bool resumable) {
    ck.params = params;
    ck.step = step;
    ck.metrics = json{{"history", history}};
    if (resumable) {
      ck.resume = ResumeState{opt, rng_state_to_string(sampler.rng()), epoch_sum, epoch_count};
    } else {
      ck.resume.reset();
    }
  };

  ForwardCache<float> cache;
  RawBatch raw;
  raw.anchors.resize(cfg.batch_size, anchor.dim());
  for (std::int64_t step = start_step; step < total_steps; ++step) {
    if (options.stop_after_step >= 0 && step == options.stop_after_step) {
      snapshot(step, true);
      ck.prototypes = compute_prototypes(ds);
      if (!options.out_dir.empty()) save_checkpoint(ck, options.out_dir);
      return ck;
    }
    const DrawnBatch drawn = cfg.use_mix_sampling ? sampler.draw() : sampler.draw_uniform();
    raw.images.clear();
    raw.sensors.clear();
    for (std::size_t i = 0; i < drawn.items.size(); ++i) {
      const std::size_t gi = pools[drawn.items[i].dataset][drawn.items[i].index];
      raw.images.push_back(&ds.samples[gi].touch);
      raw.sensors.push_back(ds.samples[gi].touch.sensor_id);
      raw.anchors.row(static_cast<Eigen::Index>(i)) = anchors.row(static_cast<Eigen::Index>(gi));
    }
    const double lr = lr_at(step, total_steps, cfg.base_lr, cfg.warmup_steps);
    epoch_sum += train_step(params, opt, raw, lr, cfg, &cache);
    ++epoch_count;

    if ((step + 1) % steps_per_epoch == 0) {
      const EpochRecord rec{step + 1, static_cast<int>((step + 1) / steps_per_epoch), epoch_sum / epoch_count, lr};
      history.push_back(epoch_record_json(rec));
      if (metrics_log) *metrics_log << epoch_record_json(rec).dump() << '\n' << std::flush;
      if (options.on_epoch) options.on_epoch(rec);
      epoch_sum = 0;
      epoch_count = 0;
      if (!options.out_dir.empty() && cfg.checkpoint_every_epochs > 0 && rec.epoch % cfg.checkpoint_every_epochs == 0 &&
          step + 1 < total_steps) {
        snapshot(step + 1, true);
        ck.prototypes = compute_prototypes(ds);
        save_checkpoint(ck, options.out_dir / ("epoch_" + std::to_string(rec.epoch)));
      }
    }
  }

  snapshot(total_steps, false);
  ck.prototypes = compute_prototypes(ds);
  ck.metrics["val_loss"] = split_loss(params, ck.prototypes, ds, anchors, Split::kVal, cfg.batch_size, cfg.temperature);
  ck.metrics["final_train_loss"] = history.empty() ? 0.0 : history.back().at("loss").get<double>();
  if (!options.out_dir.empty()) save_checkpoint(ck, options.out_dir);
  return ck;
}

}  // namespace touchbind
