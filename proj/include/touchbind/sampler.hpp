#pragma once

// Mixed-source batch sampler.
//
// Each batch picks one dataset D_sigma with probability proportional to its
// size, draws round(sigma * B) samples from it and the remaining samples
// uniformly (per sample) from the union of all other datasets.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>
#include <vector>

#include "touchbind/common.hpp"

namespace touchbind {

struct SamplerConfig {
  double sigma = 0.75;
  int batch_size = 48;
  std::uint64_t seed = 0;

  void validate() const {
    require(sigma >= 0.0 && sigma <= 1.0, "sampler: sigma must lie in [0,1]");
    require(batch_size >= 1, "sampler: batch size must be >= 1");
  }
};

/// p_n = |D_n| / sum_m |D_m|.
inline std::vector<double> dataset_probabilities(std::span<const std::size_t> sizes) {
  require(!sizes.empty(), "sampler: empty manifest");
  double total = 0;
  for (std::size_t s : sizes) {
    require(s > 0, "sampler: dataset of size zero");
    total += static_cast<double>(s);
  }
  std::vector<double> p;
  for (std::size_t s : sizes) p.push_back(static_cast<double>(s) / total);
  return p;
}

/// Number of majority samples: round-half-up of sigma * B.
inline int majority_count(double sigma, int batch_size) {
  return static_cast<int>(std::floor(sigma * batch_size + 0.5 + 1e-9));
}

struct SampleRef {
  int dataset = 0;
  std::size_t index = 0;  // position inside the dataset's pool
  friend bool operator==(const SampleRef&, const SampleRef&) = default;
};

struct DrawnBatch {
  int selected = 0;  // D_sigma
  std::vector<SampleRef> items;
};

namespace detail {

/// k distinct values of [0, n) (Floyd), or k independent draws when k > n.
inline std::vector<std::size_t> draw_indices(std::size_t n, std::size_t k, Rng& rng, bool& replaced) {
  std::vector<std::size_t> out;
  out.reserve(k);
  if (k > n) {
    replaced = true;
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t i = 0; i < k; ++i) out.push_back(pick(rng));
    return out;
  }
  std::unordered_set<std::size_t> chosen;
  for (std::size_t j = n - k; j < n; ++j) {
    std::uniform_int_distribution<std::size_t> pick(0, j);
    std::size_t t = pick(rng);
    if (chosen.count(t)) t = j;
    chosen.insert(t);
    out.push_back(t);
  }
  return out;
}

}  // namespace detail

class MixedSourceSampler {
 public:
  MixedSourceSampler(std::vector<std::size_t> pool_sizes, SamplerConfig config)
      : sizes_(std::move(pool_sizes)), config_(config), rng_(config.seed) {
    config_.validate();
    probs_ = dataset_probabilities(sizes_);
    cumulative_.resize(sizes_.size());
    std::partial_sum(sizes_.begin(), sizes_.end(), cumulative_.begin());
  }

  const std::vector<double>& probabilities() const { return probs_; }
  const SamplerConfig& config() const { return config_; }
  Rng& rng() { return rng_; }
  void set_rng(const Rng& rng) { rng_ = rng; }

  /// Composition-controlled batch (sigma mixing).
  DrawnBatch draw() {
    const int n = static_cast<int>(sizes_.size());
    const int b = config_.batch_size;
    DrawnBatch batch;
    std::discrete_distribution<int> choose(probs_.begin(), probs_.end());
    batch.selected = choose(rng_);
    if (n == 1) {
      append_from(0, static_cast<std::size_t>(b), batch.items);
    } else {
      const int major = majority_count(config_.sigma, b);
      append_from(batch.selected, static_cast<std::size_t>(major), batch.items);
      append_from_others(batch.selected, static_cast<std::size_t>(b - major), batch.items);
    }
    std::shuffle(batch.items.begin(), batch.items.end(), rng_);
    return batch;
  }

  /// Sample-uniform batch over the union, ignoring sigma.
  DrawnBatch draw_uniform() {
    DrawnBatch batch;
    bool replaced = false;
    const std::size_t total = cumulative_.back();
    for (std::size_t g : detail::draw_indices(total, static_cast<std::size_t>(config_.batch_size), rng_, replaced)) {
      batch.items.push_back(locate(g));
    }
    warn_if(replaced);
    std::shuffle(batch.items.begin(), batch.items.end(), rng_);
    batch.selected = -1;
    return batch;
  }

 private:
  SampleRef locate(std::size_t global) const {
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), global);
    const int d = static_cast<int>(it - cumulative_.begin());
    const std::size_t start = d == 0 ? 0 : cumulative_[d - 1];
    return {d, global - start};
  }

  void append_from(int d, std::size_t k, std::vector<SampleRef>& out) {
    bool replaced = false;
    for (std::size_t i : detail::draw_indices(sizes_[d], k, rng_, replaced)) out.push_back({d, i});
    warn_if(replaced);
  }

  // Uniform over the samples of every dataset except `skip`.
  void append_from_others(int skip, std::size_t k, std::vector<SampleRef>& out) {
    if (k == 0) return;
    const std::size_t skip_start = skip == 0 ? 0 : cumulative_[skip - 1];
    const std::size_t rest = cumulative_.back() - sizes_[skip];
    bool replaced = false;
    for (std::size_t g : detail::draw_indices(rest, k, rng_, replaced)) {
      out.push_back(locate(g < skip_start ? g : g + sizes_[skip]));
    }
    warn_if(replaced);
  }

  void warn_if(bool replaced) {
    if (replaced && !warned_) {
      log_warning("sampler pool smaller than requested draw; sampling with replacement");
      warned_ = true;
    }
  }

  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> cumulative_;
  std::vector<double> probs_;
  SamplerConfig config_;
  Rng rng_;
  bool warned_ = false;
};

}  // namespace touchbind
