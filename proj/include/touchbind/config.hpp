#pragma once

#include <string>

#include "touchbind/anchor.hpp"
#include "touchbind/common.hpp"
#include "touchbind/datagen.hpp"
#include "touchbind/encoder.hpp"

namespace touchbind {

struct TrainConfig {
  double base_lr = 1e-3;
  double weight_decay = 0.05;
  int epochs = 30;
  int warmup_steps = 0;
  double sigma = 0.75;
  int batch_size = 48;
  double temperature = 0.07;
  bool use_sensor_tokens = true;
  bool use_mix_sampling = true;
  std::uint64_t seed = 0;
  double grad_clip = 1.0;  // global L2 norm; <= 0 disables
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int checkpoint_every_epochs = 0;

  void validate() const {
    require(base_lr > 0.0, "train: base_lr must be positive");
    require(weight_decay >= 0.0, "train: weight_decay must be >= 0");
    require(epochs >= 1, "train: epochs must be >= 1");
    require(warmup_steps >= 0, "train: warmup_steps must be >= 0");
    require(sigma >= 0.0 && sigma <= 1.0, "train: sigma must lie in [0,1]");
    require(batch_size >= 1, "train: batch_size must be >= 1");
    require(temperature > 0.0, "train: temperature must be positive");
    require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "train: adam betas must lie in [0,1)");
    require(adam_eps > 0, "train: adam_eps must be positive");
    require(checkpoint_every_epochs >= 0, "train: checkpoint_every_epochs must be >= 0");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline void to_json(json& j, const TrainConfig& c) {
  j = json{{"base_lr", c.base_lr},
           {"weight_decay", c.weight_decay},
           {"epochs", c.epochs},
           {"warmup_steps", c.warmup_steps},
           {"sigma", c.sigma},
           {"batch_size", c.batch_size},
           {"temperature", c.temperature},
           {"use_sensor_tokens", c.use_sensor_tokens},
           {"use_mix_sampling", c.use_mix_sampling},
           {"seed", c.seed},
           {"grad_clip", c.grad_clip},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"adam_eps", c.adam_eps},
           {"checkpoint_every_epochs", c.checkpoint_every_epochs}};
}

inline void from_json(const json& j, TrainConfig& c) {
  check_keys(j,
             {"base_lr", "weight_decay", "epochs", "warmup_steps", "sigma", "batch_size", "temperature",
              "use_sensor_tokens", "use_mix_sampling", "seed", "grad_clip", "beta1", "beta2", "adam_eps",
              "checkpoint_every_epochs"},
             "train config");
  read_opt(j, "base_lr", c.base_lr);
  read_opt(j, "weight_decay", c.weight_decay);
  read_opt(j, "epochs", c.epochs);
  read_opt(j, "warmup_steps", c.warmup_steps);
  read_opt(j, "sigma", c.sigma);
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "temperature", c.temperature);
  read_opt(j, "use_sensor_tokens", c.use_sensor_tokens);
  read_opt(j, "use_mix_sampling", c.use_mix_sampling);
  read_opt(j, "seed", c.seed);
  read_opt(j, "grad_clip", c.grad_clip);
  read_opt(j, "beta1", c.beta1);
  read_opt(j, "beta2", c.beta2);
  read_opt(j, "adam_eps", c.adam_eps);
  read_opt(j, "checkpoint_every_epochs", c.checkpoint_every_epochs);
}

/// Merged experiment record. Every section is optional in the file; missing
/// sections and fields keep their defaults.
struct RunConfig {
  int format_version = kFormatVersion;
  WorldConfig world = WorldConfig::toy();
  EncoderConfig encoder;
  AnchorConfig anchor;
  TrainConfig train;

  static RunConfig from_json_value(const json& j) {
    check_keys(j, {"format_version", "world", "encoder", "anchor", "train"}, "run config");
    RunConfig rc;
    read_opt(j, "format_version", rc.format_version);
    require(rc.format_version == kFormatVersion, "run config: unsupported format_version");
    if (j.contains("world")) rc.world = j.at("world").get<WorldConfig>();
    if (j.contains("encoder")) from_json(j.at("encoder"), rc.encoder);
    if (j.contains("anchor")) from_json(j.at("anchor"), rc.anchor);
    if (j.contains("train")) from_json(j.at("train"), rc.train);
    return rc;
  }

  static RunConfig load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ValidationError("config file not found: " + path.string());
    try {
      return from_json_value(read_json_file(path));
    } catch (const json::exception& e) {
      throw ValidationError("config schema violation in " + path.string() + ": " + e.what());
    }
  }

  json to_json_value() const {
    return json{{"format_version", format_version}, {"world", world}, {"encoder", encoder},
                {"anchor", anchor},                 {"train", train}};
  }
};

}  // namespace touchbind
