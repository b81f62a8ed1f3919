#pragma once

// Checkpoint directory layout:
//   checkpoint.json  header: configs, step, prototypes, tensor table, metrics
//   weights.bin      named float32 LE tensors, concatenated in header order
//   optimizer.bin    Adam moments (m then v), only for resumable checkpoints

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "touchbind/anchor.hpp"
#include "touchbind/common.hpp"
#include "touchbind/config.hpp"
#include "touchbind/encoder.hpp"

namespace touchbind {

struct OptimizerState {
  std::vector<float> m;
  std::vector<float> v;
  std::int64_t step = 0;
};

struct ResumeState {
  OptimizerState optimizer;
  std::string rng_state;
  double epoch_loss_sum = 0.0;
  std::int64_t epoch_loss_count = 0;
};

struct Checkpoint {
  EncoderParams<float> params;
  SensorPrototypes prototypes;
  TrainConfig train;
  AnchorConfig anchor;
  std::vector<std::string> class_names;
  std::uint64_t dataset_seed = 0;
  std::int64_t step = 0;
  std::int64_t total_steps = 0;
  json metrics = json::object();
  std::optional<ResumeState> resume;

  const EncoderConfig& encoder() const { return params.config(); }
};

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<char> blob;
  json tensors = json::array();
  for (std::size_t i = 0; i < ck.params.slots().size(); ++i) {
    const auto& s = ck.params.slots()[i];
    tensors.push_back({{"name", s.name}, {"shape", {s.rows, s.cols}}, {"offset", blob.size()}});
    append_f32(blob, ck.params.span(static_cast<int>(i)));
  }
  write_file_bytes(dir / "weights.bin", blob);

  json header = {{"format_version", kFormatVersion},
                 {"encoder", ck.encoder()},
                 {"train", ck.train},
                 {"optimizer", {{"name", "adamw"},
                                {"beta1", ck.train.beta1},
                                {"beta2", ck.train.beta2},
                                {"eps", ck.train.adam_eps},
                                {"weight_decay", ck.train.weight_decay},
                                {"base_lr", ck.train.base_lr}}},
                 {"anchor", ck.anchor},
                 {"class_names", ck.class_names},
                 {"dataset_seed", ck.dataset_seed},
                 {"step", ck.step},
                 {"total_steps", ck.total_steps},
                 {"prototypes", ck.prototypes.values},
                 {"tensors", tensors},
                 {"metrics", ck.metrics}};
  if (ck.resume) {
    std::vector<char> opt;
    append_f32(opt, ck.resume->optimizer.m);
    append_f32(opt, ck.resume->optimizer.v);
    write_file_bytes(dir / "optimizer.bin", opt);
    header["resume"] = {{"rng_state", ck.resume->rng_state},
                        {"optimizer_step", ck.resume->optimizer.step},
                        {"epoch_loss_sum", ck.resume->epoch_loss_sum},
                        {"epoch_loss_count", ck.resume->epoch_loss_count}};
  } else if (fs::exists(dir / "optimizer.bin")) {
    fs::remove(dir / "optimizer.bin");
  }
  write_json_file(dir / "checkpoint.json", header);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::exists(dir / "checkpoint.json")) throw ValidationError("no checkpoint.json in " + dir.string());
  const json h = read_json_file(dir / "checkpoint.json");
  Checkpoint ck;
  EncoderConfig enc;
  try {
    if (h.at("format_version").get<int>() != kFormatVersion) {
      throw FormatError("unknown checkpoint format_version " + h.at("format_version").dump());
    }
    from_json(h.at("encoder"), enc);
    enc.validate();
    from_json(h.at("train"), ck.train);
    from_json(h.at("anchor"), ck.anchor);
    ck.class_names = h.at("class_names").get<std::vector<std::string>>();
    ck.dataset_seed = h.at("dataset_seed").get<std::uint64_t>();
    ck.step = h.at("step").get<std::int64_t>();
    ck.total_steps = h.at("total_steps").get<std::int64_t>();
    ck.prototypes.values = h.at("prototypes").get<std::vector<Rgb>>();
    ck.metrics = h.at("metrics");
  } catch (const json::exception& e) {
    throw FormatError(std::string("corrupt checkpoint header: ") + e.what());
  }
  ck.params = EncoderParams<float>(enc);
  const std::vector<char> blob = read_file_bytes(dir / "weights.bin");
  const auto& tensors = h.at("tensors");
  if (tensors.size() != ck.params.slots().size()) throw FormatError("checkpoint tensor count mismatch");
  if (blob.size() != ck.params.size() * 4) throw FormatError("weights.bin size disagrees with encoder config");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& slot = ck.params.slots()[i];
    const auto& t = tensors[i];
    if (t.at("name").get<std::string>() != slot.name ||
        t.at("shape").get<std::vector<int>>() != std::vector<int>{slot.rows, slot.cols}) {
      throw FormatError("checkpoint tensor '" + t.at("name").get<std::string>() + "' does not match layout");
    }
    const std::size_t off = t.at("offset").get<std::size_t>();
    if (off != slot.offset * 4) throw FormatError("checkpoint tensor offset mismatch for " + slot.name);
    const auto vals = decode_f32(std::span(blob).subspan(off, slot.size() * 4));
    std::copy(vals.begin(), vals.end(), ck.params.span(static_cast<int>(i)).begin());
  }
  if (h.contains("resume")) {
    ResumeState r;
    const auto& j = h.at("resume");
    r.rng_state = j.at("rng_state").get<std::string>();
    r.optimizer.step = j.at("optimizer_step").get<std::int64_t>();
    r.epoch_loss_sum = j.at("epoch_loss_sum").get<double>();
    r.epoch_loss_count = j.at("epoch_loss_count").get<std::int64_t>();
    const auto opt = decode_f32(read_file_bytes(dir / "optimizer.bin"));
    if (opt.size() != 2 * ck.params.size()) throw FormatError("optimizer.bin size disagrees with encoder config");
    r.optimizer.m.assign(opt.begin(), opt.begin() + static_cast<std::ptrdiff_t>(ck.params.size()));
    r.optimizer.v.assign(opt.begin() + static_cast<std::ptrdiff_t>(ck.params.size()), opt.end());
    ck.resume = std::move(r);
  }
  return ck;
}

}  // namespace touchbind
