#pragma once

// Frozen multimodal anchor space.
//
// An analytic stand-in for a pretrained joint embedding: material, grasp and
// audio prototypes plus a nuisance subspace are carved out of one seeded
// orthonormal basis of R^C. Vision and audio embeddings of a latent mix the
// class direction with a smooth nuisance code; text embeddings are the
// prototype plus a small per-template offset drawn from the directions left
// unused by everything else, so the offset never changes class rankings.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "touchbind/common.hpp"
#include "touchbind/datagen.hpp"
#include "touchbind/prompts.hpp"

namespace touchbind {

using Embedding = Eigen::VectorXd;

struct AnchorConfig {
  std::uint64_t seed = 1234;
  double beta = 0.3;
  int num_classes = 4;
  int dim = 32;
  int nuisance_dim = 8;
  double audio_class_weight = 0.7;  // cosine between audio and vision prototypes of a class
  double frequency_scale = 8.0;
  double feature_scale = 1.5;
  double grasp_weight = 1.0;
  double haptic_offset = 0.05;
  double visual_offset = 0.15;

  void validate() const {
    require(beta >= 0.0 && beta < 1.0, "anchor: beta must lie in [0,1)");
    require(num_classes >= 2, "anchor: need at least 2 classes");
    require(nuisance_dim >= 1, "anchor: nuisance_dim must be >= 1");
    require(dim >= 2 * num_classes + 2 + nuisance_dim + 1,
            "anchor: dim C=" + std::to_string(dim) + " too small for " + std::to_string(num_classes) +
                " classes (need >= 2M + 3 + nuisance_dim)");
    require(audio_class_weight >= 0.0 && audio_class_weight <= 1.0, "anchor: audio_class_weight must lie in [0,1]");
    require(haptic_offset >= 0 && haptic_offset <= 0.05, "anchor: haptic_offset must lie in [0, 0.05]");
    require(visual_offset >= 0 && visual_offset <= 0.15, "anchor: visual_offset must lie in [0, 0.15]");
    require(frequency_scale > 0, "anchor: frequency_scale must be positive");
  }
};

inline void to_json(json& j, const AnchorConfig& a) {
  j = json{{"seed", a.seed},
           {"beta", a.beta},
           {"M", a.num_classes},
           {"C", a.dim},
           {"nuisance_dim", a.nuisance_dim},
           {"audio_class_weight", a.audio_class_weight},
           {"frequency_scale", a.frequency_scale},
           {"feature_scale", a.feature_scale},
           {"grasp_weight", a.grasp_weight},
           {"haptic_offset", a.haptic_offset},
           {"visual_offset", a.visual_offset}};
}

inline void from_json(const json& j, AnchorConfig& a) {
  check_keys(j,
             {"seed", "beta", "M", "C", "nuisance_dim", "audio_class_weight", "frequency_scale", "feature_scale",
              "grasp_weight", "haptic_offset", "visual_offset"},
             "anchor config");
  read_opt(j, "seed", a.seed);
  read_opt(j, "beta", a.beta);
  read_opt(j, "M", a.num_classes);
  read_opt(j, "C", a.dim);
  read_opt(j, "nuisance_dim", a.nuisance_dim);
  read_opt(j, "audio_class_weight", a.audio_class_weight);
  read_opt(j, "frequency_scale", a.frequency_scale);
  read_opt(j, "feature_scale", a.feature_scale);
  read_opt(j, "grasp_weight", a.grasp_weight);
  read_opt(j, "haptic_offset", a.haptic_offset);
  read_opt(j, "visual_offset", a.visual_offset);
}

inline Embedding normalized(const Eigen::VectorXd& v) {
  const double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw RuntimeFailure("cannot normalise a zero or non-finite vector");
  return v / n;
}

class AnchorSpace {
 public:
  AnchorSpace(const AnchorConfig& config, std::vector<std::string> class_names)
      : config_(config), class_names_(std::move(class_names)) {
    config_.validate();
    require(static_cast<int>(class_names_.size()) == config_.num_classes,
            "anchor: expected " + std::to_string(config_.num_classes) + " class names");
    const int c = config_.dim;
    const int m = config_.num_classes;
    const int n = config_.nuisance_dim;

    Rng rng(derive_seed(config_.seed, 0x616e63686f72ULL));
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd g(c, c);
    for (int i = 0; i < c; ++i)
      for (int k = 0; k < c; ++k) g(i, k) = gauss(rng);
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();

    class_ = q.leftCols(m);
    grasp_ = q.middleCols(m, 2);
    const Eigen::MatrixXd audio_dir = q.middleCols(m + 2, m);
    nuisance_ = q.middleCols(2 * m + 2, n);
    complement_ = q.rightCols(c - (2 * m + 2 + n));
    const double a = config_.audio_class_weight;
    audio_ = a * class_ + std::sqrt(1.0 - a * a) * audio_dir;

    vision_features_ = draw_features(rng, n);
    audio_features_ = draw_features(rng, n);
    check_prototypes();
  }

  const AnchorConfig& config() const { return config_; }
  int dim() const { return config_.dim; }
  int num_classes() const { return config_.num_classes; }
  const std::vector<std::string>& class_names() const { return class_names_; }

  /// Columns are unit prototypes.
  const Eigen::MatrixXd& class_prototypes() const { return class_; }
  const Eigen::MatrixXd& grasp_prototypes() const { return grasp_; }
  const Eigen::MatrixXd& audio_prototypes() const { return audio_; }
  const Eigen::MatrixXd& nuisance_basis() const { return nuisance_; }

  int class_index(std::string_view name) const {
    for (std::size_t i = 0; i < class_names_.size(); ++i)
      if (class_names_[i] == name) return static_cast<int>(i);
    throw ValidationError("unknown class name '" + std::string(name) + "'");
  }

  Embedding vision(const LatentSample& latent) const {
    check_latent(latent);
    Eigen::VectorXd g = config_.grasp_weight * grasp_.col(latent.grasp_stable ? 0 : 1) +
                        nuisance_ * feature_code(vision_features_, latent);
    g.normalize();
    return normalized((1.0 - config_.beta) * class_.col(latent.material_class) + config_.beta * g);
  }

  Embedding audio(const LatentSample& latent) const {
    check_latent(latent);
    Eigen::VectorXd g = nuisance_ * feature_code(audio_features_, latent);
    g.normalize();
    return normalized((1.0 - config_.beta) * audio_.col(latent.material_class) + config_.beta * g);
  }

  /// Text embedding of a template filled with a class.
  Embedding text(std::string_view template_text, int class_index, const PromptTemplateRegistry& registry) const {
    require(registry.has_template(template_text), "unknown template '" + std::string(template_text) + "'");
    require(class_index >= 0 && class_index < config_.num_classes, "class index out of range");
    return normalized(class_.col(class_index) + offset(template_text));
  }

  /// Text embedding of a grasp phrase (0 = lifted/stable, 1 = falling/slip).
  Embedding grasp_text(int phrase_index) const {
    require(phrase_index == 0 || phrase_index == 1, "grasp phrase index must be 0 or 1");
    return normalized(grasp_.col(phrase_index) + offset(PromptTemplateRegistry::grasp_phrases()[phrase_index]));
  }

  /// Text embedding of a concrete prompt, e.g. "This feels like wood".
  Embedding text(std::string_view prompt, const PromptTemplateRegistry& registry) const {
    const auto parsed = registry.parse(prompt);
    if (parsed.grasp_index) return grasp_text(*parsed.grasp_index);
    return text(parsed.key, class_index(*parsed.class_name), registry);
  }

  /// Deterministic template offset, orthogonal to every prototype and to the
  /// nuisance subspace. Haptic phrasing gets the smaller magnitude.
  Eigen::VectorXd offset(std::string_view key) const {
    Rng rng(derive_seed(config_.seed, fnv1a(key)));
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd w(complement_.cols());
    for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = gauss(rng);
    const double mag = PromptTemplateRegistry::is_haptic(key) ? config_.haptic_offset : config_.visual_offset;
    return complement_ * w.normalized() * mag;
  }

  /// Hash over every parameter; unchanged for the lifetime of the object.
  std::uint64_t fingerprint() const {
    std::uint64_t h = fnv1a(json(config_).dump());
    for (const Eigen::MatrixXd* mat : {&class_, &grasp_, &audio_, &nuisance_, &complement_,
                                       &vision_features_, &audio_features_}) {
      h = fnv1a(std::as_bytes(std::span(mat->data(), static_cast<std::size_t>(mat->size()))), h);
    }
    return h;
  }

 private:
  // Rows: 4 frequency weights then the phase; one column per nuisance axis.
  static Eigen::MatrixXd draw_features(Rng& rng, int n) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    Eigen::MatrixXd f(5, n);
    for (int k = 0; k < n; ++k) {
      for (int r = 0; r < 4; ++r) f(r, k) = gauss(rng);
      f(4, k) = phase(rng);
    }
    return f;
  }

  Eigen::VectorXd feature_code(const Eigen::MatrixXd& features, const LatentSample& l) const {
    const Eigen::Vector4d x(l.texture_frequency / config_.frequency_scale, l.contact_depth, l.contact_center[0],
                            l.contact_center[1]);
    const int n = static_cast<int>(features.cols());
    Eigen::VectorXd code(n);
    const double amp = std::sqrt(2.0 / n);
    for (int k = 0; k < n; ++k) {
      code[k] = amp * std::cos(config_.feature_scale * features.col(k).head<4>().dot(x) + features(4, k));
    }
    return code;
  }

  void check_latent(const LatentSample& l) const {
    require(l.material_class >= 0 && l.material_class < config_.num_classes, "latent material class out of range");
  }

  void check_prototypes() const {
    auto check_family = [](const Eigen::MatrixXd& p, const char* what) {
      for (Eigen::Index i = 0; i < p.cols(); ++i) {
        if (std::abs(p.col(i).norm() - 1.0) > 1e-9) throw RuntimeFailure(std::string(what) + " prototype not unit");
        for (Eigen::Index k = 0; k < i; ++k) {
          if (p.col(i).dot(p.col(k)) > 0.1) throw RuntimeFailure(std::string(what) + " prototypes not orthogonal");
        }
      }
    };
    check_family(class_, "class");
    check_family(grasp_, "grasp");
    check_family(audio_, "audio");
    Eigen::MatrixXd joint(config_.dim, class_.cols() + 2);
    joint << class_, grasp_;
    check_family(joint, "class/grasp");
  }

  AnchorConfig config_;
  std::vector<std::string> class_names_;
  Eigen::MatrixXd class_, grasp_, audio_, nuisance_, complement_;
  Eigen::MatrixXd vision_features_, audio_features_;
};

// --- embedding tables --------------------------------------------------------

enum class Modality { kVision, kText, kAudio, kTouch };

inline const char* modality_name(Modality m) {
  switch (m) {
    case Modality::kVision: return "vision";
    case Modality::kText: return "text";
    case Modality::kAudio: return "audio";
    case Modality::kTouch: return "touch";
  }
  return "?";
}

inline Modality parse_modality(std::string_view s) {
  if (s == "vision") return Modality::kVision;
  if (s == "text") return Modality::kText;
  if (s == "audio") return Modality::kAudio;
  if (s == "touch") return Modality::kTouch;
  throw ValidationError("unknown modality '" + std::string(s) + "'");
}

struct EmbeddingRow {
  std::string key;
  Modality modality = Modality::kVision;
  Embedding values;
};

struct EmbeddingTable {
  int dim = 0;
  std::vector<EmbeddingRow> rows;
};

/// Writes embeds.bin (float32 LE, row-major) and embeds.json into `dir`.
inline void write_embedding_table(const EmbeddingTable& table, const std::filesystem::path& dir,
                                  const json& extra = json::object()) {
  std::filesystem::create_directories(dir);
  std::vector<char> blob;
  json keys = json::array();
  json tags = json::array();
  std::vector<float> row(table.dim);
  for (const auto& r : table.rows) {
    require(r.values.size() == table.dim, "embedding row '" + r.key + "' has the wrong dimension");
    for (int i = 0; i < table.dim; ++i) row[i] = static_cast<float>(r.values[i]);
    append_f32(blob, row);
    keys.push_back(r.key);
    tags.push_back(modality_name(r.modality));
  }
  write_file_bytes(dir / "embeds.bin", blob);
  json side = {{"format_version", kFormatVersion}, {"dtype", "float32"}, {"byte_order", "little"},
               {"C", table.dim},                   {"count", table.rows.size()},
               {"keys", keys},                     {"modalities", tags}};
  if (!extra.empty()) side["meta"] = extra;
  write_json_file(dir / "embeds.json", side);
}

/// Loads a table written by write_embedding_table. Rows are re-normalised.
inline EmbeddingTable load_embedding_table(const std::filesystem::path& dir, int expected_dim) {
  const json side = read_json_file(dir / "embeds.json");
  const std::vector<char> blob = read_file_bytes(dir / "embeds.bin");
  EmbeddingTable t;
  std::vector<std::string> keys, tags;
  std::size_t count = 0;
  try {
    if (side.at("format_version").get<int>() != kFormatVersion) throw FormatError("unknown embedding table version");
    t.dim = side.at("C").get<int>();
    count = side.at("count").get<std::size_t>();
    keys = side.at("keys").get<std::vector<std::string>>();
    tags = side.at("modalities").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("corrupt embeds.json: ") + e.what());
  }
  if (t.dim != expected_dim) {
    throw ValidationError("embedding dimension mismatch: table has C=" + std::to_string(t.dim) + ", run expects " +
                          std::to_string(expected_dim));
  }
  if (keys.size() != count || tags.size() != count) throw FormatError("embeds.json key/modality count mismatch");
  if (blob.size() != count * static_cast<std::size_t>(t.dim) * 4) {
    throw FormatError("shape mismatch: embeds.bin holds " + std::to_string(blob.size() / 4) + " floats, expected " +
                      std::to_string(count * t.dim));
  }
  const std::vector<float> values = decode_f32(blob);
  std::set<std::pair<std::string, std::string>> seen;
  for (std::size_t r = 0; r < count; ++r) {
    if (!seen.insert({tags[r], keys[r]}).second) {
      throw ValidationError("duplicate key '" + keys[r] + "' for modality " + tags[r]);
    }
    EmbeddingRow row{keys[r], parse_modality(tags[r]), Embedding(t.dim)};
    for (int i = 0; i < t.dim; ++i) {
      const float v = values[r * t.dim + i];
      if (!std::isfinite(v)) throw ValidationError("non-finite value in embedding row '" + keys[r] + "'");
      row.values[i] = v;
    }
    const double n = row.values.norm();
    if (!(n > 0)) throw ValidationError("zero embedding row '" + keys[r] + "'");
    row.values /= n;
    t.rows.push_back(std::move(row));
  }
  return t;
}

/// anchor.json parameter block plus a prototype table.
inline void save_anchor(const AnchorSpace& anchor, const std::filesystem::path& dir) {
  EmbeddingTable t{anchor.dim(), {}};
  for (int c = 0; c < anchor.num_classes(); ++c) {
    t.rows.push_back({"class/" + anchor.class_names()[c], Modality::kVision, anchor.class_prototypes().col(c)});
    t.rows.push_back({"audio/" + anchor.class_names()[c], Modality::kAudio, anchor.audio_prototypes().col(c)});
  }
  t.rows.push_back({"grasp/stable", Modality::kText, anchor.grasp_prototypes().col(0)});
  t.rows.push_back({"grasp/slip", Modality::kText, anchor.grasp_prototypes().col(1)});
  write_embedding_table(t, dir);
  write_json_file(dir / "anchor.json", json{{"format_version", kFormatVersion},
                                            {"params", anchor.config()},
                                            {"class_names", anchor.class_names()}});
}

inline AnchorSpace load_anchor(const std::filesystem::path& dir) {
  const json j = read_json_file(dir / "anchor.json");
  AnchorConfig cfg;
  std::vector<std::string> names;
  try {
    if (j.at("format_version").get<int>() != kFormatVersion) throw FormatError("unknown anchor format_version");
    cfg = j.at("params").get<AnchorConfig>();
    names = j.at("class_names").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("corrupt anchor.json: ") + e.what());
  }
  AnchorSpace anchor(cfg, names);
  const EmbeddingTable t = load_embedding_table(dir, cfg.dim);
  for (const auto& row : t.rows) {
    Eigen::VectorXd expect;
    if (row.key.starts_with("class/")) expect = anchor.class_prototypes().col(anchor.class_index(row.key.substr(6)));
    else if (row.key.starts_with("audio/")) expect = anchor.audio_prototypes().col(anchor.class_index(row.key.substr(6)));
    else if (row.key == "grasp/stable") expect = anchor.grasp_prototypes().col(0);
    else if (row.key == "grasp/slip") expect = anchor.grasp_prototypes().col(1);
    else throw FormatError("unexpected anchor table key '" + row.key + "'");
    if ((expect - row.values).cwiseAbs().maxCoeff() > 1e-6) {
      throw FormatError("stored prototype '" + row.key + "' disagrees with the anchor parameters");
    }
  }
  return anchor;
}

}  // namespace touchbind
