#pragma once

// Synthetic multi-sensor visuo-tactile world.
//
// Every sample is a latent contact event (material, texture, depth, contact
// point, grasp outcome, object) rendered twice: once as a sensor-free
// "vision" image and once as a tactile image through a SensorProfile. The
// profile injects the per-sensor domain gap: background colour, lighting
// direction, gel stiffness and pixel noise.
//
// On disk a dataset is a directory holding manifest.json plus one
// sub-directory per source dataset with samples.bin (float32 LE, row-major,
// channel-last tensors) and a samples.json sidecar describing every record.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "touchbind/common.hpp"

namespace touchbind {

struct LatentSample {
  int material_class = 0;
  double texture_frequency = 1.0;  // cycles per image width
  double contact_depth = 0.0;      // 0 = no contact
  std::array<double, 2> contact_center{0.5, 0.5};
  bool grasp_stable = false;
  int object_id = 0;
};

struct SensorProfile {
  int sensor_id = 0;
  Rgb background{0.5, 0.5, 0.5};
  std::array<double, 2> illumination{1.0, 0.0};
  double gel_stiffness = 1.0;
  double noise_sigma = 0.0;
};

/// H x W x 3 float grid, row-major, channel-last, values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0.0f) {}

  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  Rgb mean_pixel() const {
    Rgb m{0, 0, 0};
    for (std::size_t i = 0; i < pixels.size(); ++i) m[i % 3] += pixels[i];
    const double n = static_cast<double>(pixels.size() / 3);
    for (double& v : m) v /= n;
    return m;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

struct TactileImage : Image {
  int sensor_id = 0;
  using Image::Image;
  friend bool operator==(const TactileImage&, const TactileImage&) = default;
};

using VisionImage = Image;

/// Constants of the contact imprint model shared by all sensors.
struct ImprintModel {
  double base_spread = 0.18;  // bump std-dev in image widths, times gel stiffness
  double texture_mix = 0.6;   // share of the height field carried by the texture
  double height_gain = 0.25;
  double shade_gain = 0.01;
};

struct DatasetSpec {
  std::string name;
  int sensor_id = 0;
  std::size_t size = 0;
};

enum class Split { kTrain = 0, kVal = 1, kTest = 2 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ValidationError("unknown split '" + std::string(s) + "'");
}

inline const std::vector<std::string>& default_material_names() {
  static const std::vector<std::string> names = {"wood",  "metal", "fabric", "plastic", "glass", "stone",
                                                 "rubber", "paper", "leather", "foam", "ceramic", "brick"};
  return names;
}

struct WorldConfig {
  int num_classes = 4;
  std::vector<std::string> class_names;  // empty = default material names
  int objects_per_class = 15;
  int image_size = 32;
  int patch_size = 8;
  std::vector<SensorProfile> sensors;
  std::vector<DatasetSpec> datasets;
  std::array<double, 3> split_ratios{0.8, 0.1, 0.1};
  double freq_min = 2.0;
  double freq_max = 8.0;
  double object_freq_spread = 0.4;
  double sample_freq_jitter = 0.05;
  double depth_min = 0.15;
  double center_min = 0.2;
  double center_max = 0.8;
  double grasp_threshold = 0.5;
  double grasp_label_noise = 0.1;
  ImprintModel imprint;

  /// Three simulated sensors, four materials, `pairs_per_sensor` samples each.
  static WorldConfig toy(std::size_t pairs_per_sensor = 2000) {
    WorldConfig c;
    const double r = std::sqrt(0.5);
    c.sensors = {
        {0, {0.1, 0.1, 0.1}, {1.0, 0.0}, 1.0, 0.02},
        {1, {0.5, 0.2, 0.2}, {0.0, 1.0}, 0.8, 0.02},
        {2, {0.2, 0.5, 0.5}, {-r, r}, 1.25, 0.02},
    };
    c.datasets = {{"gelsight_like", 0, pairs_per_sensor},
                  {"digit_like", 1, pairs_per_sensor},
                  {"taxim_like", 2, pairs_per_sensor}};
    return c;
  }

  std::vector<std::string> resolved_class_names() const {
    if (!class_names.empty()) return class_names;
    const auto& d = default_material_names();
    std::vector<std::string> out;
    for (int i = 0; i < num_classes; ++i) {
      out.push_back(i < static_cast<int>(d.size()) ? d[i] : "material" + std::to_string(i));
    }
    return out;
  }

  /// Centre of the texture-frequency band of a material.
  double class_frequency(int material) const {
    return freq_min + (freq_max - freq_min) * material / std::max(1, num_classes - 1);
  }

  void validate() const {
    require(num_classes >= 2, "world: need at least 2 material classes");
    require(class_names.empty() || static_cast<int>(class_names.size()) == num_classes,
            "world: class_names must list exactly num_classes names");
    require(objects_per_class >= 1, "world: objects_per_class must be >= 1");
    require(patch_size >= 1 && image_size >= 1, "world: image and patch sizes must be positive");
    require(image_size % patch_size == 0, "world: image size " + std::to_string(image_size) +
                                              " is not divisible by patch size " + std::to_string(patch_size));
    require(!sensors.empty(), "world: need at least one sensor profile");
    require(!datasets.empty(), "world: need at least one dataset");
    const int k = static_cast<int>(sensors.size());
    for (int i = 0; i < k; ++i) {
      const auto& s = sensors[i];
      require(s.sensor_id == i, "world: sensor profiles must be listed with ids 0..K-1 in order");
      for (double c : s.background) require(c >= 0.0 && c <= 1.0, "world: background colour outside [0,1]");
      const double n = std::hypot(s.illumination[0], s.illumination[1]);
      require(std::abs(n - 1.0) < 1e-6, "world: illumination_direction must be a unit vector");
      require(s.gel_stiffness > 0.0, "world: gel_stiffness must be positive");
      require(s.noise_sigma >= 0.0 && s.noise_sigma < 0.1, "world: noise_sigma must lie in [0, 0.1)");
      for (int j = 0; j < i; ++j) {
        double l1 = 0;
        for (int c = 0; c < 3; ++c) l1 += std::abs(s.background[c] - sensors[j].background[c]);
        require(l1 >= 0.2 - 1e-12, "world: backgrounds of sensors " + std::to_string(j) + " and " +
                                       std::to_string(i) + " differ by L1 " + std::to_string(l1) + " < 0.2");
      }
    }
    for (const auto& d : datasets) {
      require(!d.name.empty(), "world: dataset name must not be empty");
      require(d.size > 0, "world: dataset '" + d.name + "' has size 0");
      require(d.sensor_id >= 0 && d.sensor_id < k, "world: dataset '" + d.name + "' references unknown sensor");
      for (const auto& e : datasets) {
        require(&e == &d || e.name != d.name, "world: duplicate dataset name '" + d.name + "'");
      }
    }
    const double rs = split_ratios[0] + split_ratios[1] + split_ratios[2];
    require(std::abs(rs - 1.0) < 1e-9 && split_ratios[0] > 0, "world: split ratios must be positive and sum to 1");
    require(freq_min > 0 && freq_max >= freq_min, "world: invalid texture frequency range");
    require(freq_min - object_freq_spread > 0, "world: object frequency spread reaches non-positive frequencies");
    require(depth_min >= 0 && depth_min <= 1, "world: depth_min must lie in [0,1]");
    require(center_min >= 0 && center_max <= 1 && center_min <= center_max, "world: invalid contact centre range");
    require(grasp_label_noise >= 0 && grasp_label_noise <= 0.5, "world: grasp_label_noise must lie in [0,0.5]");
  }
};

// --- JSON ------------------------------------------------------------------

inline void to_json(json& j, const SensorProfile& s) {
  j = json{{"sensor_id", s.sensor_id},
           {"background_color", s.background},
           {"illumination_direction", s.illumination},
           {"gel_stiffness", s.gel_stiffness},
           {"noise_sigma", s.noise_sigma}};
}

inline void from_json(const json& j, SensorProfile& s) {
  check_keys(j, {"sensor_id", "background_color", "illumination_direction", "gel_stiffness", "noise_sigma"},
             "sensor profile");
  read_opt(j, "sensor_id", s.sensor_id);
  read_opt(j, "background_color", s.background);
  read_opt(j, "illumination_direction", s.illumination);
  read_opt(j, "gel_stiffness", s.gel_stiffness);
  read_opt(j, "noise_sigma", s.noise_sigma);
}

inline void to_json(json& j, const ImprintModel& m) {
  j = json{{"base_spread", m.base_spread},
           {"texture_mix", m.texture_mix},
           {"height_gain", m.height_gain},
           {"shade_gain", m.shade_gain}};
}

inline void from_json(const json& j, ImprintModel& m) {
  check_keys(j, {"base_spread", "texture_mix", "height_gain", "shade_gain"}, "imprint model");
  read_opt(j, "base_spread", m.base_spread);
  read_opt(j, "texture_mix", m.texture_mix);
  read_opt(j, "height_gain", m.height_gain);
  read_opt(j, "shade_gain", m.shade_gain);
}

inline void to_json(json& j, const DatasetSpec& d) {
  j = json{{"name", d.name}, {"sensor_id", d.sensor_id}, {"size", d.size}};
}

inline void from_json(const json& j, DatasetSpec& d) {
  check_keys(j, {"name", "sensor_id", "size"}, "dataset spec");
  read_opt(j, "name", d.name);
  read_opt(j, "sensor_id", d.sensor_id);
  read_opt(j, "size", d.size);
}

inline void to_json(json& j, const WorldConfig& c) {
  j = json{{"num_classes", c.num_classes},
           {"class_names", c.class_names},
           {"objects_per_class", c.objects_per_class},
           {"image_size", c.image_size},
           {"patch_size", c.patch_size},
           {"sensors", c.sensors},
           {"datasets", c.datasets},
           {"split_ratios", c.split_ratios},
           {"freq_min", c.freq_min},
           {"freq_max", c.freq_max},
           {"object_freq_spread", c.object_freq_spread},
           {"sample_freq_jitter", c.sample_freq_jitter},
           {"depth_min", c.depth_min},
           {"center_min", c.center_min},
           {"center_max", c.center_max},
           {"grasp_threshold", c.grasp_threshold},
           {"grasp_label_noise", c.grasp_label_noise},
           {"imprint", c.imprint}};
}

/// Missing fields keep the toy defaults (including the three toy sensors).
inline void from_json(const json& j, WorldConfig& c) {
  check_keys(j,
             {"num_classes", "class_names", "objects_per_class", "image_size", "patch_size", "sensors", "datasets",
              "pairs_per_sensor", "split_ratios", "freq_min", "freq_max", "object_freq_spread",
              "sample_freq_jitter", "depth_min", "center_min", "center_max", "grasp_threshold",
              "grasp_label_noise", "imprint"},
             "world config");
  std::size_t pairs = 2000;
  read_opt(j, "pairs_per_sensor", pairs);
  c = WorldConfig::toy(pairs);
  read_opt(j, "num_classes", c.num_classes);
  read_opt(j, "class_names", c.class_names);
  read_opt(j, "objects_per_class", c.objects_per_class);
  read_opt(j, "image_size", c.image_size);
  read_opt(j, "patch_size", c.patch_size);
  read_opt(j, "sensors", c.sensors);
  read_opt(j, "datasets", c.datasets);
  read_opt(j, "split_ratios", c.split_ratios);
  read_opt(j, "freq_min", c.freq_min);
  read_opt(j, "freq_max", c.freq_max);
  read_opt(j, "object_freq_spread", c.object_freq_spread);
  read_opt(j, "sample_freq_jitter", c.sample_freq_jitter);
  read_opt(j, "depth_min", c.depth_min);
  read_opt(j, "center_min", c.center_min);
  read_opt(j, "center_max", c.center_max);
  read_opt(j, "grasp_threshold", c.grasp_threshold);
  read_opt(j, "grasp_label_noise", c.grasp_label_noise);
  read_opt(j, "imprint", c.imprint);
}

inline json latent_to_json(const LatentSample& l) {
  return json{{"material_class", l.material_class},
              {"texture_frequency", l.texture_frequency},
              {"contact_depth", l.contact_depth},
              {"contact_center", l.contact_center},
              {"grasp_stable", l.grasp_stable},
              {"object_id", l.object_id}};
}

inline LatentSample latent_from_json(const json& j) {
  LatentSample l;
  try {
    l.material_class = j.at("material_class").get<int>();
    l.texture_frequency = j.at("texture_frequency").get<double>();
    l.contact_depth = j.at("contact_depth").get<double>();
    l.contact_center = j.at("contact_center").get<std::array<double, 2>>();
    l.grasp_stable = j.at("grasp_stable").get<bool>();
    l.object_id = j.at("object_id").get<int>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("corrupt latent record: ") + e.what());
  }
  return l;
}

// --- rendering -------------------------------------------------------------

/// Tactile rendering:
///   h(u,v)  = depth * exp(-|p - centre|^2 / (2 s^2)) * (1 - m + m * (1 + sin(2 pi f u)) / 2),
///             s = base_spread * gel_stiffness, m = texture_mix
///   pixel_c = background_c + height_gain * h + shade_gain * (grad h . l_c) + N(0, noise^2),
/// clamped to [0,1]; l_c is the illumination direction rotated by c * 120 degrees
/// (one coloured light per channel). u,v are pixel centres in [0,1].
inline TactileImage render_touch(const LatentSample& latent, const SensorProfile& profile, std::uint64_t noise_seed,
                                 int height, int width, const ImprintModel& model = {}) {
  TactileImage img(height, width);
  img.sensor_id = profile.sensor_id;
  Rng rng(noise_seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  const double s = model.base_spread * profile.gel_stiffness;
  const double inv_s2 = 1.0 / (s * s);
  const double two_pi_f = 2.0 * std::numbers::pi * latent.texture_frequency;
  const double m = model.texture_mix;
  std::array<std::array<double, 2>, 3> light{};
  for (int c = 0; c < 3; ++c) {
    const double a = 2.0 * std::numbers::pi * c / 3.0;
    light[c] = {profile.illumination[0] * std::cos(a) - profile.illumination[1] * std::sin(a),
                profile.illumination[0] * std::sin(a) + profile.illumination[1] * std::cos(a)};
  }

  for (int y = 0; y < height; ++y) {
    const double v = (y + 0.5) / height;
    for (int x = 0; x < width; ++x) {
      const double u = (x + 0.5) / width;
      const double du = u - latent.contact_center[0];
      const double dv = v - latent.contact_center[1];
      const double bump = latent.contact_depth * std::exp(-0.5 * (du * du + dv * dv) * inv_s2);
      const double tex = 0.5 * (1.0 + std::sin(two_pi_f * u));
      const double carrier = 1.0 - m + m * tex;
      const double h = bump * carrier;
      const double dh_du = -bump * du * inv_s2 * carrier + bump * m * 0.5 * two_pi_f * std::cos(two_pi_f * u);
      const double dh_dv = -bump * dv * inv_s2 * carrier;
      for (int c = 0; c < 3; ++c) {
        double p = profile.background[c] + model.height_gain * h +
                   model.shade_gain * (dh_du * light[c][0] + dh_dv * light[c][1]);
        if (profile.noise_sigma > 0) p += profile.noise_sigma * noise(rng);
        img.at(y, x, c) = static_cast<float>(std::clamp(p, 0.0, 1.0));
      }
    }
  }
  return img;
}

/// Sensor-free appearance of the contact: material tint modulated by the
/// texture inside the contact region; a lifted (stable) grasp brightens the
/// top band of the frame.
inline VisionImage render_vision(const LatentSample& latent, int num_classes, int height, int width) {
  VisionImage img(height, width);
  Rgb tint;
  for (int c = 0; c < 3; ++c) {
    tint[c] = 0.5 + 0.4 * std::cos(2.0 * std::numbers::pi * (static_cast<double>(latent.material_class) / num_classes +
                                                             c / 3.0));
  }
  const double two_pi_f = 2.0 * std::numbers::pi * latent.texture_frequency;
  for (int y = 0; y < height; ++y) {
    const double v = (y + 0.5) / height;
    for (int x = 0; x < width; ++x) {
      const double u = (x + 0.5) / width;
      const double du = u - latent.contact_center[0];
      const double dv = v - latent.contact_center[1];
      const double mask = std::exp(-0.5 * (du * du + dv * dv) / (0.25 * 0.25));
      const double tex = 0.5 * (1.0 + std::sin(two_pi_f * u));
      for (int c = 0; c < 3; ++c) {
        double p = 0.45 + mask * (tint[c] - 0.45) * (0.5 + 0.5 * tex) * (0.5 + 0.5 * latent.contact_depth);
        if (latent.grasp_stable && v < 0.125) p += 0.2;
        img.at(y, x, c) = static_cast<float>(std::clamp(p, 0.0, 1.0));
      }
    }
  }
  return img;
}

// --- dataset ---------------------------------------------------------------

struct DatasetEntry {
  std::string name;
  int sensor_id = 0;
  std::size_t size = 0;
  std::string path;  // relative to the dataset root
};

struct DatasetManifest {
  int format_version = kFormatVersion;
  std::uint64_t seed = 0;
  int num_classes = 0;
  int num_sensors = 0;
  int height = 0;
  int width = 0;
  std::vector<std::string> class_names;
  std::vector<SensorProfile> sensors;
  std::vector<DatasetEntry> datasets;
  std::vector<Split> object_split;     // indexed by object_id
  std::vector<int> object_class;       // indexed by object_id
  WorldConfig world;

  std::size_t total_samples() const {
    std::size_t n = 0;
    for (const auto& d : datasets) n += d.size;
    return n;
  }

  std::vector<int> objects_in(Split s) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < object_split.size(); ++i) {
      if (object_split[i] == s) out.push_back(static_cast<int>(i));
    }
    return out;
  }

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> out;
    for (const auto& d : datasets) out.push_back(d.size);
    return out;
  }
};

struct Sample {
  LatentSample latent;
  VisionImage vision;
  TactileImage touch;
  int dataset = 0;
  Split split = Split::kTrain;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Sample> samples;  // grouped by dataset, in manifest order

  std::size_t offset_of(int dataset_index) const {
    std::size_t off = 0;
    for (int i = 0; i < dataset_index; ++i) off += manifest.datasets[i].size;
    return off;
  }

  std::vector<std::size_t> indices_in(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].split == s) out.push_back(i);
    }
    return out;
  }
};

inline json manifest_to_json(const DatasetManifest& m) {
  json ds = json::array();
  for (const auto& d : m.datasets) {
    ds.push_back({{"name", d.name}, {"sensor_id", d.sensor_id}, {"size", d.size}, {"path", d.path}});
  }
  json splits = {{"train", m.objects_in(Split::kTrain)},
                 {"val", m.objects_in(Split::kVal)},
                 {"test", m.objects_in(Split::kTest)}};
  return json{{"format_version", m.format_version},
              {"seed", m.seed},
              {"M", m.num_classes},
              {"K", m.num_sensors},
              {"H", m.height},
              {"W", m.width},
              {"class_names", m.class_names},
              {"sensors", m.sensors},
              {"datasets", ds},
              {"splits", splits},
              {"object_class", m.object_class},
              {"world", m.world}};
}

inline DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kFormatVersion) {
      throw FormatError("unknown dataset format_version " + std::to_string(m.format_version));
    }
    m.seed = j.at("seed").get<std::uint64_t>();
    m.num_classes = j.at("M").get<int>();
    m.num_sensors = j.at("K").get<int>();
    m.height = j.at("H").get<int>();
    m.width = j.at("W").get<int>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.sensors = j.at("sensors").get<std::vector<SensorProfile>>();
    for (const auto& d : j.at("datasets")) {
      m.datasets.push_back({d.at("name").get<std::string>(), d.at("sensor_id").get<int>(),
                            d.at("size").get<std::size_t>(), d.at("path").get<std::string>()});
    }
    m.object_class = j.at("object_class").get<std::vector<int>>();
    m.object_split.assign(m.object_class.size(), Split::kTrain);
    std::vector<int> seen(m.object_class.size(), 0);
    for (const char* name : {"train", "val", "test"}) {
      for (int id : j.at("splits").at(name).get<std::vector<int>>()) {
        if (id < 0 || id >= static_cast<int>(m.object_class.size())) throw FormatError("split lists unknown object");
        if (seen[id]++) throw FormatError("object " + std::to_string(id) + " appears in two splits");
        m.object_split[id] = parse_split(name);
      }
    }
    m.world = j.at("world").get<WorldConfig>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("corrupt manifest header: ") + e.what());
  } catch (const ValidationError& e) {
    if (dynamic_cast<const FormatError*>(&e)) throw;
    throw FormatError(std::string("corrupt manifest header: ") + e.what());
  }
  if (m.datasets.empty()) throw FormatError("manifest lists no datasets");
  for (const auto& d : m.datasets) {
    if (d.size == 0) throw FormatError("manifest dataset '" + d.name + "' has size 0");
    if (d.sensor_id < 0 || d.sensor_id >= m.num_sensors) throw FormatError("manifest dataset has bad sensor id");
  }
  return m;
}

/// Deterministic in (config, seed). Objects are assigned to splits per
/// class; each dataset then draws its latents from all objects.
inline Dataset generate_world(const WorldConfig& config, std::uint64_t seed) {
  config.validate();
  Dataset out;
  DatasetManifest& m = out.manifest;
  m.seed = seed;
  m.num_classes = config.num_classes;
  m.num_sensors = static_cast<int>(config.sensors.size());
  m.height = m.width = config.image_size;
  m.class_names = config.resolved_class_names();
  m.sensors = config.sensors;
  m.world = config;

  const int n_objects = config.num_classes * config.objects_per_class;
  m.object_class.resize(n_objects);
  m.object_split.resize(n_objects);
  std::vector<double> object_freq(n_objects);

  Rng world_rng(derive_seed(seed, 0x776f726c64ULL));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int c = 0; c < config.num_classes; ++c) {
    std::vector<int> ids(config.objects_per_class);
    for (int o = 0; o < config.objects_per_class; ++o) {
      const int id = c * config.objects_per_class + o;
      ids[o] = id;
      m.object_class[id] = c;
      object_freq[id] = config.class_frequency(c) + config.object_freq_spread * (2.0 * unit(world_rng) - 1.0);
    }
    std::shuffle(ids.begin(), ids.end(), world_rng);
    const int n = config.objects_per_class;
    int n_train = std::max(1, static_cast<int>(std::lround(config.split_ratios[0] * n)));
    int n_val = static_cast<int>(std::lround(config.split_ratios[1] * n));
    n_train = std::min(n_train, n);
    n_val = std::min(n_val, n - n_train);
    for (int i = 0; i < n; ++i) {
      m.object_split[ids[i]] = i < n_train ? Split::kTrain : (i < n_train + n_val ? Split::kVal : Split::kTest);
    }
  }

  for (std::size_t d = 0; d < config.datasets.size(); ++d) {
    const auto& spec = config.datasets[d];
    m.datasets.push_back({spec.name, spec.sensor_id, spec.size, spec.name});
    const SensorProfile& profile = config.sensors[spec.sensor_id];
    for (std::size_t i = 0; i < spec.size; ++i) {
      Rng rng(derive_seed(seed, d + 1, i));
      std::uniform_real_distribution<double> u01(0.0, 1.0);
      std::normal_distribution<double> gauss(0.0, 1.0);
      LatentSample l;
      l.object_id = static_cast<int>(u01(rng) * n_objects) % n_objects;
      l.material_class = m.object_class[l.object_id];
      l.texture_frequency =
          std::max(0.05, object_freq[l.object_id] + config.sample_freq_jitter * gauss(rng));
      l.contact_depth = config.depth_min + (1.0 - config.depth_min) * u01(rng);
      l.contact_center = {config.center_min + (config.center_max - config.center_min) * u01(rng),
                          config.center_min + (config.center_max - config.center_min) * u01(rng)};
      l.grasp_stable = l.contact_depth >= config.grasp_threshold;
      if (u01(rng) < config.grasp_label_noise) l.grasp_stable = !l.grasp_stable;
      const std::uint64_t noise_seed = rng();

      Sample s;
      s.latent = l;
      s.dataset = static_cast<int>(d);
      s.split = m.object_split[l.object_id];
      s.touch = render_touch(l, profile, noise_seed, config.image_size, config.image_size, config.imprint);
      s.vision = render_vision(l, config.num_classes, config.image_size, config.image_size);
      out.samples.push_back(std::move(s));
    }
  }
  return out;
}

namespace detail {

inline json tensor_record(std::size_t byte_offset, const Image& img) {
  return json{{"offset", byte_offset}, {"shape", {img.height, img.width, 3}}};
}

inline Image tensor_from_record(const json& rec, std::span<const char> blob, const std::string& where) {
  std::size_t offset = 0;
  std::vector<int> shape;
  try {
    offset = rec.at("offset").get<std::size_t>();
    shape = rec.at("shape").get<std::vector<int>>();
  } catch (const json::exception&) {
    throw FormatError("corrupt tensor record in " + where);
  }
  if (shape.size() != 3 || shape[2] != 3 || shape[0] <= 0 || shape[1] <= 0) {
    throw FormatError("bad tensor shape in " + where);
  }
  const std::size_t bytes = static_cast<std::size_t>(shape[0]) * shape[1] * 3 * 4;
  if (offset % 4 != 0 || offset + bytes > blob.size()) {
    throw FormatError("shape mismatch in " + where + ": declared tensor exceeds blob");
  }
  Image img;
  img.height = shape[0];
  img.width = shape[1];
  img.pixels = decode_f32(blob.subspan(offset, bytes));
  return img;
}

}  // namespace detail

inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_json_file(dir / "manifest.json", manifest_to_json(ds.manifest));
  std::size_t first = 0;
  for (std::size_t d = 0; d < ds.manifest.datasets.size(); ++d) {
    const auto& entry = ds.manifest.datasets[d];
    fs::create_directories(dir / entry.path);
    std::vector<char> blob;
    json records = json::array();
    for (std::size_t i = 0; i < entry.size; ++i) {
      const Sample& s = ds.samples[first + i];
      json rec;
      rec["index"] = i;
      rec["touch"] = detail::tensor_record(blob.size(), s.touch);
      append_f32(blob, s.touch.pixels);
      rec["vision"] = detail::tensor_record(blob.size(), s.vision);
      append_f32(blob, s.vision.pixels);
      rec["latent"] = latent_to_json(s.latent);
      rec["sensor_id"] = s.touch.sensor_id;
      rec["object_id"] = s.latent.object_id;
      rec["split"] = split_name(s.split);
      records.push_back(std::move(rec));
    }
    write_file_bytes(dir / entry.path / "samples.bin", blob);
    write_json_file(dir / entry.path / "samples.json", json{{"format_version", kFormatVersion},
                                                            {"dataset", entry.name},
                                                            {"sensor_id", entry.sensor_id},
                                                            {"dtype", "float32"},
                                                            {"byte_order", "little"},
                                                            {"count", entry.size},
                                                            {"records", records}});
    first += entry.size;
  }
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::exists(dir / "manifest.json")) throw ValidationError("no manifest.json in " + dir.string());
  Dataset ds;
  ds.manifest = manifest_from_json(read_json_file(dir / "manifest.json"));
  const auto& m = ds.manifest;
  for (std::size_t d = 0; d < m.datasets.size(); ++d) {
    const auto& entry = m.datasets[d];
    const fs::path sub = dir / entry.path;
    const json side = read_json_file(sub / "samples.json");
    const std::vector<char> blob = read_file_bytes(sub / "samples.bin");
    const std::string where = (sub / "samples.json").string();
    try {
      if (side.at("format_version").get<int>() != kFormatVersion) {
        throw FormatError("unknown sidecar format_version in " + where);
      }
      if (side.at("count").get<std::size_t>() != entry.size || side.at("records").size() != entry.size) {
        throw FormatError("sample count in " + where + " disagrees with manifest");
      }
    } catch (const json::exception&) {
      throw FormatError("corrupt sidecar header in " + where);
    }
    std::size_t declared = 0;
    for (const auto& rec : side.at("records")) {
      Sample s;
      try {
        s.touch = TactileImage();
        static_cast<Image&>(s.touch) = detail::tensor_from_record(rec.at("touch"), blob, where);
        s.touch.sensor_id = rec.at("sensor_id").get<int>();
        s.vision = detail::tensor_from_record(rec.at("vision"), blob, where);
        s.latent = latent_from_json(rec.at("latent"));
        s.split = parse_split(rec.at("split").get<std::string>());
      } catch (const json::exception&) {
        throw FormatError("corrupt sample record in " + where);
      }
      if (s.touch.height != m.height || s.touch.width != m.width || s.vision.height != m.height ||
          s.vision.width != m.width) {
        throw FormatError("shape mismatch in " + where + ": tensor shape differs from manifest H x W");
      }
      if (s.latent.object_id < 0 || s.latent.object_id >= static_cast<int>(m.object_class.size()) ||
          m.object_class[s.latent.object_id] != s.latent.material_class) {
        throw FormatError("sample in " + where + " references an object inconsistent with the manifest");
      }
      s.dataset = static_cast<int>(d);
      declared += (s.touch.pixels.size() + s.vision.pixels.size()) * 4;
      ds.samples.push_back(std::move(s));
    }
    if (declared != blob.size()) {
      throw FormatError("shape mismatch in " + where + ": records declare " + std::to_string(declared / 4) +
                        " floats but blob holds " + std::to_string(blob.size() / 4));
    }
  }
  return ds;
}

}  // namespace touchbind
