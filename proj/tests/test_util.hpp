#pragma once

#include <unistd.h>

#include <filesystem>
#include <random>
#include <string>

#include "touchbind/touchbind.hpp"

namespace fs = std::filesystem;

namespace tbtest {


/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = fs::temp_directory_path() / ("touchbind_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline std::string file_bytes(const fs::path& p) {
  const auto v = touchbind::read_file_bytes(p);
  return std::string(v.begin(), v.end());
}

/// H=W=8, P=4, D=8, one block, C=4: small enough for finite differences.
inline touchbind::EncoderConfig tiny_encoder(int sensors = 3, int prefix = 2) {
  touchbind::EncoderConfig c;
  c.height = c.width = 8;
  c.patch = 4;
  c.dim = 8;
  c.blocks = 1;
  c.heads = 2;
  c.out_dim = 4;
  c.prefix_len = prefix;
  c.num_sensors = sensors;
  return c;
}

inline touchbind::Image random_image(int h, int w, std::mt19937_64& rng) {
  touchbind::Image img(h, w);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& p : img.pixels) p = static_cast<float>(u(rng));
  return img;
}

inline Eigen::VectorXd random_unit(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = g(rng);
  return v.normalized();
}

/// A small multi-sensor world that generates in well under a second.
inline touchbind::WorldConfig small_world(std::size_t pairs = 120) {
  auto w = touchbind::WorldConfig::toy(pairs);
  return w;
}

}  // namespace tbtest
