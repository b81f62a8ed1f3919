#pragma once

// Shared plumbing: error types, seeded RNG helpers, float32 blob I/O and
// small JSON helpers used by every other touchbind header.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace touchbind {

using json = nlohmann::json;
using Rng = std::mt19937_64;
using Rgb = std::array<double, 3>;

inline constexpr int kFormatVersion = 1;

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration, bad arguments or malformed input files.
/// The CLI maps these to exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// On-disk data that does not match its declared layout.
class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Failures while running (non-finite loss, I/O failure mid-run).
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

inline void log_warning(std::string_view msg) { std::clog << "[touchbind] warning: " << msg << '\n'; }
inline void log_info(std::string_view msg) { std::clog << "[touchbind] " << msg << '\n'; }

// splitmix64 finalizer; used to derive independent per-item seeds from a
// master seed so rendering order never changes the stream of any item.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(seed) ^ a) ^ (b * 0x2545f4914f6cdd1dULL));
}

inline std::uint64_t fnv1a(std::span<const std::byte> bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(std::as_bytes(std::span(s.data(), s.size())), h);
}

inline std::string rng_state_to_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline Rng rng_state_from_string(const std::string& s) {
  Rng rng;
  std::istringstream is(s);
  is >> rng;
  if (!is) throw FormatError("corrupt rng state");
  return rng;
}

// ---------------------------------------------------------------------------
// float32 little-endian blobs

inline std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v & 0xff0000u) >> 8) | (v >> 24);
  }
  return v;
}

inline void append_f32(std::vector<char>& out, std::span<const float> values) {
  const std::size_t start = out.size();
  out.resize(start + values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t bits = to_little_endian(std::bit_cast<std::uint32_t>(values[i]));
    std::memcpy(out.data() + start + 4 * i, &bits, 4);
  }
}

inline std::vector<float> decode_f32(std::span<const char> bytes) {
  if (bytes.size() % 4 != 0) throw FormatError("float32 blob length is not a multiple of 4");
  std::vector<float> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    std::memcpy(&bits, bytes.data() + 4 * i, 4);
    values[i] = std::bit_cast<float>(to_little_endian(bits));
  }
  return values;
}

inline std::vector<char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<char> bytes(size);
  if (size > 0 && !in.read(bytes.data(), static_cast<std::streamsize>(size))) {
    throw FormatError("short read on " + path.string());
  }
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw RuntimeFailure("write failed on " + path.string());
}

inline json read_json_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw FormatError("corrupt JSON in " + path.string() + ": " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
  const std::string text = j.dump(2) + "\n";
  write_file_bytes(path, std::span(text.data(), text.size()));
}

/// Reads `key` from `j` into `out` when present; type mismatches become
/// validation errors naming the key.
template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("config field '") + key + "' has the wrong type");
  }
}

/// Rejects any key of `j` not listed in `allowed`.
inline void check_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!j.is_object()) throw ValidationError(std::string(where) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) throw ValidationError("unknown field '" + key + "' in " + std::string(where));
  }
}

}  // namespace touchbind
