#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace rpf {

// Scalar type for all learned-network tensors. Geometry always uses double.
#ifdef RPF_REAL_DOUBLE
using Real = double;
#else
using Real = float;
#endif

using Rng = std::mt19937_64;

// Thrown when a caller violates a documented precondition.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed-split function: parallel and serial runs agree because every
// stream is derived from (root, index) rather than from shared state.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  return splitmix64(root ^ splitmix64(stream));
}

inline Rng make_rng(std::uint64_t root, std::uint64_t stream) {
  return Rng(derive_seed(root, stream));
}

constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

inline double normalize_deg(double a) {
  a = std::fmod(a, 360.0);
  if (a < 0) a += 360.0;
  return a;
}

// Log levels: 0 = errors only, 1 = info (default), 2 = debug. RPF_LOG env var.
inline int log_level() {
  static int level = [] {
    const char* v = std::getenv("RPF_LOG");
    if (!v) return 1;
    if (std::string(v) == "debug") return 2;
    if (std::string(v) == "error") return 0;
    return std::atoi(v) > 0 ? std::atoi(v) : 1;
  }();
  return level;
}

inline void log_info(const std::string& msg) {
  if (log_level() >= 1) std::fprintf(stderr, "[rpf] %s\n", msg.c_str());
}

inline void log_debug(const std::string& msg) {
  if (log_level() >= 2) std::fprintf(stderr, "[rpf:debug] %s\n", msg.c_str());
}

}  // namespace rpf
