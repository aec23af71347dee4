#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace marl {

using Vec = std::vector<double>;
using Mask = std::vector<uint8_t>;

// Error taxonomy. Configuration problems map to CLI exit code 1,
// everything else to 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct RegistryError : ConfigError {
  explicit RegistryError(const std::string& msg) : ConfigError(msg) {}
};

struct ProtocolError : std::runtime_error {
  explicit ProtocolError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IllegalActionError : ProtocolError {
  explicit IllegalActionError(const std::string& msg) : ProtocolError(msg) {}
};

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ModeError : std::runtime_error {
  explicit ModeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct AlignmentError : std::runtime_error {
  explicit AlignmentError(const std::string& msg) : std::runtime_error(msg) {}
};

// Deterministic RNG. The engine and all value mappings are spelled out
// here (no std::uniform_* distributions) so streams are identical on
// every platform, which the reproducibility contract depends on.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    // splitmix64; small, fast, and fully specified.
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
  }

 private:
  uint64_t state_;
};

// Stable derivation of sub-stream seeds from a master seed and a label,
// so distinct consumers (policy init, episode rollout, replay sampling)
// never share a stream.
uint64_t derive_seed(uint64_t master, const std::string& label);
uint64_t derive_seed(uint64_t master, uint64_t index);

std::string format_double(double v);

}  // namespace marl
