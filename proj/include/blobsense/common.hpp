#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace blobsense {

// Error taxonomy. The CLI maps these onto distinct exit codes, library code
// throws them directly.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct RangeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Deterministic RNG used everywhere seeds appear. All draws are derived
/// from the engine state alone (no hidden distribution state), so
/// save_state/load_state round-trips reproduce the stream exactly.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // [0, 1)
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // [0, n)
    int uniform_int(int n) {
        if (n <= 0) {
            throw RangeError("uniform_int requires n > 0");
        }
        return static_cast<int>(eng_() % static_cast<std::uint64_t>(n));
    }

    // Box-Muller, always consumes exactly two engine draws.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) {
            u1 = 1e-300;
        }
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    std::string save_state() const {
        std::ostringstream os;
        os << eng_;
        return os.str();
    }

    void load_state(const std::string& state) {
        std::istringstream is(state);
        is >> eng_;
        if (is.fail()) {
            throw ValidationError("malformed RNG state");
        }
    }

    bool operator==(const Rng& other) const { return eng_ == other.eng_; }

  private:
    std::mt19937_64 eng_;
};

}  // namespace blobsense
