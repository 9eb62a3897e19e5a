// Shared vocabulary for the ldlab headers: small-vector types, error classes,
// the counter-based noise generator and a replica-parallel map.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ldlab {

/// Largest state/noise dimension supported. Vectors live on the stack.
inline constexpr int kMaxDim = 8;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;

inline Vec vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

inline Vec constant_vec(int dim, double value) { return Vec::Constant(dim, value); }

inline void check_dim(int dim, const char* what) {
  if (dim < 1 || dim > kMaxDim) {
    throw std::invalid_argument(std::string(what) + ": dimension must be in [1, " +
                                std::to_string(kMaxDim) + "], got " + std::to_string(dim));
  }
}

// ---------------------------------------------------------------------------
// Errors. Everything derives from std::runtime_error so callers that do not
// care can catch one type; the CLI maps them onto exit codes.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments: dimension mismatches, empty inputs, violated preconditions.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Malformed or unknown configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A simulated state left the finite range.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// The requested time step is too coarse for the stiffness of the run.
class StiffnessGuardError : public InvalidInput {
 public:
  StiffnessGuardError(const std::string& what, std::size_t suggested_steps)
      : InvalidInput(what + "; use at least " + std::to_string(suggested_steps) + " steps"),
        suggested_steps_(suggested_steps) {}
  std::size_t suggested_steps() const noexcept { return suggested_steps_; }

 private:
  std::size_t suggested_steps_;
};

/// Matrix that must be inverted is (numerically) singular.
class SingularityError : public Error {
 public:
  using Error::Error;
};

/// Internal state of a feedback law is missing (e.g. an anchor never recorded).
class StateError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Counter-based randomness. A draw is a pure function of
// (seed, replica, channel, counter), so replicas can be run in any order.

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_key(std::uint64_t seed, std::uint64_t replica, std::uint64_t channel,
                                 std::uint64_t counter) noexcept {
  std::uint64_t h = splitmix64(seed ^ 0x5851F42D4C957F2DULL);
  h = splitmix64(h ^ replica);
  h = splitmix64(h ^ (channel * 0xD6E8FEB86659FD93ULL));
  return splitmix64(h ^ counter);
}

/// Uniform in the open interval (0, 1).
constexpr double to_unit(std::uint64_t bits) noexcept {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace detail

/// Well-known channel ids. Independent Brownian motions get distinct channels.
enum class Channel : std::uint64_t {
  kSlowNoise = 1,   // W in the slow equation / B in single-scale runs
  kFastNoise = 2,   // B in the fast equation
  kSampling = 3,    // target/plan sampling
  kAuxiliary = 4,
};

/// Addressable Gaussian noise: normal(step, component) is reproducible in
/// isolation. Box-Muller pairs share one counter.
class NoiseStream {
 public:
  NoiseStream(std::uint64_t seed, std::uint64_t replica, Channel channel)
      : seed_(seed), replica_(replica), channel_(static_cast<std::uint64_t>(channel)) {}

  double normal(std::uint64_t step, std::uint64_t component) const noexcept {
    const std::uint64_t pair = component / 2;
    const std::uint64_t counter = (step << 4) ^ (pair << 1);
    const double u1 = detail::to_unit(detail::hash_key(seed_, replica_, channel_, counter));
    const double u2 = detail::to_unit(detail::hash_key(seed_, replica_, channel_, counter | 1ULL));
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    return (component % 2 == 0) ? r * std::cos(angle) : r * std::sin(angle);
  }

  /// Brownian increment over a step of length dt, dimension dim.
  Vec increment(std::uint64_t step, int dim, double dt) const noexcept {
    const double scale = std::sqrt(dt);
    Vec out(dim);
    for (int c = 0; c < dim; ++c) out(c) = scale * normal(step, static_cast<std::uint64_t>(c));
    return out;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t replica_;
  std::uint64_t channel_;
};

/// Sequential view over the same counter-based generator, for samplers.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t replica = 0, Channel channel = Channel::kSampling)
      : seed_(seed), replica_(replica), channel_(static_cast<std::uint64_t>(channel)) {}

  double uniform() noexcept {
    return detail::to_unit(detail::hash_key(seed_, replica_, channel_, counter_++));
  }

  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(angle);
    has_spare_ = true;
    return r * std::cos(angle);
  }

  Vec normal_vec(int dim) {
    Vec out(dim);
    for (int c = 0; c < dim; ++c) out(c) = normal();
    return out;
  }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) noexcept {
    return std::min(n - 1, static_cast<std::size_t>(uniform() * static_cast<double>(n)));
  }

 private:
  std::uint64_t seed_;
  std::uint64_t replica_;
  std::uint64_t channel_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// ---------------------------------------------------------------------------

/// Evaluates fn(i) for i in [0, n) across hardware threads; results are
/// returned in index order, so output does not depend on scheduling.
template <typename Fn>
auto parallel_map(std::size_t n, Fn&& fn) -> std::vector<decltype(fn(std::size_t{}))> {
  using Result = decltype(fn(std::size_t{}));
  std::vector<Result> out(n);
  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(n, std::thread::hardware_concurrency()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < n; i = next++) out[i] = fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
        next = n;
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

}  // namespace ldlab
