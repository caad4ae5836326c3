#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace fedwarm {

/// Flat vector of model coordinates w in R^M.
///
/// Arithmetic helpers check dimensions and throw DimensionError on mismatch.
/// Equality is exact (bitwise for non-NaN values).
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::size_t dim, double fill = 0.0) : values_(dim, fill) {}
  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}
  ParamVector(std::initializer_list<double> values) : values_(values) {}

  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }
  std::span<double> span() noexcept { return values_; }
  std::span<const double> span() const noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  auto begin() noexcept { return values_.begin(); }
  auto end() noexcept { return values_.end(); }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  ParamVector& operator+=(const ParamVector& other);
  ParamVector& operator-=(const ParamVector& other);
  ParamVector& operator*=(double scale) noexcept;

  bool operator==(const ParamVector&) const = default;

 private:
  std::vector<double> values_;
};

ParamVector operator+(ParamVector lhs, const ParamVector& rhs);
ParamVector operator-(ParamVector lhs, const ParamVector& rhs);
ParamVector operator*(double scale, ParamVector v);

void require_same_dim(const ParamVector& a, const ParamVector& b, std::string_view what);

// y += a * x
void axpy(double a, const ParamVector& x, ParamVector& y);
double dot(const ParamVector& a, const ParamVector& b);
double norm_sq(const ParamVector& v) noexcept;
double norm(const ParamVector& v) noexcept;
double distance(const ParamVector& a, const ParamVector& b);

// Arithmetic mean; accumulates in list order. Throws on empty input.
ParamVector mean(std::span<const ParamVector> vectors);

bool all_finite(const ParamVector& v) noexcept;
// Throws NumericError naming `where` if any entry is NaN/Inf.
void require_finite(const ParamVector& v, std::string_view where);

// |a-b| / max(1, |a|, |b|)
double relative_error(double a, double b) noexcept;
double max_relative_error(const ParamVector& a, const ParamVector& b);
// Byte-level equality of the stored doubles.
bool bit_identical(const ParamVector& a, const ParamVector& b) noexcept;

/// Position of a random stream in the simulation: (session, round, actor).
/// Actors are client ids or server-side roles; see make_actor().
struct StreamPath {
  std::uint64_t session = 0;
  std::uint64_t round = 0;
  std::uint64_t actor = 0;

  bool operator==(const StreamPath&) const = default;
};

// Packs a role tag and an index into a single actor id.
constexpr std::uint64_t make_actor(std::uint64_t role, std::uint64_t index) noexcept {
  return (role << 40) | (index & ((std::uint64_t{1} << 40) - 1));
}

/// Deterministic random stream keyed by (seed, path).
///
/// The engine seed is a hash of seed||path, so streams for different clients
/// never share state and can be created in any order or on any thread.
/// Satisfies UniformRandomBitGenerator.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream(std::uint64_t seed, StreamPath path);

  static constexpr result_type min() noexcept { return std::mt19937_64::min(); }
  static constexpr result_type max() noexcept { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  double normal();
  double gamma(double shape);
  // Uniform integer on [0, n). n must be positive.
  std::size_t index(std::size_t n);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

  std::uint64_t seed() const noexcept { return seed_; }
  const StreamPath& path() const noexcept { return path_; }

 private:
  std::uint64_t seed_;
  StreamPath path_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

RngStream derive_stream(std::uint64_t seed, StreamPath path);

// Hash used to key streams; exposed for tests and checkpoint fingerprints.
std::uint64_t stream_key(std::uint64_t seed, const StreamPath& path) noexcept;

using LossFn = std::function<double(const ParamVector&)>;

/// Central-difference gradient of `loss` at `w` with step `h`.
/// Throws NumericError naming the coordinate whose perturbation gave a
/// non-finite loss.
ParamVector finite_diff_grad(const LossFn& loss, const ParamVector& w, double h = 1e-5);

}  // namespace fedwarm
