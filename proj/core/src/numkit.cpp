#include "fedwarm/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "fedwarm/error.hpp"

namespace fedwarm {

namespace {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

void require_same_dim(const ParamVector& a, const ParamVector& b, std::string_view what) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(what) + ": dimension mismatch (" + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()) + ")");
  }
}

ParamVector& ParamVector::operator+=(const ParamVector& other) {
  require_same_dim(*this, other, "ParamVector +=");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

ParamVector& ParamVector::operator-=(const ParamVector& other) {
  require_same_dim(*this, other, "ParamVector -=");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
  return *this;
}

ParamVector& ParamVector::operator*=(double scale) noexcept {
  for (double& v : values_) v *= scale;
  return *this;
}

ParamVector operator+(ParamVector lhs, const ParamVector& rhs) { return lhs += rhs; }
ParamVector operator-(ParamVector lhs, const ParamVector& rhs) { return lhs -= rhs; }
ParamVector operator*(double scale, ParamVector v) { return v *= scale; }

void axpy(double a, const ParamVector& x, ParamVector& y) {
  require_same_dim(x, y, "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

double dot(const ParamVector& a, const ParamVector& b) {
  require_same_dim(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm_sq(const ParamVector& v) noexcept {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

double norm(const ParamVector& v) noexcept { return std::sqrt(norm_sq(v)); }

double distance(const ParamVector& a, const ParamVector& b) {
  require_same_dim(a, b, "distance");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

ParamVector mean(std::span<const ParamVector> vectors) {
  if (vectors.empty()) throw NumericError("mean of an empty list");
  ParamVector acc = vectors.front();
  for (std::size_t k = 1; k < vectors.size(); ++k) acc += vectors[k];
  if (vectors.size() > 1) {
    const double n = static_cast<double>(vectors.size());
    for (double& v : acc) v /= n;
  }
  return acc;
}

bool all_finite(const ParamVector& v) noexcept {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void require_finite(const ParamVector& v, std::string_view where) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericError(std::string(where) + ": non-finite value at coordinate " +
                         std::to_string(i));
    }
  }
}

double relative_error(double a, double b) noexcept {
  const double scale = std::max({1.0, std::abs(a), std::abs(b)});
  return std::abs(a - b) / scale;
}

double max_relative_error(const ParamVector& a, const ParamVector& b) {
  require_same_dim(a, b, "max_relative_error");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i]));
  return worst;
}

bool bit_identical(const ParamVector& a, const ParamVector& b) noexcept {
  return a.size() == b.size() &&
         (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

std::uint64_t stream_key(std::uint64_t seed, const StreamPath& path) noexcept {
  std::uint64_t h = splitmix64(seed ^ 0x5eed5eed5eed5eedULL);
  for (std::uint64_t part : {path.session, path.round, path.actor}) {
    h = splitmix64(h ^ splitmix64(part + 0x632be59bd9b4e019ULL));
  }
  return h;
}

RngStream::RngStream(std::uint64_t seed, StreamPath path)
    : seed_(seed), path_(path), engine_(stream_key(seed, path)) {}

double RngStream::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double RngStream::normal() { return normal_(engine_); }

double RngStream::gamma(double shape) {
  if (!(shape > 0.0) || !std::isfinite(shape)) {
    throw NumericError("gamma: shape must be positive and finite");
  }
  std::gamma_distribution<double> dist(shape, 1.0);
  return dist(engine_);
}

std::size_t RngStream::index(std::size_t n) {
  if (n == 0) throw NumericError("RngStream::index: empty range");
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(engine_);
}

RngStream derive_stream(std::uint64_t seed, StreamPath path) { return RngStream(seed, path); }

ParamVector finite_diff_grad(const LossFn& loss, const ParamVector& w, double h) {
  if (!(h > 0.0)) throw NumericError("finite_diff_grad: step must be positive");
  ParamVector g(w.size());
  ParamVector probe = w;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = loss(probe);
    probe[i] = orig - h;
    const double down = loss(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_grad: non-finite loss when perturbing coordinate " +
                         std::to_string(i));
    }
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace fedwarm
