#ifndef GEOINV_CORE_HPP
#define GEOINV_CORE_HPP

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace geoinv {

using Index = std::int64_t;
using Complex = std::complex<double>;
using Vector = std::vector<double>;
using ComplexVector = std::vector<Complex>;

template <typename T>
struct is_complex : std::false_type {};
template <typename T>
struct is_complex<std::complex<T>> : std::true_type {};
template <typename T>
inline constexpr bool is_complex_v = is_complex<T>::value;

enum class Errc {
  invalid_mesh,
  unsupported_dimension,
  dimension_mismatch,
  not_spd,
  breakdown,
  singular_preconditioner,
  invalid_argument,
  invalid_coefficient,
  invalid_padding,
  forward_solve,
  stale_cache,
  line_search,
  scheduler,
  distribution,
  stale_assignment,
  frozen_assignment,
  metric,
  format,
  config,
  io,
};

inline const char* to_string(Errc code) {
  switch (code) {
    case Errc::invalid_mesh: return "invalid-mesh";
    case Errc::unsupported_dimension: return "unsupported-dimension";
    case Errc::dimension_mismatch: return "dimension-mismatch";
    case Errc::not_spd: return "not-spd";
    case Errc::breakdown: return "breakdown";
    case Errc::singular_preconditioner: return "singular-preconditioner";
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::invalid_coefficient: return "invalid-coefficient";
    case Errc::invalid_padding: return "invalid-padding";
    case Errc::forward_solve: return "forward-solve";
    case Errc::stale_cache: return "stale-cache";
    case Errc::line_search: return "line-search";
    case Errc::scheduler: return "scheduler";
    case Errc::distribution: return "distribution";
    case Errc::stale_assignment: return "stale-assignment";
    case Errc::frozen_assignment: return "frozen-assignment";
    case Errc::metric: return "metric";
    case Errc::format: return "format";
    case Errc::config: return "config";
    case Errc::io: return "io";
  }
  return "unknown";
}

/// All library failures are reported through this exception; `code()` tells
/// callers which contract was violated.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

// Small dense kernels shared by the solvers and the optimizer.

template <typename T>
inline T dot(std::span<const T> a, std::span<const T> b) {
  T s{};
  for (std::size_t i = 0; i < a.size(); ++i) {
    if constexpr (is_complex_v<T>) {
      s += std::conj(a[i]) * b[i];
    } else {
      s += a[i] * b[i];
    }
  }
  return s;
}

inline double dot(const Vector& a, const Vector& b) {
  return dot<double>(std::span<const double>(a), std::span<const double>(b));
}

template <typename T>
inline double norm2(std::span<const T> a) {
  double s = 0.0;
  for (const auto& v : a) s += std::norm(v);
  return std::sqrt(s);
}

inline double norm2(const Vector& a) { return norm2<double>(std::span<const double>(a)); }

inline double norm_inf(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s = std::max(s, std::abs(v));
  return s;
}

/// y += alpha * x
template <typename T>
inline void axpy(T alpha, std::span<const T> x, std::span<T> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Vector scaled(double s, std::span<const double> a) {
  Vector r(a.begin(), a.end());
  for (auto& v : r) v *= s;
  return r;
}

/// Hash of a coefficient vector used to detect stale solver caches.
inline std::uint64_t hash_values(std::span<const double> values) {
  std::uint64_t h = 1469598103934665603ULL;
  for (double v : values) {
    std::uint64_t bits;
    static_assert(sizeof bits == sizeof v);
    std::memcpy(&bits, &v, sizeof bits);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffU;
      h *= 1099511628211ULL;
    }
  }
  return h ^ values.size();
}

}  // namespace geoinv

#endif  // GEOINV_CORE_HPP
