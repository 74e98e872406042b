#ifndef GEOINV_EXACT_SUM_HPP
#define GEOINV_EXACT_SUM_HPP

#include <cmath>
#include <cstdint>
#include <vector>

#include "geoinv/core.hpp"

namespace geoinv {

/// Exact accumulator for sums of doubles.
///
/// The running sum is kept as sum_k limb[k] * 2^(32 (k + lo)) with 64-bit
/// limbs, so additions never round. Conversion goes through a canonical
/// carry-normalized form, which makes the result a function of the exact
/// value only: any grouping or ordering of the same addends gives the same
/// double. Distributed reductions rely on this to be independent of how terms
/// are spread over workers.
class ExactAccumulator {
 public:
  void add(double x) {
    require(std::isfinite(x), Errc::invalid_argument, "exact accumulator needs finite values");
    if (x == 0.0) return;
    int e = 0;
    const double f = std::frexp(x, &e);
    auto mant = static_cast<std::int64_t>(std::ldexp(f, 53));  // |mant| < 2^53
    const int exp2 = e - 53;
    const int q = floor_div(exp2, 32);
    const int r = exp2 - 32 * q;
    const bool neg = mant < 0;
    const unsigned __int128 v = static_cast<unsigned __int128>(neg ? -mant : mant) << r;
    const std::int64_t s = neg ? -1 : 1;
    reserve(q, q + 2);
    limbs_[q - lo_] += s * static_cast<std::int64_t>(v & 0xffffffffULL);
    limbs_[q + 1 - lo_] += s * static_cast<std::int64_t>((v >> 32) & 0xffffffffULL);
    limbs_[q + 2 - lo_] += s * static_cast<std::int64_t>(v >> 64);
    if (++pending_ >= kNormalizeEvery) normalize();
  }

  void merge(const ExactAccumulator& other) {
    if (other.limbs_.empty()) return;
    normalize();
    ExactAccumulator o = other;
    o.normalize();
    reserve(o.lo_, o.lo_ + static_cast<int>(o.limbs_.size()) - 1);
    for (std::size_t k = 0; k < o.limbs_.size(); ++k) limbs_[o.lo_ + static_cast<int>(k) - lo_] += o.limbs_[k];
    normalize();
  }

  /// Correctly rounded (to nearest) value of the exact sum.
  double value() const {
    ExactAccumulator c = *this;
    c.normalize();
    if (c.limbs_.empty()) return 0.0;
    const bool neg = c.limbs_.back() < 0;
    if (neg) {
      for (auto& l : c.limbs_) l = -l;
      c.normalize();
    }
    const int n = static_cast<int>(c.limbs_.size());
    // Top three limbs hold at least 65 significant bits; fold the rest into a sticky bit.
    unsigned __int128 m = 0;
    const int first = std::max(0, n - 3);
    for (int k = n - 1; k >= first; --k) m = (m << 32) | static_cast<std::uint32_t>(c.limbs_[k]);
    bool sticky = false;
    for (int k = 0; k < first; ++k) sticky |= c.limbs_[k] != 0;
    if (sticky) m |= 1;
    const double mag = std::ldexp(static_cast<double>(m), 32 * (first + c.lo_));
    return neg ? -mag : mag;
  }

  bool empty() const { return limbs_.empty(); }
  std::size_t bytes() const { return 8 * limbs_.size() + 8; }

 private:
  static constexpr int kNormalizeEvery = 1 << 30;

  static int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

  void reserve(int lo, int hi) {
    if (limbs_.empty()) {
      lo_ = lo;
      limbs_.assign(static_cast<std::size_t>(hi - lo + 1), 0);
      return;
    }
    if (lo < lo_) {
      limbs_.insert(limbs_.begin(), static_cast<std::size_t>(lo_ - lo), 0);
      lo_ = lo;
    }
    const int top = lo_ + static_cast<int>(limbs_.size()) - 1;
    if (hi > top) limbs_.resize(limbs_.size() + static_cast<std::size_t>(hi - top), 0);
  }

  /// Carry propagation to limbs in [0, 2^32) below a signed top limb, then
  /// trimming of zero limbs at both ends.
  void normalize() {
    pending_ = 0;
    if (limbs_.empty()) return;
    for (std::size_t k = 0; k + 1 < limbs_.size(); ++k) {
      const std::int64_t carry = limbs_[k] >> 32;  // arithmetic shift = floor division
      limbs_[k] -= carry * (std::int64_t{1} << 32);
      limbs_[k + 1] += carry;
    }
    while (limbs_.back() >= (std::int64_t{1} << 32) || limbs_.back() < -(std::int64_t{1} << 32)) {
      const std::int64_t carry = limbs_.back() >> 32;
      limbs_.back() -= carry * (std::int64_t{1} << 32);
      limbs_.push_back(carry);
    }
    while (!limbs_.empty() && limbs_.back() == 0) limbs_.pop_back();
    std::size_t z = 0;
    while (z < limbs_.size() && limbs_[z] == 0) ++z;
    if (z > 0) {
      limbs_.erase(limbs_.begin(), limbs_.begin() + static_cast<std::ptrdiff_t>(z));
      lo_ += static_cast<int>(z);
    }
  }

  std::vector<std::int64_t> limbs_;
  int lo_ = 0;
  int pending_ = 0;
};

/// Componentwise exact accumulation of model-space vectors.
class ExactVector {
 public:
  ExactVector() = default;
  explicit ExactVector(std::size_t n) : acc_(n) {}

  std::size_t size() const { return acc_.size(); }

  void add(std::span<const double> v) {
    if (acc_.empty()) acc_.resize(v.size());
    require(v.size() == acc_.size(), Errc::dimension_mismatch, "exact vector length mismatch");
    for (std::size_t i = 0; i < v.size(); ++i) acc_[i].add(v[i]);
  }

  void merge(const ExactVector& o) {
    if (o.acc_.empty()) return;
    if (acc_.empty()) acc_.resize(o.acc_.size());
    require(o.acc_.size() == acc_.size(), Errc::dimension_mismatch, "exact vector length mismatch");
    for (std::size_t i = 0; i < acc_.size(); ++i) acc_[i].merge(o.acc_[i]);
  }

  Vector value() const {
    Vector out(acc_.size());
    for (std::size_t i = 0; i < acc_.size(); ++i) out[i] = acc_[i].value();
    return out;
  }

  std::size_t bytes() const {
    std::size_t b = 8;
    for (const auto& a : acc_) b += a.bytes();
    return b;
  }

 private:
  std::vector<ExactAccumulator> acc_;
};

/// Exact sum of a list of doubles, rounded once.
inline double exact_sum(std::span<const double> xs) {
  ExactAccumulator a;
  for (double x : xs) a.add(x);
  return a.value();
}

}  // namespace geoinv

#endif  // GEOINV_EXACT_SUM_HPP
