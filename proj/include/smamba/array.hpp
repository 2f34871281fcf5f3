#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "smamba/errors.hpp"

namespace smamba {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline void validate_shape(const Shape& s) {
  if (s.empty()) throw DimError("shape must have rank >= 1");
  for (std::size_t d : s)
    if (d == 0) throw DimError("shape extents must be positive, got " + shape_str(s));
}

// Dense row-major numeric array. Scalar is float for training runs and
// double for gradient/oracle verification.
template <typename Scalar>
struct Array {
  Shape shape;
  std::vector<Scalar> data;

  Array() = default;

  explicit Array(Shape s) : shape(std::move(s)) {
    validate_shape(shape);
    data.assign(shape_numel(shape), Scalar(0));
  }

  Array(Shape s, std::vector<Scalar> d) : shape(std::move(s)), data(std::move(d)) {
    validate_shape(shape);
    if (shape_numel(shape) != data.size())
      throw DimError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }

  static Array full(Shape s, Scalar v) {
    Array a(std::move(s));
    for (auto& x : a.data) x = v;
    return a;
  }

  static Array scalar(Scalar v) { return Array({1}, {v}); }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  Scalar& operator[](std::size_t i) { return data[i]; }
  const Scalar& operator[](std::size_t i) const { return data[i]; }

  template <typename Other>
  Array<Other> cast() const {
    Array<Other> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<Other>(data[i]);
    return out;
  }
};

template <typename Scalar>
bool all_finite(const Array<Scalar>& a) {
  for (Scalar v : a.data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

// Uniform init in +-1/sqrt(fan_in), the default for all projections.
template <typename Scalar>
Array<Scalar> uniform_init(Shape s, std::size_t fan_in, std::mt19937_64& rng) {
  Array<Scalar> a(std::move(s));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : a.data) v = static_cast<Scalar>(dist(rng));
  return a;
}

}  // namespace smamba
