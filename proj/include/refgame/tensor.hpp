#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "refgame/errors.hpp"

namespace refgame {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::string shape_string(std::size_t rows, std::size_t cols) {
  return "[" + std::to_string(rows) + "," + std::to_string(cols) + "]";
}

inline void require_size(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw ShapeError(std::string(what) + ": expected length " + std::to_string(want) +
                     ", got " + std::to_string(got));
  }
}

/// Tensor visitation. Every parameter struct exposes
/// `template <class Self, class F> static void visit(Self&, F&&)` calling
/// `f(name, shape, span)` once per tensor in a fixed order; the helpers
/// below build generic arithmetic and serialization on that.
using Shape = std::vector<std::size_t>;

template <class P, class F>
void for_each_tensor(P& params, F&& f) {
  std::remove_const_t<P>::visit(params, std::forward<F>(f));
}

inline void visit_matrix(Matrix& m, const std::string& name, auto&& f) {
  f(name, Shape{m.rows(), m.cols()}, m.flat());
}
inline void visit_matrix(const Matrix& m, const std::string& name, auto&& f) {
  f(name, Shape{m.rows(), m.cols()}, m.flat());
}
inline void visit_vector(Vector& v, const std::string& name, auto&& f) {
  f(name, Shape{v.size()}, std::span<double>(v));
}
inline void visit_vector(const Vector& v, const std::string& name, auto&& f) {
  f(name, Shape{v.size()}, std::span<const double>(v));
}

/// Prefixes tensor names when a struct forwards visitation to a member.
template <class F>
auto prefixed(const std::string& prefix, F& f) {
  return [prefix, &f](const std::string& name, const Shape& shape, auto span) {
    f(prefix + "." + name, shape, span);
  };
}

template <class P>
P zeros_like(const P& params) {
  P out = params;
  for_each_tensor(out, [](const std::string&, const Shape&, std::span<double> s) {
    std::fill(s.begin(), s.end(), 0.0);
  });
  return out;
}

template <class P>
std::vector<std::span<const double>> tensor_spans(const P& params) {
  std::vector<std::span<const double>> spans;
  for_each_tensor(params, [&](const std::string&, const Shape&, std::span<const double> s) {
    spans.push_back(s);
  });
  return spans;
}

/// y += a * x, tensor by tensor. Shapes must agree.
template <class P>
void axpy(P& y, double a, const P& x) {
  auto xs = tensor_spans(x);
  std::size_t i = 0;
  for_each_tensor(y, [&](const std::string& name, const Shape&, std::span<double> s) {
    if (i >= xs.size() || xs[i].size() != s.size()) {
      throw ShapeError("tensor '" + name + "' shape mismatch in update");
    }
    const auto& src = xs[i++];
    for (std::size_t k = 0; k < s.size(); ++k) s[k] += a * src[k];
  });
}

template <class P>
void scale_tensors(P& p, double a) {
  for_each_tensor(p, [a](const std::string&, const Shape&, std::span<double> s) {
    for (double& v : s) v *= a;
  });
}

template <class P>
bool all_finite(const P& p) {
  bool ok = true;
  for_each_tensor(p, [&](const std::string&, const Shape&, std::span<const double> s) {
    for (double v : s) ok = ok && std::isfinite(v);
  });
  return ok;
}

template <class P>
std::size_t parameter_count(const P& p) {
  std::size_t n = 0;
  for_each_tensor(p, [&](const std::string&, const Shape&, std::span<const double> s) { n += s.size(); });
  return n;
}

}  // namespace refgame
