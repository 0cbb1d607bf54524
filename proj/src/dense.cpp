#include "causerec/dense.hpp"

#include <cmath>

#include "causerec/errors.hpp"

namespace causerec {

Dense2::Dense2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("Dense2: " + std::to_string(data_.size()) +
                         " values do not fill " + causerec::shape_str(rows, cols));
  }
}

Dense2::Dense2(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("Dense2: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Dense2 Dense2::row_vector(std::span<const double> v) {
  return Dense2(1, v.size(), std::vector<double>(v.begin(), v.end()));
}

void Dense2::fill(double v) {
  for (auto& x : data_) x = v;
}

std::string Dense2::shape_str() const { return causerec::shape_str(rows_, cols_); }

std::string shape_str(std::size_t rows, std::size_t cols) {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("dot: length " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  }
  double s[4] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t n = a.size(), head = n - n % 4;
  for (std::size_t i = 0; i < head; i += 4) {
    s[0] += a[i] * b[i];
    s[1] += a[i + 1] * b[i + 1];
    s[2] += a[i + 2] * b[i + 2];
    s[3] += a[i + 3] * b[i + 3];
  }
  for (std::size_t i = head; i < n; ++i) s[0] += a[i] * b[i];
  return (s[0] + s[1]) + (s[2] + s[3]);
}

double l2_norm(std::span<const double> a) {
  double s = 0.0;
  for (double x : a) s += x * x;
  return std::sqrt(s);
}

bool all_finite(std::span<const double> a) {
  for (double x : a) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void require_same_shape(const Dense2& a, const Dense2& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shape " + a.shape_str() + " vs " +
                         b.shape_str());
  }
}

}  // namespace causerec
