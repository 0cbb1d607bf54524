#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace causerec {

// Dense vector of doubles.
class Dense1 {
 public:
  Dense1() = default;
  explicit Dense1(std::size_t len, double fill = 0.0) : data_(len, fill) {}
  Dense1(std::initializer_list<double> values) : data_(values) {}
  explicit Dense1(std::vector<double> values) : data_(std::move(values)) {}

  std::size_t len() const { return data_.size(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& vec() const { return data_; }

  bool operator==(const Dense1&) const = default;

 private:
  std::vector<double> data_;
};

// Row-major dense matrix of doubles.
class Dense2 {
 public:
  Dense2() = default;
  Dense2(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Dense2(std::size_t rows, std::size_t cols, std::vector<double> data);
  Dense2(std::initializer_list<std::initializer_list<double>> rows);

  static Dense2 row_vector(std::span<const double> v);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  void fill(double v);
  bool same_shape(const Dense2& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_str() const;

  bool operator==(const Dense2&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

std::string shape_str(std::size_t rows, std::size_t cols);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);
bool all_finite(std::span<const double> a);

// Throws DimensionError when the shapes differ; `what` names the operation.
void require_same_shape(const Dense2& a, const Dense2& b, const char* what);

}  // namespace causerec
