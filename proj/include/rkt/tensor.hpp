#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rkt {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major array of doubles with an optional gradient slot.
///
/// Every dimension is positive and data().size() == product(shape). A tensor
/// produced by Tape::head() additionally carries the id of that tape, which
/// is what Tape::backward() checks before accepting it as a scalar head.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor vector(std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool has_grad() const { return grad_.has_value(); }
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  /// Same data viewed under a new shape with identical element count.
  Tensor reshaped(Shape shape) const;

  /// Copy of sample `i` along the leading (batch) dimension.
  Tensor slice(std::size_t i) const;

  bool all_finite() const;
  void require_finite(const char* where) const;

  std::uint64_t tape_id() const { return tape_id_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  friend class Tape;

  Shape shape_;
  std::vector<double> data_;
  std::optional<std::vector<double>> grad_;
  std::uint64_t tape_id_ = 0;
};

/// Stacks equally shaped tensors into a batch with a new leading dimension.
Tensor stack(std::span<const Tensor> items);

/// Adds a leading batch dimension of one.
Tensor batch_of_one(const Tensor& item);

double l2_norm(std::span<const double> v);
double max_abs_diff(std::span<const double> a, std::span<const double> b);

}  // namespace rkt
