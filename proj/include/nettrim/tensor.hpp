#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nettrim {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major tensor storage shared between the user-facing handle and
// the autodiff tape.  Gradient buffer is lazily allocated.
template <typename S>
struct TensorStorage {
  Shape shape;
  std::vector<S> data;
  std::vector<S> grad;
  bool requires_grad = false;

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), S(0));
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), S(0));
  }
};

// Lightweight shared handle.  Copies alias the same storage; use clone() for
// a deep copy.  Scalar type S is float or double.
template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;

  explicit Tensor(Shape shape, S fill = S(0))
      : st_(std::make_shared<TensorStorage<S>>()) {
    validate_shape(shape);
    st_->shape = std::move(shape);
    st_->data.assign(static_cast<std::size_t>(shape_numel(st_->shape)), fill);
  }

  static Tensor scalar(S v) {
    Tensor t(Shape{});
    t.st_->data.assign(1, v);
    return t;
  }

  static Tensor from_vector(Shape shape, std::vector<S> values) {
    validate_shape(shape);
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
      throw std::invalid_argument("tensor: value count " +
                                  std::to_string(values.size()) +
                                  " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.st_ = std::make_shared<TensorStorage<S>>();
    t.st_->shape = std::move(shape);
    t.st_->data = std::move(values);
    return t;
  }

  bool defined() const { return static_cast<bool>(st_); }

  const Shape& shape() const { return st_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(st_->shape.size()); }
  std::int64_t numel() const { return st_->numel(); }
  std::int64_t dim(std::int64_t i) const { return st_->shape.at(static_cast<std::size_t>(i)); }

  S* data() { return st_->data.data(); }
  const S* data() const { return st_->data.data(); }
  S* grad_data() { return st_->grad.data(); }
  const S* grad_data() const { return st_->grad.data(); }

  S& at(std::int64_t i) { return st_->data.at(static_cast<std::size_t>(i)); }
  S at(std::int64_t i) const { return st_->data.at(static_cast<std::size_t>(i)); }

  // Scalar convenience (rank-0 or single-element).
  S item() const {
    if (numel() != 1) {
      throw std::runtime_error("tensor: item() requires exactly one element, shape " +
                               shape_str(shape()));
    }
    return st_->data[0];
  }

  bool requires_grad() const { return st_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    st_->requires_grad = v;
    if (v) {
      st_->ensure_grad();
    } else {
      st_->grad.clear();  // frozen tensors drop out of gradient tracking entirely
    }
    return *this;
  }

  bool has_grad() const { return !st_->grad.empty(); }
  void ensure_grad() { st_->ensure_grad(); }
  void zero_grad() { st_->zero_grad(); }

  // Grad as tensor (deep copy, for inspection in tests).
  Tensor grad_clone() const {
    if (!has_grad()) throw std::runtime_error("tensor: no gradient allocated");
    return Tensor::from_vector(shape(), st_->grad);
  }

  Tensor clone() const {
    Tensor t;
    t.st_ = std::make_shared<TensorStorage<S>>(*st_);
    return t;
  }

  // Deep copy with a different shape (same element count).  Differentiable
  // reshape lives in ops.hpp as a recorded op; this is for plain data.
  Tensor reshaped_copy(Shape new_shape) const {
    validate_shape(new_shape);
    if (shape_numel(new_shape) != numel()) {
      throw std::invalid_argument("tensor: reshape " + shape_str(shape()) + " -> " +
                                  shape_str(new_shape) + " changes element count");
    }
    Tensor t;
    t.st_ = std::make_shared<TensorStorage<S>>(*st_);
    t.st_->shape = std::move(new_shape);
    return t;
  }

  bool same_storage(const Tensor& o) const { return st_ == o.st_; }

  // Eigen maps over the flat buffer.
  using ArrayMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
  using ConstArrayMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;
  ArrayMap array() { return ArrayMap(data(), numel()); }
  ConstArrayMap array() const { return ConstArrayMap(data(), numel()); }
  ArrayMap grad_array() {
    st_->ensure_grad();
    return ArrayMap(grad_data(), numel());
  }

  // Row-major matrix map for 2-d tensors.
  using MatrixMap = Eigen::Map<
      Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatrixMap = Eigen::Map<
      const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  MatrixMap matrix(std::int64_t rows, std::int64_t cols) {
    check_matrix(rows, cols);
    return MatrixMap(data(), rows, cols);
  }
  ConstMatrixMap matrix(std::int64_t rows, std::int64_t cols) const {
    check_matrix(rows, cols);
    return ConstMatrixMap(data(), rows, cols);
  }

  std::shared_ptr<TensorStorage<S>> storage() const { return st_; }

 private:
  static void validate_shape(const Shape& s) {
    for (auto d : s) {
      if (d <= 0) {
        throw std::invalid_argument("tensor: non-positive dimension in shape " +
                                    shape_str(s));
      }
    }
  }
  void check_matrix(std::int64_t rows, std::int64_t cols) const {
    if (rows * cols != numel()) {
      throw std::invalid_argument("tensor: matrix map " + std::to_string(rows) + "x" +
                                  std::to_string(cols) + " does not cover shape " +
                                  shape_str(shape()));
    }
  }

  std::shared_ptr<TensorStorage<S>> st_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace nettrim
