#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "counting/rng.hpp"

namespace counting {

// Dense row-major float32 array. Gradient buffer exists iff requires_grad.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, float fill = 0.0f);
  Tensor(std::vector<int> shape, std::vector<float> data);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, float v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(float v) { return Tensor({1}, {v}); }
  static Tensor randn(std::vector<int> shape, Rng& rng, float stddev = 1.0f);

  const std::vector<int>& shape() const { return shape_; }
  int dim(size_t i) const { return shape_[i]; }
  size_t rank() const { return shape_.size(); }
  size_t numel() const { return data_.size(); }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }
  float operator[](size_t i) const { return data_[i]; }
  float& operator[](size_t i) { return data_[i]; }

  float at(std::initializer_list<int> idx) const { return data_[offset(idx)]; }
  float& at(std::initializer_list<int> idx) { return data_[offset(idx)]; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on);
  std::span<const float> grad() const { return grad_; }
  std::span<float> grad() { return grad_; }
  void zero_grad();

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  std::string shape_str() const;

  // Sum of all elements, accumulated in double.
  double sum() const;

 private:
  size_t offset(std::initializer_list<int> idx) const;

  std::vector<int> shape_;
  std::vector<float> data_;
  std::vector<float> grad_;
  bool requires_grad_ = false;
};

size_t shape_numel(const std::vector<int>& shape);
std::string shape_to_string(const std::vector<int>& shape);

}  // namespace counting
