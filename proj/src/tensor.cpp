#include "counting/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace counting {

size_t shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dimension must be positive, got " + std::to_string(d));
    n *= static_cast<size_t>(d);
  }
  return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<int> shape, float fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                                shape_to_string(shape_));
  }
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, float stddev) {
  Tensor t(std::move(shape));
  for (auto& v : t.data_) v = static_cast<float>(rng.normal() * stddev);
  return t;
}

void Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  grad_.assign(on ? data_.size() : 0, 0.0f);
}

void Tensor::zero_grad() {
  for (auto& g : grad_) g = 0.0f;
}

bool Tensor::all_finite() const {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

double Tensor::sum() const {
  double acc = 0.0;
  for (float v : data_) acc += v;
  return acc;
}

size_t Tensor::offset(std::initializer_list<int> idx) const {
  if (idx.size() != shape_.size()) throw std::invalid_argument("index rank mismatch");
  size_t off = 0;
  size_t d = 0;
  for (int i : idx) {
    off = off * static_cast<size_t>(shape_[d]) + static_cast<size_t>(i);
    ++d;
  }
  return off;
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  double u2 = uniform();
  while (u1 <= 1e-300) u1 = uniform();
  double mag = std::sqrt(-2.0 * std::log(u1));
  spare_ = mag * std::sin(6.283185307179586 * u2);
  have_spare_ = true;
  return mag * std::cos(6.283185307179586 * u2);
}

}  // namespace counting
