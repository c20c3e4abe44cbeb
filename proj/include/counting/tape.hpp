#pragma once

#include <functional>
#include <span>
#include <vector>

#include "counting/tensor.hpp"

namespace counting {

// Handle into a Tape's node arena.
struct Val {
  int32_t idx = -1;
  bool valid() const { return idx >= 0; }
};

enum class BnMode { Train, Eval };

// BatchNorm running statistics; owned by the model, mutated by train-mode
// forward passes.
struct BnBuffers {
  std::vector<float> running_mean;
  std::vector<float> running_var;

  explicit BnBuffers(int channels = 0) : running_mean(channels, 0.0f), running_var(channels, 1.0f) {}
};

enum class ReduceOp { Sum, Mean };

// Reverse-mode tape. Records one forward expression; backward() replays the
// recorded ops in reverse execution order exactly once.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Val leaf(Tensor t, bool requires_grad = false);
  // Leaf whose gradient is accumulated into p->grad after backward().
  Val param(Tensor* p);
  Val constant(Tensor t) { return leaf(std::move(t), false); }
  Val scalar_const(float v) { return leaf(Tensor::scalar(v), false); }

  Val conv2d(Val input, Val weight, int stride, int padding);
  Val batchnorm2d(Val input, Val gamma, Val beta, BnBuffers* stats, BnMode mode, float eps = 1e-5f,
                  float momentum = 0.1f);
  Val add(Val a, Val b);
  Val sub(Val a, Val b) { return add(a, neg(b)); }
  Val mul(Val a, Val b);
  Val relu(Val a);
  Val sigmoid(Val a);
  Val log(Val a);
  Val neg(Val a);
  Val square(Val a) { return mul(a, a); }
  Val reduce(Val a, ReduceOp op, const std::vector<int>& axes);
  Val reduce_sum(Val a) { return reduce(a, ReduceOp::Sum, {}); }
  Val reduce_mean(Val a) { return reduce(a, ReduceOp::Mean, {}); }
  Val fully_connected(Val x, Val weight, Val bias);
  Val softmax(Val x);
  Val logistic_bce(Val logit, Val target);
  Val scale(Val a, float k);
  Val add_scalar(Val a, float k);
  Val detach(Val a);
  Val reshape(Val a, std::vector<int> shape);
  // [N,C,H,W] -> [H,W] for one (image, channel) pair.
  Val select_nc(Val t, int n, int c);
  // Select index r along axis 0.
  Val row(Val m, int r);
  // Stack equal-shape tensors along a new leading axis.
  Val stack0(std::span<const Val> parts);
  // a [N,C,H,W] * b [N,1,H,W], b broadcast over channels.
  Val mul_bcast_channel(Val a, Val b);
  // Strict local maxima within Chebyshev radius r; non-peaks become 0.
  Val peak_map(Val m, int radius);
  // Mean over strictly-nonzero entries; 0 when no entry is nonzero.
  Val mean_nonzero(Val m);

  void backward(Val loss);

  const Tensor& value(Val v) const;
  std::span<const float> grad(Val v) const;
  size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    Tensor value;
    std::vector<float> grad;
    std::function<void(Tape&, int)> back;
    bool needs_grad = false;
    Tensor* bound = nullptr;
  };

  Val push(Tensor value, bool needs_grad, std::function<void(Tape&, int)> back);
  Node& node(Val v);
  const Node& node(Val v) const;
  bool needs(Val v) const { return node(v).needs_grad; }
  std::vector<float>& grad_buf(Val v) { return node(v).grad; }
  void check_same_shape(Val a, Val b, const char* op) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace counting
