#pragma once

#include <cstddef>

namespace counting::kernels {

// Shape bundle for the 2-d cross-correlation kernels.
// input [n, cin, h, w], weight [cout, cin, k, k], output [n, cout, ho, wo].
struct ConvDims {
  int n, cin, h, w;
  int cout, k, stride, pad;
  int ho, wo;
};

ConvDims make_conv_dims(int n, int cin, int h, int w, int cout, int k, int stride, int pad);

// OpenMP kernels parallelize over independent output elements only; each
// element keeps a fixed serial accumulation order, so results are
// bit-identical to the *_serial twins at any thread count.
void conv2d_forward(const float* in, const float* wt, float* out, const ConvDims& d);
void conv2d_forward_serial(const float* in, const float* wt, float* out, const ConvDims& d);

void conv2d_backward_input(const float* gout, const float* wt, float* gin, const ConvDims& d);
void conv2d_backward_input_serial(const float* gout, const float* wt, float* gin, const ConvDims& d);

void conv2d_backward_weight(const float* gout, const float* in, float* gwt, const ConvDims& d);
void conv2d_backward_weight_serial(const float* gout, const float* in, float* gwt, const ConvDims& d);

enum class UnaryOp { Relu, Sigmoid, Neg };

void unary_map(UnaryOp op, const float* a, float* out, size_t n);
void unary_map_serial(UnaryOp op, const float* a, float* out, size_t n);

enum class BinaryOp { Add, Mul };

void binary_map(BinaryOp op, const float* a, const float* b, float* out, size_t n);
void binary_map_serial(BinaryOp op, const float* a, const float* b, float* out, size_t n);

// Per-element stable logistic BCE: max(x,0) - x*t + log(1+exp(-|x|)).
void bce_map(const float* logit, const float* target, float* out, size_t n);
void bce_map_serial(const float* logit, const float* target, float* out, size_t n);

float sigmoid_scalar(float x);

}  // namespace counting::kernels
