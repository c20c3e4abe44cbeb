#include "counting/kernels.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace counting::kernels {

ConvDims make_conv_dims(int n, int cin, int h, int w, int cout, int k, int stride, int pad) {
  if (k != 1 && k != 3) throw std::invalid_argument("conv2d: kernel size must be 1 or 3, got " + std::to_string(k));
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if ((h + 2 * pad - k) % stride != 0 || (w + 2 * pad - k) % stride != 0) {
    throw std::invalid_argument("conv2d: padding " + std::to_string(pad) + " does not yield integral output for H=" +
                                std::to_string(h) + " W=" + std::to_string(w) + " k=" + std::to_string(k) +
                                " stride=" + std::to_string(stride));
  }
  ConvDims d;
  d.n = n;
  d.cin = cin;
  d.h = h;
  d.w = w;
  d.cout = cout;
  d.k = k;
  d.stride = stride;
  d.pad = pad;
  d.ho = (h + 2 * pad - k) / stride + 1;
  d.wo = (w + 2 * pad - k) / stride + 1;
  return d;
}

namespace {

inline float conv_out_element(const float* in, const float* wt, const ConvDims& d, int ni, int co, int oh, int ow) {
  float acc = 0.0f;
  const int ih0 = oh * d.stride - d.pad;
  const int iw0 = ow * d.stride - d.pad;
  for (int ci = 0; ci < d.cin; ++ci) {
    const float* in_c = in + (static_cast<size_t>(ni) * d.cin + ci) * d.h * d.w;
    const float* wt_c = wt + (static_cast<size_t>(co) * d.cin + ci) * d.k * d.k;
    for (int kh = 0; kh < d.k; ++kh) {
      const int ih = ih0 + kh;
      if (ih < 0 || ih >= d.h) continue;
      for (int kw = 0; kw < d.k; ++kw) {
        const int iw = iw0 + kw;
        if (iw < 0 || iw >= d.w) continue;
        acc += in_c[ih * d.w + iw] * wt_c[kh * d.k + kw];
      }
    }
  }
  return acc;
}

inline float conv_gin_element(const float* gout, const float* wt, const ConvDims& d, int ni, int ci, int ih, int iw) {
  float acc = 0.0f;
  for (int co = 0; co < d.cout; ++co) {
    const float* go_c = gout + (static_cast<size_t>(ni) * d.cout + co) * d.ho * d.wo;
    const float* wt_c = wt + (static_cast<size_t>(co) * d.cin + ci) * d.k * d.k;
    for (int kh = 0; kh < d.k; ++kh) {
      const int oh_num = ih + d.pad - kh;
      if (oh_num < 0 || oh_num % d.stride != 0) continue;
      const int oh = oh_num / d.stride;
      if (oh >= d.ho) continue;
      for (int kw = 0; kw < d.k; ++kw) {
        const int ow_num = iw + d.pad - kw;
        if (ow_num < 0 || ow_num % d.stride != 0) continue;
        const int ow = ow_num / d.stride;
        if (ow >= d.wo) continue;
        acc += go_c[oh * d.wo + ow] * wt_c[kh * d.k + kw];
      }
    }
  }
  return acc;
}

inline float conv_gwt_element(const float* gout, const float* in, const ConvDims& d, int co, int ci, int kh, int kw) {
  double acc = 0.0;
  for (int ni = 0; ni < d.n; ++ni) {
    const float* go_c = gout + (static_cast<size_t>(ni) * d.cout + co) * d.ho * d.wo;
    const float* in_c = in + (static_cast<size_t>(ni) * d.cin + ci) * d.h * d.w;
    for (int oh = 0; oh < d.ho; ++oh) {
      const int ih = oh * d.stride - d.pad + kh;
      if (ih < 0 || ih >= d.h) continue;
      for (int ow = 0; ow < d.wo; ++ow) {
        const int iw = ow * d.stride - d.pad + kw;
        if (iw < 0 || iw >= d.w) continue;
        acc += static_cast<double>(go_c[oh * d.wo + ow]) * in_c[ih * d.w + iw];
      }
    }
  }
  return static_cast<float>(acc);
}

inline float apply_unary(UnaryOp op, float x) {
  switch (op) {
    case UnaryOp::Relu:
      return x > 0.0f ? x : 0.0f;
    case UnaryOp::Sigmoid:
      return sigmoid_scalar(x);
    case UnaryOp::Neg:
      return -x;
  }
  return 0.0f;
}

inline float apply_binary(BinaryOp op, float a, float b) { return op == BinaryOp::Add ? a + b : a * b; }

inline float bce_element(float x, float t) {
  // max(x,0) - x*t + log1p(exp(-|x|))
  float m = x > 0.0f ? x : 0.0f;
  return m - x * t + std::log1p(std::exp(-std::fabs(x)));
}

}  // namespace

float sigmoid_scalar(float x) {
  if (x >= 0.0f) {
    return 1.0f / (1.0f + std::exp(-x));
  }
  float e = std::exp(x);
  return e / (1.0f + e);
}

void conv2d_forward(const float* in, const float* wt, float* out, const ConvDims& d) {
  const int64_t total = static_cast<int64_t>(d.n) * d.cout * d.ho * d.wo;
#pragma omp parallel for schedule(static)
  for (int64_t idx = 0; idx < total; ++idx) {
    const int ow = static_cast<int>(idx % d.wo);
    const int oh = static_cast<int>((idx / d.wo) % d.ho);
    const int co = static_cast<int>((idx / (static_cast<int64_t>(d.wo) * d.ho)) % d.cout);
    const int ni = static_cast<int>(idx / (static_cast<int64_t>(d.wo) * d.ho * d.cout));
    out[idx] = conv_out_element(in, wt, d, ni, co, oh, ow);
  }
}

void conv2d_forward_serial(const float* in, const float* wt, float* out, const ConvDims& d) {
  int64_t idx = 0;
  for (int ni = 0; ni < d.n; ++ni)
    for (int co = 0; co < d.cout; ++co)
      for (int oh = 0; oh < d.ho; ++oh)
        for (int ow = 0; ow < d.wo; ++ow) out[idx++] = conv_out_element(in, wt, d, ni, co, oh, ow);
}

void conv2d_backward_input(const float* gout, const float* wt, float* gin, const ConvDims& d) {
  const int64_t total = static_cast<int64_t>(d.n) * d.cin * d.h * d.w;
#pragma omp parallel for schedule(static)
  for (int64_t idx = 0; idx < total; ++idx) {
    const int iw = static_cast<int>(idx % d.w);
    const int ih = static_cast<int>((idx / d.w) % d.h);
    const int ci = static_cast<int>((idx / (static_cast<int64_t>(d.w) * d.h)) % d.cin);
    const int ni = static_cast<int>(idx / (static_cast<int64_t>(d.w) * d.h * d.cin));
    gin[idx] += conv_gin_element(gout, wt, d, ni, ci, ih, iw);
  }
}

void conv2d_backward_input_serial(const float* gout, const float* wt, float* gin, const ConvDims& d) {
  int64_t idx = 0;
  for (int ni = 0; ni < d.n; ++ni)
    for (int ci = 0; ci < d.cin; ++ci)
      for (int ih = 0; ih < d.h; ++ih)
        for (int iw = 0; iw < d.w; ++iw, ++idx) gin[idx] += conv_gin_element(gout, wt, d, ni, ci, ih, iw);
}

void conv2d_backward_weight(const float* gout, const float* in, float* gwt, const ConvDims& d) {
  const int64_t total = static_cast<int64_t>(d.cout) * d.cin * d.k * d.k;
#pragma omp parallel for schedule(static)
  for (int64_t idx = 0; idx < total; ++idx) {
    const int kw = static_cast<int>(idx % d.k);
    const int kh = static_cast<int>((idx / d.k) % d.k);
    const int ci = static_cast<int>((idx / (static_cast<int64_t>(d.k) * d.k)) % d.cin);
    const int co = static_cast<int>(idx / (static_cast<int64_t>(d.k) * d.k * d.cin));
    gwt[idx] += conv_gwt_element(gout, in, d, co, ci, kh, kw);
  }
}

void conv2d_backward_weight_serial(const float* gout, const float* in, float* gwt, const ConvDims& d) {
  int64_t idx = 0;
  for (int co = 0; co < d.cout; ++co)
    for (int ci = 0; ci < d.cin; ++ci)
      for (int kh = 0; kh < d.k; ++kh)
        for (int kw = 0; kw < d.k; ++kw, ++idx) gwt[idx] += conv_gwt_element(gout, in, d, co, ci, kh, kw);
}

void unary_map(UnaryOp op, const float* a, float* out, size_t n) {
  const int64_t total = static_cast<int64_t>(n);
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < total; ++i) out[i] = apply_unary(op, a[i]);
}

void unary_map_serial(UnaryOp op, const float* a, float* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = apply_unary(op, a[i]);
}

void binary_map(BinaryOp op, const float* a, const float* b, float* out, size_t n) {
  const int64_t total = static_cast<int64_t>(n);
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < total; ++i) out[i] = apply_binary(op, a[i], b[i]);
}

void binary_map_serial(BinaryOp op, const float* a, const float* b, float* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = apply_binary(op, a[i], b[i]);
}

void bce_map(const float* logit, const float* target, float* out, size_t n) {
  const int64_t total = static_cast<int64_t>(n);
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < total; ++i) out[i] = bce_element(logit[i], target[i]);
}

void bce_map_serial(const float* logit, const float* target, float* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = bce_element(logit[i], target[i]);
}

}  // namespace counting::kernels
