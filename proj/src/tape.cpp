#include "counting/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "counting/kernels.hpp"

namespace counting {

namespace {

std::string dim_str(const std::vector<int>& s) { return shape_to_string(s); }

}  // namespace

Val Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&, int)> back) {
  Node nd;
  nd.value = std::move(value);
  nd.needs_grad = needs_grad;
  nd.back = std::move(back);
  if (needs_grad) nd.grad.assign(nd.value.numel(), 0.0f);
  nodes_.push_back(std::move(nd));
  return Val{static_cast<int32_t>(nodes_.size() - 1)};
}

Tape::Node& Tape::node(Val v) {
  if (!v.valid() || static_cast<size_t>(v.idx) >= nodes_.size()) throw std::logic_error("invalid tape handle");
  return nodes_[v.idx];
}

const Tape::Node& Tape::node(Val v) const {
  if (!v.valid() || static_cast<size_t>(v.idx) >= nodes_.size()) throw std::logic_error("invalid tape handle");
  return nodes_[v.idx];
}

void Tape::check_same_shape(Val a, Val b, const char* op) const {
  if (node(a).value.shape() != node(b).value.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + node(a).value.shape_str() + " vs " +
                                node(b).value.shape_str());
  }
}

Val Tape::leaf(Tensor t, bool requires_grad) { return push(std::move(t), requires_grad, nullptr); }

Val Tape::param(Tensor* p) {
  if (p == nullptr) throw std::invalid_argument("param: null tensor");
  Val v = push(*p, true, nullptr);
  node(v).bound = p;
  return v;
}

const Tensor& Tape::value(Val v) const { return node(v).value; }

std::span<const float> Tape::grad(Val v) const {
  const Node& nd = node(v);
  if (nd.grad.empty()) throw std::logic_error("no gradient recorded for this tensor");
  return nd.grad;
}

Val Tape::conv2d(Val input, Val weight, int stride, int padding) {
  const Tensor& in = node(input).value;
  const Tensor& wt = node(weight).value;
  if (in.rank() != 4)
    throw std::invalid_argument("conv2d: input must be [N,Cin,H,W], got " + in.shape_str());
  if (wt.rank() != 4)
    throw std::invalid_argument("conv2d: weight must be [Cout,Cin,k,k], got " + wt.shape_str());
  if (wt.dim(2) != wt.dim(3))
    throw std::invalid_argument("conv2d: kernel must be square, got " + wt.shape_str());
  if (in.dim(1) != wt.dim(1)) {
    throw std::invalid_argument("conv2d: input channels " + std::to_string(in.dim(1)) +
                                " != weight channels " + std::to_string(wt.dim(1)));
  }
  auto d = kernels::make_conv_dims(in.dim(0), in.dim(1), in.dim(2), in.dim(3), wt.dim(0), wt.dim(2), stride, padding);
  Tensor out({d.n, d.cout, d.ho, d.wo});
  kernels::conv2d_forward(in.data().data(), wt.data().data(), out.data().data(), d);

  bool ng = needs(input) || needs(weight);
  return push(std::move(out), ng, [input, weight, d](Tape& t, int self) {
    const auto& gout = t.nodes_[self].grad;
    Node& ni = t.node(input);
    Node& nw = t.node(weight);
    if (ni.needs_grad)
      kernels::conv2d_backward_input(gout.data(), nw.value.data().data(), ni.grad.data(), d);
    if (nw.needs_grad)
      kernels::conv2d_backward_weight(gout.data(), ni.value.data().data(), nw.grad.data(), d);
  });
}

Val Tape::batchnorm2d(Val input, Val gamma, Val beta, BnBuffers* stats, BnMode mode, float eps, float momentum) {
  const Tensor& x = node(input).value;
  if (x.rank() != 4) throw std::invalid_argument("batchnorm2d: input must be [N,C,H,W], got " + x.shape_str());
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Tensor& g = node(gamma).value;
  const Tensor& b = node(beta).value;
  if (g.numel() != static_cast<size_t>(c) || b.numel() != static_cast<size_t>(c))
    throw std::invalid_argument("batchnorm2d: gamma/beta must have C=" + std::to_string(c) + " elements");
  if (stats == nullptr || stats->running_mean.size() != static_cast<size_t>(c))
    throw std::invalid_argument("batchnorm2d: running stats missing or wrong channel count");
  if (eps <= 0.0f) throw std::invalid_argument("batchnorm2d: eps must be positive");
  const size_t m = static_cast<size_t>(n) * h * w;
  if (mode == BnMode::Train && m < 2)
    throw std::invalid_argument("batchnorm2d: train mode needs at least 2 elements per channel, got " +
                                std::to_string(m));

  const size_t plane = static_cast<size_t>(h) * w;
  Tensor out({n, c, h, w});
  std::vector<float> mean(c), invstd(c);

  if (mode == BnMode::Train) {
    for (int ci = 0; ci < c; ++ci) {
      double s = 0.0, s2 = 0.0;
      for (int ni = 0; ni < n; ++ni) {
        const float* p = x.data().data() + (static_cast<size_t>(ni) * c + ci) * plane;
        for (size_t i = 0; i < plane; ++i) {
          s += p[i];
          s2 += static_cast<double>(p[i]) * p[i];
        }
      }
      const double mu = s / static_cast<double>(m);
      const double var = s2 / static_cast<double>(m) - mu * mu;  // biased, for normalization
      mean[ci] = static_cast<float>(mu);
      invstd[ci] = static_cast<float>(1.0 / std::sqrt(std::max(var, 0.0) + eps));
      const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
      stats->running_mean[ci] = static_cast<float>((1.0 - momentum) * stats->running_mean[ci] + momentum * mu);
      stats->running_var[ci] = static_cast<float>((1.0 - momentum) * stats->running_var[ci] + momentum * unbiased);
    }
  } else {
    for (int ci = 0; ci < c; ++ci) {
      mean[ci] = stats->running_mean[ci];
      invstd[ci] = static_cast<float>(1.0 / std::sqrt(static_cast<double>(stats->running_var[ci]) + eps));
    }
  }

  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      const float* px = x.data().data() + (static_cast<size_t>(ni) * c + ci) * plane;
      float* po = out.data().data() + (static_cast<size_t>(ni) * c + ci) * plane;
      const float gm = g[ci], bt = b[ci], mu = mean[ci], is = invstd[ci];
      for (size_t i = 0; i < plane; ++i) po[i] = (px[i] - mu) * is * gm + bt;
    }
  }

  bool ng = needs(input) || needs(gamma) || needs(beta);
  const bool train = mode == BnMode::Train;
  return push(std::move(out), ng,
              [input, gamma, beta, mean, invstd, n, c, plane, m, train](Tape& t, int self) {
                const auto& gy = t.nodes_[self].grad;
                Node& nx = t.node(input);
                Node& ngm = t.node(gamma);
                Node& nbt = t.node(beta);
                const float* px = nx.value.data().data();
                for (int ci = 0; ci < c; ++ci) {
                  const float mu = mean[ci], is = invstd[ci], gm = ngm.value[ci];
                  double sum_gy = 0.0, sum_gy_xhat = 0.0;
                  for (int ni = 0; ni < n; ++ni) {
                    const size_t base = (static_cast<size_t>(ni) * c + ci) * plane;
                    for (size_t i = 0; i < plane; ++i) {
                      const float xhat = (px[base + i] - mu) * is;
                      sum_gy += gy[base + i];
                      sum_gy_xhat += static_cast<double>(gy[base + i]) * xhat;
                    }
                  }
                  if (nbt.needs_grad) nbt.grad[ci] += static_cast<float>(sum_gy);
                  if (ngm.needs_grad) ngm.grad[ci] += static_cast<float>(sum_gy_xhat);
                  if (nx.needs_grad) {
                    // train mode couples all elements of a channel through
                    // the batch statistics; eval stats are constants
                    const double mg = train ? sum_gy / static_cast<double>(m) : 0.0;
                    const double mgx = train ? sum_gy_xhat / static_cast<double>(m) : 0.0;
                    for (int ni = 0; ni < n; ++ni) {
                      const size_t base = (static_cast<size_t>(ni) * c + ci) * plane;
                      for (size_t i = 0; i < plane; ++i) {
                        const float xhat = (px[base + i] - mu) * is;
                        nx.grad[base + i] += static_cast<float>(gm * is * (gy[base + i] - mg - xhat * mgx));
                      }
                    }
                  }
                }
              });
}

Val Tape::add(Val a, Val b) {
  check_same_shape(a, b, "add");
  const Tensor& ta = node(a).value;
  const Tensor& tb = node(b).value;
  Tensor out(ta.shape());
  kernels::binary_map(kernels::BinaryOp::Add, ta.data().data(), tb.data().data(), out.data().data(), out.numel());
  bool ng = needs(a) || needs(b);
  return push(std::move(out), ng, [a, b](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    Node& na = t.node(a);
    Node& nb = t.node(b);
    if (na.needs_grad)
      for (size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i];
    if (nb.needs_grad)
      for (size_t i = 0; i < g.size(); ++i) nb.grad[i] += g[i];
  });
}

Val Tape::mul(Val a, Val b) {
  check_same_shape(a, b, "mul");
  const Tensor& ta = node(a).value;
  const Tensor& tb = node(b).value;
  Tensor out(ta.shape());
  kernels::binary_map(kernels::BinaryOp::Mul, ta.data().data(), tb.data().data(), out.data().data(), out.numel());
  bool ng = needs(a) || needs(b);
  return push(std::move(out), ng, [a, b](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    Node& na = t.node(a);
    Node& nb = t.node(b);
    if (na.needs_grad)
      for (size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i] * nb.value[i];
    if (nb.needs_grad)
      for (size_t i = 0; i < g.size(); ++i) nb.grad[i] += g[i] * na.value[i];
  });
}

Val Tape::relu(Val a) {
  const Tensor& ta = node(a).value;
  Tensor out(ta.shape());
  kernels::unary_map(kernels::UnaryOp::Relu, ta.data().data(), out.data().data(), out.numel());
  return push(std::move(out), needs(a), [a](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    Node& na = t.node(a);
    if (!na.needs_grad) return;
    for (size_t i = 0; i < g.size(); ++i)
      if (na.value[i] > 0.0f) na.grad[i] += g[i];
  });
}

Val Tape::sigmoid(Val a) {
  const Tensor& ta = node(a).value;
  Tensor out(ta.shape());
  kernels::unary_map(kernels::UnaryOp::Sigmoid, ta.data().data(), out.data().data(), out.numel());
  return push(std::move(out), needs(a), [a](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    const Tensor& y = t.nodes_[self].value;
    Node& na = t.node(a);
    if (!na.needs_grad) return;
    for (size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i] * y[i] * (1.0f - y[i]);
  });
}

Val Tape::log(Val a) {
  const Tensor& ta = node(a).value;
  Tensor out(ta.shape());
  for (size_t i = 0; i < ta.numel(); ++i) {
    if (ta[i] <= 0.0f)
      throw std::domain_error("log: input must be strictly positive, element " + std::to_string(i) + " is " +
                              std::to_string(ta[i]));
    out[i] = std::log(ta[i]);
  }
  return push(std::move(out), needs(a), [a](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    Node& na = t.node(a);
    if (!na.needs_grad) return;
    for (size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i] / na.value[i];
  });
}

Val Tape::neg(Val a) {
  const Tensor& ta = node(a).value;
  Tensor out(ta.shape());
  kernels::unary_map(kernels::UnaryOp::Neg, ta.data().data(), out.data().data(), out.numel());
  return push(std::move(out), needs(a), [a](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    Node& na = t.node(a);
    if (!na.needs_grad) return;
    for (size_t i = 0; i < g.size(); ++i) na.grad[i] -= g[i];
  });
}

Val Tape::reduce(Val a, ReduceOp op, const std::vector<int>& axes) {
  const Tensor& ta = node(a).value;
  const auto& shp = ta.shape();
  std::vector<bool> reduced(shp.size(), axes.empty());
  for (int ax : axes) {
    if (ax < 0 || static_cast<size_t>(ax) >= shp.size())
      throw std::invalid_argument("reduce: axis " + std::to_string(ax) + " out of range for " + ta.shape_str());
    reduced[ax] = true;
  }
  std::vector<int> out_shape;
  size_t reduced_count = 1;
  for (size_t d = 0; d < shp.size(); ++d) {
    if (reduced[d])
      reduced_count *= static_cast<size_t>(shp[d]);
    else
      out_shape.push_back(shp[d]);
  }
  if (out_shape.empty()) out_shape.push_back(1);

  // Map each input offset to its output offset once; reused by backward.
  Tensor out(out_shape);
  std::vector<double> acc(out.numel(), 0.0);
  std::vector<int> idx(shp.size(), 0);
  const size_t n_in = ta.numel();
  std::vector<size_t> out_of(n_in);
  for (size_t off = 0; off < n_in; ++off) {
    size_t o = 0;
    for (size_t d = 0; d < shp.size(); ++d)
      if (!reduced[d]) o = o * static_cast<size_t>(shp[d]) + static_cast<size_t>(idx[d]);
    out_of[off] = o;
    acc[o] += ta[off];
    for (int d = static_cast<int>(shp.size()) - 1; d >= 0; --d) {
      if (++idx[d] < shp[d]) break;
      idx[d] = 0;
    }
  }
  const double denom = op == ReduceOp::Mean ? static_cast<double>(reduced_count) : 1.0;
  for (size_t o = 0; o < acc.size(); ++o) out[o] = static_cast<float>(acc[o] / denom);

  return push(std::move(out), needs(a), [a, out_of = std::move(out_of), denom](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    Node& na = t.node(a);
    if (!na.needs_grad) return;
    const float inv = static_cast<float>(1.0 / denom);
    for (size_t i = 0; i < out_of.size(); ++i) na.grad[i] += g[out_of[i]] * inv;
  });
}

Val Tape::fully_connected(Val x, Val weight, Val bias) {
  const Tensor& tx = node(x).value;
  const Tensor& tw = node(weight).value;
  const Tensor& tb = node(bias).value;
  if (tx.rank() != 1 || tw.rank() != 2 || tb.rank() != 1)
    throw std::invalid_argument("fully_connected: expected x[n], W[m,n], b[m]");
  const int n = tx.dim(0), mo = tw.dim(0);
  if (tw.dim(1) != n)
    throw std::invalid_argument("fully_connected: W columns " + std::to_string(tw.dim(1)) + " != x length " +
                                std::to_string(n));
  if (tb.dim(0) != mo)
    throw std::invalid_argument("fully_connected: bias length " + std::to_string(tb.dim(0)) + " != W rows " +
                                std::to_string(mo));
  Tensor out({mo});
  for (int i = 0; i < mo; ++i) {
    double acc = tb[i];
    for (int j = 0; j < n; ++j) acc += static_cast<double>(tw[static_cast<size_t>(i) * n + j]) * tx[j];
    out[i] = static_cast<float>(acc);
  }
  bool ng = needs(x) || needs(weight) || needs(bias);
  return push(std::move(out), ng, [x, weight, bias, n, mo](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    Node& nx = t.node(x);
    Node& nw = t.node(weight);
    Node& nb = t.node(bias);
    for (int i = 0; i < mo; ++i) {
      const float gi = g[i];
      if (nb.needs_grad) nb.grad[i] += gi;
      for (int j = 0; j < n; ++j) {
        if (nw.needs_grad) nw.grad[static_cast<size_t>(i) * n + j] += gi * nx.value[j];
        if (nx.needs_grad) nx.grad[j] += gi * nw.value[static_cast<size_t>(i) * n + j];
      }
    }
  });
}

Val Tape::softmax(Val x) {
  const Tensor& tx = node(x).value;
  if (tx.rank() != 1) throw std::invalid_argument("softmax: expected 1-d input, got " + tx.shape_str());
  const size_t n = tx.numel();
  float mx = tx[0];
  for (size_t i = 1; i < n; ++i) mx = std::max(mx, tx[i]);
  Tensor out(tx.shape());
  double z = 0.0;
  for (size_t i = 0; i < n; ++i) {
    out[i] = std::exp(tx[i] - mx);
    z += out[i];
  }
  for (size_t i = 0; i < n; ++i) out[i] = static_cast<float>(out[i] / z);
  return push(std::move(out), needs(x), [x](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    const Tensor& y = t.nodes_[self].value;
    Node& nx = t.node(x);
    if (!nx.needs_grad) return;
    double dot = 0.0;
    for (size_t i = 0; i < g.size(); ++i) dot += static_cast<double>(g[i]) * y[i];
    for (size_t i = 0; i < g.size(); ++i) nx.grad[i] += y[i] * (g[i] - static_cast<float>(dot));
  });
}

Val Tape::logistic_bce(Val logit, Val target) {
  check_same_shape(logit, target, "logistic_bce");
  const Tensor& tl = node(logit).value;
  const Tensor& tt = node(target).value;
  for (size_t i = 0; i < tt.numel(); ++i) {
    if (tt[i] < 0.0f || tt[i] > 1.0f)
      throw std::invalid_argument("logistic_bce: target element " + std::to_string(i) + " = " +
                                  std::to_string(tt[i]) + " outside [0,1]");
  }
  Tensor out(tl.shape());
  kernels::bce_map(tl.data().data(), tt.data().data(), out.data().data(), out.numel());
  bool ng = needs(logit) || needs(target);
  return push(std::move(out), ng, [logit, target](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    Node& nl = t.node(logit);
    Node& nt = t.node(target);
    if (nl.needs_grad)
      for (size_t i = 0; i < g.size(); ++i)
        nl.grad[i] += g[i] * (kernels::sigmoid_scalar(nl.value[i]) - nt.value[i]);
    if (nt.needs_grad)
      for (size_t i = 0; i < g.size(); ++i) nt.grad[i] += g[i] * (-nl.value[i]);
  });
}

Val Tape::scale(Val a, float k) {
  const Tensor& ta = node(a).value;
  Tensor out(ta.shape());
  for (size_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] * k;
  return push(std::move(out), needs(a), [a, k](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    Node& na = t.node(a);
    if (!na.needs_grad) return;
    for (size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i] * k;
  });
}

Val Tape::add_scalar(Val a, float k) {
  const Tensor& ta = node(a).value;
  Tensor out(ta.shape());
  for (size_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] + k;
  return push(std::move(out), needs(a), [a](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    Node& na = t.node(a);
    if (!na.needs_grad) return;
    for (size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i];
  });
}

Val Tape::detach(Val a) { return push(node(a).value, false, nullptr); }

Val Tape::reshape(Val a, std::vector<int> shape) {
  const Tensor& ta = node(a).value;
  if (shape_numel(shape) != ta.numel())
    throw std::invalid_argument("reshape: element count mismatch " + ta.shape_str() + " -> " + dim_str(shape));
  Tensor out(std::move(shape), std::vector<float>(ta.data().begin(), ta.data().end()));
  return push(std::move(out), needs(a), [a](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    Node& na = t.node(a);
    if (!na.needs_grad) return;
    for (size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i];
  });
}

Val Tape::select_nc(Val v, int n, int c) {
  const Tensor& tv = node(v).value;
  if (tv.rank() != 4) throw std::invalid_argument("select_nc: expected [N,C,H,W], got " + tv.shape_str());
  if (n < 0 || n >= tv.dim(0) || c < 0 || c >= tv.dim(1))
    throw std::invalid_argument("select_nc: index (" + std::to_string(n) + "," + std::to_string(c) +
                                ") out of range for " + tv.shape_str());
  const size_t plane = static_cast<size_t>(tv.dim(2)) * tv.dim(3);
  const size_t base = (static_cast<size_t>(n) * tv.dim(1) + c) * plane;
  Tensor out({tv.dim(2), tv.dim(3)});
  std::copy_n(tv.data().data() + base, plane, out.data().data());
  return push(std::move(out), needs(v), [v, base](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    Node& nv = t.node(v);
    if (!nv.needs_grad) return;
    for (size_t i = 0; i < g.size(); ++i) nv.grad[base + i] += g[i];
  });
}

Val Tape::row(Val m, int r) {
  const Tensor& tm = node(m).value;
  if (tm.rank() < 2) throw std::invalid_argument("row: expected rank >= 2, got " + tm.shape_str());
  if (r < 0 || r >= tm.dim(0))
    throw std::invalid_argument("row: index " + std::to_string(r) + " out of range for " + tm.shape_str());
  const size_t stride = tm.numel() / static_cast<size_t>(tm.dim(0));
  std::vector<int> out_shape(tm.shape().begin() + 1, tm.shape().end());
  Tensor out(out_shape);
  const size_t base = static_cast<size_t>(r) * stride;
  std::copy_n(tm.data().data() + base, stride, out.data().data());
  return push(std::move(out), needs(m), [m, base](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    Node& nm = t.node(m);
    if (!nm.needs_grad) return;
    for (size_t i = 0; i < g.size(); ++i) nm.grad[base + i] += g[i];
  });
}

Val Tape::stack0(std::span<const Val> parts) {
  if (parts.empty()) throw std::invalid_argument("stack0: no tensors given");
  const Tensor& first = node(parts[0]).value;
  for (const Val& p : parts)
    if (node(p).value.shape() != first.shape())
      throw std::invalid_argument("stack0: shape mismatch " + node(p).value.shape_str() + " vs " + first.shape_str());
  std::vector<int> out_shape;
  out_shape.push_back(static_cast<int>(parts.size()));
  out_shape.insert(out_shape.end(), first.shape().begin(), first.shape().end());
  Tensor out(out_shape);
  const size_t stride = first.numel();
  bool ng = false;
  std::vector<Val> owned(parts.begin(), parts.end());
  for (size_t i = 0; i < owned.size(); ++i) {
    std::copy_n(node(owned[i]).value.data().data(), stride, out.data().data() + i * stride);
    ng = ng || needs(owned[i]);
  }
  return push(std::move(out), ng, [owned = std::move(owned), stride](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    for (size_t i = 0; i < owned.size(); ++i) {
      Node& np = t.node(owned[i]);
      if (!np.needs_grad) continue;
      for (size_t j = 0; j < stride; ++j) np.grad[j] += g[i * stride + j];
    }
  });
}

Val Tape::mul_bcast_channel(Val a, Val b) {
  const Tensor& ta = node(a).value;
  const Tensor& tb = node(b).value;
  if (ta.rank() != 4 || tb.rank() != 4 || tb.dim(1) != 1 || ta.dim(0) != tb.dim(0) || ta.dim(2) != tb.dim(2) ||
      ta.dim(3) != tb.dim(3))
    throw std::invalid_argument("mul_bcast_channel: need a[N,C,H,W] and b[N,1,H,W], got " + ta.shape_str() + " and " +
                                tb.shape_str());
  const int n = ta.dim(0), c = ta.dim(1);
  const size_t plane = static_cast<size_t>(ta.dim(2)) * ta.dim(3);
  Tensor out(ta.shape());
  for (int ni = 0; ni < n; ++ni) {
    const float* pb = tb.data().data() + static_cast<size_t>(ni) * plane;
    for (int ci = 0; ci < c; ++ci) {
      const size_t base = (static_cast<size_t>(ni) * c + ci) * plane;
      for (size_t i = 0; i < plane; ++i) out[base + i] = ta[base + i] * pb[i];
    }
  }
  bool ng = needs(a) || needs(b);
  return push(std::move(out), ng, [a, b, n, c, plane](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    Node& na = t.node(a);
    Node& nb = t.node(b);
    for (int ni = 0; ni < n; ++ni) {
      const size_t bbase = static_cast<size_t>(ni) * plane;
      for (int ci = 0; ci < c; ++ci) {
        const size_t base = (static_cast<size_t>(ni) * c + ci) * plane;
        for (size_t i = 0; i < plane; ++i) {
          if (na.needs_grad) na.grad[base + i] += g[base + i] * nb.value[bbase + i];
          if (nb.needs_grad) nb.grad[bbase + i] += g[base + i] * na.value[base + i];
        }
      }
    }
  });
}

Val Tape::peak_map(Val m, int radius) {
  const Tensor& tm = node(m).value;
  if (tm.rank() != 2) throw std::invalid_argument("peak_map: expected [H,W], got " + tm.shape_str());
  if (radius < 1) throw std::invalid_argument("peak_map: radius must be >= 1");
  const int h = tm.dim(0), w = tm.dim(1);
  Tensor out({h, w});
  std::vector<size_t> peaks;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const float v = tm[static_cast<size_t>(i) * w + j];
      bool is_peak = true;
      for (int di = -radius; di <= radius && is_peak; ++di) {
        for (int dj = -radius; dj <= radius; ++dj) {
          if (di == 0 && dj == 0) continue;
          const int ii = i + di, jj = j + dj;
          if (ii < 0 || ii >= h || jj < 0 || jj >= w) continue;
          if (!(v > tm[static_cast<size_t>(ii) * w + jj])) {
            is_peak = false;
            break;
          }
        }
      }
      if (is_peak) {
        out[static_cast<size_t>(i) * w + j] = v;
        peaks.push_back(static_cast<size_t>(i) * w + j);
      }
    }
  }
  return push(std::move(out), needs(m), [m, peaks = std::move(peaks)](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    Node& nm = t.node(m);
    if (!nm.needs_grad) return;
    for (size_t p : peaks) nm.grad[p] += g[p];
  });
}

Val Tape::mean_nonzero(Val m) {
  const Tensor& tm = node(m).value;
  std::vector<size_t> nz;
  double acc = 0.0;
  for (size_t i = 0; i < tm.numel(); ++i) {
    if (tm[i] != 0.0f) {
      nz.push_back(i);
      acc += tm[i];
    }
  }
  Tensor out({1});
  out[0] = nz.empty() ? 0.0f : static_cast<float>(acc / static_cast<double>(nz.size()));
  return push(std::move(out), needs(m), [m, nz = std::move(nz)](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    Node& nm = t.node(m);
    if (!nm.needs_grad || nz.empty()) return;
    const float gi = g[0] / static_cast<float>(nz.size());
    for (size_t i : nz) nm.grad[i] += gi;
  });
}

void Tape::backward(Val loss) {
  if (consumed_) throw std::logic_error("backward: tape already consumed");
  consumed_ = true;
  Node& ln = node(loss);
  if (ln.value.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + ln.value.shape_str());
  if (!ln.needs_grad) throw std::invalid_argument("backward: loss does not depend on any requires_grad tensor");
  ln.grad[0] = 1.0f;
  for (int i = loss.idx; i >= 0; --i) {
    Node& nd = nodes_[i];
    if (!nd.needs_grad || !nd.back) continue;
    nd.back(*this, i);
  }
  for (Node& nd : nodes_) {
    if (nd.bound != nullptr && nd.bound->requires_grad()) {
      auto dst = nd.bound->grad();
      for (size_t i = 0; i < dst.size(); ++i) dst[i] += nd.grad[i];
    }
  }
}

}  // namespace counting
