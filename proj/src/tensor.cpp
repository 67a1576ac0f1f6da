#include "caim/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "caim/errors.hpp"
#include "json.hpp"

namespace caim {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

}  // namespace detail

namespace {

using detail::Node;

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite value in output");
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (!t.defined()) throw ConfigError(std::string(op) + ": undefined " + what);
  if (t.rank() != rank) {
    throw ConfigError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                      ", got " + shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                      shape_to_string(b.shape()));
  }
}

// Parent i of a node, or nullptr when it does not take gradients.
Node* grad_target(Node& self, std::size_t i) {
  Node* p = self.parents[i].get();
  return p->requires_grad ? p : nullptr;
}

}  // namespace

// ---- Tensor -------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> data(shape_numel(shape), value);
  return from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw ConfigError("Tensor: shape " + shape_to_string(shape) + " does not match " +
                      std::to_string(data.size()) + " values");
  }
  check_finite(data, "Tensor");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_data({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ConfigError("Tensor::dim: axis out of range");
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->value.size(); }

std::span<const double> Tensor::data() const { return node_->value; }

std::span<double> Tensor::mutable_data() {
  if (!node_->is_leaf()) throw GraphError("mutable_data: tensor is not a leaf");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ConfigError("item: tensor has " + std::to_string(numel()) + " values");
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!node_->is_leaf()) throw GraphError("set_requires_grad: only leaves can be toggled");
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
  return *this;
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

void Tensor::backward() const {
  if (!defined()) throw GraphError("backward: undefined tensor");
  if (numel() != 1) throw GraphError("backward: loss must be a scalar, got " + shape_to_string(shape()));
  if (!node_->requires_grad) throw GraphError("backward: loss does not depend on any requires_grad tensor");
  if (node_->consumed) throw GraphError("backward: graph was already consumed by a previous backward");

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) {
        if (p->consumed) throw GraphError("backward: graph reuse after backward without reset");
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    check_finite(n->grad, "backward");
    if (n->is_leaf()) continue;
    if (!n->grad.empty() && n->backward_fn) n->backward_fn(*n);
  }
  for (Node* n : order) {
    if (n->is_leaf()) continue;
    n->consumed = true;
    n->backward_fn = nullptr;
    n->parents.clear();
    n->grad.clear();
  }
}

Tensor Tensor::clone() const {
  auto node = std::make_shared<Node>();
  node->shape = node_->shape;
  node->value = node_->value;
  node->requires_grad = node_->requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::detach() const {
  Tensor t = clone();
  t.node_->requires_grad = false;
  return t;
}

bool Tensor::bitwise_equal(const Tensor& other) const {
  if (shape() != other.shape()) return false;
  return std::memcmp(node_->value.data(), other.node_->value.data(), numel() * sizeof(double)) == 0;
}

Tensor Tensor::make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                           std::function<void(Node&)> backward_fn) {
  check_finite(value, "op");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  const bool needs = std::any_of(parents.begin(), parents.end(),
                                 [](const Tensor& p) { return p.node_->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

// ---- conv / dense -------------------------------------------------------

namespace {

struct ConvGeometry {
  std::size_t batch, cin, h, w, cout, oh, ow, stride, padding;

  std::size_t rows() const { return cin * 9; }               // im2col K
  std::size_t cols() const { return batch * oh * ow; }       // im2col N
};

// col[(ci*9 + ky*3 + kx), (b*oh + oy)*ow + ox] = padded input tap, 0 outside.
void im2col(const ConvGeometry& g, const double* in, std::vector<double>& col) {
  col.assign(g.rows() * g.cols(), 0.0);
  const std::size_t n = g.cols(), plane = g.oh * g.ow;
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    for (std::size_t k = 0; k < 9; ++k) {
      const auto ky = static_cast<std::ptrdiff_t>(k / 3), kx = static_cast<std::ptrdiff_t>(k % 3);
      double* row = &col[(ci * 9 + k) * n];
      for (std::size_t b = 0; b < g.batch; ++b) {
        const double* src = in + (b * g.cin + ci) * g.h * g.w;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride) + ky - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* dst = row + b * plane + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride) + kx - pad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ox] = src[iy * static_cast<std::ptrdiff_t>(g.w) + ix];
          }
        }
      }
    }
  }
}

// Scatter-add of a column matrix back onto the input layout.
void col2im(const ConvGeometry& g, const std::vector<double>& col, double* in) {
  const std::size_t n = g.cols(), plane = g.oh * g.ow;
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    for (std::size_t k = 0; k < 9; ++k) {
      const auto ky = static_cast<std::ptrdiff_t>(k / 3), kx = static_cast<std::ptrdiff_t>(k % 3);
      const double* row = &col[(ci * 9 + k) * n];
      for (std::size_t b = 0; b < g.batch; ++b) {
        double* dst = in + (b * g.cin + ci) * g.h * g.w;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride) + ky - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          const double* src = row + b * plane + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride) + kx - pad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[iy * static_cast<std::ptrdiff_t>(g.w) + ix] += src[ox];
          }
        }
      }
    }
  }
}

// Four independent partial sums so the loop vectorizes without reassociation flags.
double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

}  // namespace

Tensor conv2d_3x3(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
                  std::size_t padding) {
  require_rank(input, 4, "conv2d_3x3", "input");
  require_rank(weight, 4, "conv2d_3x3", "weight");
  require_rank(bias, 1, "conv2d_3x3", "bias");
  if (stride != 1 && stride != 2) throw ConfigError("conv2d_3x3: stride must be 1 or 2");
  if (weight.dim(2) != 3 || weight.dim(3) != 3) throw ConfigError("conv2d_3x3: kernel must be 3x3");
  if (weight.dim(1) != input.dim(1)) {
    throw ConfigError("conv2d_3x3: input has " + std::to_string(input.dim(1)) +
                      " channels, weight expects " + std::to_string(weight.dim(1)));
  }
  if (bias.dim(0) != weight.dim(0)) throw ConfigError("conv2d_3x3: bias size != output channels");
  const std::size_t h = input.dim(2), w = input.dim(3);
  if (h + 2 * padding < 3 || w + 2 * padding < 3) {
    throw ConfigError("conv2d_3x3: spatial size too small for a 3x3 kernel");
  }
  ConvGeometry g{input.dim(0), input.dim(1), h, w, weight.dim(0),
                 (h + 2 * padding - 3) / stride + 1, (w + 2 * padding - 3) / stride + 1, stride, padding};

  std::vector<double> col;
  im2col(g, input.data().data(), col);
  const auto wt = weight.data();
  const auto bs = bias.data();
  const std::size_t kdim = g.rows(), n = g.cols(), plane = g.oh * g.ow;

  // prod[co, n] = W[co, :] . col[:, n]
  std::vector<double> prod(g.cout * n, 0.0);
  for (std::size_t co = 0; co < g.cout; ++co) {
    double* dst = &prod[co * n];
    for (std::size_t k = 0; k < kdim; ++k) {
      const double kv = wt[co * kdim + k];
      const double* src = &col[k * n];
      for (std::size_t j = 0; j < n; ++j) dst[j] += kv * src[j];
    }
  }
  std::vector<double> out(g.batch * g.cout * plane);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t co = 0; co < g.cout; ++co) {
      const double* src = &prod[co * n + b * plane];
      double* dst = &out[(b * g.cout + co) * plane];
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + bs[co];
    }

  return Tensor::make_result(
      {g.batch, g.cout, g.oh, g.ow}, std::move(out), {input, weight, bias}, [g](Node& self) {
        const std::size_t kdim = g.rows(), n = g.cols(), plane = g.oh * g.ow;
        Node* gin_node = grad_target(self, 0);
        Node* gw_node = grad_target(self, 1);
        Node* gb_node = grad_target(self, 2);
        // Output gradient regrouped as [co, b*plane].
        std::vector<double> go(g.cout * n);
        for (std::size_t b = 0; b < g.batch; ++b)
          for (std::size_t co = 0; co < g.cout; ++co)
            std::copy_n(&self.grad[(b * g.cout + co) * plane], plane, &go[co * n + b * plane]);
        if (gb_node) {
          auto& gb = gb_node->grad_buffer();
          for (std::size_t co = 0; co < g.cout; ++co) gb[co] += std::accumulate(&go[co * n], &go[co * n] + n, 0.0);
        }
        if (gw_node) {
          std::vector<double> col;
          im2col(g, self.parents[0]->value.data(), col);
          auto& gw = gw_node->grad_buffer();
          for (std::size_t co = 0; co < g.cout; ++co)
            for (std::size_t k = 0; k < kdim; ++k) gw[co * kdim + k] += dot(&go[co * n], &col[k * n], n);
        }
        if (gin_node) {
          const auto& wt = self.parents[1]->value;
          std::vector<double> gcol(kdim * n, 0.0);
          for (std::size_t co = 0; co < g.cout; ++co) {
            const double* src = &go[co * n];
            for (std::size_t k = 0; k < kdim; ++k) {
              const double kv = wt[co * kdim + k];
              double* dst = &gcol[k * n];
              for (std::size_t j = 0; j < n; ++j) dst[j] += kv * src[j];
            }
          }
          col2im(g, gcol, gin_node->grad_buffer().data());
        }
      });
}

Tensor relu(const Tensor& input) {
  const auto in = input.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  return Tensor::make_result(input.shape(), std::move(out), {input}, [](Node& self) {
    Node* p = grad_target(self, 0);
    if (!p) return;
    auto& gin = p->grad_buffer();
    for (std::size_t i = 0; i < gin.size(); ++i) {
      if (p->value[i] > 0.0) gin[i] += self.grad[i];
    }
  });
}

Tensor global_avg_pool(const Tensor& input) {
  require_rank(input, 4, "global_avg_pool", "input");
  const std::size_t bc = input.dim(0) * input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  if (plane == 0) throw ConfigError("global_avg_pool: empty spatial extent");
  const auto in = input.data();
  std::vector<double> out(bc);
  for (std::size_t i = 0; i < bc; ++i) {
    out[i] = std::accumulate(&in[i * plane], &in[i * plane] + plane, 0.0) / static_cast<double>(plane);
  }
  return Tensor::make_result({input.dim(0), input.dim(1)}, std::move(out), {input},
                             [bc, plane](Node& self) {
                               Node* p = grad_target(self, 0);
                               if (!p) return;
                               auto& gin = p->grad_buffer();
                               const double inv = 1.0 / static_cast<double>(plane);
                               for (std::size_t i = 0; i < bc; ++i) {
                                 const double gv = self.grad[i] * inv;
                                 for (std::size_t j = 0; j < plane; ++j) gin[i * plane + j] += gv;
                               }
                             });
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "linear", "input");
  require_rank(weight, 2, "linear", "weight");
  require_rank(bias, 1, "linear", "bias");
  const std::size_t batch = input.dim(0), din = input.dim(1), dout = weight.dim(0);
  if (weight.dim(1) != din) {
    throw ConfigError("linear: input width " + std::to_string(din) + " != weight width " +
                      std::to_string(weight.dim(1)));
  }
  if (bias.dim(0) != dout) throw ConfigError("linear: bias size != output width");
  const auto x = input.data();
  const auto w = weight.data();
  const auto bvec = bias.data();
  std::vector<double> out(batch * dout);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < dout; ++o) {
      double acc = bvec[o];
      for (std::size_t i = 0; i < din; ++i) acc += x[b * din + i] * w[o * din + i];
      out[b * dout + o] = acc;
    }
  }
  return Tensor::make_result({batch, dout}, std::move(out), {input, weight, bias},
                             [batch, din, dout](Node& self) {
                               const auto& x = self.parents[0]->value;
                               const auto& w = self.parents[1]->value;
                               const auto& g = self.grad;
                               if (Node* p = grad_target(self, 0)) {
                                 auto& gx = p->grad_buffer();
                                 for (std::size_t b = 0; b < batch; ++b)
                                   for (std::size_t o = 0; o < dout; ++o)
                                     for (std::size_t i = 0; i < din; ++i)
                                       gx[b * din + i] += g[b * dout + o] * w[o * din + i];
                               }
                               if (Node* p = grad_target(self, 1)) {
                                 auto& gw = p->grad_buffer();
                                 for (std::size_t b = 0; b < batch; ++b)
                                   for (std::size_t o = 0; o < dout; ++o)
                                     for (std::size_t i = 0; i < din; ++i)
                                       gw[o * din + i] += g[b * dout + o] * x[b * din + i];
                               }
                               if (Node* p = grad_target(self, 2)) {
                                 auto& gb = p->grad_buffer();
                                 for (std::size_t b = 0; b < batch; ++b)
                                   for (std::size_t o = 0; o < dout; ++o) gb[o] += g[b * dout + o];
                               }
                             });
}

// ---- normalization ------------------------------------------------------

InstanceStats instance_stats(const Tensor& input, double eps) {
  require_rank(input, 4, "instance_stats", "input");
  if (eps < 0.0) throw ConfigError("instance_stats: eps must be non-negative");
  const std::size_t bc = input.dim(0) * input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  if (plane == 0) throw ConfigError("instance_stats: empty spatial extent");
  const auto in = input.data();
  const double n = static_cast<double>(plane);
  std::vector<double> mean(bc), sd(bc);
  for (std::size_t i = 0; i < bc; ++i) {
    const double* x = &in[i * plane];
    double m = std::accumulate(x, x + plane, 0.0) / n;
    double resid = 0.0;
    for (std::size_t j = 0; j < plane; ++j) resid += x[j] - m;
    m += resid / n;  // refinement pass; makes constant channels exact
    double ss = 0.0;
    for (std::size_t j = 0; j < plane; ++j) ss += (x[j] - m) * (x[j] - m);
    mean[i] = m;
    sd[i] = std::sqrt(ss / n + eps);
  }
  const Shape stat_shape{input.dim(0), input.dim(1)};
  Tensor mean_t = Tensor::make_result(stat_shape, mean, {input}, [bc, plane, n](Node& self) {
    Node* p = grad_target(self, 0);
    if (!p) return;
    auto& gin = p->grad_buffer();
    for (std::size_t i = 0; i < bc; ++i) {
      const double gv = self.grad[i] / n;
      for (std::size_t j = 0; j < plane; ++j) gin[i * plane + j] += gv;
    }
  });
  Tensor std_t = Tensor::make_result(stat_shape, sd, {input}, [bc, plane, n, mean, sd](Node& self) {
    Node* p = grad_target(self, 0);
    if (!p) return;
    auto& gin = p->grad_buffer();
    for (std::size_t i = 0; i < bc; ++i) {
      if (sd[i] == 0.0) continue;
      const double coeff = self.grad[i] / (n * sd[i]);
      for (std::size_t j = 0; j < plane; ++j) gin[i * plane + j] += coeff * (p->value[i * plane + j] - mean[i]);
    }
  });
  return {std::move(mean_t), std::move(std_t)};
}

Tensor normalize_scale_shift(const Tensor& input, const InstanceStats& stats, const Tensor& scale_t,
                             const Tensor& shift_t) {
  require_rank(input, 4, "normalize_scale_shift", "input");
  const Shape stat_shape{input.dim(0), input.dim(1)};
  for (const Tensor* t : {&stats.mean, &stats.std, &scale_t, &shift_t}) {
    if (!t->defined() || t->shape() != stat_shape) {
      throw ConfigError("normalize_scale_shift: statistics/scale/shift must have shape " +
                        shape_to_string(stat_shape));
    }
  }
  const std::size_t bc = stat_shape[0] * stat_shape[1];
  const std::size_t plane = input.dim(2) * input.dim(3);
  const auto x = input.data();
  const auto mu = stats.mean.data();
  const auto sd = stats.std.data();
  const auto sc = scale_t.data();
  const auto sh = shift_t.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < bc; ++i) {
    if (!(sd[i] > 0.0)) throw NumericError("normalize_scale_shift: zero standard deviation (eps = 0?)");
    const double a = sc[i] / sd[i];
    for (std::size_t j = 0; j < plane; ++j) out[i * plane + j] = a * (x[i * plane + j] - mu[i]) + sh[i];
  }
  return Tensor::make_result(
      input.shape(), std::move(out), {input, stats.mean, stats.std, scale_t, shift_t}, [bc, plane](Node& self) {
        const auto& x = self.parents[0]->value;
        const auto& mu = self.parents[1]->value;
        const auto& sd = self.parents[2]->value;
        const auto& sc = self.parents[3]->value;
        const auto& g = self.grad;
        Node* px = grad_target(self, 0);
        Node* pm = grad_target(self, 1);
        Node* ps = grad_target(self, 2);
        Node* pscale = grad_target(self, 3);
        Node* pshift = grad_target(self, 4);
        for (std::size_t i = 0; i < bc; ++i) {
          const double inv = 1.0 / sd[i];
          double sum_g = 0.0, sum_gxhat = 0.0;
          for (std::size_t j = 0; j < plane; ++j) {
            const double gv = g[i * plane + j];
            sum_g += gv;
            sum_gxhat += gv * (x[i * plane + j] - mu[i]) * inv;
          }
          if (px) {
            auto& gx = px->grad_buffer();
            const double a = sc[i] * inv;
            for (std::size_t j = 0; j < plane; ++j) gx[i * plane + j] += a * g[i * plane + j];
          }
          if (pm) pm->grad_buffer()[i] -= sc[i] * inv * sum_g;
          if (ps) ps->grad_buffer()[i] -= sc[i] * inv * sum_gxhat;
          if (pscale) pscale->grad_buffer()[i] += sum_gxhat;
          if (pshift) pshift->grad_buffer()[i] += sum_g;
        }
      });
}

Tensor l2_normalize(const Tensor& v, double eps) {
  require_rank(v, 2, "l2_normalize", "input");
  const std::size_t rows = v.dim(0), cols = v.dim(1);
  const auto x = v.data();
  std::vector<double> out(x.size());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ss += x[r * cols + c] * x[r * cols + c];
    norms[r] = std::sqrt(ss);
    const double d = std::max(norms[r], eps);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] / d;
  }
  std::vector<double> y = out;
  return Tensor::make_result(v.shape(), std::move(out), {v}, [rows, cols, eps, norms, y](Node& self) {
    Node* p = grad_target(self, 0);
    if (!p) return;
    auto& gx = p->grad_buffer();
    const auto& g = self.grad;
    for (std::size_t r = 0; r < rows; ++r) {
      if (norms[r] >= eps && norms[r] > 0.0) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += y[r * cols + c] * g[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c)
          gx[r * cols + c] += (g[r * cols + c] - y[r * cols + c] * dot) / norms[r];
      } else {
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r * cols + c] / eps;
      }
    }
  });
}

// ---- elementwise --------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (Node* p = grad_target(self, k)) {
        auto& g = p->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (Node* p = grad_target(self, 0)) {
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (Node* p = grad_target(self, 1)) {
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (Node* p = grad_target(self, 0)) {
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (Node* p = grad_target(self, 1)) {
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  return Tensor::make_result(a.shape(), std::move(out), {a}, [factor](Node& self) {
    if (Node* p = grad_target(self, 0)) {
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    }
  });
}

Tensor square(const Tensor& a) { return mul(a, a); }

Tensor sum(const Tensor& a) {
  const auto x = a.data();
  return Tensor::make_result({1}, {std::accumulate(x.begin(), x.end(), 0.0)}, {a}, [](Node& self) {
    if (Node* p = grad_target(self, 0)) {
      for (double& g : p->grad_buffer()) g += self.grad[0];
    }
  });
}

Tensor weighted_sum(const Tensor& a, std::span<const double> weights) {
  if (weights.size() != a.numel()) throw ConfigError("weighted_sum: weight count mismatch");
  const auto x = a.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * weights[i];
  std::vector<double> w(weights.begin(), weights.end());
  return Tensor::make_result({1}, {acc}, {a}, [w](Node& self) {
    if (Node* p = grad_target(self, 0)) {
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * w[i];
    }
  });
}

// ---- gradcheck ----------------------------------------------------------

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor probe = x.detach();
  probe.set_requires_grad(true);
  Tensor out = f(probe);
  if (out.numel() != 1) throw ConfigError("finite_diff_check: f must return a scalar");
  out.backward();
  const std::vector<double> analytic = probe.grad();

  double worst = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    Tensor plus = x.detach();
    plus.mutable_data()[i] += h;
    Tensor minus = x.detach();
    minus.mutable_data()[i] -= h;
    const double numeric = (f(plus).item() - f(minus).item()) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

// ---- serialization ------------------------------------------------------

namespace {

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  nlohmann::json header;
  header["shape"] = t.shape();
  out << header.dump() << '\n';
  for (double v : t.data()) {
    const std::uint64_t bits = to_little_endian(std::bit_cast<std::uint64_t>(v));
    out.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
  }
  if (!out) throw IoError("write_tensor: stream failure");
}

Tensor read_tensor(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("read_tensor: missing header line");
  Shape shape;
  try {
    shape = nlohmann::json::parse(line).at("shape").get<Shape>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("read_tensor: malformed header: ") + e.what());
  }
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) {
    std::uint64_t bits = 0;
    if (!in.read(reinterpret_cast<char*>(&bits), sizeof(bits))) throw IoError("read_tensor: truncated data");
    v = std::bit_cast<double>(to_little_endian(bits));
  }
  return Tensor::from_data(std::move(shape), std::move(data));
}

void save_tensors(const std::string& path, std::span<const Tensor> tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (const Tensor& t : tensors) write_tensor(out, t);
}

std::vector<Tensor> load_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<Tensor> tensors;
  while (in.peek() != std::char_traits<char>::eof()) tensors.push_back(read_tensor(in));
  return tensors;
}

}  // namespace caim
