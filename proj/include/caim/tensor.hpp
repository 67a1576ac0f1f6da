#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace caim {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

// One vertex of the reverse-mode tape. Leaves have no backward_fn.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something is accumulated
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return parents.empty(); }
  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major double tensor with reverse-mode gradient tracking.
///
/// Copies share the underlying node (handle semantics, like a framework
/// tensor). Use clone() for a deep copy. Every op checks its output for
/// NaN/Inf and throws NumericError.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  // Writable view; only valid on leaves (parameters, inputs).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  // Zeros when nothing has been accumulated yet.
  std::vector<double> grad() const;
  void zero_grad();

  // Reverse-mode accumulation from this scalar into every requires_grad ancestor.
  // The interior of the graph is released afterwards; a second call throws.
  void backward() const;

  Tensor clone() const;   // deep copy, same requires_grad, no history
  Tensor detach() const;  // deep copy without gradient tracking

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }
  bool bitwise_equal(const Tensor& other) const;

  // Builds an op result. Parents that do not require grad are still recorded
  // so the caller can read their values in backward_fn.
  static Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                            std::function<void(detail::Node&)> backward_fn);

  detail::Node& node() const { return *node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Per-(sample, channel) spatial statistics of a [B,C,H,W] map, each [B,C].
struct InstanceStats {
  Tensor mean;
  Tensor std;
};

// ---- ops ----------------------------------------------------------------

Tensor conv2d_3x3(const Tensor& input, const Tensor& weight, const Tensor& bias,
                  std::size_t stride, std::size_t padding);
Tensor relu(const Tensor& input);
Tensor global_avg_pool(const Tensor& input);
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// std = sqrt(population variance + eps).
InstanceStats instance_stats(const Tensor& input, double eps);
// scale * (input - mean) / std + shift, scale and shift broadcast over H,W.
Tensor normalize_scale_shift(const Tensor& input, const InstanceStats& stats, const Tensor& scale,
                             const Tensor& shift);
// Each row divided by max(||row||, eps).
Tensor l2_normalize(const Tensor& v, double eps = 1e-12);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor square(const Tensor& a);
Tensor sum(const Tensor& a);
// Sum of a * weights with a constant weight vector; handy for gradchecks.
Tensor weighted_sum(const Tensor& a, std::span<const double> weights);

// ---- verification -------------------------------------------------------

/// Central-difference gradient check of a scalar function at x.
/// Returns the max relative error |a - n| / max(|a|, |n|, 1e-8) over all
/// coordinates of x.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double h = 1e-5);

// ---- serialization ------------------------------------------------------

// One JSON header line {"shape":[...]} followed by raw little-endian float64 values.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensors(const std::string& path, std::span<const Tensor> tensors);
std::vector<Tensor> load_tensors(const std::string& path);

}  // namespace caim
