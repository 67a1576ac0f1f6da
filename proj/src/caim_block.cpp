#include "caim/caim_block.hpp"

#include <cmath>
#include <random>

#include "caim/errors.hpp"

namespace caim {

std::vector<Tensor> CaimParams::tensors() const {
  return {conv1_w, conv1_b, conv2_w, conv2_b, fc_sigma_w, fc_sigma_b, fc_mu_w, fc_mu_b};
}

void CaimParams::set_requires_grad(bool on) {
  for (Tensor* t : {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &fc_sigma_w, &fc_sigma_b, &fc_mu_w, &fc_mu_b}) {
    t->set_requires_grad(on);
  }
}

void CaimParams::validate() const {
  const std::size_t s = conv1_w.dim(0), c = conv1_w.dim(1);
  const bool ok = conv1_w.shape() == Shape{s, c, 3, 3} && conv1_b.shape() == Shape{s} &&
                  conv2_w.shape() == Shape{s, s, 3, 3} && conv2_b.shape() == Shape{s} &&
                  fc_sigma_w.shape() == Shape{c, s} && fc_sigma_b.shape() == Shape{c} &&
                  fc_mu_w.shape() == Shape{c, s} && fc_mu_b.shape() == Shape{c};
  if (!ok) throw ConfigError("CaimParams: inconsistent tensor shapes");
}

CaimParams CaimParams::from_tensors(std::vector<Tensor> t) {
  if (t.size() != 8) throw IoError("CaimParams: expected 8 tensors, got " + std::to_string(t.size()));
  CaimParams p{t[0], t[1], t[2], t[3], t[4], t[5], t[6], t[7]};
  p.validate();
  return p;
}

Tensor instance_norm(const Tensor& f, const InstanceNormConfig& cfg) {
  const std::size_t batch = f.dim(0), channels = f.dim(1);
  auto per_channel = [&](const std::vector<double>& v, double fallback) {
    if (v.empty()) return Tensor::full({batch, channels}, fallback);
    if (v.size() != channels) throw ConfigError("instance_norm: gamma/beta size must equal channel count");
    std::vector<double> tiled(batch * channels);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < channels; ++c) tiled[b * channels + c] = v[c];
    return Tensor::from_data({batch, channels}, std::move(tiled));
  };
  return normalize_scale_shift(f, instance_stats(f, cfg.eps), per_channel(cfg.gamma, 1.0),
                               per_channel(cfg.beta, 0.0));
}

Tensor adain(const Tensor& content, const Tensor& style, double eps) {
  if (content.dim(0) != style.dim(0) || content.dim(1) != style.dim(1)) {
    throw ConfigError("adain: content and style must agree in batch and channels");
  }
  InstanceStats target = instance_stats(style, eps);
  return normalize_scale_shift(content, instance_stats(content, eps), target.std, target.mean);
}

StyleCode stylizer_forward(const Tensor& f, const CaimParams& p) {
  Tensor h = relu(conv2d_3x3(f, p.conv1_w, p.conv1_b, 1, 1));
  h = relu(conv2d_3x3(h, p.conv2_w, p.conv2_b, 1, 1));
  return {global_avg_pool(h)};
}

AffinePair estimate_affine(const StyleCode& xi, const CaimParams& p) {
  return {linear(xi.xi, p.fc_sigma_w, p.fc_sigma_b), linear(xi.xi, p.fc_mu_w, p.fc_mu_b)};
}

Tensor aim(const Tensor& f, const CaimParams& p, double eps) {
  const AffinePair affine = estimate_affine(stylizer_forward(f, p), p);
  return normalize_scale_shift(f, instance_stats(f, eps), affine.sigma_f, affine.mu_f);
}

Tensor caim_forward(const Tensor& f, Gate gate, const CaimParams& p, double eps, ModulationKind kind) {
  if (gate == Gate::kSource) return f;
  if (f.dim(1) != p.channels()) {
    throw ConfigError("caim_forward: feature map has " + std::to_string(f.dim(1)) + " channels, block expects " +
                      std::to_string(p.channels()));
  }
  if (kind == ModulationKind::kInstanceNormOnly) return add(instance_norm(f, {eps, {}, {}}), f);
  return add(aim(f, p, eps), f);
}

CaimParams init_caim(std::uint64_t seed, std::size_t channels, std::size_t width) {
  if (channels == 0 || width == 0) throw ConfigError("init_caim: channels and width must be positive");
  std::mt19937_64 rng(seed);
  auto he_uniform = [&rng](Shape shape, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = dist(rng);
    return Tensor::from_data(std::move(shape), std::move(v), true);
  };
  CaimParams p;
  p.conv1_w = he_uniform({width, channels, 3, 3}, channels * 9);
  p.conv1_b = Tensor::zeros({width}, true);
  p.conv2_w = he_uniform({width, width, 3, 3}, width * 9);
  p.conv2_b = Tensor::zeros({width}, true);
  p.fc_sigma_w = Tensor::zeros({channels, width}, true);
  p.fc_sigma_b = Tensor::zeros({channels}, true);
  p.fc_mu_w = Tensor::zeros({channels, width}, true);
  p.fc_mu_b = Tensor::zeros({channels}, true);
  return p;
}

}  // namespace caim
