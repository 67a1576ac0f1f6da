#pragma once

#include <cstdint>
#include <vector>

#include "caim/tensor.hpp"

namespace caim {

inline constexpr double kInstanceNormEps = 1e-5;

/// Routing switch of a CAIM block: source passes through, target is modulated.
enum class Gate : int { kSource = 0, kTarget = 1 };

/// Which normalization the block applies on its active branch.
/// kInstanceNormOnly fixes the scale to 1 and the shift to 0 (ablation only).
enum class ModulationKind { kAdaptive, kInstanceNormOnly };

/// Learnable weights of one block: a two-layer 3x3 stylizer and two linear heads.
struct CaimParams {
  Tensor conv1_w, conv1_b;        // [S,C,3,3], [S]
  Tensor conv2_w, conv2_b;        // [S,S,3,3], [S]
  Tensor fc_sigma_w, fc_sigma_b;  // [C,S], [C]
  Tensor fc_mu_w, fc_mu_b;        // [C,S], [C]

  std::size_t channels() const { return fc_sigma_w.dim(0); }
  std::size_t width() const { return conv1_w.dim(0); }

  std::vector<Tensor> tensors() const;
  void set_requires_grad(bool on);
  void validate() const;
  // Rebuilds from the order produced by tensors().
  static CaimParams from_tensors(std::vector<Tensor> tensors);
};

struct StyleCode {
  Tensor xi;  // [B,S]
};

struct AffinePair {
  Tensor sigma_f;  // [B,C]
  Tensor mu_f;     // [B,C]
};

struct InstanceNormConfig {
  double eps = kInstanceNormEps;
  std::vector<double> gamma;  // empty means all ones
  std::vector<double> beta;   // empty means all zeros
};

Tensor instance_norm(const Tensor& f, const InstanceNormConfig& cfg);

// Reference style transfer: content re-standardized with the style's statistics.
Tensor adain(const Tensor& content, const Tensor& style, double eps = 0.0);

StyleCode stylizer_forward(const Tensor& f, const CaimParams& p);
AffinePair estimate_affine(const StyleCode& xi, const CaimParams& p);

// sigma_f * IN(F) + mu_f with (sigma_f, mu_f) estimated from the un-normalized F.
Tensor aim(const Tensor& f, const CaimParams& p, double eps = kInstanceNormEps);

// g * modulation(F) + F. With Gate::kSource the input handle is returned as is.
Tensor caim_forward(const Tensor& f, Gate gate, const CaimParams& p, double eps = kInstanceNormEps,
                    ModulationKind kind = ModulationKind::kAdaptive);

// He-uniform stylizer convs, zero linear heads: the block starts as an exact identity.
CaimParams init_caim(std::uint64_t seed, std::size_t channels, std::size_t width);

}  // namespace caim
