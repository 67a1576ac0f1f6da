#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "caim/caim_block.hpp"
#include "caim/tensor.hpp"
#include "json.hpp"

namespace caim {

/// Small stride-2 conv stack standing in for a pretrained face recognition model.
struct BackboneConfig {
  std::size_t num_blocks = 5;
  std::vector<std::size_t> channels{16, 32, 64, 64, 64};
  std::size_t input_channels = 3;
  std::size_t input_size = 32;
  std::size_t embedding_dim = 64;

  void validate() const;
  // Spatial size of the output of each block.
  std::vector<std::size_t> block_output_sizes() const;
  bool operator==(const BackboneConfig&) const = default;
};

struct BackboneWeights {
  std::vector<Tensor> conv_w, conv_b;
  Tensor head_w, head_b;

  std::vector<Tensor> tensors() const;
  void set_requires_grad(bool on);
};

struct CaimInsertion {
  std::size_t after_block = 0;  // 1-based
  CaimParams params;
};

struct ModelAssembly {
  BackboneConfig config;
  BackboneWeights backbone;
  std::vector<CaimInsertion> caim;  // sorted by after_block
  bool backbone_frozen = false;
  // false forces the gate to 1 on every forward pass (unconditional ablations).
  bool conditional = true;
  ModulationKind kind = ModulationKind::kAdaptive;
  double eps = kInstanceNormEps;

  std::vector<std::size_t> caim_positions() const;
  std::vector<Tensor> trainable_parameters() const;
  // Deep copy; the result shares no tensors with this model.
  ModelAssembly clone() const;
};

ModelAssembly build_backbone(const BackboneConfig& cfg, std::uint64_t seed);

// [B,1,H,W] -> [B,3,H,W]. A 3-channel input is returned unchanged and, when
// passed_through is given, flagged there.
Tensor replicate_channels(const Tensor& img, bool* passed_through = nullptr);

void freeze_backbone(ModelAssembly& model);

// CAIM blocks after blocks 1..K; freezes the backbone.
ModelAssembly insert_caim(ModelAssembly model, std::size_t k, std::uint64_t seed);

// L2-normalized embeddings [B,D]. Gate::kSource skips every CAIM block.
Tensor forward_embed(const ModelAssembly& model, const Tensor& img, Gate gate);

std::uint64_t checksum(std::span<const Tensor> tensors);

// backbone.bin + caim_<i>.bin + assembly.json
void save_model(const ModelAssembly& model, const std::string& dir);
ModelAssembly load_model(const std::string& dir);

nlohmann::json to_json(const BackboneConfig& cfg);
BackboneConfig backbone_config_from_json(const nlohmann::json& j, BackboneConfig base = {});

}  // namespace caim
