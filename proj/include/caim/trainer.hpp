#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "caim/backbone.hpp"
#include "caim/synth_data.hpp"
#include "caim/tensor.hpp"
#include "json.hpp"

namespace caim {

struct TrainConfig {
  double margin = 2.0;
  double lr = 1e-4;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;  // pairs; half genuine, half impostor
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;

  // 50 epochs, batch 90.
  static TrainConfig full_schedule_defaults();
  // Source-only backbone pretraining on the pretrain pool.
  static TrainConfig pretrain_defaults();
};

/// Mean over rows of (1-Y)/2 D^2 + Y/2 max(0, m-D)^2 with D the Euclidean
/// distance between rows of e1 and e2. Y = 0 marks a genuine pair.
/// The gradient of D is taken as zero where D = 0.
Tensor contrastive_loss(const Tensor& e1, const Tensor& e2, std::span<const int> labels, double margin);

struct PairBatch {
  std::vector<const SampleRecord*> first;   // X_s branch
  std::vector<const SampleRecord*> second;  // X_t branch
  std::vector<int> labels;                  // 0 genuine, 1 impostor

  std::size_t size() const { return labels.size(); }
};

/// Balanced pair sampler. Each epoch visits every anchor (second-branch
/// record) once as a genuine pair and once as an impostor pair, in a seeded
/// order. Partners are drawn from the first-branch pool; a record is never
/// paired with itself.
class PairSampler {
 public:
  PairSampler(std::vector<const SampleRecord*> partners, std::vector<const SampleRecord*> anchors,
              std::size_t batch_size, std::uint64_t seed);

  std::vector<PairBatch> epoch(std::size_t index) const;
  // Set when the anchor pool is smaller than half a batch and anchors repeat within a batch.
  bool with_replacement() const { return with_replacement_; }
  const std::vector<const SampleRecord*>& partners() const { return partners_; }

 private:
  std::vector<const SampleRecord*> partners_, anchors_;
  std::vector<std::vector<std::size_t>> by_identity_;  // partner indices per identity slot
  std::vector<int> identity_of_slot_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  bool with_replacement_ = false;
};

// First batch of epoch 0 over the training split: source partners, target anchors.
PairBatch sample_pairs(const DatasetBundle& dataset, std::size_t batch_size, std::uint64_t seed);

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t step = 0;
};

// In-place Adam step with bias correction on every tensor in params, from their
// accumulated gradients. Throws NumericError, leaving params and state untouched,
// if any gradient is not finite.
void adam_update(std::span<Tensor> params, std::span<const std::vector<double>> grads, AdamState& state,
                 const TrainConfig& cfg);
// Reads the accumulated gradients from params and clears them afterwards.
void adam_update(std::span<Tensor> params, AdamState& state, const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double holdout_eer = 0.0;
};

struct TrainResult {
  ModelAssembly model;
  std::vector<EpochRecord> history;
  bool sampled_with_replacement = false;
};

// Siamese training of the CAIM tensors: source branch with gate 0, target branch
// with gate 1. Hold-out EER is the cross-modal EER on the eval split.
TrainResult train_caim(const ModelAssembly& model, const DatasetBundle& dataset, const TrainConfig& cfg);

// Contrastive source-source training of the backbone on the pretrain pool, then
// freezing. Hold-out EER is the source-source EER on the eval split.
TrainResult pretrain_source(const ModelAssembly& model, const DatasetBundle& dataset, const TrainConfig& cfg);

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

}  // namespace caim
