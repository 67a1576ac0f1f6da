#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "caim/backbone.hpp"
#include "caim/evaluation.hpp"
#include "caim/synth_data.hpp"
#include "caim/trainer.hpp"
#include "json.hpp"

namespace caim {

/// Every stage's settings plus the single global seed from which all
/// per-stage seeds are derived.
struct RunConfig {
  std::uint64_t seed = 0;
  DatasetConfig dataset;
  BackboneConfig backbone;
  TrainConfig pretrain = TrainConfig::pretrain_defaults();
  TrainConfig train;
  std::size_t caim_blocks = 3;
  std::size_t folds = 1;

  void validate() const;

  // Derived seeds. Section-level seed fields are never read from JSON.
  DatasetConfig dataset_for_fold(std::size_t fold) const;
  std::uint64_t backbone_seed() const;
  std::uint64_t caim_seed() const;
  TrainConfig pretrain_config() const;
  TrainConfig train_config() const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

// Merge order: defaults < config file < CAIM_SEED < dotted overrides
// ("--train.margin=2.0" or "train.margin=2.0").
RunConfig resolve_run_config(const std::optional<std::string>& config_path, const std::vector<std::string>& overrides,
                             const char* env_seed);

struct Workspace {
  std::string data, backbone, checkpoint, out;

  static Workspace under(const std::string& root);
};

struct PretrainOutcome {
  ModelAssembly model;
  std::vector<EpochRecord> history;
};

struct TrainOutcome {
  ModelAssembly model;
  std::vector<EpochRecord> history;
};

struct AblationRow {
  std::string variant;
  std::size_t blocks = 0;
  bool conditional = true;
  ModulationKind kind = ModulationKind::kAdaptive;
  EvaluationResult result;
  bool source_preserved = false;
  bool expected_preserved = true;

  // "PASS", "EXPECTED_FAIL" or "UNEXPECTED"
  std::string check() const;
};

DatasetBundle cmd_synth(const RunConfig& cfg, const Workspace& ws, std::ostream& log);
PretrainOutcome cmd_pretrain(const RunConfig& cfg, const Workspace& ws, std::ostream& log);
TrainOutcome cmd_train(const RunConfig& cfg, const Workspace& ws, std::ostream& log);
// Single-fold evaluation of the checkpoint (or of the bare backbone with baseline),
// or, with cfg.folds > 1, per-fold retraining and mean/std aggregation.
nlohmann::json cmd_eval(const RunConfig& cfg, const Workspace& ws, bool baseline, std::ostream& log);
std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, const Workspace& ws, std::ostream& log);

// Trains one CAIM model from a frozen backbone exactly as cmd_train does.
TrainResult train_variant(const RunConfig& cfg, const ModelAssembly& frozen, const DatasetBundle& data,
                          std::size_t blocks, bool conditional, ModulationKind kind);

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history);
void write_scores_csv(const std::string& path, const ScoreMatrix& m, const std::vector<const SampleRecord*>& gallery,
                      const std::vector<const SampleRecord*>& probes);
void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);
void write_json(const std::string& path, const nlohmann::json& j);

}  // namespace caim
