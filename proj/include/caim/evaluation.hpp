#pragma once

#include <vector>

#include "caim/backbone.hpp"
#include "caim/metrics.hpp"
#include "caim/synth_data.hpp"

namespace caim {

// Inference-only embedding of records in fixed-size chunks; the result carries no graph.
Tensor embed_records(const ModelAssembly& model, const std::vector<const SampleRecord*>& records, Gate gate,
                     std::size_t chunk = 64);

std::vector<int> identity_labels(const std::vector<const SampleRecord*>& records);

struct EvaluationResult {
  ScoreMatrix cross_scores;   // target probes (gate 1) vs source gallery (gate 0)
  ScoreMatrix source_scores;  // source probes vs source gallery, gate 0 throughout
  MetricsReport cross_modal;
  MetricsReport source_source;
};

EvaluationResult evaluate(const ModelAssembly& model, const DatasetBundle& dataset);

double cross_modal_eer(const ModelAssembly& model, const DatasetBundle& dataset);
double source_source_eer(const ModelAssembly& model, const DatasetBundle& dataset);

nlohmann::json to_json(const EvaluationResult& r);

}  // namespace caim
