#include "caim/evaluation.hpp"

#include <algorithm>

#include "caim/errors.hpp"

namespace caim {

Tensor embed_records(const ModelAssembly& model, const std::vector<const SampleRecord*>& records, Gate gate,
                     std::size_t chunk) {
  if (records.empty()) throw ConfigError("embed_records: no records");
  std::vector<double> out;
  std::size_t dim = 0;
  for (std::size_t start = 0; start < records.size(); start += chunk) {
    const std::size_t stop = std::min(records.size(), start + chunk);
    std::vector<const SampleRecord*> part(records.begin() + static_cast<std::ptrdiff_t>(start),
                                          records.begin() + static_cast<std::ptrdiff_t>(stop));
    const Tensor e = forward_embed(model, stack_images(part), gate);
    dim = e.dim(1);
    out.insert(out.end(), e.data().begin(), e.data().end());
  }
  return Tensor::from_data({records.size(), dim}, std::move(out));
}

std::vector<int> identity_labels(const std::vector<const SampleRecord*>& records) {
  std::vector<int> ids;
  ids.reserve(records.size());
  for (const auto* r : records) ids.push_back(r->identity);
  return ids;
}

namespace {

ScoreMatrix cross_matrix(const ModelAssembly& model, const DatasetBundle& d, const Tensor& gallery) {
  const auto gal = d.gallery();
  const auto probes = d.target_probes();
  return score_pairs(gallery, identity_labels(gal), embed_records(model, probes, Gate::kTarget),
                     identity_labels(probes));
}

ScoreMatrix source_matrix(const ModelAssembly& model, const DatasetBundle& d, const Tensor& gallery) {
  const auto gal = d.gallery();
  const auto probes = d.source_probes();
  if (probes.empty()) throw ConfigError("evaluate: need at least 2 source samples per identity");
  return score_pairs(gallery, identity_labels(gal), embed_records(model, probes, Gate::kSource),
                     identity_labels(probes));
}

}  // namespace

EvaluationResult evaluate(const ModelAssembly& model, const DatasetBundle& dataset) {
  const Tensor gallery = embed_records(model, dataset.gallery(), Gate::kSource);
  EvaluationResult r;
  r.cross_scores = cross_matrix(model, dataset, gallery);
  r.source_scores = source_matrix(model, dataset, gallery);
  r.cross_modal = compute_report(r.cross_scores);
  r.source_source = compute_report(r.source_scores);
  return r;
}

double cross_modal_eer(const ModelAssembly& model, const DatasetBundle& dataset) {
  const Tensor gallery = embed_records(model, dataset.gallery(), Gate::kSource);
  return eer(cross_matrix(model, dataset, gallery).score_set());
}

double source_source_eer(const ModelAssembly& model, const DatasetBundle& dataset) {
  const Tensor gallery = embed_records(model, dataset.gallery(), Gate::kSource);
  return eer(source_matrix(model, dataset, gallery).score_set());
}

nlohmann::json to_json(const EvaluationResult& r) {
  return {{"cross_modal", to_json(r.cross_modal)}, {"source_source", to_json(r.source_source)}};
}

}  // namespace caim
