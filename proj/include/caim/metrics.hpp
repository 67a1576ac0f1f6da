#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "caim/tensor.hpp"
#include "json.hpp"

namespace caim {

// Higher score = more similar.
struct ScoreSet {
  std::vector<double> genuine;
  std::vector<double> impostor;
};

/// Dense probe x gallery cosine-similarity matrix, row-major by probe.
struct ScoreMatrix {
  std::vector<int> gallery_ids;
  std::vector<int> probe_ids;
  std::vector<double> scores;

  double at(std::size_t probe, std::size_t gallery) const { return scores[probe * gallery_ids.size() + gallery]; }
  ScoreSet score_set() const;
};

inline const std::vector<double> kFarTargets{0.0001, 0.001, 0.01, 0.05};

struct VerificationRate {
  double rate = 0.0;
  double threshold = 0.0;
  bool small_sample = false;  // fewer impostors than 1/far_target
};

struct MetricsReport {
  double auc = 0.0;
  double eer = 0.0;
  double rank1 = 0.0;
  std::map<double, double> vr_at_far;
  std::size_t genuine_count = 0, impostor_count = 0, probe_count = 0, gallery_count = 0;
  bool small_sample_far = false;
};

// Cosine similarity of every probe against every gallery entry (rows must be unit norm).
ScoreMatrix score_pairs(const Tensor& gallery, const std::vector<int>& gallery_ids, const Tensor& probes,
                        const std::vector<int>& probe_ids);

double eer(const ScoreSet& s);
double auc(const ScoreSet& s);
double rank1(const std::vector<int>& gallery_ids, const std::vector<int>& probe_ids,
             const std::vector<double>& similarity);
VerificationRate vr_at_far(const ScoreSet& s, double far_target);

MetricsReport compute_report(const ScoreMatrix& m);

nlohmann::json to_json(const MetricsReport& r);
std::string far_key(double far);

}  // namespace caim
