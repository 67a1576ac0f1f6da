#include "caim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "caim/errors.hpp"

namespace caim {

namespace {

void require_nonempty(const ScoreSet& s, const char* op) {
  if (s.genuine.empty() || s.impostor.empty()) {
    throw ConfigError(std::string(op) + ": genuine and impostor scores must both be non-empty");
  }
}

std::vector<double> sorted(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v;
}

// Number of values in a sorted vector that are >= t / < t.
std::size_t count_at_least(const std::vector<double>& v, double t) {
  return static_cast<std::size_t>(v.end() - std::lower_bound(v.begin(), v.end(), t));
}
std::size_t count_below(const std::vector<double>& v, double t) {
  return static_cast<std::size_t>(std::lower_bound(v.begin(), v.end(), t) - v.begin());
}

}  // namespace

ScoreSet ScoreMatrix::score_set() const {
  ScoreSet s;
  for (std::size_t p = 0; p < probe_ids.size(); ++p) {
    for (std::size_t g = 0; g < gallery_ids.size(); ++g) {
      (probe_ids[p] == gallery_ids[g] ? s.genuine : s.impostor).push_back(at(p, g));
    }
  }
  return s;
}

ScoreMatrix score_pairs(const Tensor& gallery, const std::vector<int>& gallery_ids, const Tensor& probes,
                        const std::vector<int>& probe_ids) {
  if (gallery_ids.empty() || probe_ids.empty()) throw ConfigError("score_pairs: empty gallery or probe set");
  if (gallery.rank() != 2 || probes.rank() != 2 || gallery.dim(0) != gallery_ids.size() ||
      probes.dim(0) != probe_ids.size() || gallery.dim(1) != probes.dim(1)) {
    throw ConfigError("score_pairs: embedding shapes do not match the id lists");
  }
  const std::size_t d = gallery.dim(1);
  ScoreMatrix m{gallery_ids, probe_ids, std::vector<double>(probe_ids.size() * gallery_ids.size())};
  const auto g = gallery.data();
  const auto p = probes.data();
  for (std::size_t i = 0; i < probe_ids.size(); ++i) {
    for (std::size_t j = 0; j < gallery_ids.size(); ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += p[i * d + k] * g[j * d + k];
      m.scores[i * gallery_ids.size() + j] = dot;
    }
  }
  return m;
}

double eer(const ScoreSet& s) {
  require_nonempty(s, "eer");
  const auto gen = sorted(s.genuine);
  const auto imp = sorted(s.impostor);
  std::vector<double> thresholds = gen;
  thresholds.insert(thresholds.end(), imp.begin(), imp.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  const double ng = static_cast<double>(gen.size()), ni = static_cast<double>(imp.size());
  double best_gap = std::numeric_limits<double>::infinity();
  double best = 0.0;
  for (double t : thresholds) {
    const double far = static_cast<double>(count_at_least(imp, t)) / ni;
    const double frr = static_cast<double>(count_below(gen, t)) / ng;
    const double gap = std::abs(far - frr);
    if (gap < best_gap) {
      best_gap = gap;
      best = (far + frr) / 2.0;
    }
  }
  return best;
}

double auc(const ScoreSet& s) {
  require_nonempty(s, "auc");
  const auto imp = sorted(s.impostor);
  double wins = 0.0;
  for (double g : s.genuine) {
    const auto lo = std::lower_bound(imp.begin(), imp.end(), g);
    const auto hi = std::upper_bound(lo, imp.end(), g);
    wins += static_cast<double>(lo - imp.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(s.genuine.size()) * static_cast<double>(imp.size()));
}

double rank1(const std::vector<int>& gallery_ids, const std::vector<int>& probe_ids,
             const std::vector<double>& similarity) {
  if (gallery_ids.empty() || probe_ids.empty()) throw ConfigError("rank1: empty gallery or probe set");
  if (similarity.size() != gallery_ids.size() * probe_ids.size()) throw ConfigError("rank1: matrix size mismatch");
  const std::set<int> enrolled(gallery_ids.begin(), gallery_ids.end());
  const std::size_t ng = gallery_ids.size();
  std::size_t hits = 0;
  for (std::size_t p = 0; p < probe_ids.size(); ++p) {
    if (!enrolled.count(probe_ids[p])) {
      throw ConfigError("rank1: probe identity " + std::to_string(probe_ids[p]) + " is not in the gallery");
    }
    const auto row = similarity.begin() + static_cast<std::ptrdiff_t>(p * ng);
    const auto best = std::max_element(row, row + static_cast<std::ptrdiff_t>(ng));  // first maximum wins ties
    if (gallery_ids[static_cast<std::size_t>(best - row)] == probe_ids[p]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(probe_ids.size());
}

VerificationRate vr_at_far(const ScoreSet& s, double far_target) {
  require_nonempty(s, "vr_at_far");
  if (!(far_target > 0.0 && far_target <= 1.0)) throw ConfigError("vr_at_far: target must be in (0,1]");
  const auto gen = sorted(s.genuine);
  const auto imp = sorted(s.impostor);
  std::vector<double> candidates = gen;
  candidates.insert(candidates.end(), imp.begin(), imp.end());
  candidates.push_back(std::nextafter(imp.back(), std::numeric_limits<double>::infinity()));
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  const double ni = static_cast<double>(imp.size());
  // FAR is non-increasing in t; the last candidate always has FAR = 0.
  const auto it = std::partition_point(candidates.begin(), candidates.end(), [&](double t) {
    return static_cast<double>(count_at_least(imp, t)) / ni > far_target;
  });
  VerificationRate vr;
  vr.threshold = *it;
  vr.rate = static_cast<double>(count_at_least(gen, vr.threshold)) / static_cast<double>(gen.size());
  vr.small_sample = ni * far_target < 1.0;
  return vr;
}

MetricsReport compute_report(const ScoreMatrix& m) {
  const ScoreSet s = m.score_set();
  MetricsReport r;
  r.auc = auc(s);
  r.eer = eer(s);
  r.rank1 = rank1(m.gallery_ids, m.probe_ids, m.scores);
  for (double far : kFarTargets) {
    const VerificationRate vr = vr_at_far(s, far);
    r.vr_at_far[far] = vr.rate;
    r.small_sample_far = r.small_sample_far || vr.small_sample;
  }
  r.genuine_count = s.genuine.size();
  r.impostor_count = s.impostor.size();
  r.probe_count = m.probe_ids.size();
  r.gallery_count = m.gallery_ids.size();
  return r;
}

std::string far_key(double far) {
  std::ostringstream os;
  os << far;
  return os.str();
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json vr = nlohmann::json::object();
  for (const auto& [far, rate] : r.vr_at_far) vr[far_key(far)] = rate;
  return {{"auc", r.auc},
          {"eer", r.eer},
          {"rank1", r.rank1},
          {"vr_at_far", vr},
          {"small_sample_far", r.small_sample_far},
          {"counts",
           {{"genuine", r.genuine_count},
            {"impostor", r.impostor_count},
            {"probes", r.probe_count},
            {"gallery", r.gallery_count}}}};
}

}  // namespace caim
