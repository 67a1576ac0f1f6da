// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "caim/caim_block.hpp"
#include "caim/metrics.hpp"
#include "caim/pipeline.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace caim;
using caim::testing::random_away_from_zero;
using caim::testing::random_tensor;
using caim::testing::random_weights;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Checker {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && first_failure_.empty()) first_failure_ = what;
    pass_ = pass_ && ok;
  }
  Outcome done(std::string summary) const {
    return {pass_, pass_ ? std::move(summary) : summary + "; first failure: " + first_failure_};
  }

 private:
  bool pass_ = true;
  std::string first_failure_;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("caim_acceptance_" + name);
  fs::remove_all(p);
  return p;
}

CaimParams perturbed_params(std::mt19937_64& rng, std::size_t c, std::size_t s) {
  std::vector<Tensor> ts = init_caim(rng(), c, s).tensors();
  std::uniform_real_distribution<double> d(-0.5, 0.5);
  for (Tensor& t : ts)
    for (double& v : t.mutable_data()) v += d(rng);
  return CaimParams::from_tensors(std::move(ts));
}

std::pair<std::vector<double>, std::vector<double>> channel_stats(const Tensor& t) {
  const std::size_t planes = t.dim(0) * t.dim(1), hw = t.dim(2) * t.dim(3);
  std::vector<double> mean(planes), var(planes);
  for (std::size_t p = 0; p < planes; ++p) {
    double s = 0;
    for (std::size_t i = 0; i < hw; ++i) s += t.at(p * hw + i);
    mean[p] = s / static_cast<double>(hw);
    double q = 0;
    for (std::size_t i = 0; i < hw; ++i) q += (t.at(p * hw + i) - mean[p]) * (t.at(p * hw + i) - mean[p]);
    var[p] = q / static_cast<double>(hw);
  }
  return {mean, var};
}

// ---- 1 -------------------------------------------------------------------

Outcome gradcheck_suite() {
  const auto t0 = Clock::now();
  Checker c;
  double worst_smooth = 0, worst_composite = 0;
  std::size_t checks = 0;
  auto smooth = [&](const std::string& name, int seed, double err) {
    ++checks;
    worst_smooth = std::max(worst_smooth, err);
    c.expect(err < 1e-6, name + " seed " + std::to_string(seed) + " err " + fmt(err));
  };
  auto composite = [&](const std::string& name, int seed, double err) {
    ++checks;
    worst_composite = std::max(worst_composite, err);
    c.expect(err < 1e-4, name + " seed " + std::to_string(seed) + " err " + fmt(err));
  };

  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(7000 + seed);

    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    const auto w12 = random_weights(12, rng);
    smooth("add", seed, finite_diff_check([&](const Tensor& t) { return weighted_sum(add(t, b), w12); }, a));
    smooth("sub", seed, finite_diff_check([&](const Tensor& t) { return weighted_sum(sub(a, t), w12); }, b));
    smooth("mul", seed, finite_diff_check([&](const Tensor& t) { return weighted_sum(mul(t, b), w12); }, a));
    smooth("scale", seed, finite_diff_check([&](const Tensor& t) { return weighted_sum(scale(t, -1.7), w12); }, a));
    smooth("square", seed, finite_diff_check([&](const Tensor& t) { return weighted_sum(square(t), w12); }, a));
    smooth("sum", seed, finite_diff_check([&](const Tensor& t) { return sum(mul(t, t)); }, a));
    smooth("relu", seed, finite_diff_check([&](const Tensor& t) { return weighted_sum(relu(t), w12); },
                                           random_away_from_zero({3, 4}, rng, 0.1)));

    Tensor x = random_tensor({2, 2, 5, 4}, rng);
    Tensor cw = random_tensor({3, 2, 3, 3}, rng), cb = random_tensor({3}, rng);
    for (std::size_t stride : {1u, 2u}) {
      const auto wts = random_weights(2 * 3 * ((5 - 1) / stride + 1) * ((4 - 1) / stride + 1), rng);
      const std::string n = "conv2d stride " + std::to_string(stride);
      smooth(n + " input", seed, finite_diff_check([&](const Tensor& t) {
               return weighted_sum(conv2d_3x3(t, cw, cb, stride, 1), wts);
             }, x));
      smooth(n + " weight", seed, finite_diff_check([&](const Tensor& t) {
               return weighted_sum(conv2d_3x3(x, t, cb, stride, 1), wts);
             }, cw));
      smooth(n + " bias", seed, finite_diff_check([&](const Tensor& t) {
               return weighted_sum(conv2d_3x3(x, cw, t, stride, 1), wts);
             }, cb));
    }

    const auto w6 = random_weights(6, rng);
    Tensor g = random_tensor({2, 3, 3, 2}, rng);
    smooth("global_avg_pool", seed,
           finite_diff_check([&](const Tensor& t) { return weighted_sum(global_avg_pool(t), w6); }, g));

    Tensor lx = random_tensor({3, 4}, rng), lw = random_tensor({2, 4}, rng), lb = random_tensor({2}, rng);
    smooth("linear input", seed,
           finite_diff_check([&](const Tensor& t) { return weighted_sum(linear(t, lw, lb), w6); }, lx));
    smooth("linear weight", seed,
           finite_diff_check([&](const Tensor& t) { return weighted_sum(linear(lx, t, lb), w6); }, lw));
    smooth("linear bias", seed,
           finite_diff_check([&](const Tensor& t) { return weighted_sum(linear(lx, lw, t), w6); }, lb));

    Tensor v = random_tensor({3, 5}, rng);
    const auto w15 = random_weights(15, rng);
    smooth("l2_normalize", seed, finite_diff_check([&](const Tensor& t) { return weighted_sum(l2_normalize(t), w15); }, v));

    Tensor f = random_tensor({2, 2, 3, 3}, rng);
    Tensor sc = random_tensor({2, 2}, rng), sh = random_tensor({2, 2}, rng);
    const auto w36 = random_weights(36, rng);
    smooth("instance_stats+normalize_scale_shift input", seed, finite_diff_check([&](const Tensor& t) {
             return weighted_sum(normalize_scale_shift(t, instance_stats(t, 1e-5), sc, sh), w36);
           }, f));
    smooth("normalize_scale_shift scale", seed, finite_diff_check([&](const Tensor& t) {
             return weighted_sum(normalize_scale_shift(f, instance_stats(f, 1e-5), t, sh), w36);
           }, sc));
    smooth("normalize_scale_shift shift", seed, finite_diff_check([&](const Tensor& t) {
             return weighted_sum(normalize_scale_shift(f, instance_stats(f, 1e-5), sc, t), w36);
           }, sh));

    Tensor img = random_tensor({2, 1, 4, 4}, rng);
    const auto w96 = random_weights(96, rng);
    smooth("replicate_channels", seed,
           finite_diff_check([&](const Tensor& t) { return weighted_sum(replicate_channels(t), w96); }, img));

    Tensor e1 = random_tensor({4, 3}, rng), e2 = random_tensor({4, 3}, rng);
    const std::vector<int> y{0, 1, 1, 0};
    smooth("contrastive_loss first", seed,
           finite_diff_check([&](const Tensor& t) { return contrastive_loss(t, e2, y, 5.0); }, e1));
    smooth("contrastive_loss second", seed,
           finite_diff_check([&](const Tensor& t) { return contrastive_loss(e1, t, y, 5.0); }, e2));

    // Composites.
    Tensor fm = random_tensor({2, 3, 5, 5}, rng);
    Tensor style = random_tensor({2, 3, 4, 4}, rng, -1.0, 2.0);
    const auto w150 = random_weights(150, rng);
    composite("instance_norm", seed, finite_diff_check([&](const Tensor& t) {
                return weighted_sum(instance_norm(t, {1e-5, {1.5, -0.5, 2.0}, {0.1, 0.2, -0.3}}), w150);
              }, fm));
    composite("adain content", seed,
              finite_diff_check([&](const Tensor& t) { return weighted_sum(adain(t, style, 1e-5), w150); }, fm));
    composite("adain style", seed,
              finite_diff_check([&](const Tensor& t) { return weighted_sum(adain(fm, t, 1e-5), w150); }, style));

    CaimParams p = perturbed_params(rng, 3, 3);
    composite("aim", seed, finite_diff_check([&](const Tensor& t) { return weighted_sum(aim(t, p), w150); }, fm));
    composite("caim_forward input", seed, finite_diff_check([&](const Tensor& t) {
                return weighted_sum(caim_forward(t, Gate::kTarget, p), w150);
              }, fm));
    composite("caim_forward instance-norm-only", seed, finite_diff_check([&](const Tensor& t) {
                return weighted_sum(caim_forward(t, Gate::kTarget, p, kInstanceNormEps,
                                                 ModulationKind::kInstanceNormOnly), w150);
              }, fm));
    const std::vector<Tensor> pts = p.tensors();
    for (std::size_t i = 0; i < pts.size(); ++i) {
      composite("caim_forward param " + std::to_string(i), seed, finite_diff_check([&](const Tensor& t) {
                  std::vector<Tensor> q = pts;
                  q[i] = t;
                  return weighted_sum(caim_forward(fm, Gate::kTarget, CaimParams::from_tensors(q)), w150);
                }, pts[i]));
    }

    // caim_forward feeding contrastive_loss through a pooled embedding head.
    Tensor hw = random_tensor({4, 3}, rng), hb = random_tensor({4}, rng);
    Tensor anchor = l2_normalize(random_tensor({2, 4}, rng));
    const std::vector<int> y2{0, 1};
    auto embed_loss = [&](const Tensor& feat, const CaimParams& q) {
      return contrastive_loss(anchor, l2_normalize(linear(global_avg_pool(caim_forward(feat, Gate::kTarget, q)), hw, hb)),
                              y2, 2.0);
    };
    composite("caim_forward+contrastive_loss input", seed,
              finite_diff_check([&](const Tensor& t) { return embed_loss(t, p); }, fm));
    composite("caim_forward+contrastive_loss fc_mu_w", seed, finite_diff_check([&](const Tensor& t) {
                CaimParams q = p;
                q.fc_mu_w = t;
                return embed_loss(fm, q);
              }, p.fc_mu_w));
    composite("caim_forward+contrastive_loss conv1_w", seed, finite_diff_check([&](const Tensor& t) {
                CaimParams q = p;
                q.conv1_w = t;
                return embed_loss(fm, q);
              }, p.conv1_w));
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 60.0, "runtime " + fmt(secs) + " s");
  return c.done(std::to_string(checks) + " checks, max err smooth " + fmt(worst_smooth) + ", composite " +
                fmt(worst_composite) + ", " + fmt(secs) + " s");
}

// ---- 3 -------------------------------------------------------------------

Outcome style_oracles() {
  Checker c;
  std::mt19937_64 rng(31);
  double in_mean = 0, in_var = 0, aim_err = 0, adain_err = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = 3 + trial % 5, w = 2 + trial % 7;
    Tensor x = random_tensor({2, 3, h, w}, rng, -4.0, 6.0);
    auto [m, v] = channel_stats(instance_norm(x, {0.0, {}, {}}));
    for (std::size_t i = 0; i < m.size(); ++i) {
      in_mean = std::max(in_mean, std::abs(m[i]));
      in_var = std::max(in_var, std::abs(1.0 - v[i]));
    }

    Tensor content = random_tensor({1, 3, h, w}, rng);
    Tensor style = random_tensor({1, 3, w + 1, h + 2}, rng, -2.0, 3.0);
    auto [sm, sv] = channel_stats(style);
    std::vector<double> sd(sv.size());
    std::transform(sv.begin(), sv.end(), sd.begin(), [](double s) { return std::sqrt(s); });
    CaimParams p = init_caim(rng(), 3, 4);
    p.fc_sigma_b = Tensor::from_data({3}, sd);
    p.fc_mu_b = Tensor::from_data({3}, sm);
    const Tensor a = aim(content, p, 0.0), b = adain(content, style, 0.0);
    for (std::size_t i = 0; i < a.numel(); ++i) aim_err = std::max(aim_err, std::abs(a.at(i) - b.at(i)));

    auto [om, ov] = channel_stats(b);
    for (std::size_t i = 0; i < om.size(); ++i) {
      adain_err = std::max(adain_err, std::abs(om[i] - sm[i]));
      adain_err = std::max(adain_err, std::abs(std::sqrt(ov[i]) - sd[i]));
    }
  }
  c.expect(in_mean < 1e-9, "IN mean " + fmt(in_mean));
  c.expect(in_var < 1e-7, "IN variance " + fmt(in_var));
  c.expect(aim_err < 1e-9, "AIM vs adain " + fmt(aim_err));
  c.expect(adain_err < 1e-6, "adain stats " + fmt(adain_err));
  return c.done("100 trials: IN |mean| " + fmt(in_mean) + ", |1-var| " + fmt(in_var) + "; AIM-adain " + fmt(aim_err) +
                "; adain stats " + fmt(adain_err));
}

// ---- 4 -------------------------------------------------------------------

double brute_far(const ScoreSet& s, double t) {
  double n = 0;
  for (double x : s.impostor) n += x >= t;
  return n / static_cast<double>(s.impostor.size());
}
double brute_frr(const ScoreSet& s, double t) {
  double n = 0;
  for (double x : s.genuine) n += x < t;
  return n / static_cast<double>(s.genuine.size());
}
std::vector<double> candidate_thresholds(const ScoreSet& s) {
  std::vector<double> t = s.genuine;
  t.insert(t.end(), s.impostor.begin(), s.impostor.end());
  std::sort(t.begin(), t.end());
  return t;
}
double brute_eer(const ScoreSet& s) {
  double gap = std::numeric_limits<double>::infinity(), best = 0;
  for (double t : candidate_thresholds(s)) {
    const double far = brute_far(s, t), frr = brute_frr(s, t);
    if (std::abs(far - frr) < gap) {
      gap = std::abs(far - frr);
      best = (far + frr) / 2;
    }
  }
  return best;
}
double brute_auc(const ScoreSet& s) {
  double w = 0;
  for (double g : s.genuine)
    for (double i : s.impostor) w += g > i ? 1.0 : (g == i ? 0.5 : 0.0);
  return w / (static_cast<double>(s.genuine.size()) * static_cast<double>(s.impostor.size()));
}
double brute_vr(const ScoreSet& s, double target) {
  auto cands = candidate_thresholds(s);
  cands.push_back(std::nextafter(*std::max_element(s.impostor.begin(), s.impostor.end()), 1e300));
  std::sort(cands.begin(), cands.end());
  for (double t : cands)
    if (brute_far(s, t) <= target) return 1.0 - brute_frr(s, t);
  return 0.0;
}
double brute_rank1(const ScoreMatrix& m) {
  double hits = 0;
  for (std::size_t p = 0; p < m.probe_ids.size(); ++p) {
    std::size_t best = 0;
    for (std::size_t g = 1; g < m.gallery_ids.size(); ++g)
      if (m.at(p, g) > m.at(p, best)) best = g;
    hits += m.gallery_ids[best] == m.probe_ids[p];
  }
  return hits / static_cast<double>(m.probe_ids.size());
}

Outcome metric_oracles() {
  Checker c;
  const ScoreSet worked{{0.9, 0.8, 0.6}, {0.7, 0.3, 0.2}};
  c.expect(std::abs(eer(worked) - 1.0 / 3.0) < 1e-9, "worked EER " + fmt(eer(worked)));
  c.expect(std::abs(auc(worked) - 8.0 / 9.0) < 1e-9, "worked AUC " + fmt(auc(worked)));
  c.expect(std::abs(eer(worked) - brute_eer(worked)) < 1e-9, "worked EER vs brute force");
  c.expect(std::abs(auc(worked) - brute_auc(worked)) < 1e-9, "worked AUC vs brute force");
  for (double far : kFarTargets)
    c.expect(std::abs(vr_at_far(worked, far).rate - brute_vr(worked, far)) < 1e-9, "worked VR@" + far_key(far));

  std::mt19937_64 rng(4004);
  std::uniform_int_distribution<int> size(1, 500);
  std::normal_distribution<double> z(0.0, 1.0);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const bool coarse = trial % 2 == 1;  // quantized scores produce ties
    auto draw = [&](double mu) { return coarse ? std::round((mu + z(rng)) * 4) / 4 : mu + z(rng); };
    ScoreSet s;
    const int ng = size(rng), ni = size(rng);
    for (int i = 0; i < ng; ++i) s.genuine.push_back(draw(1.0));
    for (int i = 0; i < ni; ++i) s.impostor.push_back(draw(0.0));
    const std::string tag = "set " + std::to_string(trial);
    worst = std::max({worst, std::abs(eer(s) - brute_eer(s)), std::abs(auc(s) - brute_auc(s))});
    c.expect(std::abs(eer(s) - brute_eer(s)) < 1e-9, tag + " EER");
    c.expect(std::abs(auc(s) - brute_auc(s)) < 1e-9, tag + " AUC");
    for (double far : kFarTargets) {
      const double d = std::abs(vr_at_far(s, far).rate - brute_vr(s, far));
      worst = std::max(worst, d);
      c.expect(d < 1e-9, tag + " VR@" + far_key(far));
    }

    // Rank-1 on a random identification matrix of at most 500 scores.
    ScoreMatrix m;
    const int gallery = 2 + trial % 19, probes = std::max(1, std::min(500 / gallery, 1 + trial * 3));
    for (int g = 0; g < gallery; ++g) m.gallery_ids.push_back(g);
    for (int p = 0; p < probes; ++p) m.probe_ids.push_back(p % gallery);
    for (int i = 0; i < gallery * probes; ++i) m.scores.push_back(draw(0.0));
    for (int p = 0; p < probes; ++p) m.scores[p * gallery + m.probe_ids[p]] += 0.5;
    const double r = rank1(m.gallery_ids, m.probe_ids, m.scores);
    worst = std::max(worst, std::abs(r - brute_rank1(m)));
    c.expect(std::abs(r - brute_rank1(m)) < 1e-9, tag + " Rank-1");
  }
  return c.done("worked example EER 1/3, AUC 8/9; 50 random sets, max deviation " + fmt(worst));
}

// ---- 5 -------------------------------------------------------------------

struct GapRun {
  Outcome outcome;
  fs::path root;
  RunConfig cfg;
  bool ok = false;
};

GapRun gap_closing() {
  GapRun run;
  run.root = scratch("default");
  const Workspace ws = Workspace::under(run.root.string());
  Workspace base_ws = ws;
  base_ws.out = (run.root / "eval_baseline").string();
  const auto t0 = Clock::now();
  std::ostringstream log;
  cmd_synth(run.cfg, ws, log);
  cmd_pretrain(run.cfg, ws, log);
  const auto base = cmd_eval(run.cfg, base_ws, true, log);
  cmd_train(run.cfg, ws, log);
  const auto adapted = cmd_eval(run.cfg, ws, false, log);
  const double secs = seconds_since(t0);
  run.ok = true;

  const double base_eer = base["cross_modal"]["eer"], src_eer = base["source_source"]["eer"];
  const double base_r1 = base["cross_modal"]["rank1"];
  const double eer_after = adapted["cross_modal"]["eer"], r1_after = adapted["cross_modal"]["rank1"];
  Checker c;
  c.expect(base_eer >= src_eer + 0.10, "(a) baseline gap too small");
  c.expect(eer_after <= 0.5 * base_eer, "(b) EER not halved");
  c.expect(r1_after >= base_r1 + 0.15, "(b) Rank-1 gain below 15 points");
  c.expect(secs < 900.0, "runtime " + fmt(secs) + " s");
  run.outcome = c.done("source-source EER " + fmt(src_eer) + "; cross-modal EER " + fmt(base_eer) + " -> " +
                       fmt(eer_after) + "; Rank-1 " + fmt(base_r1) + " -> " + fmt(r1_after) + "; " + fmt(secs) +
                       " s");
  return run;
}

// ---- 2 -------------------------------------------------------------------

Outcome gate_identity(const GapRun* trained) {
  Checker c;
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t ch = 1 + trial % 6, sz = 2 + trial % 5;
    Tensor f = random_tensor({1 + static_cast<std::size_t>(trial % 3), ch, sz, sz + 1}, rng, -10.0, 10.0);
    CaimParams p = perturbed_params(rng, ch, 1 + trial % 4);
    c.expect(caim_forward(f, Gate::kSource, p).bitwise_equal(f), "gate 0 trial " + std::to_string(trial));
    c.expect(caim_forward(f, Gate::kTarget, init_caim(rng(), ch, 1 + trial % 4)).bitwise_equal(f),
             "init identity trial " + std::to_string(trial));
  }

  // Insertion alone.
  const RunConfig cfg;
  const DatasetBundle data = make_dataset(cfg.dataset_for_fold(0));
  const auto sources = data.select(Split::kEval, Modality::kSource);
  const auto targets = data.select(Split::kEval, Modality::kTarget);
  ModelAssembly bare = build_backbone(cfg.backbone, cfg.backbone_seed());
  freeze_backbone(bare);
  for (std::size_t k = 1; k <= cfg.backbone.num_blocks; ++k) {
    const ModelAssembly with = insert_caim(bare, k, cfg.caim_seed());
    c.expect(embed_records(with, sources, Gate::kSource).bitwise_equal(embed_records(bare, sources, Gate::kSource)),
             "source embeddings after inserting K=" + std::to_string(k));
    c.expect(embed_records(with, targets, Gate::kTarget).bitwise_equal(embed_records(bare, targets, Gate::kTarget)),
             "target embeddings at init K=" + std::to_string(k));
  }

  // After full training (the default run from the gap-closing criterion).
  std::string trained_note = "full-training check not run";
  if (trained != nullptr && trained->ok) {
    const Workspace ws = Workspace::under(trained->root.string());
    const ModelAssembly backbone = load_model(ws.backbone), adapted = load_model(ws.checkpoint);
    const bool same = embed_records(adapted, sources, Gate::kSource)
                          .bitwise_equal(embed_records(backbone, sources, Gate::kSource));
    c.expect(same, "source embeddings after full training");
    c.expect(!embed_records(adapted, targets, Gate::kTarget)
                  .bitwise_equal(embed_records(backbone, targets, Gate::kTarget)),
             "training did not change target embeddings");
    trained_note = "source embeddings bitwise equal after training";
  } else {
    c.expect(false, trained_note);
  }
  return c.done("100 tensors at gate 0 and at init; insertion K=1..5; " + trained_note);
}

// ---- 6 and 7 -------------------------------------------------------------

RunConfig small_run() {
  RunConfig c;
  c.dataset.identities = 8;
  c.dataset.samples_per_identity = 4;
  c.dataset.pretrain_identities = 12;
  c.dataset.pretrain_samples_per_identity = 3;
  c.dataset.latent_dim = 8;
  c.backbone.channels = {4, 4, 6, 6, 8};
  c.backbone.embedding_dim = 16;
  c.pretrain.epochs = 2;
  c.pretrain.batch_size = 16;
  c.train.epochs = 3;
  c.train.batch_size = 8;
  c.train.lr = 1e-2;
  return c;
}

Outcome ablation_harness() {
  const fs::path root = scratch("ablation");
  Workspace ws = Workspace::under(root.string());
  ws.out = (root / "ablation").string();
  std::ostringstream log;
  const RunConfig cfg = small_run();
  cmd_synth(cfg, ws, log);
  cmd_pretrain(cfg, ws, log);
  const auto rows = cmd_ablate(cfg, ws, log);

  Checker c;
  c.expect(rows.size() == 7, std::to_string(rows.size()) + " rows");
  std::size_t k_preserved = 0, unconditional_flagged = 0;
  for (const auto& r : rows) {
    c.expect(r.check() != "UNEXPECTED", r.variant + " unexpected preservation result");
    if (r.conditional) {
      c.expect(r.source_preserved && r.check() == "PASS", r.variant + " not preserved");
      k_preserved += r.source_preserved;
    } else {
      c.expect(!r.source_preserved && r.check() == "EXPECTED_FAIL", r.variant + " preserved");
      unconditional_flagged += !r.source_preserved;
    }
  }
  const std::string csv = slurp(fs::path(ws.out) / "ablation.csv");
  c.expect(std::count(csv.begin(), csv.end(), '\n') == 8, "ablation.csv row count");
  fs::remove_all(root);
  return c.done(std::to_string(rows.size()) + " rows; " + std::to_string(k_preserved) +
                " conditional variants preserve source; " + std::to_string(unconditional_flagged) +
                " unconditional variants flagged EXPECTED_FAIL");
}

std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
  return out;
}

Outcome determinism() {
  std::vector<std::map<std::string, std::string>> trees;
  std::vector<fs::path> roots{scratch("det_a"), scratch("det_b")};
  for (const fs::path& root : roots) {
    std::ostringstream log;
    const RunConfig cfg = small_run();
    const Workspace ws = Workspace::under(root.string());
    cmd_synth(cfg, ws, log);
    cmd_pretrain(cfg, ws, log);
    cmd_train(cfg, ws, log);
    cmd_eval(cfg, ws, false, log);
    trees.push_back(tree_contents(root));
    fs::remove_all(root);
  }
  Checker c;
  std::size_t checkpoints = 0, csvs = 0, metrics = 0;
  c.expect(trees[0].size() == trees[1].size(), "file sets differ");
  for (const auto& [name, bytes] : trees[0]) {
    auto it = trees[1].find(name);
    c.expect(it != trees[1].end() && it->second == bytes, name + " differs");
    checkpoints += name.ends_with(".bin");
    csvs += name.ends_with(".csv");
    metrics += name.ends_with("metrics.json");
  }
  c.expect(checkpoints > 0 && csvs > 0 && metrics == 1, "expected outputs missing");
  return c.done(std::to_string(trees[0].size()) + " files byte-identical (" + std::to_string(checkpoints) +
                " checkpoint tensors, " + std::to_string(csvs) + " CSVs, metrics.json)");
}

Outcome guarded(const std::function<Outcome()>& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
}

}  // namespace

int main() {
  std::cout.setf(std::ios::unitbuf);
  std::map<int, Outcome> results;
  results[1] = guarded(gradcheck_suite);
  results[3] = guarded(style_oracles);
  results[4] = guarded(metric_oracles);
  GapRun gap;
  results[5] = guarded([&] {
    gap = gap_closing();
    return gap.outcome;
  });
  results[2] = guarded([&] { return gate_identity(&gap); });
  if (!gap.root.empty()) fs::remove_all(gap.root);
  results[6] = guarded(ablation_harness);
  results[7] = guarded(determinism);

  const std::map<int, std::string> names{
      {1, "gradcheck suite"},       {2, "gate and identity exactness"}, {3, "style oracles"},
      {4, "metric oracles"},        {5, "desk-scale gap closing"},      {6, "ablation harness"},
      {7, "end-to-end determinism"}};
  bool all = true;
  for (const auto& [id, r] : results) {
    std::cout << (r.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << names.at(id) << "): " << r.detail
              << '\n';
    all = all && r.pass;
  }
  return all ? 0 : 1;
}
