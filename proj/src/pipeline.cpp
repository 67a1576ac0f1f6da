#include "caim/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "caim/errors.hpp"

namespace caim {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kBackboneStream = 1;
constexpr std::uint64_t kPretrainStream = 2;
constexpr std::uint64_t kTrainStream = 3;
constexpr std::uint64_t kCaimStream = 4;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::error_code ec;
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent, ec);
  if (ec) throw IoError("cannot create " + parent.string() + ": " + ec.message());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

json without(json j, std::initializer_list<const char*> keys) {
  for (const char* k : keys) j.erase(k);
  return j;
}

void reject_keys(const json& j, const char* section, std::initializer_list<const char*> keys) {
  for (const char* k : keys) {
    if (j.contains(k)) {
      throw ConfigError(std::string(section) + "." + k + " is derived from the top-level seed and cannot be set");
    }
  }
}

std::string sample_key(const SampleRecord& r) { return std::to_string(r.identity) + "_" + std::to_string(r.index); }

const char* modulation_name(ModulationKind k) { return k == ModulationKind::kAdaptive ? "aim" : "instance_norm"; }

// Flattens the scalar metrics of a report for fold aggregation.
std::vector<std::pair<std::string, double>> flat_metrics(const MetricsReport& r) {
  std::vector<std::pair<std::string, double>> out{{"auc", r.auc}, {"eer", r.eer}, {"rank1", r.rank1}};
  for (const auto& [far, rate] : r.vr_at_far) out.emplace_back("vr_at_far_" + far_key(far), rate);
  return out;
}

json aggregate(const std::vector<MetricsReport>& reports) {
  json mean = json::object(), sd = json::object(), text = json::object();
  const auto keys = flat_metrics(reports.front());
  const double n = static_cast<double>(reports.size());
  for (std::size_t k = 0; k < keys.size(); ++k) {
    double m = 0.0;
    for (const auto& r : reports) m += flat_metrics(r)[k].second;
    m /= n;
    double v = 0.0;
    for (const auto& r : reports) v += std::pow(flat_metrics(r)[k].second - m, 2);
    const double s = reports.size() > 1 ? std::sqrt(v / (n - 1.0)) : 0.0;
    mean[keys[k].first] = m;
    sd[keys[k].first] = s;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f ± %.2f", 100.0 * m, 100.0 * s);
    text[keys[k].first] = buf;
  }
  return {{"mean", mean}, {"std", sd}, {"percent", text}};
}

void log_report(std::ostream& log, const char* label, const MetricsReport& r) {
  log << label << ": AUC " << fmt(r.auc) << "  EER " << fmt(r.eer) << "  Rank-1 " << fmt(r.rank1);
  for (const auto& [far, rate] : r.vr_at_far) log << "  VR@" << far_key(far) << " " << fmt(rate);
  log << '\n';
}

}  // namespace

void RunConfig::validate() const {
  dataset.validate();
  backbone.validate();
  pretrain.validate();
  train.validate();
  if (backbone.input_size != dataset.image_size) {
    throw ConfigError("backbone.input_size (" + std::to_string(backbone.input_size) + ") must equal dataset.image_size (" +
                      std::to_string(dataset.image_size) + ")");
  }
  if (caim_blocks < 1 || caim_blocks > backbone.num_blocks) {
    throw ConfigError("caim_blocks must be in [1, " + std::to_string(backbone.num_blocks) + "]");
  }
  if (folds < 1) throw ConfigError("folds must be >= 1");
}

DatasetConfig RunConfig::dataset_for_fold(std::size_t fold) const {
  DatasetConfig d = dataset;
  d.seed = seed;
  d.fold_seed = seed + fold;
  return d;
}

std::uint64_t RunConfig::backbone_seed() const { return hash64(seed, kBackboneStream); }
std::uint64_t RunConfig::caim_seed() const { return hash64(seed, kCaimStream); }

TrainConfig RunConfig::pretrain_config() const {
  TrainConfig t = pretrain;
  t.seed = hash64(seed, kPretrainStream);
  return t;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = hash64(seed, kTrainStream);
  return t;
}

json to_json(const RunConfig& c) {
  return json{{"seed", c.seed},
              {"dataset", without(to_json(c.dataset), {"seed", "fold_seed"})},
              {"backbone", to_json(c.backbone)},
              {"pretrain", without(to_json(c.pretrain), {"seed"})},
              {"train", without(to_json(c.train), {"seed"})},
              {"caim_blocks", c.caim_blocks},
              {"folds", c.folds}};
}

RunConfig run_config_from_json(const json& j) {
  static const std::set<std::string> kKeys{"seed", "dataset", "backbone", "pretrain", "train", "caim_blocks", "folds"};
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!kKeys.count(k)) throw ConfigError("config: unknown key '" + k + "'");
  RunConfig c;
  try {
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("caim_blocks")) c.caim_blocks = j.at("caim_blocks").get<std::size_t>();
    if (j.contains("folds")) c.folds = j.at("folds").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (j.contains("dataset")) {
    reject_keys(j.at("dataset"), "dataset", {"seed", "fold_seed"});
    c.dataset = dataset_config_from_json(j.at("dataset"), c.dataset);
  }
  if (j.contains("backbone")) c.backbone = backbone_config_from_json(j.at("backbone"), c.backbone);
  if (j.contains("pretrain")) {
    reject_keys(j.at("pretrain"), "pretrain", {"seed"});
    c.pretrain = train_config_from_json(j.at("pretrain"), c.pretrain);
  }
  if (j.contains("train")) {
    reject_keys(j.at("train"), "train", {"seed"});
    c.train = train_config_from_json(j.at("train"), c.train);
  }
  c.validate();
  return c;
}

RunConfig resolve_run_config(const std::optional<std::string>& config_path, const std::vector<std::string>& overrides,
                             const char* env_seed) {
  json j = to_json(RunConfig{});
  if (config_path) {
    std::ifstream in(*config_path);
    if (!in) throw IoError("cannot read config file " + *config_path);
    json file;
    try {
      file = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config file " + *config_path + " is not valid JSON: " + e.what());
    }
    if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
    j.merge_patch(file);
  }
  if (env_seed && *env_seed) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(env_seed, &used);
      if (used != std::string(env_seed).size()) throw std::invalid_argument(env_seed);
      j["seed"] = v;
    } catch (const std::exception&) {
      throw ConfigError(std::string("CAIM_SEED must be a non-negative integer, got '") + env_seed + "'");
    }
  }
  for (std::string o : overrides) {
    if (o.rfind("--", 0) == 0) o = o.substr(2);
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' must look like key.path=value");
    const std::string path = o.substr(0, eq), raw = o.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    json* node = &j;
    std::size_t start = 0;
    while (true) {
      const std::size_t dot = path.find('.', start);
      const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (!node->is_object() || !node->contains(key)) throw ConfigError("unknown config key '" + path + "'");
      node = &(*node)[key];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    *node = value;
  }
  return run_config_from_json(j);
}

Workspace Workspace::under(const std::string& root) {
  const fs::path r(root);
  return {(r / "data").string(), (r / "backbone").string(), (r / "model").string(), (r / "eval").string()};
}

std::string AblationRow::check() const {
  if (source_preserved == expected_preserved) return expected_preserved ? "PASS" : "EXPECTED_FAIL";
  return "UNEXPECTED";
}

void write_json(const std::string& path, const json& j) { open_out(path) << j.dump(2) << '\n'; }

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history) {
  auto out = open_out(path);
  out << "epoch,mean_loss,holdout_eer\n";
  for (const auto& h : history) out << h.epoch << ',' << fmt(h.mean_loss) << ',' << fmt(h.holdout_eer) << '\n';
}

void write_scores_csv(const std::string& path, const ScoreMatrix& m, const std::vector<const SampleRecord*>& gallery,
                      const std::vector<const SampleRecord*>& probes) {
  auto out = open_out(path);
  out << "probe_id,gallery_id,score,genuine_flag\n";
  for (std::size_t p = 0; p < probes.size(); ++p)
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      out << sample_key(*probes[p]) << ',' << sample_key(*gallery[g]) << ',' << fmt(m.at(p, g)) << ','
          << (probes[p]->identity == gallery[g]->identity ? 1 : 0) << '\n';
    }
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
  auto out = open_out(path);
  out << "variant,blocks,conditional,modulation,auc,eer,rank1";
  for (double far : kFarTargets) out << ",vr_at_far_" << far_key(far);
  out << ",source_eer,source_preserved,preservation_check\n";
  for (const auto& r : rows) {
    const MetricsReport& x = r.result.cross_modal;
    out << r.variant << ',' << r.blocks << ',' << (r.conditional ? 1 : 0) << ',' << modulation_name(r.kind) << ','
        << fmt(x.auc) << ',' << fmt(x.eer) << ',' << fmt(x.rank1);
    for (double far : kFarTargets) out << ',' << fmt(x.vr_at_far.at(far));
    out << ',' << fmt(r.result.source_source.eer) << ',' << (r.source_preserved ? 1 : 0) << ',' << r.check() << '\n';
  }
}

DatasetBundle cmd_synth(const RunConfig& cfg, const Workspace& ws, std::ostream& log) {
  DatasetBundle d = make_dataset(cfg.dataset_for_fold(0));
  save_dataset(d, ws.data);
  write_json((fs::path(ws.data) / "resolved_config.json").string(), to_json(cfg));
  log << "dataset: " << d.identities.size() << " identities (" << d.train_ids.size() << " train, " << d.eval_ids.size()
      << " eval, " << d.pretrain_ids.size() << " pretrain); " << d.train.size() << " train, " << d.eval.size()
      << " eval, " << d.pretrain.size() << " pretrain records; gap strength " << d.config.transform.gap_strength
      << '\n';
  return d;
}

PretrainOutcome cmd_pretrain(const RunConfig& cfg, const Workspace& ws, std::ostream& log) {
  const DatasetBundle d = load_dataset(ws.data);
  TrainResult r = pretrain_source(build_backbone(cfg.backbone, cfg.backbone_seed()), d, cfg.pretrain_config());
  save_model(r.model, ws.backbone);
  write_history_csv((fs::path(ws.backbone) / "history.csv").string(), r.history);
  write_json((fs::path(ws.backbone) / "resolved_config.json").string(), to_json(cfg));
  for (const auto& h : r.history) {
    log << "pretrain epoch " << h.epoch << ": loss " << fmt(h.mean_loss) << ", holdout source-source EER "
        << fmt(h.holdout_eer) << '\n';
  }
  return {std::move(r.model), std::move(r.history)};
}

TrainResult train_variant(const RunConfig& cfg, const ModelAssembly& frozen, const DatasetBundle& data,
                          std::size_t blocks, bool conditional, ModulationKind kind) {
  ModelAssembly m = insert_caim(frozen, blocks, cfg.caim_seed());
  m.conditional = conditional;
  m.kind = kind;
  return train_caim(m, data, cfg.train_config());
}

TrainOutcome cmd_train(const RunConfig& cfg, const Workspace& ws, std::ostream& log) {
  const DatasetBundle d = load_dataset(ws.data);
  const ModelAssembly frozen = load_model(ws.backbone);
  if (!frozen.caim.empty()) throw ConfigError("backbone checkpoint already contains CAIM blocks");
  TrainResult r = train_variant(cfg, frozen, d, cfg.caim_blocks, true, ModulationKind::kAdaptive);
  if (r.sampled_with_replacement) log << "warning: training pool smaller than half a batch; pairs drawn with replacement\n";
  save_model(r.model, ws.checkpoint);
  write_history_csv((fs::path(ws.checkpoint) / "history.csv").string(), r.history);
  write_json((fs::path(ws.checkpoint) / "resolved_config.json").string(), to_json(cfg));
  for (const auto& h : r.history) {
    log << "epoch " << h.epoch << ": loss " << fmt(h.mean_loss) << ", holdout cross-modal EER " << fmt(h.holdout_eer)
        << '\n';
  }
  return {std::move(r.model), std::move(r.history)};
}

json cmd_eval(const RunConfig& cfg, const Workspace& ws, bool baseline, std::ostream& log) {
  json out;
  if (cfg.folds == 1) {
    const DatasetBundle d = load_dataset(ws.data);
    const ModelAssembly model = load_model(baseline ? ws.backbone : ws.checkpoint);
    if (baseline && !model.caim.empty()) throw ConfigError("--baseline expects a checkpoint without CAIM blocks");
    const EvaluationResult r = evaluate(model, d);
    out = to_json(r);
    out["model"] = baseline ? "baseline" : "caim";
    out["caim_positions"] = model.caim_positions();
    write_scores_csv((fs::path(ws.out) / "scores.csv").string(), r.cross_scores, d.gallery(), d.target_probes());
    log_report(log, "cross-modal", r.cross_modal);
    log_report(log, "source-source", r.source_source);
    if (r.cross_modal.small_sample_far) log << "note: fewer impostors than 1/FAR for the smallest FAR targets\n";
  } else {
    const ModelAssembly frozen = load_model(ws.backbone);
    std::vector<MetricsReport> cross, source;
    json per_fold = json::array();
    for (std::size_t f = 0; f < cfg.folds; ++f) {
      const DatasetBundle d = make_dataset(cfg.dataset_for_fold(f));
      const ModelAssembly model =
          baseline ? frozen : train_variant(cfg, frozen, d, cfg.caim_blocks, true, ModulationKind::kAdaptive).model;
      const EvaluationResult r = evaluate(model, d);
      cross.push_back(r.cross_modal);
      source.push_back(r.source_source);
      per_fold.push_back(to_json(r));
      log << "fold " << f + 1 << "/" << cfg.folds << ": ";
      log_report(log, "cross-modal", r.cross_modal);
    }
    out = {{"model", baseline ? "baseline" : "caim"},
           {"folds", cfg.folds},
           {"per_fold", per_fold},
           {"cross_modal", aggregate(cross)},
           {"source_source", aggregate(source)}};
    for (const auto& [k, v] : out["cross_modal"]["percent"].items()) log << "  " << k << ": " << v.get<std::string>() << '\n';
  }
  write_json((fs::path(ws.out) / "metrics.json").string(), out);
  write_json((fs::path(ws.out) / "resolved_config.json").string(), to_json(cfg));
  return out;
}

std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, const Workspace& ws, std::ostream& log) {
  const DatasetBundle d = load_dataset(ws.data);
  const ModelAssembly frozen = load_model(ws.backbone);
  if (!frozen.caim.empty()) throw ConfigError("backbone checkpoint already contains CAIM blocks");
  const auto sources = d.select(Split::kEval, Modality::kSource);
  const Tensor reference = embed_records(frozen, sources, Gate::kSource);

  struct Variant {
    std::string name;
    std::size_t blocks;
    bool conditional;
    ModulationKind kind;
  };
  std::vector<Variant> variants;
  for (std::size_t k = 1; k <= frozen.config.num_blocks; ++k) {
    variants.push_back({"caim_k" + std::to_string(k), k, true, ModulationKind::kAdaptive});
  }
  variants.push_back({"unconditional_aim", cfg.caim_blocks, false, ModulationKind::kAdaptive});
  variants.push_back({"unconditional_in", cfg.caim_blocks, false, ModulationKind::kInstanceNormOnly});

  std::vector<AblationRow> rows;
  for (const Variant& v : variants) {
    TrainResult r = train_variant(cfg, frozen, d, v.blocks, v.conditional, v.kind);
    AblationRow row;
    row.variant = v.name;
    row.blocks = v.blocks;
    row.conditional = v.conditional;
    row.kind = v.kind;
    row.result = evaluate(r.model, d);
    row.source_preserved = embed_records(r.model, sources, Gate::kSource).bitwise_equal(reference);
    row.expected_preserved = v.conditional;
    const fs::path dir = fs::path(ws.out) / v.name;
    save_model(r.model, dir.string());
    write_history_csv((dir / "history.csv").string(), r.history);
    write_json((dir / "metrics.json").string(), to_json(row.result));
    log << v.name << ": cross-modal EER " << fmt(row.result.cross_modal.eer) << ", Rank-1 "
        << fmt(row.result.cross_modal.rank1) << ", source preserved " << (row.source_preserved ? "yes" : "no") << " ["
        << row.check() << "]\n";
    rows.push_back(std::move(row));
  }
  write_ablation_csv((fs::path(ws.out) / "ablation.csv").string(), rows);
  write_json((fs::path(ws.out) / "resolved_config.json").string(), to_json(cfg));
  return rows;
}

}  // namespace caim
