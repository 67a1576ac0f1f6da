#include "caim/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <unordered_map>

#include "caim/errors.hpp"
#include "caim/evaluation.hpp"

namespace caim {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(margin > 0.0)) throw ConfigError("train: margin must be > 0");
  if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
  if (batch_size < 2 || batch_size % 2 != 0) {
    throw ConfigError("train: batch_size must be an even number >= 2 (half genuine, half impostor)");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train: adam betas must lie in [0,1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be > 0");
}

TrainConfig TrainConfig::full_schedule_defaults() {
  TrainConfig c;
  c.epochs = 50;
  c.batch_size = 90;
  return c;
}

TrainConfig TrainConfig::pretrain_defaults() {
  TrainConfig c;
  c.lr = 1e-3;
  c.epochs = 12;
  c.batch_size = 64;
  return c;
}

Tensor contrastive_loss(const Tensor& e1, const Tensor& e2, std::span<const int> labels, double margin) {
  if (!(margin > 0.0)) throw ConfigError("contrastive_loss: margin must be > 0");
  if (e1.rank() != 2 || e1.shape() != e2.shape()) {
    throw ConfigError("contrastive_loss: embeddings must both be [B,D], got " + shape_to_string(e1.shape()) +
                      " and " + shape_to_string(e2.shape()));
  }
  const std::size_t batch = e1.dim(0), dim = e1.dim(1);
  if (labels.size() != batch) throw ConfigError("contrastive_loss: one label per pair required");
  const auto a = e1.data();
  const auto b = e2.data();
  std::vector<double> dist(batch);
  std::vector<int> y(labels.begin(), labels.end());
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    if (y[i] != 0 && y[i] != 1) throw ConfigError("contrastive_loss: labels must be 0 (genuine) or 1 (impostor)");
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) s += (a[i * dim + k] - b[i * dim + k]) * (a[i * dim + k] - b[i * dim + k]);
    dist[i] = std::sqrt(s);
    const double hinge = std::max(0.0, margin - dist[i]);
    total += y[i] == 0 ? 0.5 * s : 0.5 * hinge * hinge;
  }
  const double n = static_cast<double>(batch);
  return Tensor::make_result({}, {total / n}, {e1, e2}, [batch, dim, n, margin, dist, y](detail::Node& self) {
    detail::Node* p1 = self.parents[0]->requires_grad ? self.parents[0].get() : nullptr;
    detail::Node* p2 = self.parents[1]->requires_grad ? self.parents[1].get() : nullptr;
    const auto& a = self.parents[0]->value;
    const auto& b = self.parents[1]->value;
    const double upstream = self.grad[0];
    for (std::size_t i = 0; i < batch; ++i) {
      // d loss_i / d (e1_i - e2_i)
      double coeff;
      if (y[i] == 0) {
        coeff = 1.0;
      } else {
        const double hinge = std::max(0.0, margin - dist[i]);
        coeff = dist[i] > 0.0 ? -hinge / dist[i] : 0.0;
      }
      coeff *= upstream / n;
      if (coeff == 0.0) continue;
      for (std::size_t k = 0; k < dim; ++k) {
        const double g = coeff * (a[i * dim + k] - b[i * dim + k]);
        if (p1) p1->grad_buffer()[i * dim + k] += g;
        if (p2) p2->grad_buffer()[i * dim + k] -= g;
      }
    }
  });
}

PairSampler::PairSampler(std::vector<const SampleRecord*> partners, std::vector<const SampleRecord*> anchors,
                         std::size_t batch_size, std::uint64_t seed)
    : partners_(std::move(partners)), anchors_(std::move(anchors)), batch_size_(batch_size), seed_(seed) {
  if (batch_size_ < 2 || batch_size_ % 2 != 0) throw ConfigError("pair sampler: batch size must be even and >= 2");
  if (anchors_.empty()) throw ConfigError("pair sampler: no anchor samples");
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < partners_.size(); ++i) groups[partners_[i]->identity].push_back(i);
  if (groups.size() < 2) throw ConfigError("pair sampler: need at least 2 identities, got " + std::to_string(groups.size()));
  for (const auto* a : anchors_) {
    const auto it = groups.find(a->identity);
    const bool has_partner =
        it != groups.end() && std::any_of(it->second.begin(), it->second.end(),
                                          [&](std::size_t i) { return partners_[i] != a; });
    if (!has_partner) {
      throw ConfigError("pair sampler: identity " + std::to_string(a->identity) + " has no genuine partner sample");
    }
  }
  for (auto& [id, idx] : groups) {
    identity_of_slot_.push_back(id);
    by_identity_.push_back(std::move(idx));
  }
  with_replacement_ = anchors_.size() < batch_size_ / 2;
}

std::vector<PairBatch> PairSampler::epoch(std::size_t index) const {
  std::mt19937_64 rng(hash64(seed_, index, 0x70616972));
  const std::size_t half = batch_size_ / 2, n = anchors_.size();
  std::vector<std::size_t> genuine_order, impostor_order;
  if (with_replacement_) {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t i = 0; i < half; ++i) genuine_order.push_back(pick(rng));
    for (std::size_t i = 0; i < half; ++i) impostor_order.push_back(pick(rng));
  } else {
    genuine_order.resize(n);
    for (std::size_t i = 0; i < n; ++i) genuine_order[i] = i;
    impostor_order = genuine_order;
    std::shuffle(genuine_order.begin(), genuine_order.end(), rng);
    std::shuffle(impostor_order.begin(), impostor_order.end(), rng);
  }

  auto uniform = [&rng](std::size_t count) { return std::uniform_int_distribution<std::size_t>(0, count - 1)(rng); };
  auto genuine_partner = [&](const SampleRecord* a) {
    const auto slot = static_cast<std::size_t>(
        std::lower_bound(identity_of_slot_.begin(), identity_of_slot_.end(), a->identity) - identity_of_slot_.begin());
    std::vector<std::size_t> options;
    for (std::size_t i : by_identity_[slot])
      if (partners_[i] != a) options.push_back(i);
    return partners_[options[uniform(options.size())]];
  };
  auto impostor_partner = [&](const SampleRecord* a) {
    std::size_t slot;
    do {
      slot = uniform(by_identity_.size());
    } while (identity_of_slot_[slot] == a->identity);
    const auto& members = by_identity_[slot];
    return partners_[members[uniform(members.size())]];
  };

  std::vector<PairBatch> batches;
  for (std::size_t start = 0; start < genuine_order.size(); start += half) {
    const std::size_t stop = std::min(genuine_order.size(), start + half);
    PairBatch b;
    for (std::size_t i = start; i < stop; ++i) {
      const SampleRecord* a = anchors_[genuine_order[i]];
      b.first.push_back(genuine_partner(a));
      b.second.push_back(a);
      b.labels.push_back(0);
    }
    for (std::size_t i = start; i < stop; ++i) {
      const SampleRecord* a = anchors_[impostor_order[i]];
      b.first.push_back(impostor_partner(a));
      b.second.push_back(a);
      b.labels.push_back(1);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

PairBatch sample_pairs(const DatasetBundle& dataset, std::size_t batch_size, std::uint64_t seed) {
  PairSampler sampler(dataset.select(Split::kTrain, Modality::kSource), dataset.select(Split::kTrain, Modality::kTarget),
                      batch_size, seed);
  return sampler.epoch(0).front();
}

void adam_update(std::span<Tensor> params, std::span<const std::vector<double>> grads, AdamState& state,
                 const TrainConfig& cfg) {
  if (grads.size() != params.size()) throw ConfigError("adam: one gradient per parameter tensor required");
  if (state.m.empty()) {
    for (const Tensor& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ConfigError("adam: state does not match the parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel() || grads[i].size() != params[i].numel()) {
      throw ConfigError("adam: shape mismatch at tensor " + std::to_string(i));
    }
    for (double g : grads[i]) {
      if (!std::isfinite(g)) {
        throw NumericError("adam: non-finite gradient in parameter tensor " + std::to_string(i) + " of shape " +
                           shape_to_string(params[i].shape()) + "; step aborted");
      }
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto value = params[i].mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      value[k] -= cfg.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.adam_eps);
    }
  }
}

void adam_update(std::span<Tensor> params, AdamState& state, const TrainConfig& cfg) {
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (const Tensor& p : params) grads.push_back(p.grad());
  adam_update(params, grads, state, cfg);
  for (Tensor& p : params) p.zero_grad();
}

namespace {

struct Routing {
  Gate first_gate;
  Gate second_gate;
  // The first branch is constant during training; embed it once.
  bool cache_first;
};

TrainResult run_contrastive(ModelAssembly model, const PairSampler& sampler, const Routing& routing,
                            const TrainConfig& cfg, const std::function<double(const ModelAssembly&)>& holdout,
                            const char* stage) {
  TrainResult result;
  result.sampled_with_replacement = sampler.with_replacement();
  std::vector<Tensor> params = model.trainable_parameters();
  AdamState state;

  std::unordered_map<const SampleRecord*, std::size_t> cache_row;
  Tensor cache;
  const std::size_t dim = model.config.embedding_dim;
  if (routing.cache_first && cfg.epochs > 0) {
    cache = embed_records(model, sampler.partners(), routing.first_gate);
    for (const auto* r : sampler.partners()) cache_row.emplace(r, cache_row.size());
  }

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<PairBatch> batches = sampler.epoch(epoch);
    double loss_sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const PairBatch& b = batches[bi];
      try {
        Tensor first;
        if (routing.cache_first) {
          std::vector<double> rows;
          rows.reserve(b.size() * dim);
          for (const auto* r : b.first) {
            const auto row = cache.data().subspan(cache_row.at(r) * dim, dim);
            rows.insert(rows.end(), row.begin(), row.end());
          }
          first = Tensor::from_data({b.size(), dim}, std::move(rows));
        } else {
          first = forward_embed(model, stack_images(b.first), routing.first_gate);
        }
        const Tensor second = forward_embed(model, stack_images(b.second), routing.second_gate);
        const Tensor loss = contrastive_loss(first, second, b.labels, cfg.margin);
        if (!std::isfinite(loss.item())) throw NumericError("loss is NaN");
        if (loss.requires_grad()) {
          loss.backward();
          adam_update(params, state, cfg);
        }
        loss_sum += loss.item() * static_cast<double>(b.size());
        pairs += b.size();
      } catch (const NumericError& e) {
        throw NumericError(std::string(stage) + ": diverged at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(bi + 1) + ": " + e.what());
      }
    }
    result.history.push_back({epoch + 1, loss_sum / static_cast<double>(pairs), holdout(model)});
  }
  result.model = std::move(model);
  return result;
}

}  // namespace

TrainResult train_caim(const ModelAssembly& model, const DatasetBundle& dataset, const TrainConfig& cfg) {
  cfg.validate();
  if (model.caim.empty()) throw ConfigError("train_caim: model has no CAIM blocks; call insert_caim first");
  if (!model.backbone_frozen) throw ConfigError("train_caim: backbone must be frozen");
  PairSampler sampler(dataset.select(Split::kTrain, Modality::kSource), dataset.select(Split::kTrain, Modality::kTarget),
                      cfg.batch_size, cfg.seed);
  // With a conditional model the source branch never reaches a CAIM block.
  const Routing routing{Gate::kSource, Gate::kTarget, model.conditional};
  return run_contrastive(model.clone(), sampler, routing, cfg,
                         [&dataset](const ModelAssembly& m) { return cross_modal_eer(m, dataset); }, "train_caim");
}

TrainResult pretrain_source(const ModelAssembly& model, const DatasetBundle& dataset, const TrainConfig& cfg) {
  cfg.validate();
  if (!model.caim.empty()) throw ConfigError("pretrain_source: model already has CAIM blocks");
  if (dataset.pretrain_ids.size() < 2) {
    throw ConfigError("pretrain_source: need at least 2 pretraining identities, got " +
                      std::to_string(dataset.pretrain_ids.size()));
  }
  ModelAssembly m = model.clone();
  m.backbone.set_requires_grad(true);
  m.backbone_frozen = false;
  const auto pool = dataset.select(Split::kPretrain, Modality::kSource);
  PairSampler sampler(pool, pool, cfg.batch_size, cfg.seed);
  TrainResult r = run_contrastive(std::move(m), sampler, {Gate::kSource, Gate::kSource, false}, cfg,
                                  [&dataset](const ModelAssembly& x) { return source_source_eer(x, dataset); },
                                  "pretrain_source");
  freeze_backbone(r.model);
  return r;
}

json to_json(const TrainConfig& c) {
  return json{{"margin", c.margin},   {"lr", c.lr},       {"epochs", c.epochs},     {"batch_size", c.batch_size},
              {"beta1", c.beta1},     {"beta2", c.beta2}, {"adam_eps", c.adam_eps}, {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  static const std::set<std::string> kKeys{"margin", "lr", "epochs", "batch_size", "beta1", "beta2", "adam_eps", "seed"};
  try {
    for (const auto& [k, v] : j.items())
      if (!kKeys.count(k)) throw ConfigError("train: unknown key '" + k + "'");
    if (j.contains("margin")) c.margin = j.at("margin").get<double>();
    if (j.contains("lr")) c.lr = j.at("lr").get<double>();
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<std::size_t>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("beta1")) c.beta1 = j.at("beta1").get<double>();
    if (j.contains("beta2")) c.beta2 = j.at("beta2").get<double>();
    if (j.contains("adam_eps")) c.adam_eps = j.at("adam_eps").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  return c;
}

}  // namespace caim
