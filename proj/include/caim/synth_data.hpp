#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "caim/tensor.hpp"
#include "json.hpp"

namespace caim {

enum class Modality { kSource, kTarget };
std::string_view modality_name(Modality m);
Modality modality_from_name(std::string_view name);

enum class Split { kTrain, kEval, kPretrain };
std::string_view split_name(Split s);

/// splitmix64-based combiner used for every per-sample seed.
std::uint64_t hash64(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0, std::uint64_t d = 0);

struct Identity {
  int id = 0;
  std::vector<double> latent;
  bool operator==(const Identity&) const = default;
};

struct SampleRecord {
  int identity = 0;
  Modality modality = Modality::kSource;
  std::size_t index = 0;
  std::uint64_t nuisance_seed = 0;
  Tensor image;  // [C,H,W], values k/255

  bool bitwise_equal(const SampleRecord& other) const;
};

/// Synthetic sensor change applied to a source rendering. Every effect is
/// scaled by gap_strength; at 0 the target equals the source.
struct ModalityTransform {
  std::vector<double> gain{0.5, 0.5, 0.5};
  std::vector<double> offset{0.2, 0.2, 0.2};
  bool invert = true;
  std::size_t blur_radius = 1;
  double noise_sigma = 0.02;
  bool collapse = true;
  double gap_strength = 0.7;

  void validate() const;
  bool operator==(const ModalityTransform&) const = default;
};

struct DatasetConfig {
  std::size_t identities = 40;
  std::size_t samples_per_identity = 8;  // per modality
  std::size_t pretrain_identities = 200;
  std::size_t pretrain_samples_per_identity = 4;
  double train_fraction = 0.5;
  std::size_t image_size = 32;
  std::size_t latent_dim = 16;
  std::uint64_t seed = 0;
  std::uint64_t fold_seed = 0;
  ModalityTransform transform;

  void validate() const;
  bool operator==(const DatasetConfig&) const = default;
};

/// Identity-disjoint train/eval split of a paired two-modality pool plus a
/// source-only pretraining pool.
///
/// Evaluation protocol: source sample 0 of each eval identity is the gallery,
/// the remaining source samples are source-source probes, and all target
/// samples are cross-modal probes.
struct DatasetBundle {
  DatasetConfig config;
  std::vector<Identity> identities;
  std::vector<int> train_ids, eval_ids, pretrain_ids;
  std::vector<SampleRecord> train, eval, pretrain;

  const std::vector<SampleRecord>& split(Split s) const;
  std::vector<const SampleRecord*> select(Split s, Modality m) const;
  std::vector<const SampleRecord*> gallery() const;
  std::vector<const SampleRecord*> source_probes() const;
  std::vector<const SampleRecord*> target_probes() const;

  bool bitwise_equal(const DatasetBundle& other) const;
};

std::vector<Identity> generate_identities(std::size_t n, std::size_t latent_dim, std::uint64_t seed);

// G smooth Gabor atoms on an HxW grid, unit RMS each. Depends only on (G, H, W).
struct BasisAtlas {
  std::size_t count = 0, height = 0, width = 0;
  struct Atom {
    double cx, cy, sigma, fx, fy, phase, norm;
  };
  std::vector<Atom> atoms;

  static BasisAtlas build(std::size_t count, std::size_t height, std::size_t width);
  double value(std::size_t g, double x, double y) const;
};

SampleRecord render_source(const Identity& identity, std::uint64_t nuisance_seed, std::size_t height,
                           std::size_t width, std::size_t index = 0);
SampleRecord render_source(const Identity& identity, std::uint64_t nuisance_seed, const BasisAtlas& atlas,
                           std::size_t index = 0);
SampleRecord apply_modality(const SampleRecord& source, const ModalityTransform& t, std::uint64_t seed);

DatasetBundle make_dataset(const DatasetConfig& cfg);

void save_dataset(const DatasetBundle& d, const std::string& dir);
DatasetBundle load_dataset(const std::string& dir);

// Stacks equally shaped images into [B,C,H,W].
Tensor stack_images(const std::vector<const SampleRecord*>& samples);

nlohmann::json to_json(const DatasetConfig& cfg);
DatasetConfig dataset_config_from_json(const nlohmann::json& j, DatasetConfig base = {});

}  // namespace caim
