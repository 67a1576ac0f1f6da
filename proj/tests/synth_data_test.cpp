#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "caim/errors.hpp"
#include "caim/synth_data.hpp"

namespace caim {
namespace {

namespace fs = std::filesystem;

double pixel_distance(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += (a.at(i) - b.at(i)) * (a.at(i) - b.at(i));
  return std::sqrt(s);
}

DatasetConfig small_config() {
  DatasetConfig cfg;
  cfg.identities = 8;
  cfg.samples_per_identity = 3;
  cfg.pretrain_identities = 4;
  cfg.pretrain_samples_per_identity = 2;
  cfg.image_size = 12;
  cfg.latent_dim = 6;
  cfg.seed = 5;
  return cfg;
}

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("caim_synth_" + name);
  fs::remove_all(p);
  return p;
}

TEST(GenerateIdentities, SeededAndDistinct) {
  auto a = generate_identities(5, 16, 3);
  auto b = generate_identities(5, 16, 3);
  auto c = generate_identities(5, 16, 4);
  EXPECT_EQ(a, b);
  EXPECT_NE(a[0].latent, c[0].latent);
  auto two = generate_identities(2, 16, 0);
  EXPECT_NE(two[0].id, two[1].id);
  EXPECT_NE(two[0].latent, two[1].latent);
}

TEST(GenerateIdentities, LatentMeanNearZero) {
  auto ids = generate_identities(1000, 16, 11);
  for (std::size_t g = 0; g < 16; ++g) {
    double m = 0.0;
    for (const auto& i : ids) m += i.latent[g];
    EXPECT_LT(std::abs(m / 1000.0), 0.1) << "coordinate " << g;
  }
}

TEST(RenderSource, DeterministicClippedQuantized) {
  auto ids = generate_identities(2, 16, 1);
  SampleRecord a = render_source(ids[0], 99, 32, 32);
  SampleRecord b = render_source(ids[0], 99, 32, 32);
  EXPECT_TRUE(a.bitwise_equal(b));
  EXPECT_EQ(a.image.shape(), (Shape{3, 32, 32}));
  for (double v : a.image.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_EQ(v, std::round(v * 255.0) / 255.0);
  }
}

TEST(RenderSource, NuisanceSmallerThanIdentityVariation) {
  auto ids = generate_identities(20, 16, 2);
  const BasisAtlas atlas = BasisAtlas::build(16, 32, 32);
  double intra = 0.0, cross = 0.0;
  int n_intra = 0, n_cross = 0;
  for (int draw = 0; draw < 100; ++draw) {
    const auto& id = ids[draw % 20];
    const auto& other = ids[(draw + 7) % 20];
    SampleRecord a = render_source(id, hash64(draw, 1), atlas);
    SampleRecord b = render_source(id, hash64(draw, 2), atlas);
    SampleRecord c = render_source(other, hash64(draw, 3), atlas);
    EXPECT_FALSE(a.image.bitwise_equal(b.image));
    intra += pixel_distance(a.image, b.image);
    cross += pixel_distance(a.image, c.image);
    ++n_intra;
    ++n_cross;
  }
  EXPECT_LT(intra / n_intra, cross / n_cross);
}

TEST(ApplyModality, ZeroGapReproducesSource) {
  auto ids = generate_identities(3, 16, 4);
  ModalityTransform t;
  t.gap_strength = 0.0;
  for (const auto& id : ids) {
    SampleRecord src = render_source(id, 17, 32, 32);
    SampleRecord tgt = apply_modality(src, t, 5);
    EXPECT_EQ(tgt.modality, Modality::kTarget);
    EXPECT_EQ(tgt.identity, src.identity);
    ASSERT_EQ(tgt.image.shape(), (Shape{1, 32, 32}));
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 32 * 32; ++i) EXPECT_EQ(src.image.at(c * 1024 + i), tgt.image.at(i));
  }
}

TEST(ApplyModality, FullInversionIsOneMinusPixel) {
  auto ids = generate_identities(1, 16, 4);
  SampleRecord src = render_source(ids[0], 3, 16, 16);
  ModalityTransform t;
  t.gap_strength = 1.0;
  t.gain = {1, 1, 1};
  t.offset = {0, 0, 0};
  t.blur_radius = 0;
  t.noise_sigma = 0.0;
  t.collapse = false;
  SampleRecord tgt = apply_modality(src, t, 1);
  for (std::size_t i = 0; i < src.image.numel(); ++i) EXPECT_NEAR(tgt.image.at(i), 1.0 - src.image.at(i), 1e-12);
}

TEST(ApplyModality, DefaultGapShiftsStatistics) {
  auto ids = generate_identities(1, 16, 4);
  SampleRecord src = render_source(ids[0], 3, 32, 32);
  SampleRecord tgt = apply_modality(src, ModalityTransform{}, 1);
  auto stats = [](const Tensor& t, std::size_t n) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < n; ++i) m += t.at(i);
    m /= n;
    for (std::size_t i = 0; i < n; ++i) v += (t.at(i) - m) * (t.at(i) - m);
    return std::pair{m, std::sqrt(v / n)};
  };
  auto [ms, ss] = stats(src.image, 1024);
  auto [mt, st] = stats(tgt.image, 1024);
  EXPECT_LT(st, 0.5 * ss);
  // Inverted: correlation with the source is negative.
  double cov = 0;
  for (std::size_t i = 0; i < 1024; ++i) cov += (src.image.at(i) - ms) * (tgt.image.at(i) - mt);
  EXPECT_LT(cov, 0.0);
}

TEST(MakeDataset, DisjointDeterministicSplit) {
  DatasetConfig cfg;
  cfg.identities = 40;
  cfg.samples_per_identity = 2;
  cfg.pretrain_identities = 0;
  cfg.image_size = 8;
  cfg.latent_dim = 4;
  DatasetBundle a = make_dataset(cfg);
  EXPECT_EQ(a.train_ids.size(), 20u);
  EXPECT_EQ(a.eval_ids.size(), 20u);
  std::set<int> train(a.train_ids.begin(), a.train_ids.end());
  for (int id : a.eval_ids) EXPECT_FALSE(train.count(id));
  DatasetBundle b = make_dataset(cfg);
  EXPECT_TRUE(a.bitwise_equal(b));
  cfg.fold_seed = 1;
  DatasetBundle c = make_dataset(cfg);
  EXPECT_NE(a.train_ids, c.train_ids);
  EXPECT_EQ(a.identities, c.identities);
}

TEST(MakeDataset, EveryEvalIdentityHasGalleryAndProbes) {
  DatasetBundle d = make_dataset(small_config());
  std::set<int> gallery, probes;
  for (const auto* r : d.gallery()) gallery.insert(r->identity);
  for (const auto* r : d.target_probes()) probes.insert(r->identity);
  for (int id : d.eval_ids) {
    EXPECT_TRUE(gallery.count(id));
    EXPECT_TRUE(probes.count(id));
  }
  EXPECT_EQ(d.gallery().size(), d.eval_ids.size());
  EXPECT_EQ(d.source_probes().size(), d.eval_ids.size() * 2);
  for (const auto& r : d.pretrain) {
    EXPECT_EQ(r.modality, Modality::kSource);
    EXPECT_GE(r.identity, 8);
  }
  EXPECT_EQ(d.pretrain.size(), 8u);
}

TEST(MakeDataset, InvalidCountsThrow) {
  DatasetConfig cfg = small_config();
  cfg.identities = 3;
  EXPECT_THROW(make_dataset(cfg), ConfigError);
  cfg = small_config();
  cfg.samples_per_identity = 1;
  EXPECT_THROW(make_dataset(cfg), ConfigError);
  cfg = small_config();
  cfg.transform.gap_strength = 1.5;
  EXPECT_THROW(make_dataset(cfg), ConfigError);
}

TEST(SaveLoad, RoundTripIsBitIdentical) {
  DatasetBundle d = make_dataset(small_config());
  const fs::path dir = scratch_dir("roundtrip");
  save_dataset(d, dir.string());
  DatasetBundle back = load_dataset(dir.string());
  EXPECT_TRUE(back.bitwise_equal(d));
  std::size_t files = 0;
  for (const auto& sub : {"train", "eval", "pretrain"})
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / sub)) ++files;
  EXPECT_EQ(files, d.train.size() + d.eval.size() + d.pretrain.size());
  EXPECT_TRUE(fs::exists(dir / "train" / (std::to_string(d.train_ids[0]) + "_0_source.ppm")));
  EXPECT_TRUE(fs::exists(dir / "train" / (std::to_string(d.train_ids[0]) + "_0_target.pgm")));
  fs::remove_all(dir);
}

TEST(SaveLoad, MissingManifestOrImageIsAnError) {
  const fs::path dir = scratch_dir("broken");
  fs::create_directories(dir);
  EXPECT_THROW(load_dataset(dir.string()), IoError);

  DatasetBundle d = make_dataset(small_config());
  save_dataset(d, dir.string());
  fs::remove(dir / "eval" / (std::to_string(d.eval_ids[0]) + "_1_target.pgm"));
  EXPECT_THROW(load_dataset(dir.string()), IoError);
  fs::remove_all(dir);
}

TEST(DatasetConfigJson, RoundTripAndUnknownKeys) {
  DatasetConfig cfg = small_config();
  cfg.transform.invert = false;
  EXPECT_EQ(dataset_config_from_json(to_json(cfg)), cfg);
  EXPECT_THROW(dataset_config_from_json(nlohmann::json{{"identitys", 3}}), ConfigError);
}

}  // namespace
}  // namespace caim
