#include "caim/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

#include "caim/errors.hpp"

namespace caim {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view modality_name(Modality m) { return m == Modality::kSource ? "source" : "target"; }

Modality modality_from_name(std::string_view name) {
  if (name == "source") return Modality::kSource;
  if (name == "target") return Modality::kTarget;
  throw IoError("unknown modality '" + std::string(name) + "'");
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kEval:
      return "eval";
    case Split::kPretrain:
      return "pretrain";
  }
  return "?";
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t kIdentityStream = 0x1d;
constexpr std::uint64_t kSplitStream = 0x5b;
constexpr std::uint64_t kAtlasSeed = 0xa71a5;

double quantize(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return static_cast<double>(static_cast<int>(std::lround(v * 255.0))) / 255.0;
}

}  // namespace

std::uint64_t hash64(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
  std::uint64_t h = splitmix64(a);
  h = splitmix64(h ^ b);
  h = splitmix64(h ^ c);
  return splitmix64(h ^ d);
}

bool SampleRecord::bitwise_equal(const SampleRecord& o) const {
  return identity == o.identity && modality == o.modality && index == o.index &&
         nuisance_seed == o.nuisance_seed && image.bitwise_equal(o.image);
}

void ModalityTransform::validate() const {
  if (gain.size() != 3 || offset.size() != 3) throw ConfigError("transform: gain and offset need 3 entries");
  if (gap_strength < 0.0 || gap_strength > 1.0) throw ConfigError("transform: gap_strength must be in [0,1]");
  if (noise_sigma < 0.0) throw ConfigError("transform: noise_sigma must be non-negative");
}

void DatasetConfig::validate() const {
  if (identities < 4) throw ConfigError("dataset: need at least 4 identities (2 train + 2 eval)");
  if (samples_per_identity < 2) throw ConfigError("dataset: samples_per_identity must be >= 2");
  if (pretrain_identities == 1) throw ConfigError("dataset: pretrain_identities must be 0 or >= 2");
  if (pretrain_identities > 0 && pretrain_samples_per_identity < 2) {
    throw ConfigError("dataset: pretrain_samples_per_identity must be >= 2");
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("dataset: train_fraction must be in (0,1)");
  const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(identities)));
  if (n_train < 2 || identities - n_train < 2) {
    throw ConfigError("dataset: split leaves fewer than 2 identities on one side");
  }
  if (image_size < 4) throw ConfigError("dataset: image_size must be >= 4");
  if (latent_dim < 1) throw ConfigError("dataset: latent_dim must be >= 1");
  transform.validate();
}

const std::vector<SampleRecord>& DatasetBundle::split(Split s) const {
  switch (s) {
    case Split::kTrain:
      return train;
    case Split::kEval:
      return eval;
    default:
      return pretrain;
  }
}

std::vector<const SampleRecord*> DatasetBundle::select(Split s, Modality m) const {
  std::vector<const SampleRecord*> out;
  for (const auto& r : split(s)) {
    if (r.modality == m) out.push_back(&r);
  }
  return out;
}

std::vector<const SampleRecord*> DatasetBundle::gallery() const {
  std::vector<const SampleRecord*> out;
  for (const auto& r : eval) {
    if (r.modality == Modality::kSource && r.index == 0) out.push_back(&r);
  }
  return out;
}

std::vector<const SampleRecord*> DatasetBundle::source_probes() const {
  std::vector<const SampleRecord*> out;
  for (const auto& r : eval) {
    if (r.modality == Modality::kSource && r.index != 0) out.push_back(&r);
  }
  return out;
}

std::vector<const SampleRecord*> DatasetBundle::target_probes() const { return select(Split::kEval, Modality::kTarget); }

bool DatasetBundle::bitwise_equal(const DatasetBundle& o) const {
  auto same = [](const std::vector<SampleRecord>& a, const std::vector<SampleRecord>& b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](const auto& x, const auto& y) {
             return x.bitwise_equal(y);
           });
  };
  return config == o.config && identities == o.identities && train_ids == o.train_ids && eval_ids == o.eval_ids &&
         pretrain_ids == o.pretrain_ids && same(train, o.train) && same(eval, o.eval) && same(pretrain, o.pretrain);
}

std::vector<Identity> generate_identities(std::size_t n, std::size_t latent_dim, std::uint64_t seed) {
  std::mt19937_64 rng(hash64(seed, kIdentityStream));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Identity> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].id = static_cast<int>(i);
    out[i].latent.resize(latent_dim);
    for (double& z : out[i].latent) z = normal(rng);
  }
  return out;
}

// ---- rendering ----------------------------------------------------------

BasisAtlas BasisAtlas::build(std::size_t count, std::size_t height, std::size_t width) {
  BasisAtlas atlas;
  atlas.count = count;
  atlas.height = height;
  atlas.width = width;
  std::mt19937_64 rng(hash64(kAtlasSeed, count));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t g = 0; g < count; ++g) {
    Atom a{};
    a.cx = 0.2 + 0.6 * unit(rng);
    a.cy = 0.2 + 0.6 * unit(rng);
    a.sigma = 0.15 + 0.2 * unit(rng);
    const double freq = 0.5 + 2.0 * unit(rng);
    const double angle = std::numbers::pi * unit(rng);
    a.fx = freq * std::cos(angle);
    a.fy = freq * std::sin(angle);
    a.phase = 2.0 * std::numbers::pi * unit(rng);
    a.norm = 1.0;
    atlas.atoms.push_back(a);
  }
  for (std::size_t g = 0; g < count; ++g) {
    double ss = 0.0;
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const double v = atlas.value(g, static_cast<double>(x), static_cast<double>(y));
        ss += v * v;
      }
    atlas.atoms[g].norm = 1.0 / std::sqrt(ss / static_cast<double>(height * width));
  }
  return atlas;
}

double BasisAtlas::value(std::size_t g, double x, double y) const {
  const Atom& a = atoms[g];
  const double u = (x + 0.5) / static_cast<double>(width);
  const double v = (y + 0.5) / static_cast<double>(height);
  const double r2 = (u - a.cx) * (u - a.cx) + (v - a.cy) * (v - a.cy);
  return a.norm * std::exp(-r2 / (2.0 * a.sigma * a.sigma)) *
         std::cos(2.0 * std::numbers::pi * (a.fx * u + a.fy * v) + a.phase);
}

SampleRecord render_source(const Identity& identity, std::uint64_t nuisance_seed, std::size_t height,
                           std::size_t width, std::size_t index) {
  return render_source(identity, nuisance_seed, BasisAtlas::build(identity.latent.size(), height, width), index);
}

SampleRecord render_source(const Identity& identity, std::uint64_t nuisance_seed, const BasisAtlas& atlas,
                           std::size_t index) {
  if (identity.latent.size() != atlas.count) throw ConfigError("render_source: latent size != atlas size");
  constexpr double kAmplitude = 0.15;
  constexpr double kGainJitter = 0.05;
  constexpr double kNoise = 0.01;
  constexpr int kMaxShift = 2;

  std::mt19937_64 rng(nuisance_seed);
  std::uniform_int_distribution<int> shift(-kMaxShift, kMaxShift);
  std::uniform_real_distribution<double> jitter(-kGainJitter, kGainJitter);
  std::normal_distribution<double> noise(0.0, kNoise);
  const int dx = shift(rng), dy = shift(rng);
  const double gain = (1.0 + jitter(rng)) * kAmplitude / std::sqrt(static_cast<double>(atlas.count));

  const std::size_t h = atlas.height, w = atlas.width, plane = h * w;
  std::vector<double> pixels(3 * plane);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (std::size_t g = 0; g < atlas.count; ++g) {
        s += identity.latent[g] * atlas.value(g, static_cast<double>(x) - dx, static_cast<double>(y) - dy);
      }
      const double v = quantize(0.5 + gain * s + noise(rng));
      for (std::size_t c = 0; c < 3; ++c) pixels[c * plane + y * w + x] = v;
    }
  }
  SampleRecord r;
  r.identity = identity.id;
  r.modality = Modality::kSource;
  r.index = index;
  r.nuisance_seed = nuisance_seed;
  r.image = Tensor::from_data({3, h, w}, std::move(pixels));
  return r;
}

namespace {

std::vector<double> box_blur(const std::vector<double>& src, std::size_t channels, std::size_t h, std::size_t w,
                             std::size_t radius) {
  std::vector<double> out(src.size());
  const auto r = static_cast<long>(radius);
  for (std::size_t c = 0; c < channels; ++c) {
    for (long y = 0; y < static_cast<long>(h); ++y) {
      for (long x = 0; x < static_cast<long>(w); ++x) {
        double s = 0.0;
        int n = 0;
        for (long yy = std::max(0L, y - r); yy <= std::min<long>(h - 1, y + r); ++yy)
          for (long xx = std::max(0L, x - r); xx <= std::min<long>(w - 1, x + r); ++xx, ++n)
            s += src[c * h * w + yy * w + xx];
        out[c * h * w + y * w + x] = s / n;
      }
    }
  }
  return out;
}

}  // namespace

SampleRecord apply_modality(const SampleRecord& source, const ModalityTransform& t, std::uint64_t seed) {
  if (source.modality != Modality::kSource) throw ConfigError("apply_modality: expects a source record");
  t.validate();
  const double s = t.gap_strength;
  const std::size_t channels = source.image.dim(0), h = source.image.dim(1), w = source.image.dim(2);
  const std::size_t plane = h * w;
  std::vector<double> px(source.image.data().begin(), source.image.data().end());

  for (std::size_t c = 0; c < channels; ++c) {
    const double gain = 1.0 + s * (t.gain[c % 3] - 1.0);
    const double offset = s * t.offset[c % 3];
    for (std::size_t i = 0; i < plane; ++i) px[c * plane + i] = gain * px[c * plane + i] + offset;
  }
  if (t.invert) {
    for (double& v : px) v = std::clamp((1.0 - s) * v + s * (1.0 - v), 0.0, 1.0);
  }
  if (t.blur_radius > 0 && s > 0.0) {
    const auto blurred = box_blur(px, channels, h, w, t.blur_radius);
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = (1.0 - s) * px[i] + s * blurred[i];
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double sigma = s * t.noise_sigma;
  for (double& v : px) v += sigma * noise(rng);

  std::size_t out_channels = channels;
  if (t.collapse && channels > 1) {
    std::vector<double> mono(plane, 0.0);
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < plane; ++i) mono[i] += px[c * plane + i];
    for (double& v : mono) v /= static_cast<double>(channels);
    px = std::move(mono);
    out_channels = 1;
  }
  for (double& v : px) v = quantize(v);

  SampleRecord r = source;
  r.modality = Modality::kTarget;
  r.image = Tensor::from_data({out_channels, h, w}, std::move(px));
  return r;
}

// ---- dataset ------------------------------------------------------------

DatasetBundle make_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  DatasetBundle d;
  d.config = cfg;
  d.identities = generate_identities(cfg.identities + cfg.pretrain_identities, cfg.latent_dim, cfg.seed);

  std::vector<int> pool(cfg.identities);
  std::iota(pool.begin(), pool.end(), 0);
  std::mt19937_64 split_rng(hash64(cfg.fold_seed, kSplitStream));
  std::shuffle(pool.begin(), pool.end(), split_rng);
  const auto n_train = static_cast<std::size_t>(std::lround(cfg.train_fraction * static_cast<double>(cfg.identities)));
  d.train_ids.assign(pool.begin(), pool.begin() + static_cast<long>(n_train));
  d.eval_ids.assign(pool.begin() + static_cast<long>(n_train), pool.end());
  std::sort(d.train_ids.begin(), d.train_ids.end());
  std::sort(d.eval_ids.begin(), d.eval_ids.end());
  for (std::size_t i = 0; i < cfg.pretrain_identities; ++i) d.pretrain_ids.push_back(static_cast<int>(cfg.identities + i));

  const BasisAtlas atlas = BasisAtlas::build(cfg.latent_dim, cfg.image_size, cfg.image_size);
  const auto tag = [](Modality m) { return static_cast<std::uint64_t>(m) + 1; };
  auto render_pair_pool = [&](const std::vector<int>& ids, std::vector<SampleRecord>& out) {
    for (int id : ids) {
      const Identity& ident = d.identities[static_cast<std::size_t>(id)];
      for (std::size_t k = 0; k < cfg.samples_per_identity; ++k) {
        out.push_back(render_source(ident, hash64(cfg.seed, id, k, tag(Modality::kSource)), atlas, k));
      }
      for (std::size_t k = 0; k < cfg.samples_per_identity; ++k) {
        const std::uint64_t s = hash64(cfg.seed, id, k, tag(Modality::kTarget));
        out.push_back(apply_modality(render_source(ident, s, atlas, k), cfg.transform, hash64(s, 0x7a)));
      }
    }
  };
  render_pair_pool(d.train_ids, d.train);
  render_pair_pool(d.eval_ids, d.eval);
  for (int id : d.pretrain_ids) {
    const Identity& ident = d.identities[static_cast<std::size_t>(id)];
    for (std::size_t k = 0; k < cfg.pretrain_samples_per_identity; ++k) {
      d.pretrain.push_back(render_source(ident, hash64(cfg.seed, id, k, tag(Modality::kSource)), atlas, k));
    }
  }
  return d;
}

Tensor stack_images(const std::vector<const SampleRecord*>& samples) {
  if (samples.empty()) throw ConfigError("stack_images: no samples");
  const Shape& s = samples.front()->image.shape();
  std::vector<double> data;
  data.reserve(samples.size() * shape_numel(s));
  for (const SampleRecord* r : samples) {
    if (r->image.shape() != s) throw ConfigError("stack_images: mixed image shapes");
    data.insert(data.end(), r->image.data().begin(), r->image.data().end());
  }
  return Tensor::from_data({samples.size(), s[0], s[1], s[2]}, std::move(data));
}

// ---- persistence --------------------------------------------------------

namespace {

std::string sample_filename(const SampleRecord& r) {
  return std::to_string(r.identity) + "_" + std::to_string(r.index) + "_" + std::string(modality_name(r.modality)) +
         (r.image.dim(0) == 1 ? ".pgm" : ".ppm");
}

void write_pnm(const fs::path& path, const Tensor& image) {
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (c != 1 && c != 3) throw ConfigError("write_pnm: images must have 1 or 3 channels");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << (c == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << '\n' << 255 << '\n';
  std::string bytes(c * h * w, '\0');
  const auto px = image.data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        bytes[(y * w + x) * c + ch] = static_cast<char>(std::lround(px[ch * h * w + y * w + x] * 255.0));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write on " + path.string());
}

Tensor read_pnm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if ((magic != "P5" && magic != "P6") || maxval != 255 || w == 0 || h == 0) {
    throw IoError("unsupported PNM header in " + path.string());
  }
  in.get();
  const std::size_t c = magic == "P5" ? 1 : 3;
  std::string bytes(c * h * w, '\0');
  if (!in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()))) throw IoError("truncated " + path.string());
  std::vector<double> px(c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        px[ch * h * w + y * w + x] =
            static_cast<double>(static_cast<unsigned char>(bytes[(y * w + x) * c + ch])) / 255.0;
  return Tensor::from_data({c, h, w}, std::move(px));
}

}  // namespace

json to_json(const DatasetConfig& cfg) {
  const ModalityTransform& t = cfg.transform;
  return json{{"identities", cfg.identities},
              {"samples_per_identity", cfg.samples_per_identity},
              {"pretrain_identities", cfg.pretrain_identities},
              {"pretrain_samples_per_identity", cfg.pretrain_samples_per_identity},
              {"train_fraction", cfg.train_fraction},
              {"image_size", cfg.image_size},
              {"latent_dim", cfg.latent_dim},
              {"seed", cfg.seed},
              {"fold_seed", cfg.fold_seed},
              {"gap_strength", t.gap_strength},
              {"transform",
               {{"gain", t.gain},
                {"offset", t.offset},
                {"invert", t.invert},
                {"blur_radius", t.blur_radius},
                {"noise_sigma", t.noise_sigma},
                {"collapse", t.collapse}}}};
}

DatasetConfig dataset_config_from_json(const json& j, DatasetConfig cfg) {
  static const std::set<std::string> kKeys{"identities",  "samples_per_identity", "pretrain_identities",
                                           "pretrain_samples_per_identity", "train_fraction", "image_size",
                                           "latent_dim",  "seed", "fold_seed", "gap_strength", "transform"};
  static const std::set<std::string> kTransformKeys{"gain", "offset", "invert", "blur_radius", "noise_sigma",
                                                    "collapse"};
  try {
    for (const auto& [k, v] : j.items()) {
      if (!kKeys.count(k)) throw ConfigError("dataset: unknown key '" + k + "'");
    }
    auto get = [&j](const char* key, auto& dst) {
      if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
    };
    get("identities", cfg.identities);
    get("samples_per_identity", cfg.samples_per_identity);
    get("pretrain_identities", cfg.pretrain_identities);
    get("pretrain_samples_per_identity", cfg.pretrain_samples_per_identity);
    get("train_fraction", cfg.train_fraction);
    get("image_size", cfg.image_size);
    get("latent_dim", cfg.latent_dim);
    get("seed", cfg.seed);
    get("fold_seed", cfg.fold_seed);
    get("gap_strength", cfg.transform.gap_strength);
    if (j.contains("transform")) {
      const json& t = j.at("transform");
      for (const auto& [k, v] : t.items()) {
        if (!kTransformKeys.count(k)) throw ConfigError("dataset.transform: unknown key '" + k + "'");
      }
      if (t.contains("gain")) cfg.transform.gain = t.at("gain").get<std::vector<double>>();
      if (t.contains("offset")) cfg.transform.offset = t.at("offset").get<std::vector<double>>();
      if (t.contains("invert")) cfg.transform.invert = t.at("invert").get<bool>();
      if (t.contains("blur_radius")) cfg.transform.blur_radius = t.at("blur_radius").get<std::size_t>();
      if (t.contains("noise_sigma")) cfg.transform.noise_sigma = t.at("noise_sigma").get<double>();
      if (t.contains("collapse")) cfg.transform.collapse = t.at("collapse").get<bool>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("dataset: ") + e.what());
  }
  return cfg;
}

void save_dataset(const DatasetBundle& d, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  json samples = json::array();
  for (Split s : {Split::kTrain, Split::kEval, Split::kPretrain}) {
    const fs::path sub = fs::path(dir) / split_name(s);
    fs::remove_all(sub, ec);
    fs::create_directories(sub, ec);
    if (ec) throw IoError("cannot create " + sub.string() + ": " + ec.message());
    for (const SampleRecord& r : d.split(s)) {
      const std::string file = std::string(split_name(s)) + "/" + sample_filename(r);
      write_pnm(fs::path(dir) / file, r.image);
      samples.push_back({{"split", split_name(s)},
                         {"identity", r.identity},
                         {"index", r.index},
                         {"modality", modality_name(r.modality)},
                         {"nuisance_seed", r.nuisance_seed},
                         {"file", file}});
    }
  }
  json ids = json::array();
  for (const Identity& i : d.identities) ids.push_back({{"id", i.id}, {"latent", i.latent}});
  json manifest{{"format_version", 1},
                {"config", to_json(d.config)},
                {"identities", ids},
                {"splits", {{"train", d.train_ids}, {"eval", d.eval_ids}, {"pretrain", d.pretrain_ids}}},
                {"protocol",
                 {{"gallery", "eval source samples with index 0"},
                  {"source_probes", "eval source samples with index > 0"},
                  {"target_probes", "all eval target samples"}}},
                {"seed_scheme", "sample_seed = hash64(dataset_seed, identity_id, sample_index, modality_tag)"},
                {"counts",
                 {{"train", d.train.size()}, {"eval", d.eval.size()}, {"pretrain", d.pretrain.size()}}},
                {"samples", samples}};
  std::ofstream out(fs::path(dir) / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write manifest in " + dir);
  out << manifest.dump(1) << '\n';
}

DatasetBundle load_dataset(const std::string& dir) {
  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("missing manifest: " + manifest_path.string());
  DatasetBundle d;
  try {
    const json m = json::parse(in);
    d.config = dataset_config_from_json(m.at("config"));
    for (const auto& i : m.at("identities")) {
      d.identities.push_back({i.at("id").get<int>(), i.at("latent").get<std::vector<double>>()});
    }
    d.train_ids = m.at("splits").at("train").get<std::vector<int>>();
    d.eval_ids = m.at("splits").at("eval").get<std::vector<int>>();
    d.pretrain_ids = m.at("splits").at("pretrain").get<std::vector<int>>();
    std::size_t files_on_disk = 0;
    for (Split s : {Split::kTrain, Split::kEval, Split::kPretrain}) {
      const fs::path sub = fs::path(dir) / split_name(s);
      if (fs::is_directory(sub)) {
        for (const auto& e : fs::directory_iterator(sub)) files_on_disk += e.is_regular_file() ? 1 : 0;
      }
    }
    if (files_on_disk != m.at("samples").size()) {
      throw IoError("dataset " + dir + ": manifest lists " + std::to_string(m.at("samples").size()) +
                    " images, found " + std::to_string(files_on_disk));
    }
    for (const auto& s : m.at("samples")) {
      SampleRecord r;
      r.identity = s.at("identity").get<int>();
      r.index = s.at("index").get<std::size_t>();
      r.modality = modality_from_name(s.at("modality").get<std::string>());
      r.nuisance_seed = s.at("nuisance_seed").get<std::uint64_t>();
      r.image = read_pnm(fs::path(dir) / s.at("file").get<std::string>());
      const std::string split = s.at("split").get<std::string>();
      if (split == "train") {
        d.train.push_back(std::move(r));
      } else if (split == "eval") {
        d.eval.push_back(std::move(r));
      } else if (split == "pretrain") {
        d.pretrain.push_back(std::move(r));
      } else {
        throw IoError("unknown split '" + split + "'");
      }
    }
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  return d;
}

}  // namespace caim
