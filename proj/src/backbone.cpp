#include "caim/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "caim/errors.hpp"
#include "caim/synth_data.hpp"

namespace caim {

namespace fs = std::filesystem;
using nlohmann::json;

void BackboneConfig::validate() const {
  if (num_blocks < 2) throw ConfigError("backbone: num_blocks must be >= 2");
  if (channels.size() != num_blocks) throw ConfigError("backbone: channels must list one width per block");
  if (std::any_of(channels.begin(), channels.end(), [](std::size_t c) { return c == 0; })) {
    throw ConfigError("backbone: channel widths must be positive");
  }
  if (input_channels != 3) throw ConfigError("backbone: input_channels must be 3");
  if (embedding_dim < 8) throw ConfigError("backbone: embedding_dim must be >= 8");
  std::size_t s = input_size;
  for (std::size_t b = 0; b < num_blocks; ++b) {
    if (s < 2) {
      throw ConfigError("backbone: spatial size collapses to 1x1 before block " + std::to_string(b + 1) + " of " +
                        std::to_string(num_blocks));
    }
    s = (s - 1) / 2 + 1;
  }
}

std::vector<std::size_t> BackboneConfig::block_output_sizes() const {
  std::vector<std::size_t> out;
  std::size_t s = input_size;
  for (std::size_t b = 0; b < num_blocks; ++b) {
    s = (s - 1) / 2 + 1;
    out.push_back(s);
  }
  return out;
}

std::vector<Tensor> BackboneWeights::tensors() const {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < conv_w.size(); ++i) {
    out.push_back(conv_w[i]);
    out.push_back(conv_b[i]);
  }
  out.push_back(head_w);
  out.push_back(head_b);
  return out;
}

void BackboneWeights::set_requires_grad(bool on) {
  for (auto& t : conv_w) t.set_requires_grad(on);
  for (auto& t : conv_b) t.set_requires_grad(on);
  head_w.set_requires_grad(on);
  head_b.set_requires_grad(on);
}

std::vector<std::size_t> ModelAssembly::caim_positions() const {
  std::vector<std::size_t> out;
  for (const auto& c : caim) out.push_back(c.after_block);
  return out;
}

std::vector<Tensor> ModelAssembly::trainable_parameters() const {
  std::vector<Tensor> out;
  if (!backbone_frozen) out = backbone.tensors();
  if (kind == ModulationKind::kAdaptive) {
    for (const auto& c : caim) {
      auto t = c.params.tensors();
      out.insert(out.end(), t.begin(), t.end());
    }
  }
  return out;
}

ModelAssembly ModelAssembly::clone() const {
  ModelAssembly m = *this;
  for (auto& t : m.backbone.conv_w) t = t.clone();
  for (auto& t : m.backbone.conv_b) t = t.clone();
  m.backbone.head_w = m.backbone.head_w.clone();
  m.backbone.head_b = m.backbone.head_b.clone();
  for (auto& c : m.caim) {
    auto t = c.params.tensors();
    for (auto& x : t) x = x.clone();
    c.params = CaimParams::from_tensors(std::move(t));
  }
  return m;
}

ModelAssembly build_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  auto uniform = [&rng](Shape shape, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = dist(rng);
    return Tensor::from_data(std::move(shape), std::move(v), true);
  };
  ModelAssembly m;
  m.config = cfg;
  std::size_t cin = cfg.input_channels;
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    const std::size_t cout = cfg.channels[b];
    m.backbone.conv_w.push_back(uniform({cout, cin, 3, 3}, std::sqrt(6.0 / static_cast<double>(cin * 9))));
    m.backbone.conv_b.push_back(Tensor::zeros({cout}, true));
    cin = cout;
  }
  const double head_bound = std::sqrt(6.0 / static_cast<double>(cin + cfg.embedding_dim));
  m.backbone.head_w = uniform({cfg.embedding_dim, cin}, head_bound);
  m.backbone.head_b = Tensor::zeros({cfg.embedding_dim}, true);
  return m;
}

Tensor replicate_channels(const Tensor& img, bool* passed_through) {
  if (img.rank() != 4) throw ConfigError("replicate_channels: expected [B,C,H,W]");
  if (passed_through) *passed_through = img.dim(1) == 3;
  if (img.dim(1) == 3) return img;
  if (img.dim(1) != 1) throw ConfigError("replicate_channels: expected 1 or 3 channels");
  const std::size_t batch = img.dim(0), plane = img.dim(2) * img.dim(3);
  const auto src = img.data();
  std::vector<double> out(batch * 3 * plane);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < 3; ++c) std::copy_n(&src[b * plane], plane, &out[(b * 3 + c) * plane]);
  return Tensor::make_result({batch, 3, img.dim(2), img.dim(3)}, std::move(out), {img},
                             [batch, plane](detail::Node& self) {
                               detail::Node* p = self.parents[0].get();
                               if (!p->requires_grad) return;
                               auto& g = p->grad_buffer();
                               for (std::size_t b = 0; b < batch; ++b)
                                 for (std::size_t c = 0; c < 3; ++c)
                                   for (std::size_t i = 0; i < plane; ++i)
                                     g[b * plane + i] += self.grad[(b * 3 + c) * plane + i];
                             });
}

void freeze_backbone(ModelAssembly& model) {
  model.backbone.set_requires_grad(false);
  model.backbone_frozen = true;
}

ModelAssembly insert_caim(ModelAssembly model, std::size_t k, std::uint64_t seed) {
  if (k < 1 || k > model.config.num_blocks) {
    throw ConfigError("insert_caim: K must be in [1, " + std::to_string(model.config.num_blocks) + "], got " +
                      std::to_string(k));
  }
  if (!model.caim.empty()) throw ConfigError("insert_caim: model already has CAIM blocks");
  freeze_backbone(model);
  for (std::size_t i = 1; i <= k; ++i) {
    const std::size_t c = model.config.channels[i - 1];
    model.caim.push_back({i, init_caim(hash64(seed, i), c, c)});
  }
  return model;
}

Tensor forward_embed(const ModelAssembly& model, const Tensor& img, Gate gate) {
  const BackboneConfig& cfg = model.config;
  Tensor x = replicate_channels(img);
  if (x.dim(2) != cfg.input_size || x.dim(3) != cfg.input_size) {
    throw ConfigError("forward_embed: expected " + std::to_string(cfg.input_size) + "x" +
                      std::to_string(cfg.input_size) + " images, got " + shape_to_string(img.shape()));
  }
  const Gate effective = model.conditional ? gate : Gate::kTarget;
  auto block = model.caim.begin();
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    x = relu(conv2d_3x3(x, model.backbone.conv_w[b], model.backbone.conv_b[b], 2, 1));
    if (block != model.caim.end() && block->after_block == b + 1) {
      x = caim_forward(x, effective, block->params, model.eps, model.kind);
      ++block;
    }
  }
  return l2_normalize(linear(global_avg_pool(x), model.backbone.head_w, model.backbone.head_b));
}

std::uint64_t checksum(std::span<const Tensor> tensors) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Tensor& t : tensors) {
    for (double v : t.data()) {
      std::uint64_t bits = 0;
      std::memcpy(&bits, &v, sizeof(bits));
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xffu;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

json to_json(const BackboneConfig& cfg) {
  return json{{"num_blocks", cfg.num_blocks},
              {"channels", cfg.channels},
              {"input_channels", cfg.input_channels},
              {"input_size", cfg.input_size},
              {"embedding_dim", cfg.embedding_dim}};
}

BackboneConfig backbone_config_from_json(const json& j, BackboneConfig cfg) {
  static const std::set<std::string> kKeys{"num_blocks", "channels", "input_channels", "input_size", "embedding_dim"};
  try {
    for (const auto& [k, v] : j.items()) {
      if (!kKeys.count(k)) throw ConfigError("backbone: unknown key '" + k + "'");
    }
    if (j.contains("num_blocks")) cfg.num_blocks = j.at("num_blocks").get<std::size_t>();
    if (j.contains("channels")) cfg.channels = j.at("channels").get<std::vector<std::size_t>>();
    if (j.contains("input_channels")) cfg.input_channels = j.at("input_channels").get<std::size_t>();
    if (j.contains("input_size")) cfg.input_size = j.at("input_size").get<std::size_t>();
    if (j.contains("embedding_dim")) cfg.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("backbone: ") + e.what());
  }
  return cfg;
}

void save_model(const ModelAssembly& model, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("caim_", 0) == 0 && e.path().extension() == ".bin") fs::remove(e.path());
  }
  const auto backbone = model.backbone.tensors();
  save_tensors((fs::path(dir) / "backbone.bin").string(), backbone);
  for (const auto& c : model.caim) {
    const auto t = c.params.tensors();
    save_tensors((fs::path(dir) / ("caim_" + std::to_string(c.after_block) + ".bin")).string(), t);
  }
  json assembly{{"num_blocks", model.config.num_blocks},
                {"caim_positions", model.caim_positions()},
                {"embedding_dim", model.config.embedding_dim},
                {"backbone", to_json(model.config)},
                {"backbone_frozen", model.backbone_frozen},
                {"conditional", model.conditional},
                {"modulation", model.kind == ModulationKind::kAdaptive ? "aim" : "instance_norm"},
                {"eps", model.eps}};
  std::ofstream out(fs::path(dir) / "assembly.json", std::ios::trunc);
  if (!out) throw IoError("cannot write assembly.json in " + dir);
  out << assembly.dump(1) << '\n';
}

ModelAssembly load_model(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "assembly.json");
  if (!in) throw IoError("missing assembly.json in " + dir);
  ModelAssembly m;
  std::vector<std::size_t> positions;
  try {
    const json a = json::parse(in);
    m.config = backbone_config_from_json(a.at("backbone"));
    if (a.at("num_blocks").get<std::size_t>() != m.config.num_blocks ||
        a.at("embedding_dim").get<std::size_t>() != m.config.embedding_dim) {
      throw IoError("assembly.json: inconsistent backbone description");
    }
    positions = a.at("caim_positions").get<std::vector<std::size_t>>();
    m.backbone_frozen = a.at("backbone_frozen").get<bool>();
    m.conditional = a.at("conditional").get<bool>();
    m.kind = a.at("modulation").get<std::string>() == "aim" ? ModulationKind::kAdaptive
                                                              : ModulationKind::kInstanceNormOnly;
    m.eps = a.at("eps").get<double>();
  } catch (const json::exception& e) {
    throw IoError("malformed assembly.json in " + dir + ": " + e.what());
  } catch (const ConfigError& e) {
    throw IoError("malformed assembly.json in " + dir + ": " + e.what());
  }
  m.config.validate();

  std::vector<Tensor> t = load_tensors((fs::path(dir) / "backbone.bin").string());
  if (t.size() != 2 * m.config.num_blocks + 2) throw IoError("backbone.bin: unexpected tensor count");
  std::size_t cin = m.config.input_channels;
  for (std::size_t b = 0; b < m.config.num_blocks; ++b) {
    const std::size_t cout = m.config.channels[b];
    if (t[2 * b].shape() != Shape{cout, cin, 3, 3} || t[2 * b + 1].shape() != Shape{cout}) {
      throw IoError("backbone.bin: block " + std::to_string(b + 1) + " has unexpected shape");
    }
    m.backbone.conv_w.push_back(t[2 * b]);
    m.backbone.conv_b.push_back(t[2 * b + 1]);
    cin = cout;
  }
  m.backbone.head_w = t[2 * m.config.num_blocks];
  m.backbone.head_b = t[2 * m.config.num_blocks + 1];
  if (m.backbone.head_w.shape() != Shape{m.config.embedding_dim, cin}) throw IoError("backbone.bin: bad head shape");
  m.backbone.set_requires_grad(!m.backbone_frozen);

  for (std::size_t pos : positions) {
    if (pos < 1 || pos > m.config.num_blocks) throw IoError("assembly.json: CAIM position out of range");
    CaimParams p = CaimParams::from_tensors(
        load_tensors((fs::path(dir) / ("caim_" + std::to_string(pos) + ".bin")).string()));
    if (p.channels() != m.config.channels[pos - 1]) throw IoError("caim_" + std::to_string(pos) + ".bin: channel mismatch");
    p.set_requires_grad(true);
    m.caim.push_back({pos, std::move(p)});
  }
  return m;
}

}  // namespace caim
