// caim: desk-scale heterogeneous face recognition pipeline.
//
//   caim synth    [--config F] [--workdir D] [--key.path=value ...]
//   caim pretrain ...
//   caim train    ...
//   caim eval     [--baseline] [--folds N] ...
//   caim ablate   ...
//
// Exit codes: 0 ok, 2 configuration error, 3 numeric failure, 4 I/O error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "caim/errors.hpp"
#include "caim/pipeline.hpp"

namespace {

struct Paths {
  std::string workdir = "caim_run";
  std::string data, backbone, checkpoint, out;
  std::string config;
};

void add_common(CLI::App* cmd, Paths& p) {
  cmd->add_option("--config", p.config, "JSON run configuration");
  cmd->add_option("--workdir", p.workdir, "Root for data/, backbone/, model/, eval/ and ablation/")
      ->capture_default_str();
  cmd->add_option("--data", p.data, "Dataset directory (default <workdir>/data)");
  cmd->add_option("--backbone", p.backbone, "Pretrained backbone checkpoint (default <workdir>/backbone)");
  cmd->add_option("--checkpoint", p.checkpoint, "CAIM checkpoint (default <workdir>/model)");
  cmd->add_option("--out", p.out, "Output directory for eval/ablate");
  cmd->allow_extras();
  cmd->footer("Any other --section.key=value flag overrides that config entry, e.g. --train.margin=2.0");
}

caim::Workspace workspace(const Paths& p, const char* default_out) {
  caim::Workspace ws = caim::Workspace::under(p.workdir);
  if (!p.data.empty()) ws.data = p.data;
  if (!p.backbone.empty()) ws.backbone = p.backbone;
  if (!p.checkpoint.empty()) ws.checkpoint = p.checkpoint;
  ws.out = p.out.empty() ? (std::filesystem::path(p.workdir) / default_out).string() : p.out;
  return ws;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional adaptive instance modulation for heterogeneous face recognition (desk scale)"};
  app.require_subcommand(1);
  Paths paths;
  bool baseline = false;
  std::optional<std::size_t> folds;

  auto* synth = app.add_subcommand("synth", "Generate and save the synthetic two-modality dataset");
  auto* pretrain = app.add_subcommand("pretrain", "Pretrain the source-domain backbone and freeze it");
  auto* train = app.add_subcommand("train", "Insert CAIM blocks into the frozen backbone and train them");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint; writes metrics.json and scores.csv");
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate K=1..N plus the unconditional variants");
  for (auto* cmd : {synth, pretrain, train, eval, ablate}) add_common(cmd, paths);
  eval->add_flag("--baseline", baseline, "Evaluate the frozen backbone without CAIM");
  eval->add_option("--folds", folds, "Number of identity folds (retrains CAIM per fold)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  CLI::App* cmd = app.get_subcommands().front();
  try {
    std::vector<std::string> overrides = cmd->remaining();
    if (folds) overrides.push_back("folds=" + std::to_string(*folds));
    const caim::RunConfig cfg =
        caim::resolve_run_config(paths.config.empty() ? std::nullopt : std::optional<std::string>(paths.config),
                                 overrides, std::getenv("CAIM_SEED"));
    if (cmd == synth) {
      caim::cmd_synth(cfg, workspace(paths, "eval"), std::cout);
    } else if (cmd == pretrain) {
      caim::cmd_pretrain(cfg, workspace(paths, "eval"), std::cout);
    } else if (cmd == train) {
      caim::cmd_train(cfg, workspace(paths, "eval"), std::cout);
    } else if (cmd == eval) {
      caim::cmd_eval(cfg, workspace(paths, baseline ? "eval_baseline" : "eval"), baseline, std::cout);
    } else {
      caim::cmd_ablate(cfg, workspace(paths, "ablation"), std::cout);
    }
  } catch (const caim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const caim::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const caim::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
