#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "fdct/train.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::int64_t seed = -1;
  bool deterministic = false;
  bool overwrite = false;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool needs_out = true) {
  cmd->add_option("--config", a.config_path, "key=value config file");
  auto* out = cmd->add_option("--out", a.out_dir, "output directory");
  if (needs_out) out->required();
  cmd->add_option("--seed", a.seed, "seed override");
  cmd->add_flag("--deterministic", a.deterministic, "force fully serial execution");
  cmd->add_flag("--overwrite", a.overwrite, "replace an existing output directory");
  cmd->add_option("--set", a.sets, "extra key=value overrides")->expected(-1);
}

fdct::TrainConfig resolve_config(const CommonArgs& a) {
  fdct::Config c;
  if (!a.config_path.empty()) c = fdct::Config::from_file(a.config_path);
  for (const auto& kv : a.sets) c.merge(fdct::Config::from_string(kv));
  auto cfg = fdct::TrainConfig::from_config(c);
  if (a.seed >= 0) {
    cfg.seed = static_cast<std::uint64_t>(a.seed);
    if (!c.has("data.seed")) cfg.synth.seed = static_cast<std::uint64_t>(a.seed);
  }
  if (a.deterministic) cfg.deterministic = true;
  return cfg;
}

void print_metrics(const fdct::MetricsReport& m, const std::string& tag) {
  std::printf("%s accuracy: %.4f\n", tag.c_str(), m.accuracy);
  for (int c = 0; c < m.classes; ++c)
    std::printf("  class %d  precision %.4f  recall %.4f\n", c,
                m.precision[static_cast<std::size_t>(c)], m.recall[static_cast<std::size_t>(c)]);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FDCT multi-sensor fusion classifier toolkit"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, base_args, abl_args, imp_args;

  auto* cmd_gen = app.add_subcommand("generate", "generate a synthetic paired dataset");
  add_common(cmd_gen, gen_args);

  auto* cmd_train = app.add_subcommand("train", "train the fusion model");
  add_common(cmd_train, train_args);

  auto* cmd_eval = app.add_subcommand("eval", "evaluate a trained run");
  std::string eval_run, eval_split = "test";
  cmd_eval->add_option("--checkpoint", eval_run, "run directory (with config.lock and checkpoint/)")
      ->required();
  cmd_eval->add_option("--split", eval_split, "train, test, or val");
  add_common(cmd_eval, eval_args, false);

  auto* cmd_base = app.add_subcommand("baseline", "train a single-modality baseline");
  std::string base_modality = "vis";
  cmd_base->add_option("--modality", base_modality, "vis or ir")->required();
  add_common(cmd_base, base_args);

  auto* cmd_abl = app.add_subcommand("ablate", "run the loss-ablation grid");
  std::string abl_seeds = "1,2,3";
  cmd_abl->add_option("--seeds", abl_seeds, "comma-separated training seeds (>= 3)");
  add_common(cmd_abl, abl_args);

  auto* cmd_imp = app.add_subcommand("import", "convert paired 8-bit PNG/PGM images to a dataset");
  std::string imp_listing;
  int imp_size = 32;
  cmd_imp->add_option("--listing", imp_listing, "CSV: pair_id,label,path_vis,path_ir")->required();
  cmd_imp->add_option("--size", imp_size, "target square image size");
  add_common(cmd_imp, imp_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_gen->parsed()) {
      auto cfg = resolve_config(gen_args);
      if (fs::exists(gen_args.out_dir) && !fs::is_empty(gen_args.out_dir) && !gen_args.overwrite)
        throw fdct::ValueError("output directory exists: " + gen_args.out_dir + " (use --overwrite)");
      fs::remove_all(gen_args.out_dir);
      fdct::generate_dataset(cfg.synth, gen_args.out_dir);
      auto rows = fdct::read_manifest(gen_args.out_dir);
      std::printf("wrote %zu pairs to %s\n", rows.size(), gen_args.out_dir.c_str());
    } else if (cmd_train->parsed()) {
      auto cfg = resolve_config(train_args);
      if (cfg.data_dir.empty()) throw fdct::ValueError("config must set data.dir");
      auto res = fdct::train_fdct(cfg, train_args.out_dir, train_args.overwrite);
      std::printf("trained %d epochs in %.1fs; final total loss %.4f\n", cfg.epochs, res.train_seconds,
                  res.final_losses.total);
      print_metrics(res.test_metrics, "test");
    } else if (cmd_eval->parsed()) {
      fdct::TrainConfig cfg;
      auto model = fdct::load_run(eval_run, &cfg);
      const std::string out = eval_args.out_dir.empty() ? eval_run : eval_args.out_dir;
      auto m = fdct::eval_fdct(model, cfg.data_dir, eval_split, out);
      print_metrics(m, eval_split);
    } else if (cmd_base->parsed()) {
      auto cfg = resolve_config(base_args);
      if (cfg.data_dir.empty()) throw fdct::ValueError("config must set data.dir");
      const auto modality = base_modality == "vis" ? fdct::Modality::Visible : fdct::Modality::Infrared;
      auto res = fdct::train_baseline(cfg, modality, base_args.out_dir, base_args.overwrite);
      print_metrics(res.test_metrics, "baseline-" + base_modality);
    } else if (cmd_abl->parsed()) {
      auto cfg = resolve_config(abl_args);
      if (cfg.data_dir.empty()) throw fdct::ValueError("config must set data.dir");
      std::vector<std::uint64_t> seeds;
      std::stringstream ss(abl_seeds);
      std::string tok;
      while (std::getline(ss, tok, ',')) seeds.push_back(std::stoull(tok));
      auto rows = fdct::run_ablation(cfg, seeds, abl_args.out_dir, abl_args.overwrite);
      for (const auto& r : rows)
        std::printf("%-20s median accuracy %.4f\n", r.name.c_str(), r.median_accuracy);
    } else if (cmd_imp->parsed()) {
      auto cfg = resolve_config(imp_args);
      if (fs::exists(imp_args.out_dir) && !fs::is_empty(imp_args.out_dir) && !imp_args.overwrite)
        throw fdct::ValueError("output directory exists: " + imp_args.out_dir + " (use --overwrite)");
      fdct::import_pairs(imp_listing, imp_args.out_dir, imp_size, cfg.seed);
      std::printf("imported dataset to %s\n", imp_args.out_dir.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
