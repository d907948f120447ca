#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "commands.hpp"
#include "config.hpp"

namespace {

namespace fs = std::filesystem;
using namespace s4sleep;
using namespace s4sleep::cli;

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd, bool required = true) {
    auto* opt = cmd->add_option("-c,--config", path, "flat JSON run config");
    if (required) opt->required();
    cmd->add_option("--set", overrides, "override a config key: key=value (repeatable)");
  }

  RunConfig load() const { return path.empty() ? load_config(overrides) : load_config(path, overrides); }
};

struct BootstrapArgs {
  std::size_t iterations = 1000;
  std::uint64_t seed = 0;
  std::string unit = "record";
  std::string out;

  void attach(CLI::App* cmd) {
    cmd->add_option("--iterations", iterations, "bootstrap iterations")->capture_default_str();
    cmd->add_option("--seed", seed, "bootstrap seed")->capture_default_str();
    cmd->add_option("--unit", unit, "resampling unit")->check(CLI::IsMember({"record", "epoch"}))->capture_default_str();
    cmd->add_option("-o,--out", out, "write the summary (with all resamples) as JSON");
  }

  BootstrapOptions options() const {
    BootstrapOptions o;
    o.iterations = iterations;
    o.seed = seed;
    o.unit = unit == "epoch" ? ResampleUnit::Epoch : ResampleUnit::Record;
    return o;
  }

  std::optional<fs::path> out_path() const { return out.empty() ? std::nullopt : std::optional<fs::path>(out); }
};

std::optional<fs::path> optional_path(const std::string& s) {
  return s.empty() ? std::nullopt : std::optional<fs::path>(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sleep staging with S4 encoder/predictor models"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "write synthetic labeled recordings as EDF+ files");
  SynthConfig synth_cfg;
  std::string synth_out;
  std::string synth_channel = "EEG Fpz-Cz";
  synth->add_option("-o,--out", synth_out, "output directory")->required();
  synth->add_option("--records", synth_cfg.n_records)->capture_default_str();
  synth->add_option("--epochs", synth_cfg.epochs_per_record, "epochs per record")->capture_default_str();
  synth->add_option("--rate", synth_cfg.sampling_rate, "sampling rate in Hz")->capture_default_str();
  synth->add_option("--correlation", synth_cfg.correlation_length, "mean stage dwell in epochs")->capture_default_str();
  synth->add_option("--noise", synth_cfg.noise_std)->capture_default_str();
  synth->add_option("--seed", synth_cfg.seed)->capture_default_str();
  synth->add_option("--channel", synth_channel)->capture_default_str();

  // edf-dump
  auto* dump = app.add_subcommand("edf-dump", "print the header and annotations of an EDF/EDF+ file");
  std::string dump_file;
  dump->add_option("file", dump_file)->required()->check(CLI::ExistingFile);

  // train
  auto* train = app.add_subcommand("train", "train the configured curriculum (or one stage)");
  ConfigArgs train_cfg;
  train_cfg.attach(train);
  std::optional<std::size_t> train_stage;
  std::string train_init;
  std::string train_run_dir;
  train->add_option("--stage", train_stage, "run only this curriculum stage (0-based)");
  train->add_option("--init", train_init, "start from this checkpoint's parameters")->check(CLI::ExistingFile);
  train->add_option("--run-dir", train_run_dir, "output directory instead of a timestamped one");

  // extend
  auto* extend = app.add_subcommand("extend", "finetune a checkpoint at the next configured input length");
  ConfigArgs extend_cfg;
  extend_cfg.attach(extend);
  std::string extend_ckpt;
  std::string extend_run_dir;
  extend->add_option("--checkpoint", extend_ckpt)->required()->check(CLI::ExistingFile);
  extend->add_option("--run-dir", extend_run_dir, "output directory instead of a timestamped one");

  // predict
  auto* predict = app.add_subcommand("predict", "write aggregated per-epoch predictions for a split");
  ConfigArgs predict_cfg;
  predict_cfg.attach(predict);
  std::string predict_ckpt;
  std::string predict_split = "test";
  std::optional<std::size_t> predict_epochs;
  std::string predict_out;
  predict->add_option("--checkpoint", predict_ckpt)->required()->check(CLI::ExistingFile);
  predict->add_option("--split", predict_split)->check(CLI::IsMember({"train", "val", "test", "all"}))->capture_default_str();
  predict->add_option("--input-epochs", predict_epochs, "window length (default: the checkpoint's)");
  predict->add_option("-o,--out", predict_out, "prediction TSV")->required();

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "macro-F1 with a bootstrap confidence interval");
  std::string eval_preds;
  BootstrapArgs eval_boot;
  evaluate->add_option("predictions", eval_preds)->required()->check(CLI::ExistingFile);
  eval_boot.attach(evaluate);

  // compare
  auto* compare = app.add_subcommand("compare", "paired bootstrap of the macro-F1 difference a - b");
  std::string cmp_a;
  std::string cmp_b;
  BootstrapArgs cmp_boot;
  compare->add_option("a", cmp_a)->required()->check(CLI::ExistingFile);
  compare->add_option("b", cmp_b)->required()->check(CLI::ExistingFile);
  cmp_boot.attach(compare);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      cmd_synth(synth_cfg, synth_out, synth_channel, std::cout);
    } else if (*dump) {
      cmd_edf_dump(dump_file, std::cout);
    } else if (*train) {
      const RunConfig cfg = train_cfg.load();
      const fs::path dir = prepare_run_dir(cfg, optional_path(train_run_dir));
      std::cout << "run directory: " << dir.string() << '\n';
      TrainOptions opts;
      opts.stage = train_stage;
      opts.init_checkpoint = optional_path(train_init);
      cmd_train(cfg, dir, opts, std::cout);
    } else if (*extend) {
      const RunConfig cfg = extend_cfg.load();
      const fs::path dir = prepare_run_dir(cfg, optional_path(extend_run_dir));
      std::cout << "run directory: " << dir.string() << '\n';
      cmd_extend(cfg, dir, extend_ckpt, std::cout);
    } else if (*predict) {
      cmd_predict(predict_cfg.load(), predict_ckpt, predict_split, predict_epochs, predict_out, std::cout);
    } else if (*evaluate) {
      cmd_evaluate(eval_preds, eval_boot.options(), eval_boot.out_path(), std::cout);
    } else if (*compare) {
      cmd_compare(cmp_a, cmp_b, cmp_boot.options(), cmp_boot.out_path(), std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
