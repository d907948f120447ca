#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "config.hpp"
#include "s4sleep/checkpoint.hpp"

using namespace s4sleep;
using namespace s4sleep::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("s4sleep_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Run {
  int status = 0;
  std::string output;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(S4SLEEP_EXE) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe)) r.output += buf.data();
  r.status = pclose(pipe);
  return r;
}

nlohmann::json tiny_run(const fs::path& out) {
  return {{"data_source", "synthetic"},
          {"output_dir", out.string()},
          {"synth_records", 10},
          {"synth_epochs_per_record", 12},
          {"synth_sampling_rate", 1.0},
          {"model_dim", 4},
          {"encoder_s4_layers", 1},
          {"predictor_s4_layers", 1},
          {"states_per_channel", 2},
          {"conv1_kernel", 3},
          {"conv2_kernel", 3},
          {"dropout", 0.1},
          {"effective_batch", 4},
          {"micro_batch", 2},
          {"curriculum", {{2, 2}, {4, 1}}},
          {"bootstrap_iterations", 50}};
}

template <class F>
ConfigError config_error(F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e;
  }
  FAIL("expected a ConfigError");
  return ConfigError(ConfigErrc::Io, "", "");
}

}  // namespace

TEST_CASE("config defaults, strict keys and types") {
  const nlohmann::json base{{"data_source", "synthetic"}, {"output_dir", "runs"}};
  const auto c = parse_config(base);
  CHECK(c.train.focal_gamma == 2.0);
  CHECK(c.train.learning_rate == 1e-3);
  CHECK(c.train.effective_batch == 64);
  CHECK(c.train.curriculum == default_curriculum());
  CHECK(c.bootstrap_iterations == 1000);
  const auto echoed = effective_config(c);
  CHECK(echoed.at("focal_gamma") == 2.0);
  CHECK(parse_config(echoed).model == c.model);

  auto typo = base;
  typo["focal_gama"] = 1.0;
  const auto unknown = config_error([&] { parse_config(typo); });
  CHECK(unknown.code() == ConfigErrc::UnknownKey);
  CHECK(unknown.key() == "focal_gama");

  auto fast = base;
  fast["learning_rate"] = "fast";
  const auto type = config_error([&] { parse_config(fast); });
  CHECK(type.code() == ConfigErrc::TypeError);
  CHECK(type.key() == "learning_rate");

  const auto missing = config_error([] { parse_config(nlohmann::json{{"output_dir", "x"}}); });
  CHECK(missing.code() == ConfigErrc::MissingKey);
  CHECK(missing.key() == "data_source");

  auto indivisible = base;
  indivisible["micro_batch"] = 7;
  CHECK(config_error([&] { parse_config(indivisible); }).code() == ConfigErrc::InvalidValue);
}

TEST_CASE("overrides beat the file, the file beats defaults") {
  const auto dir = scratch("overrides");
  const auto path = dir / "run.json";
  std::ofstream(path) << nlohmann::json{{"data_source", "synthetic"}, {"output_dir", "o"}, {"focal_gamma", 1.0},
                                        {"seed", 4}}
                             .dump();
  const std::vector<std::string> sets{"focal_gamma=0.5", "curriculum=[[10,2]]", "channel=EEG Pz-Oz"};
  const auto c = load_config(path, sets);
  CHECK(c.train.focal_gamma == 0.5);
  CHECK(c.train.seed == 4);
  CHECK(c.train.weight_decay == 0.01);
  CHECK(c.channel == "EEG Pz-Oz");
  CHECK(c.train.curriculum == std::vector<CurriculumStage>{{10, 2}});
  fs::remove_all(dir);
}

TEST_CASE("edf-dump prints the fixture's fields") {
  const auto dir = scratch("dump");
  edf::EdfContents c;
  c.header.patient_id = "P-17 F 01-JAN-1970 Anon";
  c.header.recording_id = "Startdate 02-MAR-2001 fixture";
  c.header.start = edf::DateTime{2, 3, 2001, 23, 5, 9};
  c.header.reserved = "EDF+C";
  c.header.n_data_records = 2;
  c.header.record_duration_s = 30;
  c.header.n_signals = 2;
  c.header.header_bytes = 768;
  edf::SignalSpec eeg;
  eeg.label = "EEG Fpz-Cz";
  eeg.physical_dimension = "uV";
  eeg.physical_min = -200;
  eeg.physical_max = 200;
  eeg.digital_min = -2048;
  eeg.digital_max = 2047;
  eeg.samples_per_record = 3000;
  c.signals.push_back(eeg);
  c.samples.emplace_back(6000, std::int16_t{5});
  c.annotations = {{0, 30, "Sleep stage W"}, {30, 30, "Sleep stage 4"}};
  edf::SignalSpec annot;
  annot.label = std::string(edf::kAnnotationLabel);
  annot.samples_per_record = edf::annotation_samples_needed(c.annotations, 2, 30);
  c.signals.push_back(annot);
  c.samples.emplace_back();
  const auto bytes = edf::encode(c);
  const auto path = dir / "fixture.edf";
  std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                               static_cast<std::streamsize>(bytes.size()));

  const auto r = run("edf-dump " + path.string());
  CHECK(r.status == 0);
  CHECK(r.output.find("format: EDF+C\n") != std::string::npos);
  CHECK(r.output.find("patient: P-17 F 01-JAN-1970 Anon\n") != std::string::npos);
  CHECK(r.output.find("recording: Startdate 02-MAR-2001 fixture\n") != std::string::npos);
  CHECK(r.output.find("start: 2001-03-02 23:05:09\n") != std::string::npos);
  CHECK(r.output.find("data records: 2 x 30 s\n") != std::string::npos);
  CHECK(r.output.find("[0] EEG Fpz-Cz: 100 Hz, 3000 samples/record, physical [-200, 200] uV, digital [-2048, 2047]") !=
        std::string::npos);
  CHECK(r.output.find("annotations: 2\n  0 +30 Sleep stage W\n  30 +30 Sleep stage 4\n") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("synth writes EDF+ files that load back as the same records") {
  const auto dir = scratch("synth");
  SynthConfig s;
  s.n_records = 2;
  s.epochs_per_record = 5;
  std::ostringstream log;
  cmd_synth(s, dir, "EEG Fpz-Cz", log);
  const auto loaded = load_edf_directory(dir, "EEG Fpz-Cz");
  const auto original = synth_generate(s);
  REQUIRE(loaded.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(loaded[i].labels == original[i].labels);
    CHECK(loaded[i].sampling_rate == original[i].sampling_rate);
    double worst = 0;
    for (std::size_t k = 0; k < loaded[i].samples.size(); ++k) {
      worst = std::max(worst, std::fabs(loaded[i].samples[k] - original[i].samples[k]));
    }
    CHECK(worst < 1e-3);  // 16-bit quantization of a +-4 range
  }
  fs::remove_all(dir);
}

TEST_CASE("train, extend, predict, evaluate and compare") {
  const auto dir = scratch("train");
  const auto cfg_path = dir / "run.json";
  std::ofstream(cfg_path) << tiny_run(dir / "runs").dump(2);

  const auto first = run("train -c " + cfg_path.string() + " --run-dir " + (dir / "a").string());
  INFO(first.output);
  REQUIRE(first.status == 0);
  for (const char* f : {"config.json", "metrics.jsonl", "timing.jsonl", "results.tsv", "split.json", "stage0_E2.ckpt",
                        "stage1_E4.ckpt", "stage0_E2_test.tsv", "stage1_E4_test.tsv", "stage1_E4_test_bootstrap.json"}) {
    CHECK_MESSAGE(fs::exists(dir / "a" / f), f);
  }
  const auto echoed = nlohmann::json::parse(slurp(dir / "a" / "config.json"));
  CHECK(echoed.at("focal_gamma") == 2.0);

  // same config and seed: identical metrics log
  const auto second = run("train -c " + cfg_path.string() + " --run-dir " + (dir / "b").string());
  REQUIRE(second.status == 0);
  CHECK(slurp(dir / "a" / "metrics.jsonl") == slurp(dir / "b" / "metrics.jsonl"));
  CHECK(slurp(dir / "a" / "stage1_E4_test.tsv") == slurp(dir / "b" / "stage1_E4_test.tsv"));

  // single stage, then extend from its checkpoint reproduces the full run
  REQUIRE(run("train -c " + cfg_path.string() + " --stage 0 --run-dir " + (dir / "c").string()).status == 0);
  CHECK_FALSE(fs::exists(dir / "c" / "stage1_E4.ckpt"));
  const auto ext = run("extend -c " + cfg_path.string() + " --checkpoint " + (dir / "c" / "stage0_E2.ckpt").string() +
                       " --run-dir " + (dir / "c").string());
  INFO(ext.output);
  REQUIRE(ext.status == 0);
  CHECK(slurp(dir / "c" / "metrics.jsonl") == slurp(dir / "a" / "metrics.jsonl"));
  CHECK(slurp(dir / "c" / "stage1_E4_test.tsv") == slurp(dir / "a" / "stage1_E4_test.tsv"));
  const auto ck = load_checkpoint(dir / "c" / "stage1_E4.ckpt");
  CHECK(ck.meta.stage_index == 1);
  CHECK(ck.meta.input_epochs == 4);

  const auto preds = dir / "preds.tsv";
  const auto pr = run("predict -c " + cfg_path.string() + " --checkpoint " + (dir / "a" / "stage1_E4.ckpt").string() +
                      " --split test -o " + preds.string());
  REQUIRE(pr.status == 0);
  CHECK(slurp(preds) == slurp(dir / "a" / "stage1_E4_test.tsv"));

  const auto ev = run("evaluate " + preds.string() + " --iterations 100 -o " + (dir / "eval.json").string());
  REQUIRE(ev.status == 0);
  CHECK(ev.output.find("macro-F1: ") != std::string::npos);
  CHECK(nlohmann::json::parse(slurp(dir / "eval.json")).at("resamples").size() == 100);

  const auto cmp = run("compare " + preds.string() + " " + preds.string());
  REQUIRE(cmp.status == 0);
  CHECK(cmp.output.find("95% CI of the difference: [0.0000, 0.0000]") != std::string::npos);
  CHECK(cmp.output.find("not significant") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("exit status is nonzero exactly on errors") {
  const auto dir = scratch("status");
  const auto cfg_path = dir / "bad.json";
  std::ofstream(cfg_path) << R"({"data_source": "synthetic", "output_dir": "x", "focal_gama": 1})";
  const auto bad = run("train -c " + cfg_path.string());
  CHECK(bad.status != 0);
  CHECK(bad.output.find("focal_gama") != std::string::npos);
  CHECK(run("edf-dump " + cfg_path.string()).status != 0);
  CHECK(run("frobnicate").status != 0);
  CHECK(run("--help").status == 0);
  fs::remove_all(dir);
}
