#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "s4sleep/edf.hpp"
#include "s4sleep/evaluation.hpp"
#include "s4sleep/loss.hpp"
#include "s4sleep/ssm.hpp"
#include "s4sleep/synth.hpp"
#include "s4sleep/training.hpp"

#ifdef S4SLEEP_HAVE_CLI
#include "config.hpp"
#endif

using namespace s4sleep;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  bool gated = true;
};

int failures = 0;

void report(int number, const char* name, const std::function<Outcome()>& run) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = run();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
  if (o.gated && !o.pass) ++failures;
  std::printf("criterion %d %-26s %s  (%s; %.1f s)\n", number, name, o.pass ? "PASS" : "FAIL", o.detail.c_str(),
              dt.count());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// 1
Outcome kernel_equivalence() {
  Rng rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t channels = 1 + rng.index(8);
    const std::size_t states = 1 + rng.index(64);
    const std::size_t length = 1 + rng.index(4096);
    auto p = ssm::S4LayerParams::initialize(channels, states, rng);
    if (trial % 2 == 1) {
      for (auto& l : p.lambda) l = {-std::exp(rng.uniform(-4.0, 1.0)), rng.uniform(-200.0, 200.0)};
      for (auto& v : p.log_dt) v = rng.uniform(std::log(1e-4), std::log(1.0));
    }
    std::vector<double> u(channels * length);
    for (auto& x : u) x = rng.normal();
    const auto a = ssm::apply_fft(p, u, length);
    const auto b = ssm::apply_recurrence(p, u, length);
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
  }
  return {worst <= 1e-8, fmt("max |fft - recurrence| = %.3g, bound 1e-8", worst)};
}

// 2
Outcome gradient_check() {
  Rng rng(202);
  ModelConfig c = fixtures::tiny_model(8, 2, 2, 9);
  c.dropout = 0.1;
  Model model(c);
  const std::size_t spe = 100;
  std::vector<double> x(2 * spe);
  for (auto& v : x) v = rng.normal();
  const std::vector<StageLabel> labels{StageLabel::N1, StageLabel::N3};
  const RunMode mode{true, 77, false};
  Model::ForwardCache cache;
  const auto loss = focal_loss_sum(model.forward(x, spe, mode, &cache), labels, 2.0);
  GradientSet grads(model.parameters());
  model.backward(cache, loss.grad, grads);
  const auto r = oracle::check_gradients(
      model.parameters(), grads, [&] { return focal_loss_sum(model.forward(x, spe, mode), labels, 2.0).loss; }, 1e-4,
      1e-8);
  const bool all = r.checked == model.parameters().total_size();
  return {r.failures == 0 && all,
          std::to_string(r.checked) + " parameters, " + std::to_string(r.failures) +
              " outside rel 1e-4 (abs floor 1e-8); worst " + r.worst};
}

// 3
Outcome loss_identities() {
  Rng rng(303);
  double worst = 0.0;
  bool exact = true;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 1 + rng.index(20);
    Mat z(rows, 5);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = 4.0 * rng.normal();
    std::vector<StageLabel> labels(rows);
    for (auto& l : labels) l = rng.uniform() < 0.2 ? StageLabel::Excluded : stage_from_class(rng.index(5));
    worst = std::max(worst, std::fabs(focal_loss(z, labels, 0.0) - cross_entropy(z, labels)));

    const std::size_t extra = 1 + rng.index(5);
    Mat bigger(rows + extra, 5);
    bigger.topRows(rows) = z;
    for (std::size_t r = rows; r < rows + extra; ++r) {
      for (Eigen::Index k = 0; k < 5; ++k) bigger(static_cast<Eigen::Index>(r), k) = 10.0 * rng.normal();
    }
    auto more = labels;
    more.insert(more.end(), extra, StageLabel::Excluded);
    const double gamma = rng.uniform(0.0, 4.0);
    Mat g1, g2;
    const double l1 = focal_loss(z, labels, gamma, &g1);
    const double l2 = focal_loss(bigger, more, gamma, &g2);
    exact = exact && l1 == l2 && g2.topRows(rows) == g1 && g2.bottomRows(extra).isZero(0.0);
  }
  return {worst <= 1e-12 && exact, fmt("max |FL(0) - CE| = %.3g, bound 1e-12; ", worst) +
                                       (exact ? "EXCLUDED injection exact" : "EXCLUDED injection changed output")};
}

// 4
Outcome accumulation() {
  Rng rng(404);
  std::vector<LabeledRecord> recs;
  for (int i = 0; i < 8; ++i) recs.push_back(fixtures::random_record(rng, "R" + std::to_string(i), 16, 2.0));
  std::vector<Window> windows;
  for (const auto& r : recs) {
    for (auto& w : segment_train(r, 2)) windows.push_back(w);
  }
  ModelConfig mc = fixtures::tiny_model(8, 4, 1, 4);
  mc.dropout = 0.1;
  std::vector<ParameterSet> after;
  for (std::size_t micro : {8, 16, 64}) {
    Model m(mc);
    auto state = AdamWState::zeros(m.parameters());
    TrainConfig t;
    t.effective_batch = 64;
    t.micro_batch = micro;
    accumulate_and_step(m, std::span<const Window>(windows).first(64), t, state, 9);
    after.push_back(m.parameters());
  }
  double worst = 0.0;
  for (const auto& p : after) {
    for (std::size_t b = 0; b < p.size(); ++b) {
      for (std::size_t i = 0; i < p.values(b).size(); ++i) {
        worst = std::max(worst, std::fabs(p.values(b)[i] - after[0].values(b)[i]));
      }
    }
  }
  return {worst <= 1e-12, fmt("max parameter difference over micro_batch 8/16/64 = %.3g, bound 1e-12", worst)};
}

struct SynthExperiment {
  std::vector<LabeledRecord> records;
  DataSplit split;
  ModelConfig model;
  TrainConfig train;
  std::vector<StageResult> curriculum;
};

SynthExperiment& synthetic() {
  static SynthExperiment x = [] {
    SynthExperiment s;
    SynthConfig sc;  // 20 records x 120 epochs, 20 Hz, correlation 3, noise 0.5
    sc.seed = 5;
    s.records = synth_generate(sc);
    std::vector<std::string> ids;
    for (const auto& r : s.records) ids.push_back(r.record_id);
    const auto m = make_split(ids, 11);
    auto pick = [&](const std::vector<std::string>& names) {
      std::vector<const LabeledRecord*> out;
      for (const auto& n : names) {
        for (const auto& r : s.records) {
          if (r.record_id == n) out.push_back(&r);
        }
      }
      return out;
    };
    s.split = {pick(m.train), pick(m.val), pick(m.test)};

    s.model.model_dim = 8;
    s.model.encoder_s4_layers = 1;
    s.model.predictor_s4_layers = 1;
    s.model.states_per_channel = 8;
    s.model.conv1 = {8, 9, 0};
    s.model.conv2 = {0, 3, 0};
    s.model.dropout = 0.1;
    s.model.init_seed = 3;
    s.train.learning_rate = 5e-3;
    s.train.effective_batch = 16;
    s.train.micro_batch = 8;
    s.train.curriculum = {{10, 20}, {20, 5}, {40, 5}};
    s.train.seed = 1;
    return s;
  }();
  return x;
}

// 5
Outcome synthetic_end_to_end() {
  auto& s = synthetic();
  Model model(s.model);
  s.curriculum = run_curriculum(model, s.split, s.train, {});
  const double f1 = s.curriculum.at(0).test_macro_f1.value_or(0.0);
  return {f1 >= 0.95, fmt("E=10 after 20 passes: test macro-F1 %.4f, need >= 0.95", f1)};
}

// 6
Outcome curriculum_behavior() {
  auto& s = synthetic();
  if (s.curriculum.size() != 3) return {false, "curriculum run missing"};
  std::string detail = "test macro-F1";
  bool ok = true;
  for (std::size_t i = 0; i < 3; ++i) {
    detail += fmt(i == 0 ? " %.4f" : " -> %.4f", s.curriculum[i].test_macro_f1.value_or(0.0));
    if (i > 0 && s.curriculum[i].test_macro_f1.value_or(0.0) < s.curriculum[i - 1].test_macro_f1.value_or(0.0) - 0.02) ok = false;
  }
  const auto diff = compare_models(s.curriculum[2].test_predictions, s.curriculum[0].test_predictions);
  ok = ok && !diff.significant;
  detail += fmt("; E40 - E10 = %.4f", diff.point_estimate) + fmt(" [%.4f,", diff.ci_low) +
            fmt(" %.4f] ", diff.ci_high) + (diff.significant ? "significant" : "not significant");

  // from scratch at E=40, same number of passes as the whole curriculum
  std::size_t budget = 0;
  for (const auto& st : s.train.curriculum) budget += st.training_epochs;
  int worse = 0;
  detail += "; scratch E40:";
  for (std::uint64_t seed : {1, 2, 3}) {
    ModelConfig mc = s.model;
    mc.init_seed = 100 + seed;
    TrainConfig tc = s.train;
    tc.seed = seed;
    tc.curriculum = {{40, budget}};
    Model scratch(mc);
    const auto r = run_curriculum(scratch, s.split, tc, {});
    const auto d = compare_models(s.curriculum[2].test_predictions, r.at(0).test_predictions);
    if (d.significant && d.point_estimate > 0) ++worse;
    detail += fmt(" %.4f", r.at(0).test_macro_f1.value_or(0.0));
  }
  detail += " (" + std::to_string(worse) + "/3 significantly worse; reported only)";
  return {ok, detail};
}

// 7
Outcome bootstrap_properties() {
  Rng rng(707);
  auto labeled = [&](std::string id, std::size_t epochs, double accuracy) {
    RecordPrediction r;
    r.record_id = std::move(id);
    for (std::size_t e = 0; e < epochs; ++e) {
      const auto l = stage_from_class(rng.index(5));
      const auto p = rng.uniform() < accuracy ? l : stage_from_class(rng.index(5));
      r.labels.push_back(l);
      r.predicted.push_back(p);
      Probs pr{};
      pr[class_index(p)] = 1.0;
      r.probs.push_back(pr);
    }
    return r;
  };
  PredictionSet base;
  for (int i = 0; i < 12; ++i) base.records.push_back(labeled("R" + std::to_string(i), 40, rng.uniform(0.4, 1.0)));

  int self_significant = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    BootstrapOptions o;
    o.seed = seed;
    const auto d = compare_models(base, base, o);
    if (d.significant || d.ci_low != 0.0 || d.ci_high != 0.0) ++self_significant;
  }

  PredictionSet single;
  single.records.push_back(base.records[0]);
  const auto one = bootstrap_ci(single);
  const double single_width = one.ci_high - one.ci_low;

  std::vector<double> widths;
  for (std::size_t times : {1, 4, 16}) {
    PredictionSet dup;
    for (std::size_t t = 0; t < times; ++t) {
      for (auto r : base.records) {
        r.record_id += "_" + std::to_string(t);
        dup.records.push_back(std::move(r));
      }
    }
    const auto s = bootstrap_ci(dup);
    widths.push_back(s.ci_high - s.ci_low);
  }
  const bool monotone = widths[0] > widths[1] && widths[1] > widths[2];
  return {self_significant == 0 && single_width == 0.0 && monotone,
          std::to_string(self_significant) + "/100 self-comparisons significant; single-record width " +
              fmt("%.3g", single_width) + fmt("; widths 1x/4x/16x %.4f", widths[0]) + fmt(" %.4f", widths[1]) +
              fmt(" %.4f", widths[2])};
}

// 8
Outcome edf_round_trip() {
  Rng rng(808);
  int bad = 0;
  std::size_t annotations = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = fixtures::random_edf(rng);
    annotations += c.annotations.size();
    const auto bytes = edf::encode(c);
    const auto rec = edf::EdfRecording::from_bytes(bytes);
    if (!(rec.materialize() == c) || edf::write_fixture(rec) != bytes) ++bad;
  }
  return {bad == 0, std::to_string(50 - bad) + "/50 fixtures identical after write and parse (" +
                        std::to_string(annotations) + " annotations)"};
}

// 9
Outcome sedf_documented() {
#ifdef S4SLEEP_HAVE_CLI
  const std::filesystem::path root = S4SLEEP_SOURCE_DIR;
  const auto cfg = cli::load_config(root / "configs" / "sedf.json", {});
  const bool paper_setup = cfg.model.model_dim == 128 && cfg.model.encoder_s4_layers == 4 &&
                           cfg.model.predictor_s4_layers == 4 && cfg.train.effective_batch == 64 &&
                           cfg.train.learning_rate == 1e-3 && cfg.train.focal_gamma == 2.0 &&
                           cfg.train.curriculum == default_curriculum() && cfg.channel == "EEG Fpz-Cz";
  return {paper_setup,
          "Sleep-EDF results need the 197-recording dataset; not run here. configs/sedf.json loads with the reference "
          "setup; README lists the commands",
          false};
#else
  return {false, "CLI not built; configs/sedf.json not checked", false};
#endif
}

}  // namespace

int main() {
  report(1, "kernel-equivalence", kernel_equivalence);
  report(2, "gradient-correctness", gradient_check);
  report(3, "loss-identities", loss_identities);
  report(4, "accumulation-equivalence", accumulation);
  report(5, "synthetic-end-to-end", synthetic_end_to_end);
  report(6, "curriculum-behavior", curriculum_behavior);
  report(7, "bootstrap-properties", bootstrap_properties);
  report(8, "edf-round-trip", edf_round_trip);
  report(9, "sedf-table-documented", sedf_documented);
  std::printf("%s\n", failures == 0 ? "acceptance: all gated criteria pass" : "acceptance: FAILURES");
  return failures == 0 ? 0 : 1;
}
