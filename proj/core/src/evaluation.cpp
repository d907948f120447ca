#include "s4sleep/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "s4sleep/random.hpp"

namespace s4sleep {
namespace {

// Scoreable units for resampling, each reduced to its confusion counts.
std::vector<ConfusionMatrix> resampling_units(const PredictionSet& set, ResampleUnit unit) {
  std::vector<ConfusionMatrix> units;
  for (const auto& rec : set.records) {
    if (unit == ResampleUnit::Record) {
      ConfusionMatrix cm = confusion(rec);
      if (cm.total() > 0) units.push_back(cm);
    } else {
      for (std::size_t e = 0; e < rec.num_epochs(); ++e) {
        if (!is_scoreable(rec.labels[e])) continue;
        ConfusionMatrix cm;
        cm.add(rec.labels[e], rec.predicted[e]);
        units.push_back(cm);
      }
    }
  }
  return units;
}

ConfusionMatrix draw(const std::vector<ConfusionMatrix>& units, std::span<const std::size_t> picks) {
  ConfusionMatrix cm;
  for (std::size_t i : picks) cm += units[i];
  return cm;
}

std::vector<std::size_t> resample_indices(std::uint64_t seed, std::size_t iteration, std::size_t n) {
  Rng rng(derive_seed(seed, iteration));
  std::vector<std::size_t> picks(n);
  for (auto& p : picks) p = rng.index(n);
  return picks;
}

void finish(BootstrapSummary& s, double level) {
  std::vector<double> sorted = s.resamples;
  std::sort(sorted.begin(), sorted.end());
  const double tail = (1.0 - level) / 2.0;
  s.ci_low = percentile(sorted, tail);
  s.ci_high = percentile(sorted, 1.0 - tail);
  if (s.is_difference) s.significant = s.ci_low > 0.0 || s.ci_high < 0.0;
}

void check_options(const BootstrapOptions& o) {
  if (o.iterations == 0) throw std::invalid_argument("bootstrap needs at least one iteration");
  if (!(o.level > 0.0 && o.level < 1.0)) throw std::invalid_argument("confidence level must lie in (0, 1)");
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

[[noreturn]] void malformed(std::size_t line, const std::string& msg) {
  throw EvalError(EvalErrc::MalformedPredictions, "predictions line " + std::to_string(line) + ": " + msg);
}

}  // namespace

std::vector<Probs> softmax(const Mat& logits) {
  if (logits.cols() != static_cast<Eigen::Index>(kNumStages)) throw std::invalid_argument("logits must have 5 columns");
  std::vector<Probs> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double peak = logits.row(r).maxCoeff();
    double z = 0.0;
    Probs& p = out[static_cast<std::size_t>(r)];
    for (std::size_t k = 0; k < kNumStages; ++k) {
      p[k] = std::exp(logits(r, static_cast<Eigen::Index>(k)) - peak);
      z += p[k];
    }
    for (double& v : p) v /= z;
  }
  return out;
}

StageLabel argmax_stage(const Probs& p) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < kNumStages; ++k) {
    if (p[k] > p[best]) best = k;
  }
  return stage_from_class(best);
}

RecordPrediction aggregate_windows(std::string record_id, std::span<const StageLabel> labels,
                                   std::span<const WindowProbs> windows) {
  const std::size_t n = labels.size();
  std::vector<Probs> sums(n, Probs{});
  std::vector<std::size_t> counts(n, 0);
  for (const auto& w : windows) {
    for (std::size_t i = 0; i < w.probs.size() && w.epoch_offset + i < n; ++i) {
      const std::size_t e = w.epoch_offset + i;
      for (std::size_t k = 0; k < kNumStages; ++k) sums[e][k] += w.probs[i][k];
      ++counts[e];
    }
  }
  RecordPrediction out;
  out.record_id = std::move(record_id);
  out.labels.assign(labels.begin(), labels.end());
  out.probs.resize(n);
  out.predicted.resize(n);
  for (std::size_t e = 0; e < n; ++e) {
    if (counts[e] == 0) {
      throw EvalError(EvalErrc::UncoveredEpoch,
                      "epoch " + std::to_string(e) + " of record " + out.record_id + " is not covered by any window");
    }
    for (std::size_t k = 0; k < kNumStages; ++k) out.probs[e][k] = sums[e][k] / static_cast<double>(counts[e]);
    out.predicted[e] = argmax_stage(out.probs[e]);
  }
  return out;
}

RecordPrediction predict_record(const Model& model, const LabeledRecord& record, std::size_t input_epochs,
                                WindowScheme scheme) {
  const auto rec_tokens = model.encode_record(record);
  const auto per_epoch = static_cast<Eigen::Index>(kTokensPerEpoch);
  const auto E = static_cast<Eigen::Index>(input_epochs);
  const auto L = static_cast<Eigen::Index>(record.num_epochs());
  const RunMode mode{};
  std::vector<WindowProbs> windows;
  Mat tokens(E * per_epoch, rec_tokens.tokens.cols());
  const auto segments = scheme == WindowScheme::StrideOne ? segment_eval(record, input_epochs)
                                                          : segment_train(record, input_epochs);
  for (const Window& w : segments) {
    const auto off = static_cast<Eigen::Index>(w.epoch_offset);
    for (Eigen::Index e = 0; e < E; ++e) {
      tokens.middleRows(e * per_epoch, per_epoch) =
          off + e < L ? rec_tokens.tokens.middleRows((off + e) * per_epoch, per_epoch) : rec_tokens.pad_tokens;
    }
    windows.push_back(WindowProbs{w.epoch_offset, softmax(model.logits_from_tokens(tokens, mode))});
  }
  return aggregate_windows(record.record_id, record.labels, windows);
}

PredictionSet predict_records(const Model& model, std::span<const LabeledRecord* const> records,
                              std::size_t input_epochs, WindowScheme scheme) {
  PredictionSet set;
  set.records.reserve(records.size());
  for (const LabeledRecord* rec : records) set.records.push_back(predict_record(model, *rec, input_epochs, scheme));
  return set;
}

void ConfusionMatrix::add(StageLabel label, StageLabel predicted) {
  if (!is_scoreable(label)) return;
  ++counts[class_index(label)][class_index(predicted)];
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  for (std::size_t i = 0; i < kNumStages; ++i) {
    for (std::size_t j = 0; j < kNumStages; ++j) counts[i][j] += other.counts[i][j];
  }
  return *this;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (const auto& row : counts) {
    for (auto c : row) n += c;
  }
  return n;
}

ConfusionMatrix confusion(const RecordPrediction& record) {
  ConfusionMatrix cm;
  for (std::size_t e = 0; e < record.num_epochs(); ++e) cm.add(record.labels[e], record.predicted[e]);
  return cm;
}

ConfusionMatrix confusion(const PredictionSet& set) {
  ConfusionMatrix cm;
  for (const auto& rec : set.records) cm += confusion(rec);
  return cm;
}

double macro_f1(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw EvalError(EvalErrc::NoScoreableEpochs, "no scoreable epochs to evaluate");
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < kNumStages; ++k) {
    std::uint64_t in_labels = 0;
    std::uint64_t in_preds = 0;
    for (std::size_t j = 0; j < kNumStages; ++j) {
      in_labels += cm.counts[k][j];
      in_preds += cm.counts[j][k];
    }
    if (in_labels == 0 && in_preds == 0) continue;
    const auto tp = static_cast<double>(cm.counts[k][k]);
    // 2PR/(P+R) == 2TP / (|labels k| + |predicted k|)
    sum += 2.0 * tp / static_cast<double>(in_labels + in_preds);
    ++present;
  }
  return sum / static_cast<double>(present);
}

double macro_f1(const PredictionSet& set) { return macro_f1(confusion(set)); }

double macro_f1(std::span<const StageLabel> labels, std::span<const StageLabel> predicted) {
  if (labels.size() != predicted.size()) throw std::invalid_argument("label and prediction counts differ");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < labels.size(); ++i) cm.add(labels[i], predicted[i]);
  return macro_f1(cm);
}

double percentile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("percentile of an empty sample");
  const double pos = std::clamp(q * static_cast<double>(sorted.size()) - 0.5, 0.0,
                                static_cast<double>(sorted.size() - 1));
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

BootstrapSummary bootstrap_ci(const PredictionSet& set, const BootstrapOptions& options) {
  check_options(options);
  const auto units = resampling_units(set, options.unit);
  if (units.empty()) throw EvalError(EvalErrc::EmptyTestSet, "no test records with scoreable epochs");
  BootstrapSummary s;
  s.point_estimate = macro_f1(draw(units, [&] {
    std::vector<std::size_t> all(units.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }()));
  s.resamples.resize(options.iterations);
  for (std::size_t it = 0; it < options.iterations; ++it) {
    s.resamples[it] = macro_f1(draw(units, resample_indices(options.seed, it, units.size())));
  }
  finish(s, options.level);
  return s;
}

BootstrapSummary compare_models(const PredictionSet& a, const PredictionSet& b, const BootstrapOptions& options) {
  check_options(options);
  if (a.records.size() != b.records.size()) {
    throw EvalError(EvalErrc::MisalignedPredictionSets, "prediction sets cover different numbers of records");
  }
  for (std::size_t r = 0; r < a.records.size(); ++r) {
    const auto& ra = a.records[r];
    const auto& rb = b.records[r];
    if (ra.record_id != rb.record_id || ra.labels != rb.labels) {
      throw EvalError(EvalErrc::MisalignedPredictionSets,
                      "record " + std::to_string(r) + " differs: '" + ra.record_id + "' vs '" + rb.record_id + "'");
    }
  }
  // Built from the same set in the same order, so unit i of a pairs with unit i of b.
  const auto units_a = resampling_units(a, options.unit);
  const auto units_b = resampling_units(b, options.unit);
  if (units_a.empty()) throw EvalError(EvalErrc::EmptyTestSet, "no test records with scoreable epochs");

  BootstrapSummary s;
  s.is_difference = true;
  s.point_estimate = macro_f1(a) - macro_f1(b);
  s.resamples.resize(options.iterations);
  for (std::size_t it = 0; it < options.iterations; ++it) {
    const auto picks = resample_indices(options.seed, it, units_a.size());
    s.resamples[it] = macro_f1(draw(units_a, picks)) - macro_f1(draw(units_b, picks));
  }
  finish(s, options.level);
  return s;
}

void to_json(nlohmann::json& j, const BootstrapSummary& s) {
  j = nlohmann::json{{"point_estimate", s.point_estimate},
                     {"ci_low", s.ci_low},
                     {"ci_high", s.ci_high},
                     {"iterations", s.resamples.size()},
                     {"resamples", s.resamples}};
  if (s.is_difference) j["significant"] = s.significant;
}

void write_predictions(std::ostream& out, const PredictionSet& set) {
  out << "record_id\tepoch_index\tp_W\tp_N1\tp_N2\tp_N3\tp_REM\tstage\tlabel\n";
  for (const auto& rec : set.records) {
    for (std::size_t e = 0; e < rec.num_epochs(); ++e) {
      out << rec.record_id << '\t' << e;
      for (double p : rec.probs[e]) out << '\t' << format_double(p);
      out << '\t' << stage_name(rec.predicted[e]) << '\t' << stage_name(rec.labels[e]) << '\n';
    }
  }
}

PredictionSet read_predictions(std::istream& in) {
  PredictionSet set;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.rfind("record_id\t", 0) == 0) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 4 + kNumStages) malformed(line_no, "expected 10 tab-separated fields");

    std::size_t epoch = 0;
    auto [ptr, ec] = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), epoch);
    if (ec != std::errc() || ptr != fields[1].data() + fields[1].size()) malformed(line_no, "bad epoch index");
    Probs p{};
    for (std::size_t k = 0; k < kNumStages; ++k) {
      const std::string& t = fields[2 + k];
      auto [pp, pec] = std::from_chars(t.data(), t.data() + t.size(), p[k]);
      if (pec != std::errc() || pp != t.data() + t.size()) malformed(line_no, "bad probability");
    }
    const auto stage = parse_stage_name(fields[2 + kNumStages]);
    const auto label = parse_stage_name(fields[3 + kNumStages]);
    if (!stage || !is_scoreable(*stage)) malformed(line_no, "bad predicted stage");
    if (!label) malformed(line_no, "bad label");

    if (set.records.empty() || set.records.back().record_id != fields[0]) {
      set.records.push_back(RecordPrediction{fields[0], {}, {}, {}});
    }
    auto& rec = set.records.back();
    if (epoch != rec.num_epochs()) malformed(line_no, "epoch indices must be consecutive from 0 per record");
    rec.probs.push_back(p);
    rec.predicted.push_back(*stage);
    rec.labels.push_back(*label);
  }
  return set;
}

void save_predictions(const std::filesystem::path& path, const PredictionSet& set) {
  std::ofstream out(path);
  if (!out) throw EvalError(EvalErrc::MalformedPredictions, "cannot write " + path.string());
  write_predictions(out, set);
}

PredictionSet load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw EvalError(EvalErrc::MalformedPredictions, "cannot open " + path.string());
  return read_predictions(in);
}

}  // namespace s4sleep
