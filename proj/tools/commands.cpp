#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "s4sleep/checkpoint.hpp"
#include "s4sleep/evaluation.hpp"
#include "s4sleep/log.hpp"
#include "s4sleep/synth.hpp"

namespace s4sleep::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string stage_prefix(std::size_t stage, std::size_t input_epochs) {
  return "stage" + std::to_string(stage) + "_E" + std::to_string(input_epochs);
}

std::string_view stage_annotation_text(StageLabel s) {
  switch (s) {
    case StageLabel::W: return "Sleep stage W";
    case StageLabel::N1: return "Sleep stage 1";
    case StageLabel::N2: return "Sleep stage 2";
    case StageLabel::N3: return "Sleep stage 3";
    case StageLabel::REM: return "Sleep stage R";
    case StageLabel::Excluded: break;
  }
  return "Sleep stage ?";
}

std::ofstream open_output(const fs::path& path, std::ios::openmode mode = std::ios::trunc) {
  std::ofstream out(path, std::ios::out | mode);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void write_json(const fs::path& path, const json& j) { open_output(path) << j.dump(2) << '\n'; }

// Writes checkpoints, predictions and summaries as stages finish, and the
// per-pass metrics as they arrive.
class StageRecorder {
 public:
  StageRecorder(const RunConfig& config, fs::path run_dir, std::ostream& log)
      : config_(config), dir_(std::move(run_dir)), log_(log) {
    metrics_ = open_output(dir_ / "metrics.jsonl", std::ios::app);
    timing_ = open_output(dir_ / "timing.jsonl", std::ios::app);
    const bool fresh = !fs::exists(dir_ / "results.tsv");
    results_ = open_output(dir_ / "results.tsv", std::ios::app);
    if (fresh) results_ << "stage\tinput_epochs\tbest_epoch\tval_macro_f1\ttest_macro_f1\tci_low\tci_high\n";
  }

  TrainHooks hooks() {
    TrainHooks h;
    h.on_epoch = [this](const EpochMetrics& m) { on_epoch(m); };
    h.on_stage_end = [this](const StageResult& r, const Model& model) { on_stage_end(r, model); };
    return h;
  }

 private:
  void on_epoch(const EpochMetrics& m) {
    metrics_ << json(m).dump() << '\n' << std::flush;
    timing_ << json{{"stage", m.stage_index}, {"epoch", m.epoch}, {"wall_seconds", m.wall_seconds}}.dump() << '\n'
            << std::flush;
    log_ << "stage " << m.stage_index << " E=" << m.input_epochs << " pass " << m.epoch << ": train loss "
         << fixed(m.train_loss) << ", val macro-F1 " << fixed(m.val_macro_f1) << '\n';
  }

  void on_stage_end(const StageResult& r, const Model& model) {
    const std::string prefix = stage_prefix(r.stage_index, r.input_epochs);
    save_checkpoint(dir_ / (prefix + ".ckpt"), model, CheckpointMeta{r.stage_index, r.input_epochs, r.best_val_f1},
                    &r.best_optimizer);
    results_ << r.stage_index << '\t' << r.input_epochs << '\t'
             << (r.best_epoch ? std::to_string(*r.best_epoch) : std::string("-")) << '\t'
             << (std::isnan(r.best_val_f1) ? std::string("-") : fixed(r.best_val_f1, 6));
    log_ << "stage " << r.stage_index << " (E=" << r.input_epochs << ") done";
    if (r.best_epoch) log_ << ": best pass " << *r.best_epoch << ", val macro-F1 " << fixed(r.best_val_f1);
    if (r.test_macro_f1) {
      save_predictions(dir_ / (prefix + "_test.tsv"), r.test_predictions);
      const BootstrapSummary s = bootstrap_ci(r.test_predictions, config_.bootstrap());
      write_json(dir_ / (prefix + "_test_bootstrap.json"), json(s));
      results_ << '\t' << fixed(s.point_estimate, 6) << '\t' << fixed(s.ci_low, 6) << '\t' << fixed(s.ci_high, 6);
      log_ << "; test macro-F1 " << fixed(s.point_estimate) << " (95% CI " << fixed(s.ci_low) << " to "
           << fixed(s.ci_high) << ")";
    } else {
      results_ << "\t-\t-\t-";
    }
    results_ << '\n' << std::flush;
    log_ << '\n';
  }

  const RunConfig& config_;
  fs::path dir_;
  std::ostream& log_;
  std::ofstream metrics_;
  std::ofstream timing_;
  std::ofstream results_;
};

std::vector<const LabeledRecord*> select_split(const LoadedData& data, const std::string& name) {
  if (name == "train") return data.split.train;
  if (name == "val") return data.split.val;
  if (name == "test") return data.split.test;
  if (name == "all") {
    std::vector<const LabeledRecord*> all;
    for (const auto& r : data.records) all.push_back(&r);
    return all;
  }
  throw std::invalid_argument("unknown split '" + name + "' (expected train, val, test or all)");
}

void run_stages(const RunConfig& config, Model& model, const LoadedData& data, const fs::path& run_dir,
                std::size_t first, std::size_t count, std::ostream& log) {
  write_json(run_dir / "split.json", json(data.manifest));
  StageRecorder recorder(config, run_dir, log);
  log << data.split.train.size() << " train, " << data.split.val.size() << " validation, " << data.split.test.size()
      << " test records\n";
  run_curriculum(model, data.split, config.train, recorder.hooks(), first, count);
}

}  // namespace

LoadedData load_data(const RunConfig& config) {
  LoadedData data;
  data.records = config.is_synthetic() ? synth_generate(config.synth)
                                       : load_edf_directory(config.data_source, config.channel);
  std::vector<std::string> ids;
  std::map<std::string, const LabeledRecord*> by_id;
  for (const auto& r : data.records) {
    ids.push_back(r.record_id);
    if (!by_id.emplace(r.record_id, &r).second) {
      throw DatasetError(DatasetErrc::InvalidRecord, "duplicate record id " + r.record_id);
    }
  }
  data.manifest = config.split_by_subject ? make_split_grouped(ids, config.split_seed, sedf_subject_key)
                                          : make_split(ids, config.split_seed);
  for (const auto& id : data.manifest.train) data.split.train.push_back(by_id.at(id));
  for (const auto& id : data.manifest.val) data.split.val.push_back(by_id.at(id));
  for (const auto& id : data.manifest.test) data.split.test.push_back(by_id.at(id));
  return data;
}

fs::path prepare_run_dir(const RunConfig& config, const std::optional<fs::path>& explicit_dir) {
  fs::path dir;
  if (explicit_dir) {
    dir = *explicit_dir;
  } else {
    const std::time_t now = std::time(nullptr);
    std::tm utc{};
    gmtime_r(&now, &utc);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "run-%Y%m%d-%H%M%S", &utc);
    dir = fs::path(config.output_dir) / stamp;
    for (int n = 2; fs::exists(dir); ++n) dir = fs::path(config.output_dir) / (std::string(stamp) + "-" + std::to_string(n));
  }
  fs::create_directories(dir);
  write_json(dir / "config.json", effective_config(config));
  return dir;
}

edf::EdfContents record_to_edf(const LabeledRecord& record, std::string_view channel_label) {
  const std::size_t spe = record.samples_per_epoch();
  const auto epochs = static_cast<std::int64_t>(record.num_epochs());

  edf::EdfContents c;
  c.header.patient_id = "X X X X";
  c.header.recording_id = "Startdate X X X X";
  c.header.start = edf::DateTime{1, 1, 2000, 0, 0, 0};
  c.header.n_data_records = epochs;
  c.header.record_duration_s = kEpochSeconds;
  c.header.n_signals = 2;
  c.header.header_bytes = static_cast<std::int64_t>(edf::kFixedHeaderBytes + 2 * edf::kSignalHeaderBytes);
  c.header.reserved = "EDF+C";

  double peak = 1.0;
  for (double v : record.samples) peak = std::max(peak, std::fabs(v));
  edf::SignalSpec eeg;
  eeg.label = std::string(channel_label);
  eeg.transducer = "synthetic";
  eeg.physical_dimension = "uV";
  eeg.physical_max = std::ceil(peak);
  eeg.physical_min = -eeg.physical_max;
  eeg.samples_per_record = static_cast<std::int64_t>(spe);
  std::vector<std::int16_t> digital(record.samples.size());
  const double scale = (eeg.digital_max - eeg.digital_min) / (eeg.physical_max - eeg.physical_min);
  for (std::size_t i = 0; i < digital.size(); ++i) {
    const double d = std::round((record.samples[i] - eeg.physical_min) * scale + eeg.digital_min);
    digital[i] = static_cast<std::int16_t>(std::clamp(d, double(eeg.digital_min), double(eeg.digital_max)));
  }

  for (std::size_t e = 0; e < record.labels.size();) {
    std::size_t end = e;
    while (end < record.labels.size() && record.labels[end] == record.labels[e]) ++end;
    c.annotations.push_back(edf::Annotation{static_cast<double>(e) * kEpochSeconds,
                                            static_cast<double>(end - e) * kEpochSeconds,
                                            std::string(stage_annotation_text(record.labels[e]))});
    e = end;
  }
  edf::SignalSpec annot;
  annot.label = std::string(edf::kAnnotationLabel);
  annot.samples_per_record = edf::annotation_samples_needed(c.annotations, epochs, kEpochSeconds);

  c.signals = {eeg, annot};
  c.samples = {std::move(digital), {}};
  return c;
}

void cmd_synth(const SynthConfig& synth, const fs::path& out_dir, std::string_view channel_label, std::ostream& log) {
  fs::create_directories(out_dir);
  for (const auto& rec : synth_generate(synth)) {
    const auto bytes = edf::encode(record_to_edf(rec, channel_label));
    const fs::path path = out_dir / (rec.record_id + ".edf");
    auto out = open_output(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    log << "wrote " << path.string() << " (" << rec.num_epochs() << " epochs)\n";
  }
  write_json(out_dir / "synth.json", json(synth));
}

void cmd_edf_dump(const fs::path& file, std::ostream& out) {
  const auto rec = edf::EdfRecording::open(file);
  const auto& h = rec.header();
  const auto two = [](int v) { return (v < 10 ? "0" : "") + std::to_string(v); };
  out << "file: " << file.string() << '\n';
  out << "format: " << (h.is_edf_plus() ? h.reserved.substr(0, 5) : std::string("EDF")) << '\n';
  out << "patient: " << h.patient_id << '\n';
  out << "recording: " << h.recording_id << '\n';
  out << "start: " << h.start.year << '-' << two(h.start.month) << '-' << two(h.start.day) << ' ' << two(h.start.hour)
      << ':' << two(h.start.minute) << ':' << two(h.start.second) << '\n';
  out << "data records: " << h.n_data_records << " x " << h.record_duration_s << " s\n";
  out << "signals: " << h.n_signals << '\n';
  const auto signals = rec.signals();
  for (std::size_t i = 0; i < signals.size(); ++i) {
    const auto& s = signals[i];
    out << "  [" << i << "] " << s.label;
    if (s.is_annotation()) {
      out << " (" << s.samples_per_record << " samples/record)\n";
      continue;
    }
    out << ": " << rec.sampling_rate(i) << " Hz, " << s.samples_per_record << " samples/record, physical ["
        << s.physical_min << ", " << s.physical_max << "] " << s.physical_dimension << ", digital [" << s.digital_min
        << ", " << s.digital_max << "]\n";
  }
  const auto& annotations = rec.annotations();
  out << "annotations: " << annotations.size() << '\n';
  for (const auto& a : annotations) {
    out << "  " << a.onset_s;
    if (a.duration_s) out << " +" << *a.duration_s;
    out << " " << a.text << '\n';
  }
}

void cmd_train(const RunConfig& config, const fs::path& run_dir, const TrainOptions& options, std::ostream& log) {
  const LoadedData data = load_data(config);
  Model model(config.model);
  if (options.init_checkpoint) model.load_parameters(load_checkpoint(*options.init_checkpoint).params);
  std::size_t first = 0;
  std::size_t count = config.train.curriculum.size();
  if (options.stage) {
    if (*options.stage >= config.train.curriculum.size()) {
      throw std::invalid_argument("stage " + std::to_string(*options.stage) + " is past the curriculum end");
    }
    first = *options.stage;
    count = 1;
  }
  run_stages(config, model, data, run_dir, first, count, log);
}

void cmd_extend(const RunConfig& config, const fs::path& run_dir, const fs::path& checkpoint, std::ostream& log) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const std::size_t next = ck.meta.stage_index + 1;
  if (next >= config.train.curriculum.size()) {
    throw std::invalid_argument("checkpoint is at stage " + std::to_string(ck.meta.stage_index) +
                                ", the last stage of the configured curriculum");
  }
  if (!(ck.config == config.model)) log_warning("checkpoint model config differs from the run config; using the checkpoint's");
  Model model = restore_model(ck);
  const LoadedData data = load_data(config);
  log << "extending stage " << ck.meta.stage_index << " (E=" << ck.meta.input_epochs << ") to E="
      << config.train.curriculum[next].input_epochs << '\n';
  run_stages(config, model, data, run_dir, next, 1, log);
}

void cmd_predict(const RunConfig& config, const fs::path& checkpoint, const std::string& split,
                 std::optional<std::size_t> input_epochs, const fs::path& out, std::ostream& log) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Model model = restore_model(ck);
  const LoadedData data = load_data(config);
  const auto records = select_split(data, split);
  std::size_t E = input_epochs.value_or(ck.meta.input_epochs);
  if (E == 0) E = config.train.curriculum.front().input_epochs;
  const PredictionSet preds = predict_records(model, records, E);
  save_predictions(out, preds);
  log << "wrote " << out.string() << ": " << records.size() << " records, E=" << E << ", macro-F1 "
      << fixed(macro_f1(preds)) << '\n';
}

void cmd_evaluate(const fs::path& predictions, const BootstrapOptions& options, const std::optional<fs::path>& out,
                  std::ostream& log) {
  const PredictionSet preds = load_predictions(predictions);
  const BootstrapSummary s = bootstrap_ci(preds, options);
  log << "records: " << preds.records.size() << '\n';
  log << "macro-F1: " << fixed(s.point_estimate) << '\n';
  log << "95% CI (" << s.resamples.size() << " bootstrap iterations): [" << fixed(s.ci_low) << ", " << fixed(s.ci_high)
      << "]\n";
  if (out) write_json(*out, json(s));
}

void cmd_compare(const fs::path& a, const fs::path& b, const BootstrapOptions& options,
                 const std::optional<fs::path>& out, std::ostream& log) {
  const PredictionSet pa = load_predictions(a);
  const PredictionSet pb = load_predictions(b);
  const BootstrapSummary s = compare_models(pa, pb, options);
  log << "macro-F1 difference (a - b): " << fixed(s.point_estimate) << '\n';
  log << "95% CI of the difference: [" << fixed(s.ci_low) << ", " << fixed(s.ci_high) << "]\n";
  log << (s.significant ? "significant" : "not significant") << '\n';
  if (out) write_json(*out, json(s));
}

}  // namespace s4sleep::cli
