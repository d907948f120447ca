#include "s4sleep/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <thread>

#include "s4sleep/loss.hpp"
#include "s4sleep/random.hpp"

namespace s4sleep {
namespace {

bool has_scored_epoch(const Window& w) { return std::any_of(w.labels.begin(), w.labels.end(), is_scoreable); }

template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

std::vector<CurriculumStage> default_curriculum() {
  return {{10, 50}, {20, 10}, {40, 10}, {50, 10}, {100, 10}, {200, 10}};
}

void TrainConfig::validate() const {
  auto bad = [](const std::string& msg) { throw TrainError(TrainErrc::InvalidConfig, msg); };
  if (!(learning_rate > 0.0)) bad("learning_rate must be positive");
  if (effective_batch == 0 || micro_batch == 0) bad("batch sizes must be positive");
  if (effective_batch % micro_batch != 0) {
    bad("effective_batch " + std::to_string(effective_batch) + " is not divisible by micro_batch " +
        std::to_string(micro_batch));
  }
  if (!(focal_gamma >= 0.0)) bad("focal_gamma must be >= 0");
  if (!(weight_decay >= 0.0)) bad("weight_decay must be >= 0");
  if (curriculum.empty()) bad("curriculum must have at least one stage");
  for (const auto& s : curriculum) {
    if (s.input_epochs == 0) bad("curriculum input length must be at least one epoch");
  }
}

AdamWOptions TrainConfig::adamw() const {
  AdamWOptions o;
  o.learning_rate = learning_rate;
  o.weight_decay = weight_decay;
  return o;
}

StepResult accumulate_and_step(Model& model, std::span<const Window> windows, const TrainConfig& config,
                               AdamWState& state, std::uint64_t dropout_seed) {
  if (windows.empty()) throw TrainError(TrainErrc::IncompleteAccumulation, "optimizer step over an empty batch");
  const ParameterSet& params = model.parameters();
  GradientSet total(params);
  StepResult result;

  for (std::size_t start = 0; start < windows.size(); start += config.micro_batch) {
    const std::size_t count = std::min(config.micro_batch, windows.size() - start);
    std::vector<GradientSet> grads(count);
    std::vector<double> losses(count, 0.0);
    std::vector<std::size_t> scored(count, 0);
    parallel_for(count, config.threads, [&](std::size_t i) {
      const Window& w = windows[start + i];
      if (!has_scored_epoch(w)) return;
      Model::ForwardCache cache;
      const RunMode mode{true, derive_seed(dropout_seed, start + i), false};
      const Mat logits = model.forward(w, mode, &cache);
      const LossSum loss = focal_loss_sum(logits, w.labels, config.focal_gamma);
      grads[i] = GradientSet(params);
      model.backward(cache, loss.grad, grads[i]);
      losses[i] = loss.loss;
      scored[i] = loss.count;
    });
    for (std::size_t i = 0; i < count; ++i) {
      if (scored[i] == 0) continue;
      total.add(grads[i]);
      result.loss_sum += losses[i];
      result.scored_epochs += scored[i];
    }
  }

  if (result.scored_epochs == 0) return result;
  total.scale(1.0 / static_cast<double>(result.scored_epochs));
  adamw_step(model.parameters(), total, state, config.adamw());
  result.stepped = true;
  return result;
}

void to_json(nlohmann::json& j, const EpochMetrics& m) {
  j = nlohmann::json{{"stage", m.stage_index},
                     {"input_epochs", m.input_epochs},
                     {"epoch", m.epoch},
                     {"train_loss", m.train_loss},
                     {"val_macro_f1", m.val_macro_f1}};
}

double validation_macro_f1(const Model& model, std::span<const LabeledRecord* const> records,
                           std::size_t input_epochs, WindowScheme scheme) {
  return macro_f1(predict_records(model, records, input_epochs, scheme));
}

StageResult run_stage(Model& model, const DataSplit& data, std::size_t stage_index, CurriculumStage stage,
                      const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  StageResult res;
  res.stage_index = stage_index;
  res.input_epochs = stage.input_epochs;
  AdamWState state = AdamWState::zeros(model.parameters());
  res.best_params = model.parameters();
  res.best_optimizer = state;
  if (stage.training_epochs == 0) return res;

  std::vector<Window> windows;
  for (const LabeledRecord* rec : data.train) {
    auto w = segment_train(*rec, stage.input_epochs);
    windows.insert(windows.end(), w.begin(), w.end());
  }
  if (windows.empty()) throw TrainError(TrainErrc::InvalidConfig, "no training windows");

  const std::uint64_t stage_seed = derive_seed(config.seed, stage_index);
  std::uint64_t step = 0;
  for (std::size_t pass = 0; pass < stage.training_epochs; ++pass) {
    const auto started = std::chrono::steady_clock::now();
    std::vector<Window> order = windows;
    Rng rng(derive_seed(stage_seed, 2 * pass));
    rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t scored = 0;
    for (std::size_t b = 0; b < order.size(); b += config.effective_batch) {
      const std::size_t n = std::min(config.effective_batch, order.size() - b);
      const StepResult r = accumulate_and_step(model, std::span<const Window>(order).subspan(b, n), config, state,
                                               derive_seed(stage_seed, 2 * step + 1));
      ++step;
      loss_sum += r.loss_sum;
      scored += r.scored_epochs;
    }

    const double val = validation_macro_f1(model, data.val, stage.input_epochs, config.validation_windows);
    const double train_loss = scored > 0 ? loss_sum / static_cast<double>(scored) : 0.0;
    res.val_trace.push_back(val);
    res.train_loss.push_back(train_loss);
    if (!res.best_epoch || val > res.best_val_f1) {
      res.best_epoch = pass;
      res.best_val_f1 = val;
      res.best_params = model.parameters();
      res.best_optimizer = state;
    }
    if (hooks.on_epoch) {
      const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;
      hooks.on_epoch(EpochMetrics{stage_index, stage.input_epochs, pass, train_loss, val, elapsed.count()});
    }
  }
  model.load_parameters(res.best_params);
  return res;
}

std::vector<StageResult> run_curriculum(Model& model, const DataSplit& data, const TrainConfig& config,
                                        const TrainHooks& hooks, std::size_t first_stage, std::size_t stage_count) {
  config.validate();
  if (first_stage >= config.curriculum.size()) {
    throw TrainError(TrainErrc::InvalidConfig, "stage " + std::to_string(first_stage) + " is past the curriculum end");
  }
  std::vector<StageResult> results;
  const std::size_t end = first_stage + std::min(stage_count, config.curriculum.size() - first_stage);
  for (std::size_t s = first_stage; s < end; ++s) {
    StageResult res = run_stage(model, data, s, config.curriculum[s], config, hooks);
    if (!data.test.empty()) {
      res.test_predictions = predict_records(model, data.test, res.input_epochs);
      res.test_macro_f1 = macro_f1(res.test_predictions);
    }
    if (hooks.on_stage_end) hooks.on_stage_end(res, model);
    results.push_back(std::move(res));
  }
  return results;
}

}  // namespace s4sleep
