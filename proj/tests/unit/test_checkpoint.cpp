#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <sstream>

#include "fixtures.hpp"
#include "s4sleep/checkpoint.hpp"

using namespace s4sleep;

namespace {

GradientSet random_grads(const ParameterSet& p, Rng& rng) {
  GradientSet g(p);
  for (std::size_t b = 0; b < g.size(); ++b) {
    for (auto& v : g.at(b)) v = rng.normal();
  }
  return g;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit identical") {
  Rng rng(1);
  ModelConfig c = fixtures::tiny_model(4, 3, 2, 9);
  c.bidirectional = false;
  Model model(c);
  AdamWState opt = AdamWState::zeros(model.parameters());
  for (int i = 0; i < 3; ++i) adamw_step(model.parameters(), random_grads(model.parameters(), rng), opt, {});
  const CheckpointMeta meta{2, 40, 0.8125};

  std::vector<double> probe(4 * 600);
  for (auto& v : probe) v = rng.normal();
  const Mat before = model.forward(probe, 600, RunMode{});

  const auto path = std::filesystem::temp_directory_path() / "s4sleep_test.ckpt";
  save_checkpoint(path, model, meta, &opt);
  const Checkpoint ck = load_checkpoint(path);
  std::filesystem::remove(path);

  CHECK(ck.config == c);
  CHECK(ck.meta.stage_index == 2);
  CHECK(ck.meta.input_epochs == 40);
  CHECK(ck.meta.best_val_f1 == 0.8125);
  REQUIRE(ck.optimizer.has_value());
  CHECK(ck.optimizer->step == 3);
  for (std::size_t b = 0; b < model.parameters().size(); ++b) {
    CHECK(ck.params.info(b).name == model.parameters().info(b).name);
    CHECK(ck.params.info(b).shape == model.parameters().info(b).shape);
    CHECK(ck.params.info(b).decay == model.parameters().info(b).decay);
    const auto m0 = opt.m.at(b);
    const auto m1 = ck.optimizer->m.at(b);
    CHECK(std::equal(m0.begin(), m0.end(), m1.begin(), m1.end()));
  }
  const Model restored = restore_model(ck);
  const Mat after = restored.forward(probe, 600, RunMode{});
  CHECK(std::memcmp(before.data(), after.data(), sizeof(double) * static_cast<std::size_t>(before.size())) == 0);

  std::stringstream a, b;
  write_checkpoint(a, model, meta, &opt);
  write_checkpoint(b, restored, meta, &*ck.optimizer);
  CHECK(a.str() == b.str());
}

TEST_CASE("checkpoint without optimizer state") {
  const Model model(fixtures::tiny_model());
  std::stringstream s;
  write_checkpoint(s, model, {});
  const auto ck = read_checkpoint(s);
  CHECK_FALSE(ck.optimizer.has_value());
  CHECK(std::isnan(ck.meta.best_val_f1));
}

TEST_CASE("corrupt checkpoints are rejected") {
  const Model model(fixtures::tiny_model());
  std::stringstream s;
  write_checkpoint(s, model, {});
  const std::string bytes = s.str();

  auto expect_bad = [](const std::string& data) {
    std::istringstream in(data);
    try {
      read_checkpoint(in);
      FAIL("expected BadCheckpoint");
    } catch (const NetworkError& e) {
      CHECK(e.code() == NetworkErrc::BadCheckpoint);
    }
  };
  expect_bad("not a checkpoint");
  expect_bad(bytes.substr(0, bytes.size() / 2));
  std::string wrong_version = bytes;
  wrong_version[8] = 99;
  expect_bad(wrong_version);
}

TEST_CASE("checkpoint of a different architecture is incompatible") {
  const Model small(fixtures::tiny_model(4, 2, 1));
  std::stringstream s;
  write_checkpoint(s, small, {});
  const auto ck = read_checkpoint(s);
  Model other(fixtures::tiny_model(4, 2, 2));
  try {
    other.load_parameters(ck.params);
    FAIL("expected IncompatibleCheckpoint");
  } catch (const NetworkError& e) {
    CHECK(e.code() == NetworkErrc::IncompatibleCheckpoint);
  }
}
