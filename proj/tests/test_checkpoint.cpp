#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "helpers.hpp"
#include "mgdoc/checkpoint.hpp"
#include "mgdoc/ingestion.hpp"

using namespace mgdoc;

namespace {

std::string bytes_of(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RunConfig tiny_run() {
  RunConfig c;
  c.model = testutil::tiny_config();
  c.seed = 5;
  c.pretrain.batch_size = 2;
  c.pretrain.epochs = 2;
  c.pretrain.lr = 1e-3;
  propagate_seed(c);
  return c;
}

bool same_params(const Model& a, const Model& b) {
  for (const auto& [name, v] : a.params()) {
    if (!b.params().has(name)) return false;
    const ag::Mat& w = b.params().get(name).value();
    if (w.rows() != v.rows() || w.cols() != v.cols()) return false;
    if (std::memcmp(w.data(), v.value().data(), sizeof(double) * static_cast<std::size_t>(w.size())) != 0)
      return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("save and load round trip bitwise") {
  const auto docs = generate_synthetic(testutil::small_spec(6, 2));
  const RunConfig cfg = tiny_run();
  Model model(cfg.model, Vocab::build(docs, 64), 5);
  Pretrainer trainer(model, cfg.pretrain, 4);
  for (long s = 0; s < 2; ++s) trainer.step(trainer.batch_for_step(docs, s));
  model.add_entity_head(3, 1);

  const auto dir = std::filesystem::temp_directory_path() / "mgdoc_ckpt_test";
  std::filesystem::create_directories(dir);
  const Checkpoint ck = make_checkpoint(model, cfg, 2, &trainer.optimizer(), {"a", "b", "c"});
  save_checkpoint(ck, dir / "a.bin");
  const Checkpoint back = load_checkpoint(dir / "a.bin");
  CHECK(back.step == 2);
  CHECK(back.entity_labels == std::vector<std::string>{"a", "b", "c"});
  CHECK(back.vocab == model.vocab());
  CHECK(run_config_to_json(back.config) == run_config_to_json(cfg));
  CHECK(back.adam_steps == trainer.optimizer().steps());
  save_checkpoint(back, dir / "b.bin");
  CHECK(bytes_of(dir / "a.bin") == bytes_of(dir / "b.bin"));

  const auto restored = model_from_checkpoint(back);
  CHECK(restored->has_entity_head());
  CHECK(same_params(model, *restored));
  CHECK(same_params(*restored, model));
}

TEST_CASE("loading into a different shape fails naming the tensor") {
  const auto docs = generate_synthetic(testutil::small_spec(2, 2));
  const RunConfig cfg = tiny_run();
  Model model(cfg.model, Vocab::build(docs, 64), 5);
  const Checkpoint ck = make_checkpoint(model, cfg, 0);
  ModelConfig wider = cfg.model;
  wider.encoder.d_model = 12;
  Model other(wider, Vocab::build(docs, 64), 5);
  try {
    load_params(other, ck);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("shape mismatch") != std::string::npos);
  }
}

TEST_CASE("wrong format line is rejected") {
  const auto path = std::filesystem::temp_directory_path() / "mgdoc_bad_ckpt.bin";
  std::ofstream(path) << "not-a-checkpoint\n";
  CHECK_THROWS_AS(load_checkpoint(path), Error);
}

TEST_CASE("resumed training matches uninterrupted training step for step") {
  const auto docs = generate_synthetic(testutil::small_spec(6, 3));
  const RunConfig cfg = tiny_run();
  const Vocab vocab = Vocab::build(docs, 64);
  const long total = Pretrainer::total_steps_for(docs.size(), cfg.pretrain);
  REQUIRE(total == 6);

  Model full(cfg.model, vocab, 5);
  Pretrainer t_full(full, cfg.pretrain, total);
  std::vector<std::string> log_full;
  for (long s = 0; s < total; ++s)
    log_full.push_back(loss_report_json(t_full.step(t_full.batch_for_step(docs, s)), 0.0));

  Model first(cfg.model, vocab, 5);
  Pretrainer t_first(first, cfg.pretrain, total);
  std::vector<std::string> log_resumed;
  for (long s = 0; s < 3; ++s)
    log_resumed.push_back(loss_report_json(t_first.step(t_first.batch_for_step(docs, s)), 0.0));
  const auto path = std::filesystem::temp_directory_path() / "mgdoc_resume.bin";
  save_checkpoint(make_checkpoint(first, cfg, 3, &t_first.optimizer()), path);

  const Checkpoint ck = load_checkpoint(path);
  auto second = model_from_checkpoint(ck);
  Pretrainer t_second(*second, ck.config.pretrain, total);
  restore_optimizer(t_second.optimizer(), ck);
  t_second.set_step(ck.step);
  for (long s = ck.step; s < total; ++s)
    log_resumed.push_back(loss_report_json(t_second.step(t_second.batch_for_step(docs, s)), 0.0));

  CHECK(log_resumed == log_full);
  CHECK(same_params(full, *second));
}

}  // TEST_SUITE
