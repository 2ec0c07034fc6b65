#include <doctest.h>

#include <algorithm>
#include <map>
#include <numeric>

#include "gradcheck.hpp"
#include "helpers.hpp"
#include "oracles.hpp"
#include "mgdoc/pretraining.hpp"

using namespace mgdoc;

namespace {

FusedFeatures streams(const ag::Mat& tv, const ag::Mat& vt) {
  FusedFeatures f;
  f.f_tv = ag::constant(tv);
  f.f_vt = ag::constant(vt);
  f.f = ag::constant(tv + vt);
  return f;
}

BatchEncoding targets(const ag::Mat& text, const ag::Mat& vis) {
  BatchEncoding e;
  e.units.resize(static_cast<std::size_t>(text.rows()));
  e.text_target = text;
  e.vis_target = vis;
  return e;
}

std::vector<GranularUnit> units_for(int regions, int words_per_region) {
  std::vector<GranularUnit> u;
  GranularUnit page;
  page.granularity = Granularity::kPage;
  u.push_back(page);
  for (int r = 0; r < regions; ++r) {
    GranularUnit g;
    g.granularity = Granularity::kRegion;
    g.unit_index = static_cast<int>(u.size());
    g.region_index = r;
    u.push_back(g);
  }
  for (int r = 0; r < regions; ++r)
    for (int w = 0; w < words_per_region; ++w) {
      GranularUnit g;
      g.granularity = Granularity::kWord;
      g.unit_index = static_cast<int>(u.size());
      g.region_index = r;
      g.word_index = w;
      g.parent_row = 1 + r;
      u.push_back(g);
    }
  return u;
}

}  // namespace

TEST_SUITE("pretraining") {

TEST_CASE("MTM and MVM examples") {
  MaskPlan plan;
  plan.text_rows = {0};
  plan.vision_rows = {0};
  const ag::Mat x = ag::Mat::Constant(1, 4, 0.3);
  CHECK(loss_mtm(targets(x, x), streams(x, x), plan).scalar() == 0.0);
  CHECK(loss_mvm(targets(x, x), streams(x, x), plan).scalar() == 0.0);
  CHECK(loss_mtm(targets(ag::Mat::Zero(1, 4), x), streams(x, ag::Mat::Constant(1, 4, 0.5)), plan).scalar() ==
        doctest::Approx(0.5));
  CHECK(loss_mvm(targets(x, ag::Mat::Ones(1, 4)), streams(ag::Mat::Zero(1, 4), x), plan).scalar() ==
        doctest::Approx(1.0));
  MaskPlan none;
  CHECK(loss_mtm(targets(x, x), streams(x, x), none).scalar() == 0.0);
}

TEST_CASE("MTM and MVM match the loop oracle") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const ag::Mat tt = testutil::random_mat(3, 5, rng), vt = testutil::random_mat(3, 5, rng);
    const ag::Mat tv_s = testutil::random_mat(3, 5, rng), vt_s = testutil::random_mat(3, 5, rng);
    MaskPlan plan;
    plan.text_rows = {0, 2};
    plan.vision_rows = {1};
    const double mtm = loss_mtm(targets(tt, vt), streams(tv_s, vt_s), plan).scalar();
    const double mvm = loss_mvm(targets(tt, vt), streams(tv_s, vt_s), plan).scalar();
    CHECK(std::abs(mtm - oracle::mae(oracle::from_mat(vt_s), oracle::from_mat(tt), {0, 2})) < 1e-7);
    CHECK(std::abs(mvm - oracle::mae(oracle::from_mat(tv_s), oracle::from_mat(vt), {1})) < 1e-7);
  }
}

TEST_CASE("MGM examples and oracle") {
  const auto units = units_for(2, 1);
  ag::Mat f = ag::Mat::Zero(5, 2);
  f.row(1) << 1.0, 0.0;
  f.row(2) << 0.0, 1.0;
  f.row(3) << 1.0, 1.0;
  f.row(4) << 1.0, 1.0;
  CHECK(loss_mgm(ag::constant(f), units).scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  f.row(3) << 40.0, 0.0;
  f.row(4) << 0.0, 40.0;
  CHECK(loss_mgm(ag::constant(f), units).scalar() < 1e-12);

  std::mt19937_64 rng(2);
  const auto u35 = units_for(3, 2);
  for (int trial = 0; trial < 20; ++trial) {
    const ag::Mat g = testutil::random_mat(static_cast<Eigen::Index>(u35.size()), 4, rng);
    std::vector<int> words, parents;
    for (const auto& u : u35)
      if (u.granularity == Granularity::kWord) {
        words.push_back(u.unit_index);
        parents.push_back(u.parent_row);
      }
    CHECK(std::abs(loss_mgm(ag::constant(g), u35).scalar() - oracle::mgm(oracle::from_mat(g), {1, 2, 3}, words, parents)) < 1e-7);
  }
  CHECK(loss_mgm(ag::constant(ag::Mat::Ones(3, 2)), units_for(1, 1)).scalar() == 0.0);
}

TEST_CASE("MGM is invariant to permuting non-parent regions") {
  const auto units = units_for(3, 1);
  std::mt19937_64 rng(3);
  const ag::Mat f = testutil::random_mat(7, 4, rng);
  // Word row 4 belongs to region row 1; swap the features of regions 2 and 3
  // and of their words, which only permutes the non-parent candidates of row 4.
  ag::Mat g = f;
  g.row(2) = f.row(3);
  g.row(3) = f.row(2);
  g.row(5) = f.row(6);
  g.row(6) = f.row(5);
  CHECK(loss_mgm(ag::constant(f), units).scalar() == doctest::Approx(loss_mgm(ag::constant(g), units).scalar()).epsilon(1e-12));
}

TEST_CASE("mask plans: floor guarantee, determinism, page exclusion") {
  const auto units = units_for(2, 3);
  TrainConfig cfg;
  cfg.mask_ratio = 1e-9;
  std::mt19937_64 rng(4);
  const MaskPlan tiny = make_mask_plan(units, cfg, rng);
  CHECK(tiny.text_rows.size() == 1);
  CHECK(tiny.vision_rows.size() == 1);
  cfg.mask_ratio = 0.5;
  std::mt19937_64 a(mask_seed(7, "doc", 3)), b(mask_seed(7, "doc", 3));
  const MaskPlan pa = make_mask_plan(units, cfg, a), pb = make_mask_plan(units, cfg, b);
  CHECK(pa.text_rows == pb.text_rows);
  CHECK(pa.vision_rows == pb.vision_rows);
  for (int t = 0; t < 200; ++t) {
    const MaskPlan p = make_mask_plan(units, cfg, rng);
    CHECK_FALSE(p.text_rows.count(0));
    CHECK_FALSE(p.vision_rows.count(0));
  }
  cfg.mask_page = true;
  bool page_seen = false;
  for (int t = 0; t < 200; ++t) page_seen |= make_mask_plan(units, cfg, rng).text_rows.count(0) > 0;
  CHECK(page_seen);
}

TEST_CASE("per-row mask frequency is within 2 points of the ratio") {
  const auto units = units_for(4, 4);  // 20 maskable rows plus the page
  TrainConfig cfg;
  std::vector<int> hits(units.size(), 0);
  std::mt19937_64 rng(5);
  const int draws = 10000;
  for (int t = 0; t < draws; ++t)
    for (int r : make_mask_plan(units, cfg, rng).text_rows) ++hits[static_cast<std::size_t>(r)];
  for (std::size_t r = 1; r < units.size(); ++r)
    CHECK(std::abs(static_cast<double>(hits[r]) / draws - 0.15) < 0.02);
}

TEST_CASE("warmup schedule") {
  // 100 steps, 20% warmup: step 0 uses lr/20, step 19 and later use lr.
  CHECK(warmup_steps(100, 0.2) == 20);
  CHECK(scheduled_lr(1.0, 0, 100, 0.2) == doctest::Approx(1.0 / 20));
  CHECK(scheduled_lr(1.0, 19, 100, 0.2) == doctest::Approx(1.0));
  CHECK(scheduled_lr(1.0, 20, 100, 0.2) == 1.0);
  CHECK(scheduled_lr(1.0, 99, 100, 0.2) == 1.0);
  CHECK(scheduled_lr(1.0, 0, 100, 0.0) == 1.0);
}

TEST_CASE("task strings") {
  CHECK(PretrainTasks::parse("mtm,mvm").to_string() == "mtm,mvm");
  CHECK_FALSE(PretrainTasks::parse("none").any());
  CHECK_THROWS_AS(PretrainTasks::parse("mlm"), Error);
}

TEST_CASE("masking never changes the clean targets") {
  const auto cfg = testutil::tiny_config();
  const Document doc = testutil::toy_doc(2, 6);
  Model model(cfg, Vocab::build({doc}, 64), 1);
  const auto units = model.units(doc);
  MaskPlan plan;
  plan.text_rows = {3};
  plan.vision_rows = {1, 4};
  const BatchEncoding clean = model.encoder().encode_document(model.params(), doc, units);
  const ForwardPass masked = model.forward(doc, units, &plan);
  CHECK((masked.encoding.text_target - clean.text_emb.value()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((masked.encoding.vis_target - clean.vis_emb.value()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("severed targets: gradients on the target-only path are zero") {
  auto cfg = testutil::tiny_config();
  const Document doc = testutil::toy_doc(2, 7);
  Model model(cfg, Vocab::build({doc}, 64), 2);
  // Regions only, so the masked region's tokens reach the loss only via the target.
  const auto units = model.units(doc, GranularitySet::parse("region"));
  MaskPlan plan;
  plan.text_rows = {0};
  model.params().zero_grad();
  ag::backward(pretrain_objective(model, doc, units, plan, {true, false, false}).total);
  const auto& grad = model.params().get("enc.text.tok").grad();
  for (const auto& tok : tokenize(units[0].text)) {
    bool elsewhere = false;
    for (const auto& t2 : tokenize(units[1].text)) elsewhere |= t2 == tok;
    if (!elsewhere) CHECK(grad.row(model.vocab().id(tok)).norm() == 0.0);
  }
}

TEST_CASE("full objective gradient matches finite differences") {
  auto cfg = testutil::tiny_config();
  const Document doc = testutil::toy_doc(2, 8);
  Model model(cfg, Vocab::build({doc}, 64), 3);
  std::mt19937_64 rng(9);
  testutil::randomize(model.params(), rng, 0.3);
  const auto units = model.units(doc);
  MaskPlan plan;
  plan.text_rows = {1, 4};
  plan.vision_rows = {2, 5};
  const BatchEncoding fixed = model.forward(doc, units, &plan).encoding;
  auto loss = [&] { return pretrain_objective(model, doc, units, plan, PretrainTasks{}, &fixed).total; };
  // Key biases shift every logit of a softmax row equally, so their true
  // gradient is zero; the floor keeps rounding noise from counting as error.
  const auto errors = gradcheck::check(model.params(), loss, 1e-5, 12, 1e-7);
  for (const auto& [name, e] : errors) {
    INFO(name, " grad_norm=", e.grad_norm);
    CHECK(e.rel_error < 1e-3);
    if (name.ends_with(".k.b")) CHECK(e.grad_norm < 1e-9);
  }
}

TEST_CASE("training step report and determinism") {
  const auto cfg = testutil::tiny_config();
  const auto corpus = generate_synthetic(testutil::small_spec(6, 3));
  TrainConfig tc;
  tc.batch_size = 3;
  tc.epochs = 2;
  auto run = [&] {
    Model model(cfg, Vocab::build(corpus, 64), 5);
    Pretrainer trainer(model, tc, Pretrainer::total_steps_for(corpus.size(), tc));
    std::vector<std::string> log;
    for (long s = 0; s < trainer.total_steps(); ++s) {
      const LossReport r = trainer.step(trainer.batch_for_step(corpus, s));
      CHECK(r.l_total == r.l_mtm + r.l_mvm + r.l_mgm);
      CHECK(r.l_mtm >= 0.0);
      CHECK(r.l_mgm >= 0.0);
      log.push_back(loss_report_json(r, 0.0));
    }
    return log;
  };
  const auto a = run();
  CHECK(a.size() == 4);
  CHECK(a == run());
}

TEST_CASE("non-finite losses abort the step naming the term") {
  const auto cfg = testutil::tiny_config();
  const auto corpus = generate_synthetic(testutil::small_spec(2, 4));
  Model model(cfg, Vocab::build(corpus, 64), 5);
  model.params().value("cross0.tv.ln2.b")(0, 0) = std::numeric_limits<double>::quiet_NaN();
  TrainConfig tc;
  Pretrainer trainer(model, tc, 10);
  CHECK_THROWS_WITH_AS(trainer.step(trainer.batch_for_step(corpus, 0)), doctest::Contains("non-finite l_"), Error);
}

TEST_CASE("200 steps on a 50-document corpus lower the loss") {
  const auto cfg = testutil::tiny_config();
  const auto corpus = generate_synthetic(testutil::small_spec(50, 5));
  TrainConfig tc;
  tc.batch_size = 2;
  tc.epochs = 8;
  tc.lr = 3e-3;
  Model model(cfg, Vocab::build(corpus, 64), 6);
  Pretrainer trainer(model, tc, 200);
  std::vector<double> totals;
  for (long s = 0; s < 200; ++s) totals.push_back(trainer.step(trainer.batch_for_step(corpus, s)).l_total);
  const double head = std::accumulate(totals.begin(), totals.begin() + 20, 0.0) / 20;
  const double tail = std::accumulate(totals.end() - 20, totals.end(), 0.0) / 20;
  CHECK(tail < head);
}

}  // TEST_SUITE
