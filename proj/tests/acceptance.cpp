// Acceptance runner: one PASS/FAIL/SKIP line per criterion.
//   mgdoc_acceptance [--criterion N]...
// Exit status: 0 all selected criteria passed, 77 nothing failed but something
// was skipped, 1 otherwise.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "gradcheck.hpp"
#include "helpers.hpp"
#include "mgdoc/checkpoint.hpp"
#include "mgdoc/finetune.hpp"
#include "mgdoc/ingestion.hpp"
#include "mgdoc/raster.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace mgdoc;

namespace {

// ---- pinned thresholds ----------------------------------------------------

constexpr double kOracleTol = 1e-6;
constexpr int kOracleTrials = 100;
constexpr double kOracleSeconds = 60.0;
constexpr double kGradRelTol = 1e-3;
constexpr double kGradFloor = 1e-7;
constexpr double kGradSeconds = 300.0;
constexpr double kSoftmaxTol = 1e-6;
constexpr double kMgmEqualTol = 1e-6;
constexpr double kMgmSaturated = 0.01;
constexpr double kFullOverNone = 0.05;
constexpr double kLearningSeconds = 1800.0;
constexpr double kHeatmapSE = 3.0;
constexpr double kRetrievalPretrained = 0.95;
constexpr double kRetrievalNearChance = 0.15;
constexpr int kFunsdTrain = 149;
constexpr int kFunsdTest = 50;

enum class Status { kPass, kFail, kSkip };

struct Outcome {
  Status status = Status::kFail;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Outcome verdict(bool ok, std::string detail) { return {ok ? Status::kPass : Status::kFail, std::move(detail)}; }

// ---- shared fixtures ------------------------------------------------------

std::vector<BoundingBox> random_boxes(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<BoundingBox> out{BoundingBox::page()};
  while (static_cast<int>(out.size()) < n) {
    const double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
    out.push_back(testutil::box(std::min(a, b), std::min(c, d), std::max(a, b), std::max(c, d)));
  }
  return out;
}

struct Layer {
  AttentionConfig cfg;
  ParamStore p;
  int d = 8;

  explicit Layer(std::uint64_t seed, double table_scale = 0.7) {
    cfg.n_heads = 2;
    std::mt19937_64 rng(seed);
    init_attention_block(p, "L", d, 4, rng);
    init_bias_tables(p, "L", cfg);
    testutil::randomize(p, rng, 0.7);
    for (const char* t : {"L.hier", "L.relx", "L.rely"}) p.value(t) *= table_scale / 0.7;
  }

  oracle::Bias oracle_bias(const std::vector<BoundingBox>& boxes) const {
    return {oracle::param(p, "L.hier"), oracle::param(p, "L.relx"), oracle::param(p, "L.rely"), boxes, cfg};
  }
};

// Page, `regions` regions, and `words[r]` words under region r.
std::vector<GranularUnit> unit_layout(const std::vector<int>& words) {
  std::vector<GranularUnit> u(1);
  u[0].granularity = Granularity::kPage;
  const int m = static_cast<int>(words.size());
  for (int r = 0; r < m; ++r) {
    GranularUnit g;
    g.granularity = Granularity::kRegion;
    g.unit_index = static_cast<int>(u.size());
    g.region_index = r;
    u.push_back(g);
  }
  for (int r = 0; r < m; ++r)
    for (int w = 0; w < words[r]; ++w) {
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

// ---- 1: oracle equivalence -----------------------------------------------

Outcome criterion1() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1001);
  std::map<std::string, double> worst;
  auto note = [&](const std::string& op, double d) { worst[op] = std::max(worst[op], d); };
  std::uniform_int_distribution<int> rows(1, 5);

  for (int t = 0; t < kOracleTrials; ++t) {
    Layer l(static_cast<std::uint64_t>(t));
    const int n = rows(rng);
    const auto boxes = random_boxes(n, rng);
    const ag::Mat x = testutil::random_mat(n, l.d, rng);
    const ag::Mat got = mg_attention_layer(l.p, "L", ag::constant(x), compute_bias_index(boxes, l.cfg), 2).value();
    const auto bias = l.oracle_bias(boxes);
    note("mg", oracle::max_abs_diff(oracle::block(l.p, "L", oracle::from_mat(x), oracle::from_mat(x), 2, &bias), got));

    const ag::Mat s = self_attention_layer(l.p, "L", ag::constant(x), 2).value();
    note("self", oracle::max_abs_diff(oracle::block(l.p, "L", oracle::from_mat(x), oracle::from_mat(x), 2), s));

    const ag::Mat kv = testutil::random_mat(n, l.d, rng);
    const ag::Mat c = cross_attention(l.p, "L", ag::constant(x), ag::constant(kv), 2).value();
    note("cross", oracle::max_abs_diff(oracle::block(l.p, "L", oracle::from_mat(x), oracle::from_mat(kv), 2), c));

    const int d = 6;
    const ag::Mat tt = testutil::random_mat(n, d, rng), vv = testutil::random_mat(n, d, rng);
    const ag::Mat tv_s = testutil::random_mat(n, d, rng), vt_s = testutil::random_mat(n, d, rng);
    MaskPlan plan;
    for (int r = 0; r < n; ++r) {
      if (rng() % 2) plan.text_rows.insert(r);
      if (rng() % 2) plan.vision_rows.insert(r);
    }
    BatchEncoding enc;
    enc.units.resize(static_cast<std::size_t>(n));
    enc.text_target = tt;
    enc.vis_target = vv;
    FusedFeatures fused;
    fused.f_tv = ag::constant(tv_s);
    fused.f_vt = ag::constant(vt_s);
    fused.f = ag::constant(tv_s + vt_s);
    const std::vector<int> trows(plan.text_rows.begin(), plan.text_rows.end());
    const std::vector<int> vrows(plan.vision_rows.begin(), plan.vision_rows.end());
    note("mtm", std::abs(loss_mtm(enc, fused, plan).scalar() -
                         oracle::mae(oracle::from_mat(vt_s), oracle::from_mat(tt), trows)));
    note("mvm", std::abs(loss_mvm(enc, fused, plan).scalar() -
                         oracle::mae(oracle::from_mat(tv_s), oracle::from_mat(vv), vrows)));

    // At most 5 units: page, 2 regions, 1-2 words.
    std::vector<int> words{1, static_cast<int>(rng() % 2)};
    const auto units = unit_layout(words);
    const ag::Mat f = testutil::random_mat(static_cast<Eigen::Index>(units.size()), d, rng);
    std::vector<int> wrows, parents;
    for (const auto& u : units)
      if (u.granularity == Granularity::kWord) {
        wrows.push_back(u.unit_index);
        parents.push_back(u.parent_row);
      }
    note("mgm", std::abs(loss_mgm(ag::constant(f), units).scalar() -
                         oracle::mgm(oracle::from_mat(f), {1, 2}, wrows, parents)));
  }
  const double secs = seconds_since(t0);
  bool ok = secs < kOracleSeconds;
  std::string detail;
  for (const auto& [op, d] : worst) {
    ok = ok && d < kOracleTol;
    detail += op + "=" + fmt("%.1e", d) + " ";
  }
  return verdict(ok, "max |diff| " + detail + "over " + std::to_string(kOracleTrials) +
                         " trials each, tol " + fmt("%.0e", kOracleTol) + ", " + fmt("%.1f", secs) + " s");
}

// ---- 2: gradient check ----------------------------------------------------

Outcome criterion2() {
  const auto t0 = Clock::now();
  ModelConfig cfg = testutil::tiny_config();
  const Document doc = testutil::toy_doc(2, 21);
  Model model(cfg, Vocab::build({doc}, 64), 4);
  std::mt19937_64 rng(22);
  testutil::randomize(model.params(), rng, 0.3);
  const auto units = model.units(doc);
  MaskPlan plan;
  plan.text_rows = {1, 4, 6};
  plan.vision_rows = {2, 3};
  const BatchEncoding fixed = model.forward(doc, units, &plan).encoding;
  auto loss = [&] { return pretrain_objective(model, doc, units, plan, PretrainTasks{}, &fixed).total; };
  const auto errors = gradcheck::check(model.params(), loss, 1e-5, 24, kGradFloor);
  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, e] : errors)
    if (e.rel_error >= worst) {
      worst = e.rel_error;
      worst_name = name;
    }
  const double secs = seconds_since(t0);
  return verdict(worst < kGradRelTol && secs < kGradSeconds,
                 std::to_string(errors.size()) + " parameter groups, worst relative error " + fmt("%.2e", worst) +
                     " (" + worst_name + "), tol " + fmt("%.0e", kGradRelTol) + ", " + fmt("%.1f", secs) + " s");
}

// ---- 3: attention invariants --------------------------------------------

Outcome criterion3() {
  // Softmax rows over full forward passes of the desk model.
  SyntheticCorpusSpec spec = testutil::small_spec(5, 31);
  const auto docs = generate_synthetic(spec);
  Model model(ModelConfig{}, Vocab::build(docs, 512), 32);
  double row_err = 0.0;
  long n_rows = 0;
  {
    ag::NoGradGuard no_grad;
    for (const auto& d : docs) {
      AttentionTrace trace;
      model.forward(d, model.units(d), nullptr, &trace);
      for (const auto& p : trace.probs)
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
          row_err = std::max(row_err, std::abs(p.row(i).sum() - 1.0));
          ++n_rows;
        }
    }
  }
  // Zero tables reduce multi-granular attention to plain attention bit-for-bit.
  std::mt19937_64 rng(33);
  int identical = 0, boosted = 0, saturated = 0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    Layer l(1000 + static_cast<std::uint64_t>(t));
    for (const char* name : {"L.hier", "L.relx", "L.rely"}) l.p.value(name).setZero();
    const auto boxes = random_boxes(5, rng);
    const ag::Mat x = testutil::random_mat(5, l.d, rng);
    const ag::Mat mg = mg_attention_layer(l.p, "L", ag::constant(x), compute_bias_index(boxes, l.cfg), 2).value();
    const ag::Mat plain = self_attention_layer(l.p, "L", ag::constant(x), 2).value();
    identical += mg.size() == plain.size() &&
                 std::memcmp(mg.data(), plain.data(), sizeof(double) * static_cast<std::size_t>(mg.size())) == 0;

    // Page, a region, a word inside it, and an unrelated region.
    std::uniform_real_distribution<double> u(0.05, 0.4);
    const double x0 = u(rng), y0 = u(rng);
    const std::vector<BoundingBox> layout{BoundingBox::page(), testutil::box(x0, y0, x0 + 0.3, y0 + 0.1),
                                          testutil::box(x0 + 0.02, y0 + 0.02, x0 + 0.1, y0 + 0.06),
                                          testutil::box(0.6, 0.7, 0.9, 0.8)};
    const ag::Mat z = testutil::random_mat(4, l.d, rng);
    const BiasIndex idx = compute_bias_index(layout, l.cfg);
    AttentionTrace base, lifted;
    mg_attention_layer(l.p, "L", ag::constant(z), idx, 2, &base);
    l.p.value("L.hier").row(1).setConstant(10.0);
    mg_attention_layer(l.p, "L", ag::constant(z), idx, 2, &lifted);
    // The lift only draws mass from the unrelated region (key 3); below 1e-12
    // the gain is lost to rounding, so only non-decrease is required there.
    bool up = true;
    for (int h = 0; h < 2; ++h) {
      const double before = base.probs[h](2, 1), after = lifted.probs[h](2, 1);
      const bool movable = base.probs[h](2, 3) > 1e-12;
      if (!movable) ++saturated;
      up = up && (movable ? after > before : after >= before);
    }
    boosted += up;
  }
  const bool ok = row_err <= kSoftmaxTol && identical == trials && boosted == trials;
  return verdict(ok, "softmax rows " + std::to_string(n_rows) + " max |sum-1| " + fmt("%.1e", row_err) +
                         "; zero tables bit-identical " + std::to_string(identical) + "/" + std::to_string(trials) +
                         "; HierBias +10 raises word->parent mass " + std::to_string(boosted) + "/" +
                         std::to_string(trials) + " (" + std::to_string(saturated) + " heads with under 1e-12 movable mass)");
}

// ---- 4: MGM saturation ----------------------------------------------------

Outcome criterion4() {
  double equal_err = 0.0, saturated = 0.0;
  std::mt19937_64 rng(41);
  for (int m = 2; m <= 8; ++m) {
    std::vector<int> words(static_cast<std::size_t>(m), 1);
    const auto units = unit_layout(words);
    const int n = static_cast<int>(units.size());
    // Equal logits: every word and region row is the same vector.
    ag::Mat f = ag::Mat::Zero(n, 4);
    const ag::Mat row = testutil::random_mat(1, 4, rng);
    for (int r = 1; r < n; ++r) f.row(r) = row;
    equal_err = std::max(equal_err, std::abs(loss_mgm(ag::constant(f), units).scalar() + std::log(1.0 / m)));
    // Parent logit leads by 20: orthonormal regions, word = 20 * parent.
    ag::Mat g = ag::Mat::Zero(n, m);
    for (int r = 0; r < m; ++r) g(1 + r, r) = 1.0;
    for (const auto& u : units)
      if (u.granularity == Granularity::kWord) g(u.unit_index, u.parent_row - 1) = 20.0;
    saturated = std::max(saturated, loss_mgm(ag::constant(g), units).scalar());
  }
  return verdict(equal_err <= kMgmEqualTol && saturated < kMgmSaturated,
                 "m=2..8: max |L - (-log 1/m)| " + fmt("%.1e", equal_err) + "; max L with +20 lead " +
                     fmt("%.2e", saturated));
}

// ---- 5 and 6: ablation trends --------------------------------------------

// Few-label protocol: pre-train on 400 unlabeled documents, fine-tune on 20,
// score on 100 held out. Regions carry noisy cues so the no-pre-training
// baseline is not at ceiling.
struct LearningProtocol {
  std::vector<Document> pretrain, train, test;
  AblationSetup setup;

  LearningProtocol() {
    SyntheticCorpusSpec spec;
    spec.n_docs = 500;
    spec.seed = 5150;
    spec.raster_size = 128;
    spec.swap_prob = 0.5;
    spec.texture_fidelity = 0.6;
    spec.token_fidelity = 0.7;
    const auto docs = generate_synthetic(spec);
    pretrain.assign(docs.begin(), docs.begin() + 400);
    train.assign(docs.begin(), docs.begin() + 20);
    test.assign(docs.begin() + 400, docs.end());
    setup.model = ModelConfig{};
    setup.pretrain.epochs = 3;
    setup.pretrain.lr = 3e-4;
    setup.pretrain.batch_size = 8;
    setup.finetune.lr = 1e-3;
    setup.finetune.epochs = 20;
    setup.finetune.batch_size = 4;
    setup.seeds = {0, 1, 2};
  }
};

std::string per_seed(const std::vector<AblationResult>& rs, const std::string& name) {
  std::string out;
  for (const auto& r : rs)
    if (r.name == name) out += (out.empty() ? "" : "/") + fmt("%.3f", r.metric);
  return out;
}

Outcome criterion5() {
  const auto t0 = Clock::now();
  LearningProtocol p;
  const GranularitySet all;
  const std::vector<AblationConfig> grid{{"none", PretrainTasks::parse("none"), all},
                                         {"mtm+mvm", PretrainTasks::parse("mtm,mvm"), all},
                                         {"full", PretrainTasks::parse("mtm,mvm,mgm"), all}};
  const auto rs = run_ablation(grid, p.pretrain, p.train, p.test, p.setup);
  const double none = ablation_mean(rs, "none"), mm = ablation_mean(rs, "mtm+mvm"), full = ablation_mean(rs, "full");
  const double secs = seconds_since(t0);
  const bool ok = full >= mm && mm >= none && full - none >= kFullOverNone && secs < kLearningSeconds;
  return verdict(ok, "mean entity F1 full " + fmt("%.4f", full) + " (" + per_seed(rs, "full") + "), mtm+mvm " +
                         fmt("%.4f", mm) + " (" + per_seed(rs, "mtm+mvm") + "), none " + fmt("%.4f", none) + " (" +
                         per_seed(rs, "none") + "); need full >= mtm+mvm >= none and full - none >= " +
                         fmt("%.2f", kFullOverNone) + "; " + fmt("%.0f", secs) + " s");
}

Outcome criterion6() {
  const auto t0 = Clock::now();
  LearningProtocol p;
  const PretrainTasks tasks;
  const std::vector<AblationConfig> grid{{"region", tasks, GranularitySet::parse("region")},
                                         {"region+word", tasks, GranularitySet::parse("region,word")},
                                         {"page+region+word", tasks, GranularitySet::parse("page,region,word")}};
  const auto rs = run_ablation(grid, p.pretrain, p.train, p.test, p.setup);
  const double r = ablation_mean(rs, "region"), rw = ablation_mean(rs, "region+word"),
               prw = ablation_mean(rs, "page+region+word");
  return verdict(prw >= rw && rw >= r,
                 "mean entity F1 page+region+word " + fmt("%.4f", prw) + " (" + per_seed(rs, "page+region+word") +
                     "), region+word " + fmt("%.4f", rw) + " (" + per_seed(rs, "region+word") + "), region " +
                     fmt("%.4f", r) + " (" + per_seed(rs, "region") + "); " + fmt("%.0f", seconds_since(t0)) + " s");
}

// ---- 7 and 8: heatmap diagonal and MGM retrieval ---------------------------

struct MgmProtocol {
  std::vector<Document> pretrain, held_out;
  ModelConfig model;
  TrainConfig train;

  MgmProtocol() {
    SyntheticCorpusSpec spec;
    spec.n_docs = 220;
    spec.seed = 7070;
    spec.raster_size = 128;
    const auto docs = generate_synthetic(spec);
    pretrain.assign(docs.begin(), docs.begin() + 200);
    held_out.assign(docs.begin() + 200, docs.end());
    train.epochs = 3;
    train.lr = 3e-4;
    train.batch_size = 8;
    train.seed = 7;
  }

  std::unique_ptr<Model> fresh() const {
    return std::make_unique<Model>(model, Vocab::build(pretrain, model.encoder.vocab_size), 7);
  }

  void pretrain_model(Model& m) const {
    const long total = Pretrainer::total_steps_for(pretrain.size(), train);
    Pretrainer trainer(m, train, total);
    for (long s = 0; s < total; ++s) trainer.step(trainer.batch_for_step(pretrain, s));
  }
};

struct HeatStats {
  std::vector<double> parent, other;
  long hits = 0, words = 0;
  double chance = 0.0;
};

HeatStats heat_stats(const Model& m, const std::vector<Document>& docs) {
  ag::NoGradGuard no_grad;
  HeatStats s;
  for (const auto& d : docs) {
    const auto units = m.units(d);
    const ag::Mat h = region_word_heatmap(m.forward(d, units).fused.f.value(), units);
    const auto regions = rows_of(units, Granularity::kRegion);
    int col = 0;
    for (const auto& u : units) {
      if (u.granularity != Granularity::kWord) continue;
      const auto parent = std::find(regions.begin(), regions.end(), u.parent_row) - regions.begin();
      Eigen::Index best = 0;
      h.col(col).maxCoeff(&best);
      s.hits += best == parent;
      ++s.words;
      s.chance += 1.0 / static_cast<double>(regions.size());
      for (Eigen::Index j = 0; j < h.rows(); ++j) (j == parent ? s.parent : s.other).push_back(h(j, col));
      ++col;
    }
  }
  s.chance /= static_cast<double>(s.words);
  return s;
}

std::pair<double, double> mean_var(const std::vector<double>& v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, ss / static_cast<double>(v.size() - 1)};
}

Outcome criterion7() {
  const auto t0 = Clock::now();
  MgmProtocol p;
  auto m = p.fresh();
  p.pretrain_model(*m);
  const HeatStats s = heat_stats(*m, p.held_out);
  const auto [mp, vp] = mean_var(s.parent);
  const auto [mo, vo] = mean_var(s.other);
  const double se = std::sqrt(vp / static_cast<double>(s.parent.size()) + vo / static_cast<double>(s.other.size()));
  const double z = (mp - mo) / se;
  return verdict(z >= kHeatmapSE, "parent mean " + fmt("%.3f", mp) + " (n=" + std::to_string(s.parent.size()) +
                                      "), non-parent mean " + fmt("%.3f", mo) + " (n=" +
                                      std::to_string(s.other.size()) + "), difference " + fmt("%.1f", z) +
                                      " pooled SE (need >= " + fmt("%.0f", kHeatmapSE) + "); " +
                                      fmt("%.0f", seconds_since(t0)) + " s");
}

Outcome criterion8() {
  const auto t0 = Clock::now();
  MgmProtocol p;
  auto m = p.fresh();
  const HeatStats before = heat_stats(*m, p.held_out);
  p.pretrain_model(*m);
  const HeatStats after = heat_stats(*m, p.held_out);
  const double acc0 = static_cast<double>(before.hits) / static_cast<double>(before.words);
  const double acc1 = static_cast<double>(after.hits) / static_cast<double>(after.words);
  const bool ok = acc1 > kRetrievalPretrained && std::abs(acc0 - before.chance) <= kRetrievalNearChance;
  return verdict(ok, "word->parent accuracy after pre-training " + fmt("%.4f", acc1) + " (need > " +
                         fmt("%.2f", kRetrievalPretrained) + "), random init " + fmt("%.4f", acc0) +
                         " vs chance 1/m " + fmt("%.4f", before.chance) + " (need within " +
                         fmt("%.2f", kRetrievalNearChance) + "), " + std::to_string(after.words) + " words; " +
                         fmt("%.0f", seconds_since(t0)) + " s");
}

// ---- 9: determinism and persistence ----------------------------------------

std::string bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome criterion9() {
  const auto docs = generate_synthetic(testutil::small_spec(24, 91));
  RunConfig cfg = preset_config("desk");
  cfg.model.encoder.d_model = 32;
  cfg.seed = 9;
  cfg.pretrain.batch_size = 4;
  cfg.pretrain.epochs = 2;
  propagate_seed(cfg);
  const Vocab vocab = Vocab::build(docs, cfg.model.encoder.vocab_size);
  const long total = Pretrainer::total_steps_for(docs.size(), cfg.pretrain);
  const fs::path dir = fs::temp_directory_path() / "mgdoc_acceptance_9";
  fs::create_directories(dir);

  // Log lines carry wall_clock = 0 so reruns can be compared byte for byte.
  auto run = [&](long stop, Model& model, Pretrainer& trainer, std::vector<std::string>& log) {
    for (long s = trainer.current_step(); s < stop; ++s)
      log.push_back(loss_report_json(trainer.step(trainer.batch_for_step(docs, s)), 0.0));
    (void)model;
  };
  std::vector<std::string> log_a, log_b, log_resumed;
  Model a(cfg.model, vocab, cfg.seed);
  Pretrainer ta(a, cfg.pretrain, total);
  run(total, a, ta, log_a);
  Model b(cfg.model, vocab, cfg.seed);
  Pretrainer tb(b, cfg.pretrain, total);
  run(total, b, tb, log_b);
  const bool rerun_identical = log_a == log_b;

  save_checkpoint(make_checkpoint(a, cfg, total, &ta.optimizer()), dir / "a.bin");
  const Checkpoint back = load_checkpoint(dir / "a.bin");
  save_checkpoint(back, dir / "b.bin");
  bool bitwise = bytes_of(dir / "a.bin") == bytes_of(dir / "b.bin");
  for (const auto& [name, v] : a.params()) {
    const ag::Mat& w = back.params.at(name);
    bitwise = bitwise && w.size() == v.value().size() &&
              std::memcmp(w.data(), v.value().data(), sizeof(double) * static_cast<std::size_t>(w.size())) == 0;
  }

  const long half = total / 2;
  Model c(cfg.model, vocab, cfg.seed);
  Pretrainer tc(c, cfg.pretrain, total);
  run(half, c, tc, log_resumed);
  save_checkpoint(make_checkpoint(c, cfg, half, &tc.optimizer()), dir / "half.bin");
  const Checkpoint mid = load_checkpoint(dir / "half.bin");
  auto d = model_from_checkpoint(mid);
  Pretrainer td(*d, mid.config.pretrain, total);
  restore_optimizer(td.optimizer(), mid);
  td.set_step(mid.step);
  run(total, *d, td, log_resumed);
  bool resumed = log_resumed == log_a;
  for (const auto& [name, v] : a.params()) {
    const ag::Mat& w = d->params().get(name).value();
    resumed = resumed && std::memcmp(w.data(), v.value().data(), sizeof(double) * static_cast<std::size_t>(w.size())) == 0;
  }
  fs::remove_all(dir);
  return verdict(rerun_identical && bitwise && resumed,
                 std::string("rerun log identical: ") + (rerun_identical ? "yes" : "no") + " (" +
                     std::to_string(log_a.size()) + " steps); checkpoint round trip bitwise: " +
                     (bitwise ? "yes" : "no") + "; resume at step " + std::to_string(half) +
                     " matches step-for-step: " + (resumed ? "yes" : "no"));
}

// ---- 10: ingestion counts ---------------------------------------------------

Outcome criterion10() {
  SyntheticCorpusSpec spec = testutil::small_spec(40, 1010);
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  const fs::path dir = fs::temp_directory_path() / "mgdoc_acceptance_10";
  fs::remove_all(dir);
  save_corpus(a, dir / "a");
  save_corpus(b, dir / "b");
  bool same = true;
  for (const auto& e : fs::directory_iterator(dir / "a"))
    same = same && bytes_of(e.path()) == bytes_of(dir / "b" / e.path().filename());
  fs::remove_all(dir);
  const std::string synth = std::string("synthetic corpus byte-deterministic: ") + (same ? "yes" : "no");

  const char* root = std::getenv("MGDOC_FUNSD_DIR");
  if (!root || !*root) {
    if (!same) return {Status::kFail, synth};
    return {Status::kSkip, synth + "; FUNSD not present (set MGDOC_FUNSD_DIR to the dataset directory)"};
  }
  const auto train = load_funsd_split(fs::path(root) / "training_data");
  const auto test = load_funsd_split(fs::path(root) / "testing_data");
  return verdict(same && static_cast<int>(train.size()) == kFunsdTrain && static_cast<int>(test.size()) == kFunsdTest,
                 synth + "; FUNSD train " + std::to_string(train.size()) + " / test " + std::to_string(test.size()) +
                     " (need " + std::to_string(kFunsdTrain) + " / " + std::to_string(kFunsdTest) + ")");
}

const std::vector<std::pair<std::string, std::function<Outcome()>>>& criteria() {
  static const std::vector<std::pair<std::string, std::function<Outcome()>>> all{
      {"oracle equivalence", criterion1},   {"gradient check", criterion2},
      {"attention invariants", criterion3}, {"MGM saturation", criterion4},
      {"pre-training task ablation", criterion5}, {"granularity ablation", criterion6},
      {"heatmap diagonal", criterion7},     {"MGM retrieval", criterion8},
      {"determinism and persistence", criterion9}, {"ingestion counts", criterion10}};
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mgdoc acceptance criteria"};
  std::vector<int> selected;
  app.add_option("--criterion", selected, "Criterion number (1-10); repeat for several, default all")
      ->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);
  if (selected.empty())
    for (int k = 1; k <= 10; ++k) selected.push_back(k);

  bool failed = false, skipped = false;
  for (int k : selected) {
    const auto& [name, fn] = criteria()[static_cast<std::size_t>(k - 1)];
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {Status::kFail, std::string("error: ") + e.what()};
    }
    const char* tag = o.status == Status::kPass ? "PASS" : o.status == Status::kSkip ? "SKIP" : "FAIL";
    std::cout << tag << " criterion " << k << " (" << name << "): " << o.detail << std::endl;
    failed |= o.status == Status::kFail;
    skipped |= o.status == Status::kSkip;
  }
  return failed ? 1 : skipped ? 77 : 0;
}
