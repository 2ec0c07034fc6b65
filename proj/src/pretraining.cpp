#include "mgdoc/pretraining.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mgdoc/ingestion.hpp"

namespace mgdoc {

std::string PretrainTasks::to_string() const {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  add(mtm, "mtm");
  add(mvm, "mvm");
  add(mgm, "mgm");
  return out.empty() ? "none" : out;
}

PretrainTasks PretrainTasks::parse(const std::string& csv) {
  PretrainTasks t{false, false, false};
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "mtm") t.mtm = true;
    else if (item == "mvm") t.mvm = true;
    else if (item == "mgm") t.mgm = true;
    else if (item == "none" || item.empty()) continue;
    else throw Error("unknown pre-training task '" + item + "'");
  }
  return t;
}

void TrainConfig::validate() const {
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw Error("mask_ratio must be in (0, 1)");
  if (!(warmup_frac >= 0.0 && warmup_frac < 1.0)) throw Error("warmup_frac must be in [0, 1)");
  if (batch_size < 1) throw Error("batch_size must be positive");
  if (epochs < 0) throw Error("epochs must be non-negative");
  if (!(lr > 0.0)) throw Error("lr must be positive");
  if (!granularities.region) throw Error("granularities must include region");
}

MaskPlan make_mask_plan(const std::vector<GranularUnit>& units, const TrainConfig& cfg,
                        std::mt19937_64& rng) {
  std::vector<int> candidates;
  for (const auto& u : units)
    if (u.granularity != Granularity::kPage || cfg.mask_page) candidates.push_back(u.unit_index);
  MaskPlan plan;
  plan.rng_seed = rng();
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  auto draw = [&](std::set<int>& rows) {
    for (int r : candidates)
      if (coin(rng) < cfg.mask_ratio) rows.insert(r);
    if (rows.empty() && !candidates.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
      rows.insert(candidates[pick(rng)]);
    }
  };
  draw(plan.text_rows);
  draw(plan.vision_rows);
  return plan;
}

std::uint64_t mask_seed(std::uint64_t seed, const std::string& doc_id, long step) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : doc_id) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return derive_seed(derive_seed(seed, h), static_cast<std::uint64_t>(step));
}

namespace {

ag::Var zero_scalar() { return ag::constant(ag::Mat::Zero(1, 1)); }

ag::Var masked_mae(const ag::Var& stream, const ag::Mat& target, const std::set<int>& rows) {
  if (rows.empty()) return zero_scalar();
  std::vector<int> idx(rows.begin(), rows.end());
  ag::Mat t(static_cast<Eigen::Index>(idx.size()), target.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) t.row(static_cast<Eigen::Index>(k)) = target.row(idx[k]);
  return ag::mean_abs_error(ag::select_rows(stream, idx), t);
}

}  // namespace

ag::Var loss_mtm(const BatchEncoding& masked, const FusedFeatures& fused, const MaskPlan& plan) {
  if (!plan.text_rows.empty() && masked.text_target.rows() != masked.rows())
    throw Error("loss_mtm: encoding carries no clean text targets");
  return masked_mae(fused.f_vt, masked.text_target, plan.text_rows);
}

ag::Var loss_mvm(const BatchEncoding& masked, const FusedFeatures& fused, const MaskPlan& plan) {
  if (!plan.vision_rows.empty() && masked.vis_target.rows() != masked.rows())
    throw Error("loss_mvm: encoding carries no clean vision targets");
  return masked_mae(fused.f_tv, masked.vis_target, plan.vision_rows);
}

ag::Var loss_mgm(const ag::Var& f, const std::vector<GranularUnit>& units) {
  const auto regions = rows_of(units, Granularity::kRegion);
  const auto words = rows_of(units, Granularity::kWord);
  if (regions.size() < 2 || words.empty()) return zero_scalar();
  std::vector<int> targets;
  targets.reserve(words.size());
  for (int w : words) {
    const int parent = units[static_cast<std::size_t>(w)].parent_row;
    auto it = std::find(regions.begin(), regions.end(), parent);
    if (it == regions.end()) throw Error("loss_mgm: word without a parent region row");
    targets.push_back(static_cast<int>(it - regions.begin()));
  }
  ag::Var scores = ag::matmul_nt(ag::select_rows(f, words), ag::select_rows(f, regions));
  return ag::cross_entropy_rows(scores, targets);
}

ObjectiveTerms pretrain_objective(const Model& model, const Document& doc,
                                  const std::vector<GranularUnit>& units, const MaskPlan& plan,
                                  const PretrainTasks& tasks, const BatchEncoding* targets) {
  MaskPlan effective = plan;
  if (!tasks.mtm) effective.text_rows.clear();
  if (!tasks.mvm) effective.vision_rows.clear();
  ForwardPass fp = model.forward(doc, units, &effective);
  if (targets) {
    fp.encoding.text_target = targets->text_target;
    fp.encoding.vis_target = targets->vis_target;
  }
  ObjectiveTerms t;
  t.mtm = tasks.mtm ? loss_mtm(fp.encoding, fp.fused, effective) : zero_scalar();
  t.mvm = tasks.mvm ? loss_mvm(fp.encoding, fp.fused, effective) : zero_scalar();
  t.mgm = tasks.mgm ? loss_mgm(fp.fused.f, fp.encoding.units) : zero_scalar();
  t.total = ag::add(ag::add(t.mtm, t.mvm), t.mgm);
  t.n_text_masked = static_cast<int>(effective.text_rows.size());
  t.n_vision_masked = static_cast<int>(effective.vision_rows.size());
  return t;
}

// ---- optimizer ----------------------------------------------------------

namespace {

bool decays(const std::string& name) {
  return name.ends_with(".W") || name == "enc.text.tok";
}

}  // namespace

double AdamW::step(ParamStore& params, double lr, double grad_clip) {
  double sq = 0.0;
  for (auto& [name, v] : params) {
    const auto& n = *v.node();
    if (n.requires_grad && n.grad.size() != 0) sq += n.grad.squaredNorm();
  }
  const double norm = std::sqrt(sq);
  const double clip_scale = (grad_clip > 0.0 && norm > grad_clip) ? grad_clip / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, v] : params) {
    auto& n = *v.node();
    if (!n.requires_grad || n.grad.size() == 0) continue;
    auto& mom = moments_[name];
    if (mom.m.size() == 0) {
      mom.m = ag::Mat::Zero(n.value.rows(), n.value.cols());
      mom.v = ag::Mat::Zero(n.value.rows(), n.value.cols());
    }
    const ag::Mat g = n.grad * clip_scale;
    mom.m = beta1_ * mom.m + (1.0 - beta1_) * g;
    mom.v = beta2_ * mom.v + (1.0 - beta2_) * g.cwiseAbs2();
    if (decays(name)) n.value *= (1.0 - lr * weight_decay_);
    n.value.array() -= lr * (mom.m.array() / bc1) / ((mom.v.array() / bc2).sqrt() + eps_);
  }
  return norm;
}

long warmup_steps(long total_steps, double warmup_frac) {
  return static_cast<long>(std::ceil(warmup_frac * static_cast<double>(total_steps)));
}

double scheduled_lr(double base_lr, long step, long total_steps, double warmup_frac) {
  const long w = warmup_steps(total_steps, warmup_frac);
  if (w <= 0 || step >= w) return base_lr;
  return base_lr * static_cast<double>(step + 1) / static_cast<double>(w);
}

// ---- trainer ------------------------------------------------------------

Pretrainer::Pretrainer(Model& model, TrainConfig cfg, long total_steps)
    : model_(model),
      cfg_(std::move(cfg)),
      total_steps_(total_steps),
      opt_(cfg_.beta1, cfg_.beta2, cfg_.adam_eps, cfg_.weight_decay) {
  cfg_.validate();
}

long Pretrainer::total_steps_for(std::size_t corpus_size, const TrainConfig& cfg) {
  const long per_epoch = static_cast<long>((corpus_size + cfg.batch_size - 1) / cfg.batch_size);
  return per_epoch * cfg.epochs;
}

std::vector<const Document*> Pretrainer::batch_for_step(const std::vector<Document>& corpus,
                                                        long step) const {
  if (corpus.empty()) throw Error("empty pre-training corpus");
  const std::size_t bs = static_cast<std::size_t>(cfg_.batch_size);
  const long per_epoch = static_cast<long>((corpus.size() + bs - 1) / bs);
  const long epoch = step / per_epoch;
  const long within = step % per_epoch;
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(cfg_.seed ^ 0x5EEDULL, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<const Document*> batch;
  for (std::size_t k = static_cast<std::size_t>(within) * bs;
       k < std::min(order.size(), static_cast<std::size_t>(within + 1) * bs); ++k)
    batch.push_back(&corpus[order[k]]);
  return batch;
}

LossReport Pretrainer::step(const std::vector<const Document*>& batch) {
  if (batch.empty()) throw Error("empty batch");
  auto& params = model_.params();
  params.zero_grad();
  LossReport report;
  report.step = step_;
  report.lr = scheduled_lr(cfg_.lr, step_, total_steps_, cfg_.warmup_frac);
  const double w = 1.0 / static_cast<double>(batch.size());
  for (const Document* doc : batch) {
    const auto units = model_.units(*doc, cfg_.granularities);
    std::mt19937_64 rng(mask_seed(cfg_.seed, doc->id, step_));
    const MaskPlan plan = make_mask_plan(units, cfg_, rng);
    ObjectiveTerms terms = pretrain_objective(model_, *doc, units, plan, cfg_.tasks);
    const double mtm = terms.mtm.scalar();
    const double mvm = terms.mvm.scalar();
    const double mgm = terms.mgm.scalar();
    for (auto [name, v] : {std::pair{"l_mtm", mtm}, {"l_mvm", mvm}, {"l_mgm", mgm}})
      if (!std::isfinite(v))
        throw Error(std::string("non-finite ") + name + " at step " + std::to_string(step_) +
                    " on document '" + doc->id + "'");
    report.l_mtm += w * mtm;
    report.l_mvm += w * mvm;
    report.l_mgm += w * mgm;
    report.n_text_masked += terms.n_text_masked;
    report.n_vision_masked += terms.n_vision_masked;
    if (terms.total.requires_grad()) ag::backward(ag::scale(terms.total, w));
  }
  report.l_total = report.l_mtm + report.l_mvm + report.l_mgm;
  opt_.step(params, report.lr, cfg_.grad_clip);
  ++step_;
  return report;
}

std::string loss_report_json(const LossReport& r, double wall_clock_s) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["lr"] = r.lr;
  j["l_mtm"] = r.l_mtm;
  j["l_mvm"] = r.l_mvm;
  j["l_mgm"] = r.l_mgm;
  j["l_total"] = r.l_total;
  j["n_text_masked"] = r.n_text_masked;
  j["n_vision_masked"] = r.n_vision_masked;
  j["wall_clock"] = wall_clock_s;
  return j.dump();
}

}  // namespace mgdoc
