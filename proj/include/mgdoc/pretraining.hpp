#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mgdoc/model.hpp"

namespace mgdoc {

struct PretrainTasks {
  bool mtm = true;
  bool mvm = true;
  bool mgm = true;

  std::string to_string() const;
  static PretrainTasks parse(const std::string& csv);  // "" or "none" = no tasks
  bool any() const { return mtm || mvm || mgm; }

  friend bool operator==(const PretrainTasks&, const PretrainTasks&) = default;
};

struct TrainConfig {
  double mask_ratio = 0.15;
  double lr = 3e-4;
  int batch_size = 8;
  int epochs = 5;
  double warmup_frac = 0.2;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  bool mask_page = false;
  PretrainTasks tasks;
  GranularitySet granularities;

  void validate() const;
};

struct LossReport {
  long step = 0;
  double lr = 0.0;
  double l_mtm = 0.0;
  double l_mvm = 0.0;
  double l_mgm = 0.0;
  double l_total = 0.0;
  int n_text_masked = 0;
  int n_vision_masked = 0;
};

// Independently samples each maskable row per modality with probability
// mask_ratio; an empty draw falls back to one uniformly chosen row.
MaskPlan make_mask_plan(const std::vector<GranularUnit>& units, const TrainConfig& cfg,
                        std::mt19937_64& rng);

// Per-(seed, doc, step) mask RNG, independent of batch composition.
std::uint64_t mask_seed(std::uint64_t seed, const std::string& doc_id, long step);

// Mean absolute error between the clean text embedding rows and the V->T
// stream at the masked rows. Zero when nothing is masked.
ag::Var loss_mtm(const BatchEncoding& masked, const FusedFeatures& fused, const MaskPlan& plan);
// Same for the clean visual embedding against the T->V stream.
ag::Var loss_mvm(const BatchEncoding& masked, const FusedFeatures& fused, const MaskPlan& plan);
// Mean over words of -log softmax over the document's regions of f_w . f_r at
// the parent region. Zero with fewer than two regions or no words.
ag::Var loss_mgm(const ag::Var& f, const std::vector<GranularUnit>& units);

struct ObjectiveTerms {
  ag::Var mtm;
  ag::Var mvm;
  ag::Var mgm;
  ag::Var total;
  int n_text_masked = 0;
  int n_vision_masked = 0;
};

// Masked forward pass plus the enabled losses. When `targets` is given, its
// text/vision target matrices replace the ones computed from the clean pass.
ObjectiveTerms pretrain_objective(const Model& model, const Document& doc,
                                  const std::vector<GranularUnit>& units, const MaskPlan& plan,
                                  const PretrainTasks& tasks,
                                  const BatchEncoding* targets = nullptr);

// Decoupled-weight-decay Adam over every trainable parameter.
class AdamW {
 public:
  struct Moments {
    ag::Mat m;
    ag::Mat v;
  };

  AdamW() = default;
  AdamW(double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  // Returns the pre-clip global gradient norm.
  double step(ParamStore& params, double lr, double grad_clip);

  long steps() const { return t_; }
  void set_steps(long t) { t_ = t; }
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

 private:
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  double weight_decay_ = 0.01;
  long t_ = 0;
  std::map<std::string, Moments> moments_;
};

// Linear warmup from base/warmup_steps to base over the first warmup steps,
// constant afterwards.
double scheduled_lr(double base_lr, long step, long total_steps, double warmup_frac);
long warmup_steps(long total_steps, double warmup_frac);

class Pretrainer {
 public:
  Pretrainer(Model& model, TrainConfig cfg, long total_steps);

  LossReport step(const std::vector<const Document*>& batch);

  // Batches follow a seeded per-epoch shuffle, so any step can be resumed.
  std::vector<const Document*> batch_for_step(const std::vector<Document>& corpus, long step) const;
  static long total_steps_for(std::size_t corpus_size, const TrainConfig& cfg);

  long current_step() const { return step_; }
  void set_step(long s) { step_ = s; }
  const TrainConfig& config() const { return cfg_; }
  long total_steps() const { return total_steps_; }
  AdamW& optimizer() { return opt_; }
  const AdamW& optimizer() const { return opt_; }

 private:
  Model& model_;
  TrainConfig cfg_;
  long total_steps_;
  long step_ = 0;
  AdamW opt_;
};

std::string loss_report_json(const LossReport& r, double wall_clock_s);

}  // namespace mgdoc
