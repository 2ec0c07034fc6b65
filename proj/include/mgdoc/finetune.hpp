#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mgdoc/model.hpp"
#include "mgdoc/pretraining.hpp"

namespace mgdoc {

struct FinetuneConfig {
  double lr = 1e-4;
  int epochs = 20;
  int batch_size = 8;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  double warmup_frac = 0.0;
  std::uint64_t seed = 0;
  GranularitySet granularities;
};

// ---- metrics ------------------------------------------------------------

struct EntityMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long true_positives = 0;
  long predicted = 0;
  long gold = 0;
};

// Micro-averaged entity F1 over whole regions; entities labeled `ignore`
// (case-insensitive) count neither as predictions nor as gold.
EntityMetrics entity_f1(const std::vector<std::string>& gold, const std::vector<std::string>& pred,
                        const std::string& ignore = "other");

double accuracy(const std::vector<int>& gold, const std::vector<int>& pred);

struct RegionPrediction {
  std::string doc_id;
  int region = 0;
  std::string gold;
  std::string pred;
};

struct EntityEval {
  EntityMetrics metrics;
  std::vector<RegionPrediction> predictions;
};

struct PagePrediction {
  std::string doc_id;
  int gold = 0;
  int pred = 0;
};

struct ClassifyEval {
  double accuracy = 0.0;
  std::vector<PagePrediction> predictions;
};

// ---- tasks --------------------------------------------------------------

// Sorted distinct region labels; an unlabeled region is an error.
std::vector<std::string> entity_label_set(const std::vector<Document>& docs);
int page_class_of(const Document& doc);

struct FinetuneResult {
  long steps = 0;
  double final_loss = 0.0;
};

// Trains the entity head (added if missing) with cross-entropy over region rows.
FinetuneResult finetune_entity(Model& model, const std::vector<Document>& train,
                               const std::vector<std::string>& labels, const FinetuneConfig& cfg);
EntityEval evaluate_entity(const Model& model, const std::vector<Document>& docs,
                           const std::vector<std::string>& labels,
                           GranularitySet granularities = GranularitySet::all());

FinetuneResult finetune_classify(Model& model, const std::vector<Document>& train,
                                 const FinetuneConfig& cfg);
ClassifyEval evaluate_classify(const Model& model, const std::vector<Document>& docs,
                               GranularitySet granularities = GranularitySet::all());

struct Split {
  std::vector<Document> train;
  std::vector<Document> validation;
  std::vector<Document> test;
};
// Seeded shuffle then 8:1:1.
Split split_811(const std::vector<Document>& docs, std::uint64_t seed);

// ---- ablations ----------------------------------------------------------

struct AblationConfig {
  std::string name;
  PretrainTasks pretrain_tasks;
  GranularitySet granularities;

  void validate() const;
};

struct AblationResult {
  std::string name;
  std::string tasks;
  std::string granularities;
  std::uint64_t seed = 0;
  double metric = 0.0;
  double pretrain_final_loss = 0.0;
};

struct AblationSetup {
  ModelConfig model;
  TrainConfig pretrain;
  FinetuneConfig finetune;
  std::vector<std::uint64_t> seeds{0};
};

// Pre-trains (unless no tasks are selected), fine-tunes on `task_train`, and
// scores entity F1 on `task_test` for every config and seed.
std::vector<AblationResult> run_ablation(const std::vector<AblationConfig>& grid,
                                         const std::vector<Document>& corpus_pretrain,
                                         const std::vector<Document>& task_train,
                                         const std::vector<Document>& task_test,
                                         const AblationSetup& setup);

// One row per config: name, tasks, granularities, per-seed values, mean.
std::string ablation_csv(const std::vector<AblationResult>& results);

// Mean of `metric` over results with this config name.
double ablation_mean(const std::vector<AblationResult>& results, const std::string& name);

void write_predictions_csv(const std::vector<RegionPrediction>& preds,
                           const std::filesystem::path& path);
void write_predictions_csv(const std::vector<PagePrediction>& preds,
                           const std::filesystem::path& path);

}  // namespace mgdoc
