#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "mgdoc/finetune.hpp"
#include "mgdoc/model.hpp"
#include "mgdoc/pretraining.hpp"

namespace mgdoc {

// Everything one CLI run needs, read from a flat JSON object.
struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig pretrain;
  FinetuneConfig finetune;
  // Pre-training checkpoint interval in steps; 0 writes only the final one.
  long ckpt_every = 0;
  std::string text_embeddings;    // mgdoc-emb/1 file for the external text backbone
  std::string vision_embeddings;  // same for vision
};

// "desk" or "paper"; unknown names are an error.
RunConfig preset_config(const std::string& name);

// Applies the preset named by "preset" (default desk), then every other key.
// Unknown keys and ill-typed values are errors naming the key.
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

// Flat resolved form; keys in a fixed order.
std::string run_config_to_json(const RunConfig& cfg, int indent = 2);

// Hex FNV-1a 64 of the compact resolved JSON.
std::string config_hash(const RunConfig& cfg);

// MGDOC_SEED, when set, replaces cfg.seed and the derived seeds.
void apply_env_overrides(RunConfig& cfg);

// Pushes cfg.seed into the pre-training and fine-tuning configs.
void propagate_seed(RunConfig& cfg);

}  // namespace mgdoc
