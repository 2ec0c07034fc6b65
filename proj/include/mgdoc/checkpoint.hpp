#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mgdoc/config.hpp"

namespace mgdoc {

inline constexpr const char* kCheckpointFormat = "mgdoc-ckpt/1";

// Layout: the format line, a little-endian u64 header length, the JSON header
// (config, vocab, step, seed, labels, tensor index), then raw doubles for every
// tensor in index order.
struct Checkpoint {
  RunConfig config;
  Vocab vocab;
  long step = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> entity_labels;
  std::map<std::string, ag::Mat> params;
  long adam_steps = 0;
  std::map<std::string, AdamW::Moments> moments;
};

Checkpoint make_checkpoint(const Model& model, const RunConfig& cfg, long step,
                           const AdamW* opt = nullptr,
                           const std::vector<std::string>& entity_labels = {});
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies tensors into the model. Shapes must match exactly; a tensor the
// model lacks, or one missing from the checkpoint, is an error unless it is a
// task head (head.*) and `allow_missing_heads` is set.
void load_params(Model& model, const Checkpoint& ckpt, bool allow_missing_heads = false);

// Builds a model from the checkpoint's config and vocab, adds any heads the
// checkpoint carries, and loads every tensor.
std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ckpt);

void restore_optimizer(AdamW& opt, const Checkpoint& ckpt);

}  // namespace mgdoc
