#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mgdoc/attention.hpp"
#include "mgdoc/encoder.hpp"
#include "mgdoc/params.hpp"

namespace mgdoc {

inline constexpr int kPageClasses = 16;

struct ModelConfig {
  EncoderConfig encoder;
  AttentionConfig attention;

  void validate() const;
};

struct ForwardPass {
  BatchEncoding encoding;
  FusedFeatures fused;
};

// Owns the parameter registry, vocabulary, and the encoder bound to them.
class Model {
 public:
  Model(ModelConfig cfg, Vocab vocab, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return *vocab_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const Encoder& encoder() const { return encoder_; }
  Encoder& encoder() { return encoder_; }

  void add_entity_head(int n_classes, std::uint64_t seed);
  void add_page_head(std::uint64_t seed, int n_classes = kPageClasses);
  bool has_entity_head() const { return params_.has("head.entity.W"); }
  bool has_page_head() const { return params_.has("head.page.W"); }

  std::vector<GranularUnit> units(const Document& doc,
                                  GranularitySet keep = GranularitySet::all()) const;
  ForwardPass forward(const Document& doc, const std::vector<GranularUnit>& units,
                      const MaskPlan* masking = nullptr, AttentionTrace* trace = nullptr) const;

  // Logits over region rows (m x classes) and over the page row (1 x 16).
  ag::Var entity_logits(const ForwardPass& fp) const;
  ag::Var page_logits(const ForwardPass& fp) const;

 private:
  ModelConfig cfg_;
  std::unique_ptr<Vocab> vocab_;
  ParamStore params_;
  Encoder encoder_;
};

std::vector<int> rows_of(const std::vector<GranularUnit>& units, Granularity g);

}  // namespace mgdoc
