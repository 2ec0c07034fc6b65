#include "mgdoc/model.hpp"

#include "mgdoc/ingestion.hpp"

namespace mgdoc {

void ModelConfig::validate() const {
  if (encoder.d_model <= 0) throw Error("d_model must be positive");
  if (attention.n_heads <= 0 || encoder.d_model % attention.n_heads != 0)
    throw Error("d_model (" + std::to_string(encoder.d_model) +
                ") must be divisible by n_heads (" + std::to_string(attention.n_heads) + ")");
  if (attention.n_mg_layers < 0 || attention.n_self_layers < 0 || attention.n_cross_layers < 1)
    throw Error("layer counts must be non-negative with at least one cross layer");
  if (attention.rel_buckets_side < 1) throw Error("rel_buckets must be positive");
}

Model::Model(ModelConfig cfg, Vocab vocab, std::uint64_t seed)
    : cfg_(cfg),
      vocab_(std::make_unique<Vocab>(std::move(vocab))),
      encoder_(cfg.encoder, vocab_.get()) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  encoder_.init_params(params_, rng);
  init_fusion_params(params_, cfg_.attention, cfg_.encoder.d_model, rng);
}

void Model::add_entity_head(int n_classes, std::uint64_t seed) {
  if (n_classes < 2) throw Error("entity head needs at least 2 classes");
  std::mt19937_64 rng(derive_seed(seed, 0xE17));
  const int d = cfg_.encoder.d_model;
  params_.add_uniform("head.entity.W", d, n_classes, d, rng);
  params_.add_uniform("head.entity.b", 1, n_classes, d, rng);
}

void Model::add_page_head(std::uint64_t seed, int n_classes) {
  std::mt19937_64 rng(derive_seed(seed, 0xA6E));
  const int d = cfg_.encoder.d_model;
  params_.add_uniform("head.page.W", d, n_classes, d, rng);
  params_.add_uniform("head.page.b", 1, n_classes, d, rng);
}

std::vector<GranularUnit> Model::units(const Document& doc, GranularitySet keep) const {
  return serialize_units(doc, keep);
}

ForwardPass Model::forward(const Document& doc, const std::vector<GranularUnit>& units,
                           const MaskPlan* masking, AttentionTrace* trace) const {
  ForwardPass fp;
  fp.encoding = encoder_.encode_document(params_, doc, units, masking);
  fp.fused = fuse(params_, cfg_.attention, fp.encoding, trace);
  return fp;
}

std::vector<int> rows_of(const std::vector<GranularUnit>& units, Granularity g) {
  std::vector<int> rows;
  for (const auto& u : units)
    if (u.granularity == g) rows.push_back(u.unit_index);
  return rows;
}

ag::Var Model::entity_logits(const ForwardPass& fp) const {
  const auto rows = rows_of(fp.encoding.units, Granularity::kRegion);
  if (rows.empty()) throw Error("entity head needs region rows");
  ag::Var x = ag::select_rows(fp.fused.f, rows);
  return ag::add_rowvec(ag::matmul(x, params_.get("head.entity.W")), params_.get("head.entity.b"));
}

ag::Var Model::page_logits(const ForwardPass& fp) const {
  const auto rows = rows_of(fp.encoding.units, Granularity::kPage);
  if (rows.empty()) throw Error("page classification needs the page unit");
  ag::Var x = ag::select_rows(fp.fused.f, rows);
  return ag::add_rowvec(ag::matmul(x, params_.get("head.page.W")), params_.get("head.page.b"));
}

}  // namespace mgdoc
