#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "mgdoc/autograd.hpp"
#include "mgdoc/encoder.hpp"
#include "mgdoc/params.hpp"

namespace mgdoc {

struct AttentionConfig {
  int n_heads = 4;
  int n_mg_layers = 2;
  int n_self_layers = 2;
  int n_cross_layers = 2;
  // Buckets on each side of zero; tables hold 2 * side + 1 rows.
  int rel_buckets_side = 8;
  // |delta| below this gets linear buckets (half of the side), log-spaced beyond.
  double rel_exact_range = 0.05;
  double contain_eps = kDefaultContainEps;
  int ffn_mult = 4;

  int rel_table_rows() const { return 2 * rel_buckets_side + 1; }
};

// 1 iff alpha lies inside beta.
int hier_relation(const GranularUnit& alpha, const GranularUnit& beta,
                  double eps = kDefaultContainEps);

// Signed log-scaled bucket of a center offset in [-1, 1]; side + sign * b.
int rel_bucket(double delta, int side = 8, double exact_range = 0.05);

// Per-pair table indices for one document; row = query, column = key.
struct BiasIndex {
  ag::IndexMat hier;
  ag::IndexMat rel_x;
  ag::IndexMat rel_y;
};

BiasIndex compute_bias_index(std::span<const BoundingBox> boxes, const AttentionConfig& cfg);

// Attention probabilities recorded during a forward pass, one matrix per head
// per block, in execution order.
struct AttentionTrace {
  std::vector<ag::Mat> probs;
};

void init_attention_block(ParamStore& p, const std::string& prefix, int d_model, int ffn_mult,
                          std::mt19937_64& rng);
void init_bias_tables(ParamStore& p, const std::string& prefix, const AttentionConfig& cfg);

// Post-norm transformer block: multi-head attention of query rows over kv rows
// (optionally with bias tables under `bias_prefix`), residual + layer norm,
// then a GELU feed-forward with residual + layer norm.
ag::Var attention_block(const ParamStore& p, const std::string& prefix, const ag::Var& query,
                        const ag::Var& kv, int n_heads, const BiasIndex* bias = nullptr,
                        const std::string& bias_prefix = {}, AttentionTrace* trace = nullptr);

ag::Var mg_attention_layer(const ParamStore& p, const std::string& prefix, const ag::Var& emb,
                           const BiasIndex& bias, int n_heads, AttentionTrace* trace = nullptr);
ag::Var self_attention_layer(const ParamStore& p, const std::string& prefix, const ag::Var& emb,
                             int n_heads, AttentionTrace* trace = nullptr);
ag::Var cross_attention(const ParamStore& p, const std::string& prefix, const ag::Var& query,
                        const ag::Var& kv, int n_heads, AttentionTrace* trace = nullptr);

struct FusedFeatures {
  ag::Var f_text;     // after multi-granular + self attention
  ag::Var f_vision;
  ag::Var f_tv;       // text queries attending vision
  ag::Var f_vt;       // vision queries attending text
  ag::Var f;          // f_tv + f_vt
};

void init_fusion_params(ParamStore& p, const AttentionConfig& cfg, int d_model,
                        std::mt19937_64& rng);

FusedFeatures fuse(const ParamStore& p, const AttentionConfig& cfg, const BatchEncoding& enc,
                   AttentionTrace* trace = nullptr);

// H(j, i) = f_region_j . f_word_i over regions and words in serialized order.
ag::Mat region_word_heatmap(const ag::Mat& f, const std::vector<GranularUnit>& units);

}  // namespace mgdoc
