#include "mgdoc/attention.hpp"

#include <algorithm>
#include <cmath>

namespace mgdoc {

int hier_relation(const GranularUnit& alpha, const GranularUnit& beta, double eps) {
  return contains(beta.box, alpha.box, eps) ? 1 : 0;
}

int rel_bucket(double delta, int side, double exact_range) {
  const double a = std::min(std::abs(delta), 1.0);
  const int exact = std::max(1, side / 2);
  // Offsets 0..side: `exact` linear buckets, the rest log-spaced up to |delta| = 1.
  const int log_buckets = side - exact + 1;
  int b = 0;
  if (a < exact_range) {
    b = static_cast<int>(std::floor(a / (exact_range / exact)));
  } else {
    const double t = std::log(a / exact_range) / std::log(1.0 / exact_range);
    b = exact + static_cast<int>(std::floor(t * log_buckets));
  }
  b = std::clamp(b, 0, side);
  return delta < 0 ? side - b : side + b;
}

BiasIndex compute_bias_index(std::span<const BoundingBox> boxes, const AttentionConfig& cfg) {
  const auto n = static_cast<Eigen::Index>(boxes.size());
  BiasIndex idx{ag::IndexMat(n, n), ag::IndexMat(n, n), ag::IndexMat(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& a = boxes[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& b = boxes[static_cast<std::size_t>(j)];
      idx.hier(i, j) = contains(b, a, cfg.contain_eps) ? 1 : 0;
      idx.rel_x(i, j) = rel_bucket(a.center_x() - b.center_x(), cfg.rel_buckets_side,
                                   cfg.rel_exact_range);
      idx.rel_y(i, j) = rel_bucket(a.center_y() - b.center_y(), cfg.rel_buckets_side,
                                   cfg.rel_exact_range);
    }
  }
  return idx;
}

void init_attention_block(ParamStore& p, const std::string& prefix, int d, int ffn_mult,
                          std::mt19937_64& rng) {
  for (const char* w : {"q", "k", "v", "o"}) {
    p.add_uniform(prefix + "." + w + ".W", d, d, d, rng);
    p.add_uniform(prefix + "." + w + ".b", 1, d, d, rng);
  }
  p.add_constant(prefix + ".ln1.g", 1, d, 1.0);
  p.add_constant(prefix + ".ln1.b", 1, d, 0.0);
  const int hidden = ffn_mult * d;
  p.add_uniform(prefix + ".ffn1.W", d, hidden, d, rng);
  p.add_uniform(prefix + ".ffn1.b", 1, hidden, d, rng);
  p.add_uniform(prefix + ".ffn2.W", hidden, d, hidden, rng);
  p.add_uniform(prefix + ".ffn2.b", 1, d, hidden, rng);
  p.add_constant(prefix + ".ln2.g", 1, d, 1.0);
  p.add_constant(prefix + ".ln2.b", 1, d, 0.0);
}

void init_bias_tables(ParamStore& p, const std::string& prefix, const AttentionConfig& cfg) {
  p.add_constant(prefix + ".hier", 2, cfg.n_heads, 0.0);
  p.add_constant(prefix + ".relx", cfg.rel_table_rows(), cfg.n_heads, 0.0);
  p.add_constant(prefix + ".rely", cfg.rel_table_rows(), cfg.n_heads, 0.0);
}

namespace {

ag::Var linear(const ParamStore& p, const std::string& name, const ag::Var& x) {
  return ag::add_rowvec(ag::matmul(x, p.get(name + ".W")), p.get(name + ".b"));
}

}  // namespace

ag::Var attention_block(const ParamStore& p, const std::string& prefix, const ag::Var& query,
                        const ag::Var& kv, int n_heads, const BiasIndex* bias,
                        const std::string& bias_prefix, AttentionTrace* trace) {
  const auto d = query.cols();
  if (kv.cols() != d) throw Error(prefix + ": query/key width mismatch");
  if (n_heads <= 0 || d % n_heads != 0) throw Error(prefix + ": d_model not divisible by heads");
  if (bias && (bias->hier.rows() != query.rows() || bias->hier.cols() != kv.rows()))
    throw Error(prefix + ": bias index does not match input rows");
  const auto head_dim = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  ag::Var q = linear(p, prefix + ".q", query);
  ag::Var k = linear(p, prefix + ".k", kv);
  ag::Var v = linear(p, prefix + ".v", kv);
  std::vector<ag::Var> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    ag::Var qh = ag::slice_cols(q, h * head_dim, head_dim);
    ag::Var kh = ag::slice_cols(k, h * head_dim, head_dim);
    ag::Var vh = ag::slice_cols(v, h * head_dim, head_dim);
    ag::Var logits = ag::scale(ag::matmul_nt(qh, kh), inv_sqrt);
    if (bias) {
      ag::Var b = ag::add(ag::table_lookup(p.get(bias_prefix + ".hier"), bias->hier, h),
                          ag::table_lookup(p.get(bias_prefix + ".relx"), bias->rel_x, h));
      b = ag::add(b, ag::table_lookup(p.get(bias_prefix + ".rely"), bias->rel_y, h));
      logits = ag::add(logits, b);
    }
    ag::Var probs = ag::softmax_rows(logits);
    if (trace) trace->probs.push_back(probs.value());
    heads.push_back(ag::matmul(probs, vh));
  }
  ag::Var attended = linear(p, prefix + ".o", ag::concat_cols(heads));
  ag::Var x = ag::layer_norm_rows(ag::add(query, attended), p.get(prefix + ".ln1.g"),
                                  p.get(prefix + ".ln1.b"));
  ag::Var ff = linear(p, prefix + ".ffn2", ag::gelu(linear(p, prefix + ".ffn1", x)));
  return ag::layer_norm_rows(ag::add(x, ff), p.get(prefix + ".ln2.g"), p.get(prefix + ".ln2.b"));
}

ag::Var mg_attention_layer(const ParamStore& p, const std::string& prefix, const ag::Var& emb,
                           const BiasIndex& bias, int n_heads, AttentionTrace* trace) {
  return attention_block(p, prefix, emb, emb, n_heads, &bias, prefix, trace);
}

ag::Var self_attention_layer(const ParamStore& p, const std::string& prefix, const ag::Var& emb,
                             int n_heads, AttentionTrace* trace) {
  return attention_block(p, prefix, emb, emb, n_heads, nullptr, {}, trace);
}

ag::Var cross_attention(const ParamStore& p, const std::string& prefix, const ag::Var& query,
                        const ag::Var& kv, int n_heads, AttentionTrace* trace) {
  if (query.rows() != kv.rows()) throw Error(prefix + ": query/kv row count mismatch");
  return attention_block(p, prefix, query, kv, n_heads, nullptr, {}, trace);
}

void init_fusion_params(ParamStore& p, const AttentionConfig& cfg, int d_model,
                        std::mt19937_64& rng) {
  for (const char* modality : {"text", "vis"}) {
    for (int l = 0; l < cfg.n_mg_layers; ++l) {
      const std::string prefix = std::string(modality) + ".mg" + std::to_string(l);
      init_attention_block(p, prefix, d_model, cfg.ffn_mult, rng);
      init_bias_tables(p, prefix, cfg);
    }
    for (int l = 0; l < cfg.n_self_layers; ++l)
      init_attention_block(p, std::string(modality) + ".self" + std::to_string(l), d_model,
                           cfg.ffn_mult, rng);
  }
  for (int l = 0; l < cfg.n_cross_layers; ++l) {
    init_attention_block(p, "cross" + std::to_string(l) + ".tv", d_model, cfg.ffn_mult, rng);
    init_attention_block(p, "cross" + std::to_string(l) + ".vt", d_model, cfg.ffn_mult, rng);
  }
}

FusedFeatures fuse(const ParamStore& p, const AttentionConfig& cfg, const BatchEncoding& enc,
                   AttentionTrace* trace) {
  if (enc.text_emb.rows() != enc.vis_emb.rows() || enc.text_emb.rows() != enc.rows())
    throw Error("fuse: modality row counts differ");
  const BiasIndex bias = compute_bias_index(enc.boxes, cfg);
  auto stack = [&](const std::string& modality, ag::Var x) {
    for (int l = 0; l < cfg.n_mg_layers; ++l)
      x = mg_attention_layer(p, modality + ".mg" + std::to_string(l), x, bias, cfg.n_heads, trace);
    for (int l = 0; l < cfg.n_self_layers; ++l)
      x = self_attention_layer(p, modality + ".self" + std::to_string(l), x, cfg.n_heads, trace);
    return x;
  };
  FusedFeatures out;
  out.f_text = stack("text", enc.text_emb);
  out.f_vision = stack("vis", enc.vis_emb);
  ag::Var t = out.f_text;
  ag::Var v = out.f_vision;
  for (int l = 0; l < cfg.n_cross_layers; ++l) {
    const std::string prefix = "cross" + std::to_string(l);
    ag::Var t_next = cross_attention(p, prefix + ".tv", t, v, cfg.n_heads, trace);
    ag::Var v_next = cross_attention(p, prefix + ".vt", v, t, cfg.n_heads, trace);
    t = t_next;
    v = v_next;
  }
  out.f_tv = t;
  out.f_vt = v;
  out.f = ag::add(t, v);
  return out;
}

ag::Mat region_word_heatmap(const ag::Mat& f, const std::vector<GranularUnit>& units) {
  std::vector<Eigen::Index> regions, words;
  for (const auto& u : units) {
    if (u.granularity == Granularity::kRegion) regions.push_back(u.unit_index);
    else if (u.granularity == Granularity::kWord) words.push_back(u.unit_index);
  }
  ag::Mat h(static_cast<Eigen::Index>(regions.size()), static_cast<Eigen::Index>(words.size()));
  for (std::size_t j = 0; j < regions.size(); ++j)
    for (std::size_t i = 0; i < words.size(); ++i)
      h(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) =
          f.row(regions[j]).dot(f.row(words[i]));
  return h;
}

}  // namespace mgdoc
