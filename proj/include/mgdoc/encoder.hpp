#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "mgdoc/autograd.hpp"
#include "mgdoc/docmodel.hpp"
#include "mgdoc/params.hpp"

namespace mgdoc {

enum class TextBackbone { kBagOfTokens, kExternalTable };
enum class VisionBackbone { kTinyConv, kExternalTable };

struct EncoderConfig {
  int d_model = 64;
  TextBackbone text_backbone = TextBackbone::kBagOfTokens;
  VisionBackbone vision_backbone = VisionBackbone::kTinyConv;
  int roi_grid_h = 2;
  int roi_grid_w = 2;
  int vocab_size = 512;
  // Side of the square grayscale input to the conv backbone.
  int image_size = 64;
  int conv_channels1 = 8;
  int conv_channels2 = 16;
  // Two 2x2 pools; the feature map is image_size / 4 on a side.
  int feature_map_stride = 4;
  bool freeze_backbones = false;
};

// Whitespace/lowercase vocabulary with reserved rows for UNK, MASK and EMPTY.
class Vocab {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kMask = 1;
  static constexpr int kEmpty = 2;
  static constexpr int kReserved = 3;
  static constexpr const char* kMaskToken = "[MASK]";

  Vocab() = default;
  // Most frequent tokens first (ties lexicographic), capped at `capacity` rows.
  static Vocab build(const std::vector<Document>& docs, int capacity);

  int id(const std::string& token) const;
  std::vector<int> encode(const std::string& text) const;
  int size() const { return kReserved + static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::string to_json() const;
  static Vocab from_json(const std::string& text);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Per-unit vectors produced outside this library, keyed by (doc id, full unit
// index), where the full index counts page, regions, then words.
class ExternalEmbeddingTable {
 public:
  static constexpr const char* kFormat = "mgdoc-emb/1";

  explicit ExternalEmbeddingTable(int dim = 0) : dim_(dim) {}
  static ExternalEmbeddingTable load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int dim() const { return dim_; }
  void set(const std::string& doc_id, int unit, std::vector<double> vec);
  const std::vector<double>& get(const std::string& doc_id, int unit) const;
  bool empty() const { return entries_.empty(); }

 private:
  int dim_ = 0;
  std::map<std::pair<std::string, int>, std::vector<double>> entries_;
};

// Rows to mask per modality; rows index the serialized unit sequence.
struct MaskPlan {
  std::set<int> text_rows;
  std::set<int> vision_rows;
  std::uint64_t rng_seed = 0;
};

struct BatchEncoding {
  ag::Var text_emb;
  ag::Var vis_emb;
  std::vector<GranularUnit> units;
  std::vector<BoundingBox> boxes;
  std::vector<Granularity> granularity;
  std::vector<int> parent_region;  // -1 for page and regions
  // Clean (unmasked) embedding values, filled when a mask plan was applied.
  ag::Mat text_target;
  ag::Mat vis_target;

  Eigen::Index rows() const { return static_cast<Eigen::Index>(units.size()); }
};

int full_unit_index(const Document& doc, const GranularUnit& unit);

class Encoder {
 public:
  Encoder(EncoderConfig cfg, const Vocab* vocab) : cfg_(cfg), vocab_(vocab) {}

  const EncoderConfig& config() const { return cfg_; }

  void init_params(ParamStore& params, std::mt19937_64& rng) const;
  void attach_external(const ExternalEmbeddingTable* text, const ExternalEmbeddingTable* vision);

  // e^T rows for units; rows in `masked_rows` encode the MASK sentinel.
  ag::Var encode_text(const ParamStore& params, const Document& doc,
                      const std::vector<GranularUnit>& units,
                      const std::set<int>& masked_rows = {}) const;
  // Convenience single-unit form.
  ag::Var encode_text(const ParamStore& params, const Document& doc,
                      const GranularUnit& unit, bool masked = false) const;

  // Backbone feature map, (map_side^2) x conv_channels2.
  ag::Var feature_map(const ParamStore& params, const Raster& image) const;
  int map_side() const { return cfg_.image_size / cfg_.feature_map_stride; }

  // e^V rows for units (ROI pooled feature + FC(box) + type).
  ag::Var encode_vision(const ParamStore& params, const Document& doc,
                        const std::vector<GranularUnit>& units) const;
  // ROI features for boxes on a precomputed feature map, before projection.
  ag::Var roi_features(const ag::Var& fmap, std::span<const BoundingBox> boxes) const;

  BatchEncoding encode_document(const ParamStore& params, const Document& doc,
                                const std::vector<GranularUnit>& units,
                                const MaskPlan* masking = nullptr) const;

  ag::Var spatial(const ParamStore& params, const std::string& prefix,
                  const std::vector<GranularUnit>& units) const;

 private:
  EncoderConfig cfg_;
  const Vocab* vocab_ = nullptr;
  const ExternalEmbeddingTable* ext_text_ = nullptr;
  const ExternalEmbeddingTable* ext_vision_ = nullptr;
};

std::string to_string(TextBackbone b);
std::string to_string(VisionBackbone b);
TextBackbone parse_text_backbone(const std::string& s);
VisionBackbone parse_vision_backbone(const std::string& s);

}  // namespace mgdoc
