#include "mgdoc/encoder.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mgdoc/raster.hpp"

namespace mgdoc {
namespace {

using json = nlohmann::json;

ag::Mat box_matrix(const std::vector<GranularUnit>& units) {
  ag::Mat m(static_cast<Eigen::Index>(units.size()), 4);
  for (std::size_t k = 0; k < units.size(); ++k) {
    const auto& b = units[k].box;
    m.row(static_cast<Eigen::Index>(k)) << b.x0, b.y0, b.x1, b.y1;
  }
  return m;
}

}  // namespace

// ---- Vocab --------------------------------------------------------------

Vocab Vocab::build(const std::vector<Document>& docs, int capacity) {
  std::map<std::string, long> counts;
  for (const auto& d : docs)
    for (const auto& r : d.regions) {
      for (const auto& w : r.words)
        for (auto& t : tokenize(w.text)) ++counts[t];
      if (r.text)
        for (auto& t : tokenize(*r.text)) ++counts[t];
    }
  std::vector<std::pair<std::string, long>> sorted(counts.begin(), counts.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  const int room = std::max(0, capacity - kReserved);
  for (const auto& [tok, _] : sorted) {
    if (static_cast<int>(v.tokens_.size()) >= room) break;
    v.index_.emplace(tok, kReserved + static_cast<int>(v.tokens_.size()));
    v.tokens_.push_back(tok);
  }
  return v;
}

int Vocab::id(const std::string& token) const {
  if (token == kMaskToken) return kMask;
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocab::encode(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& t : tokenize(text)) ids.push_back(id(t));
  return ids;
}

std::string Vocab::to_json() const { return json(tokens_).dump(); }

Vocab Vocab::from_json(const std::string& text) {
  Vocab v;
  v.tokens_ = json::parse(text).get<std::vector<std::string>>();
  for (std::size_t i = 0; i < v.tokens_.size(); ++i)
    v.index_.emplace(v.tokens_[i], kReserved + static_cast<int>(i));
  return v;
}

// ---- External tables ----------------------------------------------------

ExternalEmbeddingTable ExternalEmbeddingTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read embedding table '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw Error(path.string() + ": " + e.what());
  }
  const std::string found = j.value("format", std::string("<missing>"));
  if (found != kFormat)
    throw Error(std::string("embedding table version mismatch: expected ") + kFormat +
                ", found " + found);
  ExternalEmbeddingTable t(j.at("dim").get<int>());
  for (const auto& e : j.at("entries"))
    t.set(e.at("doc").get<std::string>(), e.at("unit").get<int>(),
          e.at("vec").get<std::vector<double>>());
  return t;
}

void ExternalEmbeddingTable::save(const std::filesystem::path& path) const {
  json j;
  j["format"] = kFormat;
  j["dim"] = dim_;
  json entries = json::array();
  for (const auto& [key, vec] : entries_)
    entries.push_back({{"doc", key.first}, {"unit", key.second}, {"vec", vec}});
  j["entries"] = std::move(entries);
  std::ofstream out(path);
  if (!out) throw Error("cannot write embedding table '" + path.string() + "'");
  out << j.dump();
}

void ExternalEmbeddingTable::set(const std::string& doc_id, int unit, std::vector<double> vec) {
  if (static_cast<int>(vec.size()) != dim_)
    throw Error("embedding for (" + doc_id + ", " + std::to_string(unit) + ") has dim " +
                std::to_string(vec.size()) + ", expected " + std::to_string(dim_));
  entries_[{doc_id, unit}] = std::move(vec);
}

const std::vector<double>& ExternalEmbeddingTable::get(const std::string& doc_id, int unit) const {
  auto it = entries_.find({doc_id, unit});
  if (it == entries_.end())
    throw Error("no external embedding for (" + doc_id + ", " + std::to_string(unit) + ")");
  return it->second;
}

int full_unit_index(const Document& doc, const GranularUnit& unit) {
  switch (unit.granularity) {
    case Granularity::kPage: return 0;
    case Granularity::kRegion: return 1 + unit.region_index;
    case Granularity::kWord: {
      int offset = 1 + static_cast<int>(doc.regions.size());
      for (int j = 0; j < unit.region_index; ++j)
        offset += static_cast<int>(doc.regions[static_cast<std::size_t>(j)].words.size());
      return offset + unit.word_index;
    }
  }
  return -1;
}

// ---- Encoder ------------------------------------------------------------

void Encoder::init_params(ParamStore& p, std::mt19937_64& rng) const {
  const int d = cfg_.d_model;
  if (cfg_.text_backbone == TextBackbone::kBagOfTokens) {
    if (cfg_.vocab_size < Vocab::kReserved) throw Error("vocab_size too small");
    p.add_uniform("enc.text.tok", cfg_.vocab_size, d, d, rng);
  } else {
    p.add_uniform("enc.text.ext_mask", 1, d, d, rng);
  }
  p.add_uniform("enc.text.fc.W", 4, d, 4, rng);
  p.add_uniform("enc.text.fc.b", 1, d, 4, rng);
  p.add_uniform("enc.text.type", 1, d, d, rng);

  if (cfg_.vision_backbone == VisionBackbone::kTinyConv) {
    if (cfg_.image_size % 4 != 0 || cfg_.feature_map_stride != 4)
      throw Error("TINY_CONV needs image_size divisible by 4 and feature_map_stride 4");
    const int c1 = cfg_.conv_channels1;
    const int c2 = cfg_.conv_channels2;
    p.add_uniform("enc.vis.conv1.W", 9, c1, 9, rng);
    p.add_uniform("enc.vis.conv1.b", 1, c1, 9, rng);
    p.add_uniform("enc.vis.conv2.W", 9 * c1, c2, 9 * c1, rng);
    p.add_uniform("enc.vis.conv2.b", 1, c2, 9 * c1, rng);
    const int roi_dim = cfg_.roi_grid_h * cfg_.roi_grid_w * c2;
    p.add_uniform("enc.vis.proj.W", roi_dim, d, roi_dim, rng);
    p.add_uniform("enc.vis.proj.b", 1, d, roi_dim, rng);
  }
  p.add_uniform("enc.vis.fc.W", 4, d, 4, rng);
  p.add_uniform("enc.vis.fc.b", 1, d, 4, rng);
  p.add_uniform("enc.vis.type", 1, d, d, rng);

  if (cfg_.freeze_backbones) {
    p.set_trainable("enc.text.tok", false);
    p.set_trainable("enc.vis.conv", false);
  }
}

void Encoder::attach_external(const ExternalEmbeddingTable* text,
                              const ExternalEmbeddingTable* vision) {
  ext_text_ = text;
  ext_vision_ = vision;
}

ag::Var Encoder::spatial(const ParamStore& p, const std::string& prefix,
                         const std::vector<GranularUnit>& units) const {
  ag::Var boxes = ag::constant(box_matrix(units));
  return ag::add_rowvec(ag::matmul(boxes, p.get(prefix + ".fc.W")), p.get(prefix + ".fc.b"));
}

ag::Var Encoder::encode_text(const ParamStore& p, const Document& doc,
                             const std::vector<GranularUnit>& units,
                             const std::set<int>& masked_rows) const {
  const auto n = static_cast<Eigen::Index>(units.size());
  ag::Var content;
  if (cfg_.text_backbone == TextBackbone::kBagOfTokens) {
    if (!vocab_) throw Error("BAG_OF_TOKENS encoder needs a vocabulary");
    std::vector<std::vector<int>> segments(units.size());
    for (std::size_t k = 0; k < units.size(); ++k) {
      if (masked_rows.count(static_cast<int>(k))) {
        segments[k] = {Vocab::kMask};
        continue;
      }
      segments[k] = vocab_->encode(units[k].text);
      for (int& t : segments[k])
        if (t >= cfg_.vocab_size) t = Vocab::kUnk;
      if (segments[k].empty()) segments[k] = {Vocab::kEmpty};
    }
    content = ag::segment_mean(p.get("enc.text.tok"), segments);
  } else {
    if (!ext_text_) throw Error("EXTERNAL_TABLE text backbone without a table");
    ag::Mat ext(n, cfg_.d_model);
    ag::Mat keep = ag::Mat::Ones(n, cfg_.d_model);
    ag::Mat mask_sel = ag::Mat::Zero(n, 1);
    for (std::size_t k = 0; k < units.size(); ++k) {
      const auto row = static_cast<Eigen::Index>(k);
      if (masked_rows.count(static_cast<int>(k))) {
        ext.row(row).setZero();
        mask_sel(row, 0) = 1.0;
        continue;
      }
      const auto& v = ext_text_->get(doc.id, full_unit_index(doc, units[k]));
      if (static_cast<int>(v.size()) != cfg_.d_model) throw Error("external text dim != d_model");
      ext.row(row) = Eigen::Map<const ag::RowVec>(v.data(), cfg_.d_model);
    }
    content = ag::add(ag::constant(ext),
                      ag::matmul(ag::constant(mask_sel), p.get("enc.text.ext_mask")));
  }
  ag::Var out = ag::add(content, spatial(p, "enc.text", units));
  return ag::add_rowvec(out, p.get("enc.text.type"));
}

ag::Var Encoder::encode_text(const ParamStore& p, const Document& doc, const GranularUnit& unit,
                             bool masked) const {
  std::vector<GranularUnit> one{unit};
  return encode_text(p, doc, one, masked ? std::set<int>{0} : std::set<int>{});
}

ag::Var Encoder::feature_map(const ParamStore& p, const Raster& image) const {
  const int s = cfg_.image_size;
  ag::Mat gray = to_gray_square(image, s);
  ag::Var x = ag::constant(Eigen::Map<ag::Mat>(gray.data(), static_cast<Eigen::Index>(s) * s, 1));
  x = ag::add_rowvec(ag::matmul(ag::im2col3x3(x, s, s), p.get("enc.vis.conv1.W")),
                     p.get("enc.vis.conv1.b"));
  x = ag::avg_pool2(ag::gelu(x), s, s);
  const int h = s / 2;
  x = ag::add_rowvec(ag::matmul(ag::im2col3x3(x, h, h), p.get("enc.vis.conv2.W")),
                     p.get("enc.vis.conv2.b"));
  return ag::avg_pool2(ag::gelu(x), h, h);
}

ag::Var Encoder::roi_features(const ag::Var& fmap, std::span<const BoundingBox> boxes) const {
  const int side = map_side();
  return ag::roi_pool(fmap, side, side, boxes, cfg_.roi_grid_h, cfg_.roi_grid_w);
}

ag::Var Encoder::encode_vision(const ParamStore& p, const Document& doc,
                               const std::vector<GranularUnit>& units) const {
  const auto n = static_cast<Eigen::Index>(units.size());
  ag::Var content;
  if (cfg_.vision_backbone == VisionBackbone::kTinyConv) {
    if (!doc.image) throw Error("document '" + doc.id + "' has no image for the vision backbone");
    std::vector<BoundingBox> boxes;
    boxes.reserve(units.size());
    for (const auto& u : units) boxes.push_back(u.box);
    ag::Var pooled = roi_features(feature_map(p, *doc.image), boxes);
    content = ag::add_rowvec(ag::matmul(pooled, p.get("enc.vis.proj.W")), p.get("enc.vis.proj.b"));
  } else {
    if (!ext_vision_) throw Error("EXTERNAL_TABLE vision backbone without a table");
    ag::Mat ext(n, cfg_.d_model);
    for (std::size_t k = 0; k < units.size(); ++k) {
      const auto& v = ext_vision_->get(doc.id, full_unit_index(doc, units[k]));
      if (static_cast<int>(v.size()) != cfg_.d_model) throw Error("external vision dim != d_model");
      ext.row(static_cast<Eigen::Index>(k)) = Eigen::Map<const ag::RowVec>(v.data(), cfg_.d_model);
    }
    content = ag::constant(std::move(ext));
  }
  ag::Var out = ag::add(content, spatial(p, "enc.vis", units));
  return ag::add_rowvec(out, p.get("enc.vis.type"));
}

BatchEncoding Encoder::encode_document(const ParamStore& p, const Document& doc,
                                       const std::vector<GranularUnit>& units,
                                       const MaskPlan* masking) const {
  BatchEncoding enc;
  enc.units = units;
  for (const auto& u : units) {
    enc.boxes.push_back(u.box);
    enc.granularity.push_back(u.granularity);
    enc.parent_region.push_back(u.granularity == Granularity::kWord ? u.parent_row : -1);
  }
  const auto n = static_cast<int>(units.size());
  if (masking) {
    for (int r : masking->text_rows)
      if (r < 0 || r >= n) throw Error("mask plan text row out of range");
    for (int r : masking->vision_rows)
      if (r < 0 || r >= n) throw Error("mask plan vision row out of range");
  }
  const bool text_masked = masking && !masking->text_rows.empty();
  const bool vis_masked = masking && !masking->vision_rows.empty();

  enc.text_emb = encode_text(p, doc, units, masking ? masking->text_rows : std::set<int>{});
  ag::Var vis = encode_vision(p, doc, units);
  if (masking) {
    {
      ag::NoGradGuard no_grad;
      enc.text_target = text_masked ? encode_text(p, doc, units).value() : enc.text_emb.value();
    }
    enc.vis_target = vis.value();
  }
  if (vis_masked) {
    std::vector<int> rows(masking->vision_rows.begin(), masking->vision_rows.end());
    vis = ag::zero_rows(vis, rows);
  }
  enc.vis_emb = vis;
  return enc;
}

std::string to_string(TextBackbone b) {
  return b == TextBackbone::kBagOfTokens ? "BAG_OF_TOKENS" : "EXTERNAL_TABLE";
}
std::string to_string(VisionBackbone b) {
  return b == VisionBackbone::kTinyConv ? "TINY_CONV" : "EXTERNAL_TABLE";
}
TextBackbone parse_text_backbone(const std::string& s) {
  if (s == "BAG_OF_TOKENS") return TextBackbone::kBagOfTokens;
  if (s == "EXTERNAL_TABLE") return TextBackbone::kExternalTable;
  throw Error("unknown text_backbone '" + s + "'");
}
VisionBackbone parse_vision_backbone(const std::string& s) {
  if (s == "TINY_CONV") return VisionBackbone::kTinyConv;
  if (s == "EXTERNAL_TABLE") return VisionBackbone::kExternalTable;
  throw Error("unknown vision_backbone '" + s + "'");
}

}  // namespace mgdoc
