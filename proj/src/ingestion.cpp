#include "mgdoc/ingestion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "mgdoc/raster.hpp"

namespace mgdoc {
namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(what + ": " + e.what());
  }
}

ojson pixel_value(double v) {
  const double r = std::round(v);
  if (std::abs(v - r) < 1e-9) return static_cast<long long>(r);
  return v;
}

ojson box_to_pixels(const BoundingBox& b, int width, int height) {
  return ojson::array({pixel_value(b.x0 * width), pixel_value(b.y0 * height),
                       pixel_value(b.x1 * width), pixel_value(b.y1 * height)});
}

std::array<double, 4> read_pixel_box(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4) throw Error(where + ": box must have 4 numbers");
  std::array<double, 4> out{};
  for (std::size_t k = 0; k < 4; ++k) {
    if (!j[k].is_number()) throw Error(where + ": box must have 4 numbers");
    out[k] = j[k].get<double>();
  }
  return out;
}

BoundingBox normalize_box(const std::array<double, 4>& px, int width, int height,
                          const std::string& where) {
  if (px[0] < 0 || px[1] < 0 || px[0] > px[2] || px[1] > px[3] || px[2] > width ||
      px[3] > height)
    throw Error(where + ": pixel box [" + std::to_string(px[0]) + "," + std::to_string(px[1]) +
                "," + std::to_string(px[2]) + "," + std::to_string(px[3]) +
                "] outside page " + std::to_string(width) + "x" + std::to_string(height));
  return {px[0] / width, px[1] / height, px[2] / width, px[3] / height};
}

// Clamps into the page; inverted or non-numeric boxes are malformed.
std::optional<BoundingBox> lenient_box(const json& j, int width, int height) {
  if (!j.is_array() || j.size() != 4) return std::nullopt;
  std::array<double, 4> px{};
  for (std::size_t k = 0; k < 4; ++k) {
    if (!j[k].is_number()) return std::nullopt;
    px[k] = j[k].get<double>();
  }
  if (px[0] > px[2] || px[1] > px[3]) return std::nullopt;
  px[0] = std::clamp(px[0], 0.0, static_cast<double>(width));
  px[2] = std::clamp(px[2], 0.0, static_cast<double>(width));
  px[1] = std::clamp(px[1], 0.0, static_cast<double>(height));
  px[3] = std::clamp(px[3], 0.0, static_cast<double>(height));
  return BoundingBox{px[0] / width, px[1] / height, px[2] / width, px[3] / height};
}

// Axis-aligned pixel box from either [x0,y0,x1,y1] or a list of [x,y] points.
std::optional<std::array<double, 4>> flexible_pixel_box(const json& j) {
  if (!j.is_array() || j.empty()) return std::nullopt;
  if (j.size() == 4 && j[0].is_number()) {
    std::array<double, 4> b{};
    for (std::size_t k = 0; k < 4; ++k) b[k] = j[k].get<double>();
    return b;
  }
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  for (const auto& p : j) {
    if (!p.is_array() || p.size() != 2) return std::nullopt;
    x0 = std::min(x0, p[0].get<double>());
    y0 = std::min(y0, p[1].get<double>());
    x1 = std::max(x1, p[0].get<double>());
    y1 = std::max(y1, p[1].get<double>());
  }
  return std::array<double, 4>{x0, y0, x1, y1};
}

BoundingBox clamp_normalize(std::array<double, 4> px, int width, int height) {
  px[0] = std::clamp(px[0], 0.0, static_cast<double>(width));
  px[2] = std::clamp(px[2], px[0], static_cast<double>(width));
  px[1] = std::clamp(px[1], 0.0, static_cast<double>(height));
  px[3] = std::clamp(px[3], px[1], static_cast<double>(height));
  return {px[0] / width, px[1] / height, px[2] / width, px[3] / height};
}

void finalize(Document& doc) {
  canonicalize(doc);
  validate(doc);
}

BoundingBox region_box_of(const std::vector<Word>& words) {
  std::vector<BoundingBox> boxes;
  boxes.reserve(words.size());
  for (const auto& w : words) boxes.push_back(w.box);
  return enclosing_box(boxes);
}

}  // namespace

// ---- canonical format ---------------------------------------------------

std::string to_canonical_json(const Document& doc, int indent) {
  ojson j;
  j["schema"] = kDocSchema;
  j["id"] = doc.id;
  j["width"] = doc.width;
  j["height"] = doc.height;
  if (doc.image_path) j["image_path"] = *doc.image_path;
  if (doc.page_label) j["page_label"] = *doc.page_label;
  ojson regions = ojson::array();
  for (const auto& r : doc.regions) {
    ojson jr;
    jr["box"] = box_to_pixels(r.box, doc.width, doc.height);
    if (r.label) jr["label"] = *r.label;
    if (r.text) jr["text"] = *r.text;
    ojson words = ojson::array();
    for (const auto& w : r.words) {
      ojson jw;
      jw["text"] = w.text;
      jw["box"] = box_to_pixels(w.box, doc.width, doc.height);
      words.push_back(std::move(jw));
    }
    jr["words"] = std::move(words);
    regions.push_back(std::move(jr));
  }
  j["regions"] = std::move(regions);
  return j.dump(indent);
}

Document from_canonical_json(const std::string& text, const fs::path& base_dir) {
  const json j = parse_json(text, "canonical document");
  if (!j.is_object()) throw Error("canonical document: expected an object");
  const std::string found = j.value("schema", std::string("<missing>"));
  if (found != kDocSchema)
    throw Error(std::string("schema version mismatch: expected ") + kDocSchema + ", found " +
                found);
  for (const char* key : {"id", "width", "height", "regions"})
    if (!j.contains(key)) throw Error(std::string("canonical document: missing '") + key + "'");

  Document doc;
  doc.id = j.at("id").get<std::string>();
  doc.width = j.at("width").get<int>();
  doc.height = j.at("height").get<int>();
  if (doc.width <= 0 || doc.height <= 0) throw Error("document '" + doc.id + "': bad page size");
  if (j.contains("image_path")) doc.image_path = j.at("image_path").get<std::string>();
  if (j.contains("page_label")) doc.page_label = j.at("page_label").get<std::string>();
  const auto& regions = j.at("regions");
  if (!regions.is_array()) throw Error("canonical document: 'regions' must be an array");
  int word_index = 0;
  for (std::size_t ri = 0; ri < regions.size(); ++ri) {
    const auto& jr = regions[ri];
    const std::string where = "document '" + doc.id + "' region " + std::to_string(ri);
    if (!jr.contains("box") || !jr.contains("words")) throw Error(where + ": missing box/words");
    Region r;
    r.id = static_cast<int>(ri);
    r.box = normalize_box(read_pixel_box(jr.at("box"), where), doc.width, doc.height, where);
    if (jr.contains("label")) r.label = jr.at("label").get<std::string>();
    if (jr.contains("text")) r.text = jr.at("text").get<std::string>();
    for (const auto& jw : jr.at("words")) {
      Word w;
      w.text = jw.at("text").get<std::string>();
      w.box = normalize_box(read_pixel_box(jw.at("box"), where), doc.width, doc.height, where);
      w.index = word_index++;
      r.words.push_back(std::move(w));
    }
    doc.regions.push_back(std::move(r));
  }
  validate(doc);
  (void)base_dir;
  return doc;
}

void save_canonical(const Document& doc, const fs::path& path) {
  write_file(path, to_canonical_json(doc, 1) + "\n");
}

Document load_canonical(const fs::path& path, bool load_image) {
  Document doc = from_canonical_json(read_file(path), path.parent_path());
  if (load_image && doc.image_path) {
    fs::path img = *doc.image_path;
    if (img.is_relative()) img = path.parent_path() / img;
    if (fs::exists(img)) doc.image = std::make_shared<const Raster>(read_raster(img));
  }
  return doc;
}

void save_corpus(const std::vector<Document>& docs, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& d : docs) {
    Document copy = d;
    if (d.image) {
      const std::string name = d.id + ".png";
      write_png(*d.image, dir / name);
      copy.image_path = name;
    }
    save_canonical(copy, dir / (d.id + ".json"));
  }
}

std::vector<Document> load_corpus(const fs::path& dir, bool load_images) {
  if (!fs::is_directory(dir)) throw Error("corpus directory '" + dir.string() + "' not found");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Document> docs;
  docs.reserve(files.size());
  for (const auto& f : files) docs.push_back(load_canonical(f, load_images));
  return docs;
}

// ---- FUNSD / CORD / RVL-CDIP / OCR ---------------------------------------

Document load_funsd(const fs::path& annotation, int width, int height, LoadStats* stats) {
  const json j = parse_json(read_file(annotation), annotation.string());
  if (!j.contains("form") || !j.at("form").is_array())
    throw Error(annotation.string() + ": missing 'form' array");
  Document doc;
  doc.id = annotation.stem().string();
  doc.width = width;
  doc.height = height;
  LoadStats local;
  for (const auto& entity : j.at("form")) {
    const std::string eid = entity.contains("id") ? entity.at("id").dump() : "?";
    Region r;
    if (entity.contains("label")) r.label = entity.at("label").get<std::string>();
    for (const auto& jw : entity.value("words", json::array())) {
      const std::string text = jw.value("text", std::string());
      auto box = lenient_box(jw.value("box", json()), width, height);
      if (!box) throw Error(annotation.string() + ": malformed box in entity " + eid);
      if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
        ++local.dropped_words;
        continue;
      }
      r.words.push_back(Word{text, *box, 0});
    }
    if (r.words.empty()) {
      ++local.dropped_entities;
      continue;
    }
    r.box = region_box_of(r.words);
    doc.regions.push_back(std::move(r));
  }
  if (stats) {
    stats->dropped_entities += local.dropped_entities;
    stats->dropped_words += local.dropped_words;
  }
  finalize(doc);
  return doc;
}

Document load_funsd(const fs::path& annotation, const fs::path& image, LoadStats* stats) {
  const Raster raster = read_raster(image);
  Document doc = load_funsd(annotation, raster.width, raster.height, stats);
  doc.image_path = fs::absolute(image).string();
  doc.image = std::make_shared<const Raster>(raster);
  return doc;
}

std::vector<Document> load_funsd_split(const fs::path& split_dir, LoadStats* stats) {
  const fs::path ann_dir = split_dir / "annotations";
  const fs::path img_dir = split_dir / "images";
  if (!fs::is_directory(ann_dir)) throw Error("'" + ann_dir.string() + "' not found");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(ann_dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Document> docs;
  for (const auto& f : files) {
    fs::path img = img_dir / (f.stem().string() + ".png");
    if (!fs::exists(img)) throw Error("missing image for '" + f.string() + "'");
    docs.push_back(load_funsd(f, img, stats));
  }
  return docs;
}

Document load_cord(const fs::path& path, LoadStats* stats) {
  const json j = parse_json(read_file(path), path.string());
  const auto& size = j.at("meta").at("image_size");
  Document doc;
  doc.id = path.stem().string();
  doc.width = size.at("width").get<int>();
  doc.height = size.at("height").get<int>();
  LoadStats local;
  int line_no = 0;
  for (const auto& line : j.at("valid_line")) {
    Region r;
    r.label = line.value("category", std::string("other"));
    for (const auto& jw : line.value("words", json::array())) {
      const std::string text = jw.value("text", std::string());
      if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
        ++local.dropped_words;
        continue;
      }
      const auto& q = jw.at("quad");
      std::array<double, 4> px{
          std::min(q.at("x1").get<double>(), q.at("x4").get<double>()),
          std::min(q.at("y1").get<double>(), q.at("y2").get<double>()),
          std::max(q.at("x2").get<double>(), q.at("x3").get<double>()),
          std::max(q.at("y3").get<double>(), q.at("y4").get<double>())};
      r.words.push_back(Word{text, clamp_normalize(px, doc.width, doc.height), 0});
    }
    ++line_no;
    if (r.words.empty()) {
      ++local.dropped_entities;
      continue;
    }
    r.box = region_box_of(r.words);
    doc.regions.push_back(std::move(r));
  }
  if (stats) {
    stats->dropped_entities += local.dropped_entities;
    stats->dropped_words += local.dropped_words;
  }
  finalize(doc);
  return doc;
}

std::vector<RvlCdipEntry> load_rvlcdip_index(const fs::path& index) {
  std::istringstream in(read_file(index));
  std::vector<RvlCdipEntry> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string rel;
    int label = -1;
    if (!(ls >> rel >> label) || label < 0 || label > 15)
      throw Error(index.string() + ":" + std::to_string(line_no) + ": expected '<path> <0-15>'");
    out.push_back({index.parent_path() / rel, label});
  }
  return out;
}

Document load_ocr(const fs::path& path, double gap_x, double gap_y) {
  const json j = parse_json(read_file(path), path.string());
  Document doc;
  doc.id = j.value("id", path.stem().string());
  doc.width = j.at("width").get<int>();
  doc.height = j.at("height").get<int>();
  if (j.contains("image_path")) doc.image_path = j.at("image_path").get<std::string>();
  if (j.contains("page_label")) doc.page_label = j.at("page_label").get<std::string>();

  std::vector<Word> words;
  for (const auto& jw : j.at("words")) {
    const std::string text = jw.at("text").get<std::string>();
    auto px = flexible_pixel_box(jw.at("box"));
    if (!px) throw Error(path.string() + ": malformed word box");
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    words.push_back(Word{text, clamp_normalize(*px, doc.width, doc.height), 0});
  }
  std::sort(words.begin(), words.end(), [](const Word& a, const Word& b) {
    return reading_order_key(a.box) < reading_order_key(b.box);
  });

  std::vector<Region> paragraphs;
  for (const auto& jp : j.value("paragraphs", json::array())) {
    auto px = flexible_pixel_box(jp.at("box"));
    if (!px) throw Error(path.string() + ": malformed paragraph box");
    Region r;
    r.box = clamp_normalize(*px, doc.width, doc.height);
    if (jp.contains("text")) r.text = jp.at("text").get<std::string>();
    paragraphs.push_back(std::move(r));
  }
  std::vector<Word> leftover;
  for (auto& w : words) {
    Region* home = nullptr;
    for (auto& p : paragraphs) {
      if (contains(p.box, BoundingBox{w.box.center_x(), w.box.center_y(), w.box.center_x(),
                                      w.box.center_y()},
                   0.0)) {
        home = &p;
        break;
      }
    }
    if (home) home->words.push_back(std::move(w));
    else leftover.push_back(std::move(w));
  }
  for (auto& p : paragraphs) {
    if (p.words.empty()) continue;
    std::vector<BoundingBox> boxes{p.box};
    for (const auto& w : p.words) boxes.push_back(w.box);
    p.box = enclosing_box(boxes);
    doc.regions.push_back(std::move(p));
  }
  if (!leftover.empty()) {
    for (auto& r : group_words_into_regions(leftover, gap_x, gap_y))
      doc.regions.push_back(std::move(r));
  }
  finalize(doc);
  return doc;
}

std::vector<Region> group_words_into_regions(const std::vector<Word>& words, double gap_x,
                                             double gap_y) {
  std::vector<Region> regions;
  for (const auto& w : words) {
    Region* target = nullptr;
    // Most recent region first; older regions stay open so that interleaved
    // columns in row-band order still land in their own paragraph.
    for (auto it = regions.rbegin(); it != regions.rend(); ++it) {
      const Word& last = it->words.back();
      const double dy = std::abs(w.box.center_y() - last.box.center_y());
      const double dx = w.box.x0 - last.box.x1;
      if (dy <= gap_y && dx <= gap_x && w.box.x0 >= it->box.x0 - gap_x) {
        target = &*it;
        break;
      }
    }
    if (!target) {
      regions.emplace_back();
      target = &regions.back();
      target->box = w.box;
    }
    target->words.push_back(w);
    const BoundingBox pair[2] = {target->box, w.box};
    target->box = enclosing_box(pair);
  }
  for (std::size_t i = 0; i < regions.size(); ++i) regions[i].id = static_cast<int>(i);
  return regions;
}

// ---- synthetic corpora --------------------------------------------------

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  // splitmix64 over the pair
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

std::vector<std::string> builtin_vocab(const std::string& category) {
  if (category == "question") {
    return {"name",    "date",     "address", "phone",   "total",     "amount",  "account",
            "number",  "signature", "title",  "company", "city",      "state",   "zip",
            "email",   "fax",      "reference", "subject", "department", "code",  "to",
            "from",    "issued",   "received", "due",    "balance",   "quantity", "price",
            "contact", "approved", "client",  "project", "period",    "payee",   "brand",
            "remarks", "status",   "type",    "region",  "office"};
  }
  if (category == "answer") {
    std::vector<std::string> out;
    for (int i = 0; i < 24; ++i) out.push_back(std::to_string(1000 + 373 * i % 9000));
    for (int i = 0; i < 16; ++i)
      out.push_back(std::to_string(3 + 7 * i) + "." + std::to_string(10 + (13 * i) % 90));
    for (int i = 0; i < 12; ++i)
      out.push_back(std::to_string(1 + i % 12) + "/" + std::to_string(1 + (5 * i) % 28) + "/" +
                    std::to_string(1990 + (7 * i) % 30));
    for (const char* s : {"smith", "jones", "acme", "yes", "no", "paid", "n/a", "approved"})
      out.emplace_back(s);
    return out;
  }
  if (category == "header") {
    return {"invoice",  "report",      "application", "statement",    "form",
            "registration", "summary", "confidential", "memorandum", "agreement",
            "receipt",  "order",       "request",     "annual",       "quarterly"};
  }
  if (category == "filler") {
    return {"the", "of", "and", "for", "in", "with", "on", "by", "per", "a", "at", "or", "as"};
  }
  throw Error("unknown vocabulary category '" + category + "'");
}

struct Generator {
  const SyntheticCorpusSpec& spec;
  std::mt19937_64 rng;
  std::map<std::string, std::vector<std::string>> vocab;

  Generator(const SyntheticCorpusSpec& s, std::uint64_t seed) : spec(s), rng(seed) {
    for (const char* c : {"question", "answer", "header", "filler"}) {
      auto it = spec.vocab.find(c);
      vocab[c] = (it != spec.vocab.end() && !it->second.empty()) ? it->second : builtin_vocab(c);
    }
  }

  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }
  bool bernoulli(double p) { return uniform() < p; }

  const std::string& pick(const std::string& category) {
    const auto& list = vocab.at(category);
    return list[static_cast<std::size_t>(uniform_int(0, static_cast<int>(list.size()) - 1))];
  }

  std::string token_for(const std::string& category) {
    if (bernoulli(spec.token_fidelity)) return pick(category);
    return pick("filler");
  }

  // Lays words out left-to-right inside the pixel slot, wrapping lines.
  Region layout_region(const std::string& category, int n_words, int sx0, int sy0, int sx1,
                       int sy1, int width, int height) {
    Region r;
    const int word_h = uniform_int(11, 14);
    const int pitch = word_h + 6;
    int x = sx0 + uniform_int(0, std::max(0, (sx1 - sx0) / 12));
    const int left = x;
    int y = sy0 + uniform_int(0, std::max(0, (sy1 - sy0) / 6));
    for (int k = 0; k < n_words; ++k) {
      std::string tok = token_for(category);
      const int w = std::max(10, 7 * static_cast<int>(tok.size()) + 4);
      if (x + w > sx1 && x > left) {
        x = left;
        y += pitch;
      }
      if (y + word_h > sy1) break;
      const int x1 = std::min(x + w, sx1);
      r.words.push_back(Word{std::move(tok),
                             BoundingBox{static_cast<double>(x) / width,
                                         static_cast<double>(y) / height,
                                         static_cast<double>(x1) / width,
                                         static_cast<double>(y + word_h) / height},
                             0});
      x = x1 + uniform_int(4, 8);
    }
    if (r.words.empty()) {
      // Slot too small for even one word: place a single short token at the origin.
      const std::string& tok = pick(category);
      const int x1 = std::min(sx0 + 10, sx1);
      const int y1 = std::min(sy0 + word_h, sy1);
      r.words.push_back(Word{tok,
                             BoundingBox{static_cast<double>(sx0) / width,
                                         static_cast<double>(sy0) / height,
                                         static_cast<double>(x1) / width,
                                         static_cast<double>(y1) / height},
                             0});
    }
    r.box = region_box_of(r.words);
    return r;
  }
};

int texture_of(const std::string& label) {
  if (label == "question") return 0;
  if (label == "answer") return 1;
  if (label == "header") return 2;
  return 3;
}

std::uint8_t texture_pixel(int texture, int x, int y) {
  switch (texture) {
    case 0: return (y % 3 == 0) ? 160 : 235;
    case 1: return ((x + y) % 2 == 0) ? 140 : 230;
    case 2: return 120;
    default: return (x % 3 == 0) ? 170 : 235;
  }
}

Raster render(const Document& doc, const std::vector<int>& textures, int side) {
  Raster img;
  img.width = side;
  img.height = side;
  img.channels = 1;
  img.pixels.assign(static_cast<std::size_t>(side) * side, 255);
  auto to_px = [side](double v) { return std::clamp(static_cast<int>(std::floor(v * side)), 0, side - 1); };
  for (std::size_t j = 0; j < doc.regions.size(); ++j) {
    const auto& r = doc.regions[j];
    for (int y = to_px(r.box.y0); y <= to_px(r.box.y1); ++y)
      for (int x = to_px(r.box.x0); x <= to_px(r.box.x1); ++x)
        img.pixels[static_cast<std::size_t>(y) * side + x] = texture_pixel(textures[j], x, y);
    for (const auto& w : r.words) {
      const int ym = to_px(w.box.center_y());
      for (int x = to_px(w.box.x0); x <= to_px(w.box.x1); ++x)
        img.pixels[static_cast<std::size_t>(ym) * side + x] = 30;
    }
  }
  return img;
}

void generate_form(Generator& g, Document& doc, std::vector<int>& textures) {
  const auto& spec = g.spec;
  const int margin_x = spec.page_width / 20;
  const int margin_y = spec.page_height / 20;
  const int slot_w = (spec.page_width - 2 * margin_x) / spec.grid_cols;
  const int slot_h = (spec.page_height - 2 * margin_y) / spec.grid_rows;
  auto add = [&](const std::string& label, int c0, int c1, int row) {
    const int n = g.uniform_int(spec.words_min, spec.words_max);
    Region r = g.layout_region(label, n, margin_x + c0 * slot_w + 4, margin_y + row * slot_h + 4,
                               margin_x + c1 * slot_w - 4, margin_y + (row + 1) * slot_h - 4,
                               spec.page_width, spec.page_height);
    r.label = label;
    doc.regions.push_back(std::move(r));
    const int tex = g.bernoulli(spec.texture_fidelity) ? texture_of(label) : g.uniform_int(0, 2);
    textures.push_back(tex);
  };
  int row = 0;
  if (g.bernoulli(spec.header_prob)) {
    add("header", 0, spec.grid_cols, 0);
    row = 1;
  }
  for (; row < spec.grid_rows; ++row) {
    for (int c = 0; c + 1 < spec.grid_cols; c += 2) {
      const bool swapped = g.bernoulli(spec.swap_prob);
      const bool has_answer = g.bernoulli(spec.answer_prob);
      add("question", swapped ? c + 1 : c, swapped ? c + 2 : c + 1, row);
      if (has_answer) add("answer", swapped ? c : c + 1, swapped ? c + 1 : c + 2, row);
    }
  }
}

void generate_page_class(Generator& g, Document& doc, std::vector<int>& textures, int cls) {
  const auto& spec = g.spec;
  const int W = spec.page_width;
  const int H = spec.page_height;
  const int mx = W / 20;
  const int my = H / 20;
  auto add = [&](const std::string& category, int n, int x0, int y0, int x1, int y1, int tex) {
    Region r = g.layout_region(category, n, x0, y0, x1, y1, W, H);
    doc.regions.push_back(std::move(r));
    textures.push_back(tex);
  };
  switch (cls % 4) {
    case 0: {  // letter: header then full-width paragraphs
      add("header", 2, mx, my, W - mx, my + 60, 2);
      const int n = g.uniform_int(3, 5);
      const int h = (H - 2 * my - 80) / n;
      for (int k = 0; k < n; ++k)
        add("filler", g.uniform_int(6, 12), mx, my + 80 + k * h, W - mx, my + 80 + (k + 1) * h - 10, 0);
      break;
    }
    case 1: {  // form: key/value rows
      const int rows = g.uniform_int(4, 7);
      const int h = (H - 2 * my) / rows;
      for (int k = 0; k < rows; ++k) {
        add("question", g.uniform_int(1, 3), mx, my + k * h, W / 2 - 10, my + (k + 1) * h - 10, 0);
        add("answer", g.uniform_int(1, 3), W / 2 + 10, my + k * h, W - mx, my + (k + 1) * h - 10, 1);
      }
      break;
    }
    case 2: {  // table: grid of short numeric cells
      const int rows = g.uniform_int(4, 6);
      const int cols = 3;
      const int h = (H - 2 * my) / rows;
      const int w = (W - 2 * mx) / cols;
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
          add("answer", 1, mx + c * w, my + r * h, mx + (c + 1) * w - 10, my + (r + 1) * h - 10, 1);
      break;
    }
    default: {  // memo: two text columns
      const int n = g.uniform_int(2, 4);
      const int h = (H - 2 * my) / n;
      for (int k = 0; k < n; ++k) {
        add("filler", g.uniform_int(4, 8), mx, my + k * h, W / 2 - 20, my + (k + 1) * h - 10, 3);
        add("filler", g.uniform_int(4, 8), W / 2 + 20, my + k * h, W - mx, my + (k + 1) * h - 10, 3);
      }
      break;
    }
  }
}

LabelScheme parse_scheme(const std::string& s) {
  if (s == "KEY_VALUE_FORM" || s == "key_value_form") return LabelScheme::kKeyValueForm;
  if (s == "PAGE_CLASS" || s == "page_class") return LabelScheme::kPageClass;
  throw Error("unknown label_scheme '" + s + "'");
}

}  // namespace

Document generate_synthetic_doc(const SyntheticCorpusSpec& spec, int index) {
  if (spec.label_scheme == LabelScheme::kKeyValueForm &&
      (spec.grid_cols < 2 || spec.grid_rows < 2))
    throw Error("grid too small for requested regions: need at least 2x2 slots for a form");
  if (spec.words_min < 1 || spec.words_max < spec.words_min) throw Error("bad words_per_region range");
  if (spec.n_page_classes < 1 || spec.n_page_classes > 4) throw Error("n_page_classes must be 1-4");

  Generator g(spec, derive_seed(spec.seed, static_cast<std::uint64_t>(index)));
  Document doc;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05d", index);
  doc.id = spec.id_prefix + "-" + buf;
  doc.width = spec.page_width;
  doc.height = spec.page_height;
  std::vector<int> textures;
  if (spec.label_scheme == LabelScheme::kKeyValueForm) {
    generate_form(g, doc, textures);
  } else {
    const int cls = g.uniform_int(0, spec.n_page_classes - 1);
    generate_page_class(g, doc, textures, cls);
    doc.page_label = std::to_string(cls);
  }
  // Render before canonical reordering so textures stay paired with regions.
  doc.image = std::make_shared<const Raster>(render(doc, textures, spec.raster_size));
  finalize(doc);
  return doc;
}

std::vector<Document> generate_synthetic(const SyntheticCorpusSpec& spec) {
  if (spec.n_docs < 0) throw Error("n_docs must be non-negative");
  std::vector<Document> docs;
  docs.reserve(static_cast<std::size_t>(spec.n_docs));
  for (int i = 0; i < spec.n_docs; ++i) docs.push_back(generate_synthetic_doc(spec, i));
  return docs;
}

SyntheticCorpusSpec synthetic_spec_from_json(const std::string& text) {
  const json j = parse_json(text, "synthetic spec");
  SyntheticCorpusSpec s;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = it.value();
    if (k == "n_docs") s.n_docs = v.get<int>();
    else if (k == "grid_rows") s.grid_rows = v.get<int>();
    else if (k == "grid_cols") s.grid_cols = v.get<int>();
    else if (k == "words_min") s.words_min = v.get<int>();
    else if (k == "words_max") s.words_max = v.get<int>();
    else if (k == "vocab") s.vocab = v.get<std::map<std::string, std::vector<std::string>>>();
    else if (k == "label_scheme") s.label_scheme = parse_scheme(v.get<std::string>());
    else if (k == "seed") s.seed = v.get<std::uint64_t>();
    else if (k == "page_width") s.page_width = v.get<int>();
    else if (k == "page_height") s.page_height = v.get<int>();
    else if (k == "raster_size") s.raster_size = v.get<int>();
    else if (k == "swap_prob") s.swap_prob = v.get<double>();
    else if (k == "texture_fidelity") s.texture_fidelity = v.get<double>();
    else if (k == "token_fidelity") s.token_fidelity = v.get<double>();
    else if (k == "header_prob") s.header_prob = v.get<double>();
    else if (k == "answer_prob") s.answer_prob = v.get<double>();
    else if (k == "n_page_classes") s.n_page_classes = v.get<int>();
    else if (k == "id_prefix") s.id_prefix = v.get<std::string>();
    else throw Error("synthetic spec: unknown key '" + k + "'");
  }
  return s;
}

std::string synthetic_spec_to_json(const SyntheticCorpusSpec& s) {
  ojson j;
  j["n_docs"] = s.n_docs;
  j["grid_rows"] = s.grid_rows;
  j["grid_cols"] = s.grid_cols;
  j["words_min"] = s.words_min;
  j["words_max"] = s.words_max;
  if (!s.vocab.empty()) j["vocab"] = s.vocab;
  j["label_scheme"] = s.label_scheme == LabelScheme::kKeyValueForm ? "KEY_VALUE_FORM" : "PAGE_CLASS";
  j["seed"] = s.seed;
  j["page_width"] = s.page_width;
  j["page_height"] = s.page_height;
  j["raster_size"] = s.raster_size;
  j["swap_prob"] = s.swap_prob;
  j["texture_fidelity"] = s.texture_fidelity;
  j["token_fidelity"] = s.token_fidelity;
  j["header_prob"] = s.header_prob;
  j["answer_prob"] = s.answer_prob;
  j["n_page_classes"] = s.n_page_classes;
  j["id_prefix"] = s.id_prefix;
  return j.dump(1);
}

ParagraphPage generate_paragraph_page(int n_paragraphs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  ParagraphPage page;
  page.n_paragraphs = n_paragraphs;
  // 1000x1000 pixel page; 9 px words on an 11 px pitch, paragraphs 40+ px apart.
  int y = 50;
  for (int p = 0; p < n_paragraphs; ++p) {
    const int left = 60 + uni(0, 20);
    const int right = 700 + uni(0, 200);
    const int lines = uni(1, 4);
    for (int l = 0; l < lines; ++l) {
      int x = left;
      const int n_words = uni(2, 6);
      for (int k = 0; k < n_words && x < right; ++k) {
        const int w = uni(20, 70);
        Word word{"w" + std::to_string(page.words.size()),
                  BoundingBox{x / 1000.0, y / 1000.0, (x + w) / 1000.0, (y + 9) / 1000.0}, 0};
        word.index = static_cast<int>(page.words.size());
        page.words.push_back(std::move(word));
        page.paragraph_of_word.push_back(p);
        x += w + uni(3, 8);
      }
      y += 11;
    }
    y += 40 + uni(0, 30);
  }
  return page;
}

}  // namespace mgdoc
