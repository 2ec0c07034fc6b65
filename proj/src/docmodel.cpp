#include "mgdoc/docmodel.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

namespace mgdoc {

bool BoundingBox::valid() const {
  return std::isfinite(x0) && std::isfinite(y0) && std::isfinite(x1) && std::isfinite(y1) &&
         0.0 <= x0 && x0 <= x1 && x1 <= 1.0 && 0.0 <= y0 && y0 <= y1 && y1 <= 1.0;
}

std::string Region::joined_text() const {
  if (text) return *text;
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w.text;
  }
  return out;
}

std::size_t Document::word_count() const {
  std::size_t n = 0;
  for (const auto& r : regions) n += r.words.size();
  return n;
}

std::string Document::page_text() const {
  std::string out;
  for (const auto& r : regions) {
    for (const auto& w : r.words) {
      if (!out.empty()) out += ' ';
      out += w.text;
    }
  }
  return out;
}

const char* to_string(Granularity g) {
  switch (g) {
    case Granularity::kPage: return "page";
    case Granularity::kRegion: return "region";
    case Granularity::kWord: return "word";
  }
  return "?";
}

bool GranularitySet::has(Granularity g) const {
  switch (g) {
    case Granularity::kPage: return page;
    case Granularity::kRegion: return region;
    case Granularity::kWord: return word;
  }
  return false;
}

std::string GranularitySet::to_string() const {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  add(page, "page");
  add(region, "region");
  add(word, "word");
  return out;
}

GranularitySet GranularitySet::parse(const std::string& csv) {
  GranularitySet s{false, false, false};
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "page") s.page = true;
    else if (item == "region") s.region = true;
    else if (item == "word") s.word = true;
    else if (!item.empty()) throw Error("unknown granularity '" + item + "'");
  }
  return s;
}

BoundingBox enclosing_box(std::span<const BoundingBox> boxes) {
  if (boxes.empty()) throw Error("no boxes");
  BoundingBox out = boxes.front();
  for (const auto& b : boxes.subspan(1)) {
    out.x0 = std::min(out.x0, b.x0);
    out.y0 = std::min(out.y0, b.y0);
    out.x1 = std::max(out.x1, b.x1);
    out.y1 = std::max(out.y1, b.y1);
  }
  return out;
}

bool contains(const BoundingBox& outer, const BoundingBox& inner, double eps) {
  return outer.x0 - eps <= inner.x0 && inner.x1 <= outer.x1 + eps &&
         outer.y0 - eps <= inner.y0 && inner.y1 <= outer.y1 + eps;
}

ReadingOrderKey reading_order_key(const BoundingBox& box, double row_height) {
  return {static_cast<long>(std::floor(box.center_y() / row_height)), box.x0};
}

void canonicalize(Document& doc, double row_height) {
  for (auto& r : doc.regions) {
    std::stable_sort(r.words.begin(), r.words.end(), [&](const Word& a, const Word& b) {
      return reading_order_key(a.box, row_height) < reading_order_key(b.box, row_height);
    });
  }
  std::stable_sort(doc.regions.begin(), doc.regions.end(),
                   [&](const Region& a, const Region& b) {
                     return reading_order_key(a.box, row_height) <
                            reading_order_key(b.box, row_height);
                   });
  int word_index = 0;
  for (std::size_t i = 0; i < doc.regions.size(); ++i) {
    doc.regions[i].id = static_cast<int>(i);
    for (auto& w : doc.regions[i].words) w.index = word_index++;
  }
}

void validate(const Document& doc, double eps) {
  const std::string where = "document '" + doc.id + "': ";
  if (doc.width <= 0 || doc.height <= 0) throw Error(where + "non-positive page size");
  if (doc.regions.empty()) throw Error(where + "no regions");
  if (doc.word_count() == 0) throw Error(where + "no words");
  const auto page = BoundingBox::page();
  for (const auto& r : doc.regions) {
    if (!r.box.valid()) throw Error(where + "invalid box for region " + std::to_string(r.id));
    if (!contains(page, r.box, eps))
      throw Error(where + "region " + std::to_string(r.id) + " outside page");
    for (const auto& w : r.words) {
      if (w.text.empty()) throw Error(where + "empty word text in region " + std::to_string(r.id));
      if (!w.box.valid()) throw Error(where + "invalid word box in region " + std::to_string(r.id));
      if (!contains(r.box, w.box, eps))
        throw Error(where + "word '" + w.text + "' not inside region " + std::to_string(r.id));
    }
  }
}

std::vector<GranularUnit> serialize_units(const Document& doc, GranularitySet keep) {
  if (doc.regions.empty() || doc.word_count() == 0) throw Error("empty document '" + doc.id + "'");
  if (keep.word && !keep.region) throw Error("word units require region units");

  std::vector<GranularUnit> units;
  units.reserve(1 + doc.regions.size() + doc.word_count());
  if (keep.page) {
    GranularUnit u;
    u.granularity = Granularity::kPage;
    u.text = doc.page_text();
    u.box = BoundingBox::page();
    units.push_back(std::move(u));
  }
  std::vector<int> region_row(doc.regions.size(), -1);
  if (keep.region) {
    for (std::size_t j = 0; j < doc.regions.size(); ++j) {
      GranularUnit u;
      u.granularity = Granularity::kRegion;
      u.region_index = static_cast<int>(j);
      u.text = doc.regions[j].joined_text();
      u.box = doc.regions[j].box;
      region_row[j] = static_cast<int>(units.size());
      units.push_back(std::move(u));
    }
  }
  if (keep.word) {
    for (std::size_t j = 0; j < doc.regions.size(); ++j) {
      const auto& words = doc.regions[j].words;
      for (std::size_t i = 0; i < words.size(); ++i) {
        GranularUnit u;
        u.granularity = Granularity::kWord;
        u.region_index = static_cast<int>(j);
        u.word_index = static_cast<int>(i);
        u.parent_row = region_row[j];
        u.text = words[i].text;
        u.box = words[i].box;
        units.push_back(std::move(u));
      }
    }
  }
  for (std::size_t k = 0; k < units.size(); ++k) units[k].unit_index = static_cast<int>(k);
  return units;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace mgdoc
