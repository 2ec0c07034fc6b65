#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mgdoc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kDefaultContainEps = 1e-6;
inline constexpr double kDefaultRowHeight = 0.02;

// Normalized page coordinates, fractions of page width/height.
struct BoundingBox {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  static BoundingBox page() { return {0.0, 0.0, 1.0, 1.0}; }

  double center_x() const { return 0.5 * (x0 + x1); }
  double center_y() const { return 0.5 * (y0 + y1); }
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  bool valid() const;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

// 8-bit raster, row-major, interleaved channels (1 = gray, 3 = RGB).
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(int x, int y, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

struct Word {
  std::string text;
  BoundingBox box;
  int index = 0;

  friend bool operator==(const Word&, const Word&) = default;
};

struct Region {
  int id = 0;
  BoundingBox box;
  std::vector<Word> words;
  std::optional<std::string> label;
  // Paragraph-mode OCR may supply its own text; it wins over joined words.
  std::optional<std::string> text;

  std::string joined_text() const;

  friend bool operator==(const Region&, const Region&) = default;
};

struct Document {
  std::string id;
  int width = 0;
  int height = 0;
  std::optional<std::string> image_path;
  std::shared_ptr<const Raster> image;
  std::vector<Region> regions;
  std::optional<std::string> page_label;

  std::size_t word_count() const;
  std::string page_text() const;

  // Equality ignores raster pixels; the image is compared by path only.
  friend bool operator==(const Document& a, const Document& b) {
    return a.id == b.id && a.width == b.width && a.height == b.height &&
           a.image_path == b.image_path && a.regions == b.regions &&
           a.page_label == b.page_label;
  }
};

enum class Granularity : std::uint8_t { kPage = 0, kRegion = 1, kWord = 2 };

const char* to_string(Granularity g);

struct GranularitySet {
  bool page = true;
  bool region = true;
  bool word = true;

  static GranularitySet all() { return {}; }
  bool has(Granularity g) const;
  std::string to_string() const;
  static GranularitySet parse(const std::string& csv);

  friend bool operator==(const GranularitySet&, const GranularitySet&) = default;
};

struct GranularUnit {
  Granularity granularity = Granularity::kWord;
  int unit_index = 0;
  // Index into doc.regions for regions and words; -1 for the page.
  int region_index = -1;
  // Index into region.words for words; -1 otherwise.
  int word_index = -1;
  // Row of the parent region in the serialized sequence (words only), -1 otherwise.
  int parent_row = -1;
  std::string text;
  BoundingBox box;
};

BoundingBox enclosing_box(std::span<const BoundingBox> boxes);

bool contains(const BoundingBox& outer, const BoundingBox& inner,
              double eps = kDefaultContainEps);

struct ReadingOrderKey {
  long band = 0;
  double x0 = 0.0;

  friend auto operator<=>(const ReadingOrderKey&, const ReadingOrderKey&) = default;
};

ReadingOrderKey reading_order_key(const BoundingBox& box,
                                  double row_height = kDefaultRowHeight);

// Sorts words within regions and regions within the page by reading order,
// renumbers region ids and word indices. Region boxes are left as supplied.
void canonicalize(Document& doc, double row_height = kDefaultRowHeight);

// Throws Error describing the first violated invariant.
void validate(const Document& doc, double eps = kDefaultContainEps);

std::vector<GranularUnit> serialize_units(const Document& doc,
                                          GranularitySet keep = GranularitySet::all());

// Lowercased whitespace tokens.
std::vector<std::string> tokenize(const std::string& text);

}  // namespace mgdoc
