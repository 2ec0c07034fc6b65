#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mgdoc/docmodel.hpp"

namespace mgdoc {

inline constexpr const char* kDocSchema = "mgdoc-doc/1";

// ---- canonical on-disk format -------------------------------------------

// Pixel boxes; the page size converts them to normalized coordinates.
std::string to_canonical_json(const Document& doc, int indent = -1);
Document from_canonical_json(const std::string& text,
                             const std::filesystem::path& base_dir = {});

void save_canonical(const Document& doc, const std::filesystem::path& path);
// Loads the raster too when image_path resolves (relative to the JSON file).
Document load_canonical(const std::filesystem::path& path, bool load_image = true);

// A corpus directory holds one canonical JSON per document, loaded in name order.
void save_corpus(const std::vector<Document>& docs, const std::filesystem::path& dir);
std::vector<Document> load_corpus(const std::filesystem::path& dir, bool load_images = true);

// ---- dataset loaders ----------------------------------------------------

struct LoadStats {
  int dropped_entities = 0;
  int dropped_words = 0;
};

// FUNSD form annotation; one region per entity, label kept as published.
Document load_funsd(const std::filesystem::path& annotation, int width, int height,
                    LoadStats* stats = nullptr);
Document load_funsd(const std::filesystem::path& annotation,
                    const std::filesystem::path& image, LoadStats* stats = nullptr);
// Reads <split_dir>/annotations/*.json with images from <split_dir>/images/.
std::vector<Document> load_funsd_split(const std::filesystem::path& split_dir,
                                       LoadStats* stats = nullptr);

// CORD receipt JSON; each annotated line becomes a region labeled with its category.
Document load_cord(const std::filesystem::path& path, LoadStats* stats = nullptr);

struct RvlCdipEntry {
  std::filesystem::path image;
  int label = 0;
};
// "relative/path.tif <class 0-15>" per line, paths resolved against the index directory.
std::vector<RvlCdipEntry> load_rvlcdip_index(const std::filesystem::path& index);

inline constexpr double kDefaultGapX = 0.015;
inline constexpr double kDefaultGapY = 0.012;

// Pre-exported OCR words, optionally with paragraph-mode boxes. Words inside
// a paragraph form its region; the rest are grouped by gap heuristics.
Document load_ocr(const std::filesystem::path& path, double gap_x = kDefaultGapX,
                  double gap_y = kDefaultGapY);

// Greedy gap-based agglomeration of words (given in reading order) into regions.
std::vector<Region> group_words_into_regions(const std::vector<Word>& words,
                                             double gap_x = kDefaultGapX,
                                             double gap_y = kDefaultGapY);

// ---- synthetic corpora --------------------------------------------------

enum class LabelScheme { kKeyValueForm, kPageClass };

struct SyntheticCorpusSpec {
  int n_docs = 10;
  int grid_rows = 6;
  int grid_cols = 2;
  int words_min = 1;
  int words_max = 4;
  // category -> tokens; missing categories fall back to the built-in lists
  // ("question", "answer", "header", "filler").
  std::map<std::string, std::vector<std::string>> vocab;
  LabelScheme label_scheme = LabelScheme::kKeyValueForm;
  std::uint64_t seed = 0;
  int page_width = 1000;
  int page_height = 1000;
  int raster_size = 128;
  // Probability that a form row puts the answer on the left.
  double swap_prob = 0.0;
  // Probability that a region's texture matches its label (else random).
  double texture_fidelity = 1.0;
  // Probability that a token comes from the region's own category (else filler).
  double token_fidelity = 0.85;
  double header_prob = 0.7;
  double answer_prob = 0.9;
  int n_page_classes = 4;
  std::string id_prefix = "syn";
};

SyntheticCorpusSpec synthetic_spec_from_json(const std::string& text);
std::string synthetic_spec_to_json(const SyntheticCorpusSpec& spec);

std::vector<Document> generate_synthetic(const SyntheticCorpusSpec& spec);
Document generate_synthetic_doc(const SyntheticCorpusSpec& spec, int index);

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

// Multi-paragraph page with known ground-truth grouping, words in reading order.
struct ParagraphPage {
  std::vector<Word> words;
  std::vector<int> paragraph_of_word;
  int n_paragraphs = 0;
};
ParagraphPage generate_paragraph_page(int n_paragraphs, std::uint64_t seed);

}  // namespace mgdoc
