#pragma once

#include <random>
#include <string>
#include <vector>

#include "mgdoc/ingestion.hpp"
#include "mgdoc/model.hpp"

namespace testutil {

inline mgdoc::BoundingBox box(double x0, double y0, double x1, double y1) { return {x0, y0, x1, y1}; }

inline mgdoc::Region region(int id, std::vector<mgdoc::Word> words,
                            std::optional<std::string> label = std::nullopt) {
  std::vector<mgdoc::BoundingBox> boxes;
  for (const auto& w : words) boxes.push_back(w.box);
  mgdoc::Region r;
  r.id = id;
  r.box = mgdoc::enclosing_box(boxes);
  r.words = std::move(words);
  r.label = std::move(label);
  return r;
}

// Gray raster with a vertical gradient so ROI features vary by position.
inline std::shared_ptr<const mgdoc::Raster> gradient_raster(int side, std::uint64_t seed = 0) {
  auto r = std::make_shared<mgdoc::Raster>();
  r->width = side;
  r->height = side;
  r->channels = 1;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> noise(0, 40);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      r->pixels.push_back(static_cast<std::uint8_t>((y * 200) / side + noise(rng)));
  return r;
}

// Two regions of `words_per_region` words each, on a 100x100 page.
inline mgdoc::Document toy_doc(int words_per_region = 2, std::uint64_t seed = 0) {
  mgdoc::Document d;
  d.id = "toy" + std::to_string(seed);
  d.width = 100;
  d.height = 100;
  const std::vector<std::string> vocab = {"name", "date", "total", "12", "34", "acme"};
  std::mt19937_64 rng(seed);
  for (int r = 0; r < 2; ++r) {
    std::vector<mgdoc::Word> words;
    for (int w = 0; w < words_per_region; ++w) {
      const double x0 = 0.1 + 0.12 * w;
      const double y0 = 0.1 + 0.4 * r;
      words.push_back({vocab[rng() % vocab.size()], box(x0, y0, x0 + 0.1, y0 + 0.05),
                       r * words_per_region + w});
    }
    d.regions.push_back(region(r, std::move(words), r == 0 ? "question" : "answer"));
  }
  d.image = gradient_raster(32, seed);
  return d;
}

inline mgdoc::ModelConfig tiny_config() {
  mgdoc::ModelConfig c;
  c.encoder.d_model = 8;
  c.encoder.image_size = 16;
  c.encoder.conv_channels1 = 2;
  c.encoder.conv_channels2 = 3;
  c.encoder.vocab_size = 64;
  c.attention.n_heads = 2;
  c.attention.n_mg_layers = 1;
  c.attention.n_self_layers = 1;
  c.attention.n_cross_layers = 1;
  c.attention.ffn_mult = 2;
  return c;
}

inline mgdoc::ag::Mat random_mat(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                                 double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  mgdoc::ag::Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

// Fills every parameter (including bias tables) with random values.
inline void randomize(mgdoc::ParamStore& p, std::mt19937_64& rng, double scale = 0.5) {
  for (auto& [name, v] : p) v.node()->value = random_mat(v.rows(), v.cols(), rng, scale);
}

inline mgdoc::SyntheticCorpusSpec small_spec(int n, std::uint64_t seed) {
  mgdoc::SyntheticCorpusSpec s;
  s.n_docs = n;
  s.seed = seed;
  s.raster_size = 64;
  return s;
}

}  // namespace testutil
