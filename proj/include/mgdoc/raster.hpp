#pragma once

#include <filesystem>

#include "mgdoc/autograd.hpp"
#include "mgdoc/docmodel.hpp"

namespace mgdoc {

// PNG/TIFF/PGM, grayscale or RGB. Other channel counts are converted.
Raster read_raster(const std::filesystem::path& path);
void write_png(const Raster& raster, const std::filesystem::path& path);

// Area-resampled grayscale intensities in [0, 1], side x side, row-major.
ag::Mat to_gray_square(const Raster& raster, int side);

}  // namespace mgdoc
