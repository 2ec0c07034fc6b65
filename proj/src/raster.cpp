#include "mgdoc/raster.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cstring>

namespace mgdoc {
namespace {

cv::Mat to_cv(const Raster& r) {
  const int type = r.channels == 3 ? CV_8UC3 : CV_8UC1;
  cv::Mat m(r.height, r.width, type);
  std::memcpy(m.data, r.pixels.data(), r.pixels.size());
  return m;
}

}  // namespace

Raster read_raster(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw Error("cannot read image '" + path.string() + "'");
  if (m.depth() != CV_8U) m.convertTo(m, CV_8U, m.depth() == CV_16U ? 1.0 / 257.0 : 1.0);
  if (m.channels() == 4) cv::cvtColor(m, m, cv::COLOR_BGRA2RGB);
  else if (m.channels() == 3) cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
  else if (m.channels() != 1) throw Error("unsupported channel count in '" + path.string() + "'");
  if (!m.isContinuous()) m = m.clone();
  Raster r;
  r.width = m.cols;
  r.height = m.rows;
  r.channels = m.channels();
  r.pixels.assign(m.data, m.data + m.total() * m.elemSize());
  return r;
}

void write_png(const Raster& raster, const std::filesystem::path& path) {
  cv::Mat m = to_cv(raster);
  if (raster.channels == 3) cv::cvtColor(m, m, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), m)) throw Error("cannot write image '" + path.string() + "'");
}

ag::Mat to_gray_square(const Raster& raster, int side) {
  cv::Mat m = to_cv(raster);
  if (raster.channels == 3) cv::cvtColor(m, m, cv::COLOR_RGB2GRAY);
  cv::Mat resized;
  if (m.cols == side && m.rows == side) {
    resized = m;
  } else {
    cv::resize(m, resized, cv::Size(side, side), 0, 0, cv::INTER_AREA);
  }
  ag::Mat out(side, side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) out(y, x) = resized.at<std::uint8_t>(y, x) / 255.0;
  return out;
}

}  // namespace mgdoc
