#include "pmi/image.hpp"

#include <cstring>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "pmi/common.hpp"

namespace pmi {

Raster read_image(const std::filesystem::path& path) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (mat.empty()) throw Error("cannot read image '" + path.string() + "'");
  if (mat.depth() != CV_8U) {
    cv::Mat converted;
    double scale = mat.depth() == CV_16U ? 1.0 / 257.0 : 1.0;
    mat.convertTo(converted, CV_8U, scale);
    mat = converted;
  }
  cv::Mat rgb;
  switch (mat.channels()) {
    case 1:
      rgb = mat;
      break;
    case 3:
      cv::cvtColor(mat, rgb, cv::COLOR_BGR2RGB);
      break;
    case 4:
      cv::cvtColor(mat, rgb, cv::COLOR_BGRA2RGB);
      break;
    default:
      throw Error("unsupported channel count in '" + path.string() + "'");
  }
  if (!rgb.isContinuous()) rgb = rgb.clone();
  Raster out(rgb.cols, rgb.rows, rgb.channels());
  std::memcpy(out.pixels.data(), rgb.data, out.pixels.size());
  return out;
}

void write_image(const Raster& image, const std::filesystem::path& path) {
  if (image.channels != 1 && image.channels != 3) throw Error("write_image expects 1 or 3 channels");
  cv::Mat view(image.height, image.width, image.channels == 1 ? CV_8UC1 : CV_8UC3,
               const_cast<std::uint8_t*>(image.pixels.data()));
  cv::Mat bgr;
  if (image.channels == 3)
    cv::cvtColor(view, bgr, cv::COLOR_RGB2BGR);
  else
    bgr = view;
  if (!cv::imwrite(path.string(), bgr)) throw Error("cannot write image '" + path.string() + "'");
}

}  // namespace pmi
