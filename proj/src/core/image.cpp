#include "doppel/image.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "doppel/error.hpp"

namespace doppel {

std::size_t Mask::popcount() const {
  return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

Image load_image(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) {
    throw Error(ErrorCode::kIoError, "cannot read image " + path.string());
  }
  double range = 255.0;
  if (raw.depth() == CV_16U) range = 65535.0;
  cv::Mat f;
  raw.convertTo(f, CV_32F, 1.0 / range);

  Image out(f.rows, f.cols, 3);
  const int src_channels = f.channels();
  for (int r = 0; r < f.rows; ++r) {
    const float* row = f.ptr<float>(r);
    for (int c = 0; c < f.cols; ++c) {
      const float* px = row + static_cast<std::ptrdiff_t>(c) * src_channels;
      if (src_channels < 3) {
        out.at(r, c, 0) = out.at(r, c, 1) = out.at(r, c, 2) = px[0];
      } else {
        // OpenCV stores BGR(A).
        out.at(r, c, 0) = px[2];
        out.at(r, c, 1) = px[1];
        out.at(r, c, 2) = px[0];
      }
    }
  }
  return out;
}

void save_image(const std::filesystem::path& path, const Image& image) {
  if (image.empty() || (image.channels != 1 && image.channels != 3)) {
    throw Error(ErrorCode::kEmptyImage, "cannot write empty or non-RGB image " + path.string());
  }
  cv::Mat m(image.height, image.width, image.channels == 3 ? CV_8UC3 : CV_8UC1);
  for (int r = 0; r < image.height; ++r) {
    auto* row = m.ptr<std::uint8_t>(r);
    for (int c = 0; c < image.width; ++c) {
      for (int ch = 0; ch < image.channels; ++ch) {
        const int dst_ch = image.channels == 3 ? 2 - ch : 0;
        const float v = std::clamp(image.at(r, c, ch), 0.0f, 1.0f);
        row[c * image.channels + dst_ch] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  if (!cv::imwrite(path.string(), m)) {
    throw Error(ErrorCode::kIoError, "cannot write image " + path.string());
  }
}

}  // namespace doppel
