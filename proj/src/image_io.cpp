#include "infoscc/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

namespace infoscc {
namespace {

ImageBatch<float> from_mat(const cv::Mat& decoded, int channels) {
  cv::Mat rgb;
  if (channels == 1) {
    if (decoded.channels() == 1) rgb = decoded;
    else cv::cvtColor(decoded, rgb, decoded.channels() == 4 ? cv::COLOR_BGRA2GRAY : cv::COLOR_BGR2GRAY);
  } else {
    if (decoded.channels() == 1) cv::cvtColor(decoded, rgb, cv::COLOR_GRAY2RGB);
    else cv::cvtColor(decoded, rgb, decoded.channels() == 4 ? cv::COLOR_BGRA2RGB : cv::COLOR_BGR2RGB);
  }
  ImageBatch<float> out(1, channels, rgb.rows, rgb.cols);
  for (int y = 0; y < rgb.rows; ++y) {
    const unsigned char* row = rgb.ptr<unsigned char>(y);
    for (int x = 0; x < rgb.cols; ++x)
      for (int c = 0; c < channels; ++c)
        out.at(0, c, y, x) = float(row[x * channels + c]) / 127.5f - 1.0f;
  }
  return out;
}

cv::Mat to_mat(const ImageBatch<float>& images, int index) {
  const int channels = images.channels;
  cv::Mat mat(images.height, images.width, channels == 1 ? CV_8UC1 : CV_8UC3);
  for (int y = 0; y < images.height; ++y) {
    unsigned char* row = mat.ptr<unsigned char>(y);
    for (int x = 0; x < images.width; ++x) {
      for (int c = 0; c < channels; ++c) {
        const float v = std::clamp(images.at(index, c, y, x), -1.0f, 1.0f);
        // OpenCV stores BGR.
        const int dst = channels == 1 ? 0 : 2 - c;
        row[x * channels + dst] = static_cast<unsigned char>(std::lround((v + 1.0f) * 127.5f));
      }
    }
  }
  return mat;
}

}  // namespace

ImageBatch<float> read_image(const std::filesystem::path& path, int size, int channels) {
  cv::Mat decoded = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (decoded.empty()) throw Error("cannot decode image " + path.string());
  if (decoded.depth() != CV_8U) decoded.convertTo(decoded, CV_8U, 1.0 / 257.0);
  if (decoded.rows != size || decoded.cols != size) {
    cv::Mat resized;
    cv::resize(decoded, resized, cv::Size(size, size), 0, 0, cv::INTER_AREA);
    decoded = resized;
  }
  return from_mat(decoded, channels);
}

std::string encode_png(const ImageBatch<float>& images, int index) {
  std::vector<unsigned char> buffer;
  if (!cv::imencode(".png", to_mat(images, index), buffer)) throw Error("PNG encoding failed");
  return std::string(buffer.begin(), buffer.end());
}

ImageBatch<float> decode_png(std::string_view bytes, int channels) {
  std::vector<unsigned char> buffer(bytes.begin(), bytes.end());
  cv::Mat decoded = cv::imdecode(buffer, cv::IMREAD_UNCHANGED);
  if (decoded.empty()) throw Error("cannot decode PNG bytes");
  return from_mat(decoded, channels);
}

void write_png(const std::filesystem::path& path, const ImageBatch<float>& images, int index) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), to_mat(images, index))) throw Error("cannot write " + path.string());
}

ImageBatch<float> tile_images(const ImageBatch<float>& images, int columns) {
  columns = std::max(1, std::min(columns, images.batch));
  const int rows = (images.batch + columns - 1) / columns;
  ImageBatch<float> grid(1, images.channels, rows * images.height, columns * images.width);
  grid.pixels.setConstant(-1.0f);
  for (int b = 0; b < images.batch; ++b) {
    const int gy = (b / columns) * images.height, gx = (b % columns) * images.width;
    for (int c = 0; c < images.channels; ++c)
      for (int y = 0; y < images.height; ++y)
        for (int x = 0; x < images.width; ++x) grid.at(0, c, gy + y, gx + x) = images.at(b, c, y, x);
  }
  return grid;
}

}  // namespace infoscc
