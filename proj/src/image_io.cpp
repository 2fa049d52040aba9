#include "slidemask/image_io.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <openssl/evp.h>

namespace slidemask {

namespace {

Image from_mat(const cv::Mat& mat) {
  cv::Mat rgb;
  if (mat.channels() == 1) {
    cv::cvtColor(mat, rgb, cv::COLOR_GRAY2RGB);
  } else if (mat.channels() == 4) {
    cv::cvtColor(mat, rgb, cv::COLOR_BGRA2RGB);
  } else {
    cv::cvtColor(mat, rgb, cv::COLOR_BGR2RGB);
  }
  if (rgb.depth() != CV_8U) rgb.convertTo(rgb, CV_8U);
  Image image(rgb.cols, rgb.rows, 3);
  for (int y = 0; y < rgb.rows; ++y)
    std::memcpy(&image.at(0, y), rgb.ptr<std::uint8_t>(y), static_cast<std::size_t>(rgb.cols) * 3);
  return image;
}

cv::Mat to_mat(const Image& image) {
  require(image.channels() == 1 || image.channels() == 3, "only 1- or 3-channel images can be encoded");
  const int type = image.channels() == 1 ? CV_8UC1 : CV_8UC3;
  cv::Mat view(image.height(), image.width(), type, const_cast<std::uint8_t*>(image.pixels().data()));
  cv::Mat out;
  if (image.channels() == 3) {
    cv::cvtColor(view, out, cv::COLOR_RGB2BGR);
  } else {
    out = view.clone();
  }
  return out;
}

}  // namespace

Image decode_image(std::span<const std::uint8_t> bytes, const std::string& name) {
  if (bytes.empty()) fail(ErrorKind::decode, "cannot decode image " + name + ": empty data");
  const cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat mat;
  try {
    mat = cv::imdecode(raw, cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception&) {
    mat.release();
  }
  if (mat.empty()) fail(ErrorKind::decode, "cannot decode image " + name);
  return from_mat(mat);
}

Image read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::not_found, "image not found: " + path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_image(bytes, path);
}

std::optional<ImageSize> probe_image_size(const std::string& path) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  const Image image = read_image(path);
  return ImageSize{image.width(), image.height()};
}

void write_image(const std::string& path, const Image& image) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::vector<int> params;
  const auto ext = std::filesystem::path(path).extension().string();
  if (ext == ".png") params = {cv::IMWRITE_PNG_COMPRESSION, 6};
  if (ext == ".jpg" || ext == ".jpeg") params = {cv::IMWRITE_JPEG_QUALITY, 95};
  if (!cv::imwrite(path, to_mat(image), params)) fail(ErrorKind::io, "failed to write image " + path);
}

std::string encode_png(const Image& image) {
  std::vector<std::uint8_t> buf;
  if (!cv::imencode(".png", to_mat(image), buf)) fail(ErrorKind::io, "PNG encoding failed");
  return std::string(buf.begin(), buf.end());
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

std::string pixel_checksum(const Image& image) {
  std::vector<std::uint8_t> buf;
  buf.reserve(image.size() + 12);
  for (int v : {image.width(), image.height(), image.channels()})
    for (int s = 0; s < 32; s += 8) buf.push_back(static_cast<std::uint8_t>(v >> s));
  buf.insert(buf.end(), image.pixels().begin(), image.pixels().end());
  return sha256_hex(buf);
}

}  // namespace slidemask
