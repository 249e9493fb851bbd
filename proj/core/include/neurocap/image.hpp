#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace neurocap {

// Interleaved raster with values in [0, 1]. channels is 1 (gray) or 3 (RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f);

  float& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
};

// Binary Netpbm: P6 (RGB) or P5 (gray), maxval 255. Lossless for 8-bit data.
Image read_image(const std::filesystem::path& path);
void write_image(const Image& img, const std::filesystem::path& path);
std::string encode_ppm(const Image& img);
Image decode_ppm(const std::string& bytes);

// Rounds every value to the nearest representable 8-bit level.
Image quantize8(const Image& img);

Image resize_bilinear(const Image& img, int width, int height);
// Area-average downsampling; both sides must divide evenly or the nearest
// source block is used.
Image resize_area(const Image& img, int width, int height);
// Luma with weights 0.2125, 0.7154, 0.0721 (same as skimage.color.rgb2gray).
Image to_gray(const Image& img);
Image invert(const Image& img);

// FNV-1a 64 over the 8-bit quantized pixels and the dimensions.
std::uint64_t image_fingerprint(const Image& img);

}  // namespace neurocap
