#include "neurocap/image.hpp"

#include "neurocap/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace neurocap {

Image::Image(int w, int h, int c, float fill)
    : width(w), height(h), channels(c),
      data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(c), fill) {}

namespace {

std::uint8_t to_byte(float v) {
  const float clamped = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(clamped * 255.0f));
}

std::string next_token(std::istringstream& in) {
  std::string tok;
  while (in >> tok) {
    if (tok[0] == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    return tok;
  }
  throw DataError("truncated Netpbm header");
}

}  // namespace

std::string encode_ppm(const Image& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw DataError("Netpbm supports 1 or 3 channels, got " + std::to_string(img.channels));
  }
  std::ostringstream out;
  out << (img.channels == 3 ? "P6" : "P5") << "\n" << img.width << " " << img.height << "\n255\n";
  std::string header = out.str();
  std::string bytes;
  bytes.reserve(img.size());
  for (float v : img.data) bytes.push_back(static_cast<char>(to_byte(v)));
  return header + bytes;
}

Image decode_ppm(const std::string& bytes) {
  std::istringstream in(bytes);
  const std::string magic = next_token(in);
  int channels = 0;
  if (magic == "P6") channels = 3;
  else if (magic == "P5") channels = 1;
  else throw DataError("unsupported image format '" + magic + "' (expected P5/P6)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token(in));
    h = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::logic_error&) {
    throw DataError("malformed Netpbm header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw DataError("unsupported Netpbm dimensions or maxval");
  in.get();  // single whitespace before the raster
  const auto offset = static_cast<std::size_t>(in.tellg());
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(channels);
  if (bytes.size() < offset + n) throw DataError("truncated Netpbm raster");
  Image img(w, h, channels);
  for (std::size_t i = 0; i < n; ++i) {
    img.data[i] = static_cast<float>(static_cast<unsigned char>(bytes[offset + i])) / 255.0f;
  }
  return img;
}

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read image " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return decode_ppm(buf.str());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_image(const Image& img, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write image " + path.string());
  const std::string bytes = encode_ppm(img);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Image quantize8(const Image& img) {
  Image out = img;
  for (float& v : out.data) v = static_cast<float>(to_byte(v)) / 255.0f;
  return out;
}

Image resize_bilinear(const Image& img, int width, int height) {
  if (img.width == width && img.height == height) return img;
  Image out(width, height, img.channels);
  const double sx = static_cast<double>(img.width) / width;
  const double sy = static_cast<double>(img.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < img.channels; ++c) {
        const double top = img.at(x0, y0, c) * (1 - wx) + img.at(x1, y0, c) * wx;
        const double bottom = img.at(x0, y1, c) * (1 - wx) + img.at(x1, y1, c) * wx;
        out.at(x, y, c) = static_cast<float>(top * (1 - wy) + bottom * wy);
      }
    }
  }
  return out;
}

Image resize_area(const Image& img, int width, int height) {
  if (img.width == width && img.height == height) return img;
  Image out(width, height, img.channels);
  for (int y = 0; y < height; ++y) {
    const int y0 = y * img.height / height;
    const int y1 = std::max(y0 + 1, (y + 1) * img.height / height);
    for (int x = 0; x < width; ++x) {
      const int x0 = x * img.width / width;
      const int x1 = std::max(x0 + 1, (x + 1) * img.width / width);
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (int yy = y0; yy < y1; ++yy)
          for (int xx = x0; xx < x1; ++xx) acc += img.at(xx, yy, c);
        out.at(x, y, c) = static_cast<float>(acc / ((y1 - y0) * (x1 - x0)));
      }
    }
  }
  return out;
}

Image to_gray(const Image& img) {
  if (img.channels == 1) return img;
  Image out(img.width, img.height, 1);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      out.at(x, y, 0) = 0.2125f * img.at(x, y, 0) + 0.7154f * img.at(x, y, 1) + 0.0721f * img.at(x, y, 2);
    }
  }
  return out;
}

Image invert(const Image& img) {
  Image out = img;
  for (float& v : out.data) v = 1.0f - v;
  return out;
}

std::uint64_t image_fingerprint(const Image& img) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint8_t b) {
    h ^= b;
    h *= 1099511628211ULL;
  };
  for (int v : {img.width, img.height, img.channels}) {
    for (int i = 0; i < 4; ++i) mix(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
  }
  for (float v : img.data) mix(to_byte(v));
  return h;
}

}  // namespace neurocap
