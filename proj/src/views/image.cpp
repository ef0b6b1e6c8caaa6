// SPDX-License-Identifier: Apache-2.0
#include "lava/views/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "lava/errors.hpp"

namespace lava::views {

Image crop_resize(const Image& src, const Rect& r, int out_size) {
  if (r.x < 0 || r.y < 0 || r.width <= 0 || r.height <= 0 || r.x + r.width > src.width ||
      r.y + r.height > src.height)
    throw ContractError("crop rectangle outside the source image");
  Image out(src.channels, out_size, out_size);
  if (r.width == out_size && r.height == out_size) {
    for (int c = 0; c < src.channels; ++c)
      for (int y = 0; y < out_size; ++y)
        for (int x = 0; x < out_size; ++x) out.at(c, y, x) = src.at(c, r.y + y, r.x + x);
    return out;
  }
  const double sy = static_cast<double>(r.height) / out_size;
  const double sx = static_cast<double>(r.width) / out_size;
  for (int y = 0; y < out_size; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(r.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, r.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_size; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(r.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, r.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < src.channels; ++c) {
        const double top = (1 - wx) * src.at(c, r.y + y0, r.x + x0) + wx * src.at(c, r.y + y0, r.x + x1);
        const double bot = (1 - wx) * src.at(c, r.y + y1, r.x + x0) + wx * src.at(c, r.y + y1, r.x + x1);
        out.at(c, y, x) = static_cast<float>((1 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

namespace {

unsigned char to_byte(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

void quantize_8bit(Image& img) {
  for (float& v : img.data) v = static_cast<float>(to_byte(v)) / 255.0f;
}

void write_pnm(const Image& img, const std::filesystem::path& path) {
  if (img.channels != 1 && img.channels != 3) throw ContractError("PNM supports 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot open " + path.string() + " for writing");
  out << (img.channels == 3 ? "P6" : "P5") << "\n" << img.width << " " << img.height << "\n255\n";
  std::string buf;
  buf.reserve(img.data.size());
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) buf.push_back(static_cast<char>(to_byte(img.at(c, y, x))));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IngestionError("write failed: " + path.string());
}

namespace {

int read_header_int(std::istream& in, const std::filesystem::path& path) {
  int value = 0;
  in >> std::ws;
  while (in.peek() == '#') {
    std::string skip;
    std::getline(in, skip);
    in >> std::ws;
  }
  if (!(in >> value)) throw FormatError("malformed PNM header in " + path.string());
  return value;
}

}  // namespace

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open image " + path.string());
  std::string magic;
  in >> magic;
  int channels = 0;
  if (magic == "P6")
    channels = 3;
  else if (magic == "P5")
    channels = 1;
  else
    throw FormatError("unsupported image format in " + path.string());
  const int width = read_header_int(in, path);
  const int height = read_header_int(in, path);
  const int maxval = read_header_int(in, path);
  if (width <= 0 || height <= 0 || maxval != 255) throw FormatError("unsupported PNM geometry in " + path.string());
  in.get();
  std::string buf(static_cast<std::size_t>(width) * height * channels, '\0');
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw FormatError("truncated image " + path.string());
  Image img(channels, height, width);
  std::size_t i = 0;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(c, y, x) = static_cast<float>(static_cast<unsigned char>(buf[i++])) / 255.0f;
  return img;
}

}  // namespace lava::views
