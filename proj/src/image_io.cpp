#include "fewshot/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>

namespace fewshot {

namespace {

/// Reads the next header token, skipping whitespace and '#' comments.
int read_header_int(std::istream& is, const std::string& path) {
  int ch = is.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = is.get();
    } else if (std::isspace(ch)) {
      ch = is.get();
    } else {
      break;
    }
  }
  if (ch == EOF || !std::isdigit(ch))
    throw DataError("malformed netpbm header in " + path);
  int value = 0;
  while (ch != EOF && std::isdigit(ch)) {
    value = value * 10 + (ch - '0');
    ch = is.get();
  }
  return value;
}

}  // namespace

RawImage read_netpbm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open image file: " + path);
  char magic[2];
  is.read(magic, 2);
  if (!is || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw DataError("unsupported image format (expected binary PGM/PPM): " + path);
  const int channels = magic[1] == '5' ? 1 : 3;
  const int width = read_header_int(is, path);
  const int height = read_header_int(is, path);
  const int maxval = read_header_int(is, path);
  if (width < 1 || height < 1 || maxval < 1 || maxval > 65535)
    throw DataError("invalid netpbm dimensions in " + path);
  // read_header_int consumed exactly one whitespace byte after maxval.

  const std::size_t count = static_cast<std::size_t>(width) * height * channels;
  const bool wide = maxval > 255;
  std::vector<unsigned char> raw(count * (wide ? 2 : 1));
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!is) throw DataError("truncated image data in " + path);

  RawImage img;
  img.channels = channels;
  img.height = height;
  img.width = width;
  img.pixels.resize(count);
  // Interleaved samples -> planar [C,H,W], scaled to [0,1].
  const double scale = 1.0 / maxval;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t c = i % static_cast<std::size_t>(channels);
    const std::size_t p = i / static_cast<std::size_t>(channels);
    const std::uint32_t v = wide ? (static_cast<std::uint32_t>(raw[2 * i]) << 8) | raw[2 * i + 1]
                                 : raw[i];
    img.pixels[c * static_cast<std::size_t>(width) * height + p] = v * scale;
  }
  return img;
}

void write_netpbm(const std::string& path, const RawImage& image) {
  if (image.channels != 1 && image.channels != 3)
    throw DataError("write_netpbm: images must have 1 or 3 channels");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open image file for writing: " + path);
  os << (image.channels == 1 ? "P5" : "P6") << '\n'
     << image.width << ' ' << image.height << "\n255\n";
  const std::size_t plane = static_cast<std::size_t>(image.width) * image.height;
  std::vector<unsigned char> raw(plane * static_cast<std::size_t>(image.channels));
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < image.channels; ++c) {
      const double v = std::clamp(image.pixels[static_cast<std::size_t>(c) * plane + p], 0.0, 1.0);
      raw[p * static_cast<std::size_t>(image.channels) + static_cast<std::size_t>(c)] =
          static_cast<unsigned char>(v * 255.0 + 0.5);
    }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) throw DataError("failed writing image: " + path);
}

RawImage bilinear_resize(const RawImage& image, int out_size) {
  if (out_size < 1) throw DataError("bilinear_resize: output size must be positive");
  RawImage out;
  out.channels = image.channels;
  out.height = out_size;
  out.width = out_size;
  out.pixels.resize(static_cast<std::size_t>(image.channels) * out_size * out_size);
  const double sy = static_cast<double>(image.height) / out_size;
  const double sx = static_cast<double>(image.width) / out_size;
  const std::size_t in_plane = static_cast<std::size_t>(image.width) * image.height;
  const std::size_t out_plane = static_cast<std::size_t>(out_size) * out_size;
  for (int i = 0; i < out_size; ++i) {
    const double fy = std::clamp((i + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int j = 0; j < out_size; ++j) {
      const double fx = std::clamp((j + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < image.channels; ++c) {
        const double* p = image.pixels.data() + static_cast<std::size_t>(c) * in_plane;
        const double top = (1.0 - wx) * p[static_cast<std::size_t>(y0) * image.width + x0] +
                           wx * p[static_cast<std::size_t>(y0) * image.width + x1];
        const double bottom = (1.0 - wx) * p[static_cast<std::size_t>(y1) * image.width + x0] +
                              wx * p[static_cast<std::size_t>(y1) * image.width + x1];
        out.pixels[static_cast<std::size_t>(c) * out_plane + static_cast<std::size_t>(i) * out_size + j] =
            (1.0 - wy) * top + wy * bottom;
      }
    }
  }
  return out;
}

}  // namespace fewshot
