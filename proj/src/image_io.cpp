#include "vipguard/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <jpeglib.h>

namespace vipguard::image_io {

void write_ppm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::io, "cannot open " + path.string() + " for writing");
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.data.data()),
            static_cast<std::streamsize>(image.data.size()));
  require(static_cast<bool>(out), ErrorKind::io, "failed writing " + path.string());
}

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  char c = 0;
  while (in.get(c)) {
    if (c == '#') {
      std::string ignore;
      std::getline(in, ignore);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  const std::string magic = next_token(in);
  require(magic == "P6", ErrorKind::format, path.string() + ": not a binary PPM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token(in));
    h = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    fail(ErrorKind::format, path.string() + ": malformed PPM header");
  }
  require(w > 0 && h > 0 && maxval == 255, ErrorKind::format,
          path.string() + ": unsupported PPM geometry");
  Image img(w, h);
  in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  require(in.gcount() == static_cast<std::streamsize>(img.data.size()), ErrorKind::format,
          path.string() + ": truncated PPM payload");
  return img;
}

namespace {

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void on_jpeg_error(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

}  // namespace

std::vector<std::uint8_t> encode_jpeg(const Image& image, int quality) {
  require(!image.empty(), ErrorKind::invalid_argument, "cannot encode an empty image");
  require(quality >= 1 && quality <= 100, ErrorKind::invalid_argument, "jpeg quality out of range");
  jpeg_compress_struct cinfo{};
  JpegErrorManager jerr{};
  cinfo.err = jpeg_std_error(&jerr.base);
  jerr.base.error_exit = on_jpeg_error;
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    fail(ErrorKind::format, std::string("jpeg encode: ") + jerr.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(image.width);
  cinfo.image_height = static_cast<JDIMENSION>(image.height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    auto* row = const_cast<JSAMPLE*>(&image.data[image.index(static_cast<int>(cinfo.next_scanline), 0, 0)]);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::vector<std::uint8_t> out(buffer, buffer + size);
  std::free(buffer);
  return out;
}

Image decode_jpeg(const std::vector<std::uint8_t>& bytes) {
  require(!bytes.empty(), ErrorKind::format, "empty jpeg stream");
  jpeg_decompress_struct cinfo{};
  JpegErrorManager jerr{};
  cinfo.err = jpeg_std_error(&jerr.base);
  jerr.base.error_exit = on_jpeg_error;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_decompress(&cinfo);
    fail(ErrorKind::format, std::string("jpeg decode: ") + jerr.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  Image img(static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPLE* row = &img.data[img.index(static_cast<int>(cinfo.output_scanline), 0, 0)];
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

Image resize(const Image& image, int width, int height) {
  require(!image.empty() && width > 0 && height > 0, ErrorKind::invalid_argument, "bad resize request");
  if (image.width == width && image.height == height) return image;
  Image out(width, height);
  const double sx = static_cast<double>(image.width) / width;
  const double sy = static_cast<double>(image.height) / height;
  if (sx >= 1.0 && sy >= 1.0) {
    // Area average over the source footprint of each destination pixel.
    for (int y = 0; y < height; ++y) {
      const double y0 = y * sy, y1 = (y + 1) * sy;
      for (int x = 0; x < width; ++x) {
        const double x0 = x * sx, x1 = (x + 1) * sx;
        double acc[3] = {0, 0, 0};
        double wsum = 0;
        for (int yy = static_cast<int>(y0); yy < std::min(image.height, static_cast<int>(std::ceil(y1))); ++yy) {
          const double wy = std::min<double>(yy + 1, y1) - std::max<double>(yy, y0);
          for (int xx = static_cast<int>(x0); xx < std::min(image.width, static_cast<int>(std::ceil(x1))); ++xx) {
            const double wx = std::min<double>(xx + 1, x1) - std::max<double>(xx, x0);
            const double w = wx * wy;
            if (w <= 0) continue;
            for (int c = 0; c < 3; ++c) acc[c] += w * image.at(yy, xx, c);
            wsum += w;
          }
        }
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = clamp_u8(acc[c] / wsum);
      }
    }
    return out;
  }
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double tx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = image.at(y0, x0, c) * (1 - tx) + image.at(y0, x1, c) * tx;
        const double bot = image.at(y1, x0, c) * (1 - tx) + image.at(y1, x1, c) * tx;
        out.at(y, x, c) = clamp_u8(top * (1 - ty) + bot * ty);
      }
    }
  }
  return out;
}

}  // namespace vipguard::image_io
