#include "ecnet/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <vector>

namespace ecnet {

namespace {

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error(path.string() + ": " + what);
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

uint8_t quantize(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<uint8_t>(std::lround(c * 255.0f));  // half away from zero
}

// --- PNG ---------------------------------------------------------------

Tensor<float> load_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) fail(path, "cannot open");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path, "libpng init failed");
  }
  std::vector<uint8_t> raw;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path, "PNG decode error");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int channels = png_get_channels(png, info);
  const int out_depth = png_get_bit_depth(png, info);
  if (channels != 1 && channels != 3) fail(path, "unsupported channel count after expansion");

  const size_t stride = png_get_rowbytes(png, info);
  raw.resize(stride * height);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = raw.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor<float> out = Tensor<float>::zeros(
      {static_cast<Index>(channels), static_cast<Index>(height), static_cast<Index>(width)});
  auto ov = out.values();
  const size_t plane = static_cast<size_t>(width) * height;
  if (out_depth == 8) {
    for (size_t y = 0; y < height; ++y)
      for (size_t x = 0; x < width; ++x)
        for (int c = 0; c < channels; ++c)
          ov[static_cast<size_t>(c) * plane + y * width + x] =
              static_cast<float>(raw[y * stride + x * static_cast<size_t>(channels) + static_cast<size_t>(c)]) / 255.0f;
  } else if (out_depth == 16) {
    // PNG serves 16-bit big-endian
    for (size_t y = 0; y < height; ++y)
      for (size_t x = 0; x < width; ++x)
        for (int c = 0; c < channels; ++c) {
          const size_t off = y * stride + (x * static_cast<size_t>(channels) + static_cast<size_t>(c)) * 2;
          const uint16_t v = static_cast<uint16_t>((raw[off] << 8) | raw[off + 1]);
          ov[static_cast<size_t>(c) * plane + y * width + x] = static_cast<float>(v) / 65535.0f;
        }
  } else {
    fail(path, "unsupported bit depth " + std::to_string(out_depth));
  }
  return out;
}

void save_png(const Tensor<float>& image, const std::filesystem::path& path) {
  const Index C = image.shape()[0], H = image.shape()[1], W = image.shape()[2];
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) fail(path, "cannot open for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail(path, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(path, "PNG encode error");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8,
               C == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<uint8_t> row(static_cast<size_t>(W * C));
  auto iv = image.values();
  const size_t plane = static_cast<size_t>(H * W);
  for (Index y = 0; y < H; ++y) {
    for (Index x = 0; x < W; ++x)
      for (Index c = 0; c < C; ++c)
        row[static_cast<size_t>(x * C + c)] =
            quantize(iv[static_cast<size_t>(c) * plane + static_cast<size_t>(y * W + x)]);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// --- PPM / PGM ----------------------------------------------------------

int read_pnm_token(std::istream& in) {
  while (true) {
    int ch = in.peek();
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      break;
    }
  }
  int value = -1;
  in >> value;
  return value;
}

Tensor<float> load_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  char magic[2];
  in.read(magic, 2);
  const bool gray = magic[1] == '5';
  if (magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) fail(path, "not a binary PPM/PGM");
  const int w = read_pnm_token(in);
  const int h = read_pnm_token(in);
  const int maxval = read_pnm_token(in);
  if (w <= 0 || h <= 0 || (maxval != 255 && maxval != 65535)) fail(path, "malformed PNM header");
  in.get();  // single whitespace before the payload

  const int channels = gray ? 1 : 3;
  const size_t count = static_cast<size_t>(w) * static_cast<size_t>(h) * static_cast<size_t>(channels);
  const size_t bytes = count * (maxval == 255 ? 1 : 2);
  std::vector<uint8_t> raw(bytes);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  if (static_cast<size_t>(in.gcount()) != bytes) fail(path, "truncated PNM payload");

  Tensor<float> out = Tensor<float>::zeros({channels, h, w});
  auto ov = out.values();
  const size_t plane = static_cast<size_t>(w) * static_cast<size_t>(h);
  for (size_t i = 0; i < plane; ++i)
    for (int c = 0; c < channels; ++c) {
      float v;
      if (maxval == 255) {
        v = static_cast<float>(raw[i * static_cast<size_t>(channels) + static_cast<size_t>(c)]) / 255.0f;
      } else {
        // 16-bit PNM payloads are big-endian
        const size_t off = (i * static_cast<size_t>(channels) + static_cast<size_t>(c)) * 2;
        v = static_cast<float>((raw[off] << 8) | raw[off + 1]) / 65535.0f;
      }
      ov[static_cast<size_t>(c) * plane + i] = v;
    }
  return out;
}

void save_pnm(const Tensor<float>& image, const std::filesystem::path& path) {
  const Index C = image.shape()[0], H = image.shape()[1], W = image.shape()[2];
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open for writing");
  out << (C == 1 ? "P5\n" : "P6\n") << W << ' ' << H << "\n255\n";
  auto iv = image.values();
  const size_t plane = static_cast<size_t>(H * W);
  std::vector<uint8_t> row(static_cast<size_t>(W * C));
  for (Index y = 0; y < H; ++y) {
    for (Index x = 0; x < W; ++x)
      for (Index c = 0; c < C; ++c)
        row[static_cast<size_t>(x * C + c)] =
            quantize(iv[static_cast<size_t>(c) * plane + static_cast<size_t>(y * W + x)]);
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) fail(path, "write failed");
}

}  // namespace

Tensor<float> load_image(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) fail(path, "cannot open");
  uint8_t sig[8] = {};
  probe.read(reinterpret_cast<char*>(sig), 8);
  probe.close();
  if (png_sig_cmp(sig, 0, 8) == 0) return load_png(path);
  if (sig[0] == 'P' && (sig[1] == '5' || sig[1] == '6')) return load_pnm(path);
  fail(path, "unrecognized image format");
}

void save_image(const Tensor<float>& image, const std::filesystem::path& path) {
  if (image.shape().rank() != 3 || (image.shape()[0] != 1 && image.shape()[0] != 3))
    throw std::invalid_argument("save_image: expected CHW with 1 or 3 channels, got " +
                                image.shape().str());
  const auto ext = path.extension().string();
  if (ext == ".ppm" || ext == ".pgm")
    save_pnm(image, path);
  else if (ext == ".png")
    save_png(image, path);
  else
    fail(path, "unsupported output extension '" + ext + "'");
}

void save_tensor_raw(const Tensor<float>& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open for writing");
  const char magic[4] = {'E', 'C', 'N', 'I'};
  out.write(magic, 4);
  const uint32_t version = 1;
  const uint32_t rank = static_cast<uint32_t>(t.shape().rank());
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&rank), 4);
  for (Index d = 0; d < t.shape().rank(); ++d) {
    const uint32_t extent = static_cast<uint32_t>(t.shape()[d]);
    out.write(reinterpret_cast<const char*>(&extent), 4);
  }
  out.write(reinterpret_cast<const char*>(t.values().data()),
            static_cast<std::streamsize>(t.numel() * static_cast<Index>(sizeof(float))));
  if (!out) fail(path, "write failed");
}

Tensor<float> load_tensor_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "ECNI", 4) != 0) fail(path, "bad magic");
  uint32_t version = 0, rank = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&rank), 4);
  if (version != 1) fail(path, "unsupported version " + std::to_string(version));
  if (rank == 0 || rank > 8) fail(path, "implausible rank " + std::to_string(rank));
  std::vector<Index> dims(rank);
  for (uint32_t d = 0; d < rank; ++d) {
    uint32_t extent = 0;
    in.read(reinterpret_cast<char*>(&extent), 4);
    dims[d] = static_cast<Index>(extent);
  }
  Shape shape(dims);
  std::vector<float> payload(static_cast<size_t>(shape.numel()));
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (static_cast<size_t>(in.gcount()) != payload.size() * sizeof(float))
    fail(path, "truncated payload");
  return Tensor<float>::from_data(shape, std::move(payload));
}

}  // namespace ecnet
