#include "pmk/imagecore.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "pmk/error.hpp"

namespace pmk {

ImageBuffer::ImageBuffer(int width, int height)
    : ImageBuffer(width, height,
                  std::vector<std::uint8_t>(static_cast<std::size_t>(std::max(width, 0)) *
                                            static_cast<std::size_t>(std::max(height, 0)) * 3)) {}

ImageBuffer::ImageBuffer(int width, int height, std::vector<std::uint8_t> data)
    : width_(width), height_(height), data_(std::move(data)) {
  if (width < 1 || height < 1) {
    throw Error(ErrorKind::config, "image dimensions must be >= 1, got " + std::to_string(width) + "x" +
                                       std::to_string(height));
  }
  if (data_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3) {
    throw Error(ErrorKind::config, "image data length does not match width*height*3");
  }
}

bool in_unit_range(const Tensor& t) noexcept {
  return std::all_of(t.data.begin(), t.data.end(), [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; });
}

PatchTensor::PatchTensor(Tensor t) : Tensor(std::move(t)) {
  assert(in_unit_range(*this));
}

// ---------------------------------------------------------------------------
// PPM

namespace {

[[noreturn]] void decode_fail(std::size_t offset, const std::string& what) {
  throw Error(ErrorKind::decode, "decode error at byte " + std::to_string(offset) + ": " + what);
}

class PpmHeaderReader {
 public:
  explicit PpmHeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const auto c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(c)) {
        ++pos_;
      } else {
        return;
      }
    }
  }

  int read_uint(const char* field) {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) decode_fail(pos_, std::string("expected ") + field);
    long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > (1 << 24)) decode_fail(pos_, std::string(field) + " too large");
      ++pos_;
    }
    return static_cast<int>(value);
  }

  std::size_t pos_ = 0;

 private:
  std::span<const std::uint8_t> bytes_;
};

ImageBuffer decode_ppm(std::span<const std::uint8_t> bytes) {
  PpmHeaderReader reader(bytes);
  reader.pos_ = 2;
  const int width = reader.read_uint("width");
  const int height = reader.read_uint("height");
  const std::size_t maxval_at = reader.pos_;
  const int maxval = reader.read_uint("maxval");
  if (width < 1 || height < 1) decode_fail(maxval_at, "zero image dimension");
  if (maxval != 255) decode_fail(maxval_at, "only maxval 255 is supported");
  if (reader.pos_ >= bytes.size() || !std::isspace(bytes[reader.pos_])) {
    decode_fail(reader.pos_, "expected single whitespace before raster");
  }
  ++reader.pos_;
  const std::size_t need = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3;
  if (bytes.size() - reader.pos_ < need) decode_fail(bytes.size(), "truncated raster");
  std::vector<std::uint8_t> data(bytes.begin() + static_cast<std::ptrdiff_t>(reader.pos_),
                                 bytes.begin() + static_cast<std::ptrdiff_t>(reader.pos_ + need));
  return ImageBuffer(width, height, std::move(data));
}

// ---------------------------------------------------------------------------
// PNG

struct PngReadState {
  std::span<const std::uint8_t> bytes;
  std::size_t offset = 0;
  std::string message;
};

void png_read_fn(png_structp png, png_bytep out, png_size_t length) {
  auto* state = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (state->bytes.size() - state->offset < length) {
    state->message = "truncated stream";
    state->offset = state->bytes.size();
    png_longjmp(png, 1);
  }
  std::memcpy(out, state->bytes.data() + state->offset, length);
  state->offset += length;
}

void png_error_fn(png_structp png, png_const_charp msg) {
  auto* state = static_cast<PngReadState*>(png_get_error_ptr(png));
  if (state != nullptr && state->message.empty()) state->message = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

ImageBuffer decode_png(std::span<const std::uint8_t> bytes) {
  PngReadState state{bytes};
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &state, png_error_fn, png_warning_fn);
  if (png == nullptr) throw Error(ErrorKind::decode, "decode error at byte 0: libpng init failed");
  png_infop info = png_create_info_struct(png);
  std::vector<std::uint8_t> data;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0;
  png_uint_32 height = 0;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    decode_fail(state.offset, "png: " + state.message);
  }
  png_set_read_fn(png, &state, png_read_fn);
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);
  if (png_get_rowbytes(png, info) != static_cast<png_size_t>(width) * 3) {
    state.message = "unsupported pixel layout";
    png_longjmp(png, 1);
  }
  data.resize(static_cast<std::size_t>(width) * height * 3);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = data.data() + static_cast<std::size_t>(y) * width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return ImageBuffer(static_cast<int>(width), static_cast<int>(height), std::move(data));
}

void png_write_fn(png_structp png, png_bytep in, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), in, in + length);
}

void png_flush_fn(png_structp) {}

void png_write_error_fn(png_structp png, png_const_charp) { png_longjmp(png, 1); }

}  // namespace

ImageBuffer decode_image(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes);
  if (bytes.size() >= 8 && std::equal(std::begin(kPngSig), std::end(kPngSig), bytes.begin())) return decode_png(bytes);
  decode_fail(0, "unrecognized image signature (expected PNG or binary PPM)");
}

std::vector<std::uint8_t> encode_ppm(const ImageBuffer& img) {
  const std::string header = "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.data().begin(), img.data().end());
  return out;
}

std::vector<std::uint8_t> encode_png(const ImageBuffer& img) {
  std::vector<std::uint8_t> out;
  std::vector<png_const_bytep> rows(static_cast<std::size_t>(img.height()));
  for (int y = 0; y < img.height(); ++y) rows[y] = img.data().data() + static_cast<std::size_t>(y) * img.width() * 3;

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_write_error_fn, png_warning_fn);
  if (png == nullptr) throw Error(ErrorKind::io, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::io, "png encode failed");
  }
  png_set_write_fn(png, &out, png_write_fn, png_flush_fn);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()), static_cast<png_uint_32>(img.height()), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::io, "short write to " + path.string());
}

ImageBuffer read_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_image(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

void write_image(const std::filesystem::path& path, const ImageBuffer& img) {
  const auto bytes = path.extension() == ".ppm" ? encode_ppm(img) : encode_png(img);
  write_file(path, bytes);
}

// ---------------------------------------------------------------------------
// Tensor conversion and cropping

PatchTensor to_tensor(const ImageBuffer& img) {
  PatchTensor t(3, img.height(), img.width());
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) t.at(c, y, x) = img.at(x, y, c) / 255.0;
  return t;
}

ImageBuffer from_tensor(const Tensor& t) {
  if (t.channels != 3) throw Error(ErrorKind::config, "from_tensor expects 3 channels");
  ImageBuffer img(t.width, t.height);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < t.height; ++y)
      for (int x = 0; x < t.width; ++x) {
        const double v = std::clamp(t.at(c, y, x), 0.0, 1.0);
        img.at(x, y, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return img;
}

PatchTensor extract_patch(const ImageBuffer& img, int x, int y, int size) {
  if (size < 1 || x < 0 || y < 0 || x + size > img.width() || y + size > img.height()) {
    throw Error(ErrorKind::range, "patch (" + std::to_string(x) + "," + std::to_string(y) + ") size " +
                                      std::to_string(size) + " does not fit in " + std::to_string(img.width()) +
                                      "x" + std::to_string(img.height()));
  }
  PatchTensor t(3, size, size);
  for (int c = 0; c < 3; ++c)
    for (int dy = 0; dy < size; ++dy)
      for (int dx = 0; dx < size; ++dx) t.at(c, dy, dx) = img.at(x + dx, y + dy, c) / 255.0;
  return t;
}

std::pair<int, int> random_patch_origin(const ImageBuffer& img, int size, Rng& rng) {
  if (size < 1 || size > img.width() || size > img.height()) {
    throw Error(ErrorKind::range, "patch size " + std::to_string(size) + " exceeds image");
  }
  const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.width() - size + 1)));
  const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.height() - size + 1)));
  return {x, y};
}

PatchTensor extract_patch(const ImageBuffer& img, Rng& rng, int size) {
  const auto [x, y] = random_patch_origin(img, size, rng);
  return extract_patch(img, x, y, size);
}

}  // namespace pmk
