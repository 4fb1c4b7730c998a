#include "localdom/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "localdom/error.hpp"

namespace localdom {

Image::Image(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  if (height < 0 || width < 0 || channels < 0) {
    throw Error(ErrorCode::kInvalidArgument, "negative image dimension");
  }
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct RawPng {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;  // interleaved
};

RawPng read_raw_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw Error(ErrorCode::kMissingFile, "cannot open " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kIoError, "libpng init failed");
  }
  RawPng raw;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kIoError, "corrupt PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);

  const png_byte color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  raw.width = static_cast<int>(png_get_image_width(png, info));
  raw.height = static_cast<int>(png_get_image_height(png, info));
  raw.channels = png_get_channels(png, info);
  raw.pixels.resize(static_cast<std::size_t>(raw.width) * raw.height * raw.channels);
  rows.resize(raw.height);
  for (int r = 0; r < raw.height; ++r) {
    rows[r] = raw.pixels.data() + static_cast<std::size_t>(r) * raw.width * raw.channels;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return raw;
}

void write_raw_png(const std::filesystem::path& path, int height, int width, int channels,
                   const std::vector<std::uint8_t>& pixels) {
  if (channels != 1 && channels != 3) {
    throw Error(ErrorCode::kInvalidArgument, "PNG output supports 1 or 3 channels");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw Error(ErrorCode::kIoError, "cannot write " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIoError, "libpng init failed");
  }
  std::vector<png_bytep> rows(height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIoError, "PNG write failed " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, 8, channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < height; ++r) {
    rows[r] = const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(r) * width * channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

Image load_png(const std::filesystem::path& path) {
  const RawPng raw = read_raw_png(path);
  Image image(raw.height, raw.width, raw.channels);
  for (int r = 0; r < raw.height; ++r) {
    for (int c = 0; c < raw.width; ++c) {
      for (int ch = 0; ch < raw.channels; ++ch) {
        const std::size_t idx = (static_cast<std::size_t>(r) * raw.width + c) * raw.channels + ch;
        image.at(ch, r, c) = raw.pixels[idx] / 255.0;
      }
    }
  }
  return image;
}

void save_png(const Image& image, const std::filesystem::path& path) {
  std::vector<std::uint8_t> pixels(image.size());
  const int ch_count = image.channels();
  for (int r = 0; r < image.height(); ++r) {
    for (int c = 0; c < image.width(); ++c) {
      for (int ch = 0; ch < ch_count; ++ch) {
        pixels[(static_cast<std::size_t>(r) * image.width() + c) * ch_count + ch] = to_byte(image.at(ch, r, c));
      }
    }
  }
  write_raw_png(path, image.height(), image.width(), ch_count, pixels);
}

Grid<int> load_label_png(const std::filesystem::path& path) {
  const RawPng raw = read_raw_png(path);
  if (raw.channels != 1) throw Error(ErrorCode::kBadSchema, "label PNG must be single-channel: " + path.string());
  Grid<int> labels(raw.height, raw.width);
  for (std::size_t i = 0; i < raw.pixels.size(); ++i) labels.data()[i] = raw.pixels[i];
  return labels;
}

void save_label_png(const Grid<int>& labels, const std::filesystem::path& path) {
  std::vector<std::uint8_t> pixels(labels.data().size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const int v = labels.data()[i];
    if (v < 0 || v > 255) throw Error(ErrorCode::kInvalidArgument, "label id out of 8-bit range");
    pixels[i] = static_cast<std::uint8_t>(v);
  }
  write_raw_png(path, labels.height(), labels.width(), 1, pixels);
}

Image quantize8(const Image& image) {
  Image out = image;
  for (double& v : out.data()) v = to_byte(v) / 255.0;
  return out;
}

Image to_gray(const Image& image) {
  if (image.channels() == 1) return image;
  if (image.channels() != 3) throw Error(ErrorCode::kShapeMismatch, "gray conversion expects 1 or 3 channels");
  Image gray(image.height(), image.width(), 1);
  const auto r = image.plane(0);
  const auto g = image.plane(1);
  const auto b = image.plane(2);
  auto out = gray.plane(0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
  return gray;
}

Image crop(const Image& image, int top, int left, int height, int width) {
  if (top < 0 || left < 0 || top + height > image.height() || left + width > image.width()) {
    throw Error(ErrorCode::kOutOfRange, "crop window leaves the image");
  }
  Image out(height, width, image.channels());
  for (int ch = 0; ch < image.channels(); ++ch) {
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) out.at(ch, r, c) = image.at(ch, top + r, left + c);
    }
  }
  return out;
}

void paste(Image& dst, const Image& src, int top, int left) {
  if (dst.channels() != src.channels() || top < 0 || left < 0 || top + src.height() > dst.height() ||
      left + src.width() > dst.width()) {
    throw Error(ErrorCode::kOutOfRange, "paste window leaves the image");
  }
  for (int ch = 0; ch < src.channels(); ++ch) {
    for (int r = 0; r < src.height(); ++r) {
      for (int c = 0; c < src.width(); ++c) dst.at(ch, top + r, left + c) = src.at(ch, r, c);
    }
  }
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

// out[r][c] = sum_k w[k] * in[clamp(r + k - radius)][c] (vertical) or along columns.
void blur_pass(const double* in, double* out, int height, int width, const std::vector<double>& k, bool vertical) {
  const int radius = static_cast<int>(k.size() / 2);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t) {
        const int rr = vertical ? std::clamp(r + t, 0, height - 1) : r;
        const int cc = vertical ? c : std::clamp(c + t, 0, width - 1);
        acc += k[t + radius] * in[static_cast<std::size_t>(rr) * width + cc];
      }
      out[static_cast<std::size_t>(r) * width + c] = acc;
    }
  }
}

void blur_pass_adjoint(const double* gout, double* gin, int height, int width, const std::vector<double>& k,
                       bool vertical) {
  const int radius = static_cast<int>(k.size() / 2);
  std::fill(gin, gin + static_cast<std::size_t>(height) * width, 0.0);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const double g = gout[static_cast<std::size_t>(r) * width + c];
      for (int t = -radius; t <= radius; ++t) {
        const int rr = vertical ? std::clamp(r + t, 0, height - 1) : r;
        const int cc = vertical ? c : std::clamp(c + t, 0, width - 1);
        gin[static_cast<std::size_t>(rr) * width + cc] += k[t + radius] * g;
      }
    }
  }
}

void laplacian(const double* in, double* out, int height, int width) {
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const double center = in[static_cast<std::size_t>(r) * width + c];
      const double up = in[static_cast<std::size_t>(std::max(r - 1, 0)) * width + c];
      const double down = in[static_cast<std::size_t>(std::min(r + 1, height - 1)) * width + c];
      const double left = in[static_cast<std::size_t>(r) * width + std::max(c - 1, 0)];
      const double right = in[static_cast<std::size_t>(r) * width + std::min(c + 1, width - 1)];
      out[static_cast<std::size_t>(r) * width + c] = up + down + left + right - 4.0 * center;
    }
  }
}

void laplacian_adjoint(const double* gout, double* gin, int height, int width) {
  std::fill(gin, gin + static_cast<std::size_t>(height) * width, 0.0);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const double g = gout[static_cast<std::size_t>(r) * width + c];
      gin[static_cast<std::size_t>(r) * width + c] -= 4.0 * g;
      gin[static_cast<std::size_t>(std::max(r - 1, 0)) * width + c] += g;
      gin[static_cast<std::size_t>(std::min(r + 1, height - 1)) * width + c] += g;
      gin[static_cast<std::size_t>(r) * width + std::max(c - 1, 0)] += g;
      gin[static_cast<std::size_t>(r) * width + std::min(c + 1, width - 1)] += g;
    }
  }
}

}  // namespace

Image gaussian_blur(const Image& image, double sigma) {
  if (sigma <= 0.0) return image;
  const auto k = gaussian_kernel(sigma);
  Image out(image.height(), image.width(), image.channels());
  std::vector<double> tmp(image.plane_size());
  for (int ch = 0; ch < image.channels(); ++ch) {
    blur_pass(image.plane(ch).data(), tmp.data(), image.height(), image.width(), k, true);
    blur_pass(tmp.data(), out.plane(ch).data(), image.height(), image.width(), k, false);
  }
  return out;
}

std::vector<double> log_filter(std::span<const double> plane, int height, int width, double sigma) {
  const std::size_t n = static_cast<std::size_t>(height) * width;
  std::vector<double> a(n), b(n);
  if (sigma > 0.0) {
    const auto k = gaussian_kernel(sigma);
    blur_pass(plane.data(), a.data(), height, width, k, true);
    blur_pass(a.data(), b.data(), height, width, k, false);
  } else {
    std::copy(plane.begin(), plane.end(), b.begin());
  }
  laplacian(b.data(), a.data(), height, width);
  return a;
}

std::vector<double> log_filter_adjoint(std::span<const double> grad, int height, int width, double sigma) {
  const std::size_t n = static_cast<std::size_t>(height) * width;
  std::vector<double> a(n), b(n);
  laplacian_adjoint(grad.data(), a.data(), height, width);
  if (sigma > 0.0) {
    const auto k = gaussian_kernel(sigma);
    blur_pass_adjoint(a.data(), b.data(), height, width, k, false);
    blur_pass_adjoint(b.data(), a.data(), height, width, k, true);
  }
  return a;
}

double max_abs_diff(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw Error(ErrorCode::kShapeMismatch, "max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace localdom
