#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace localdom {

// Planar (channel-major) real-valued image. Pixel values live in [0,1].
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, double fill = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int c, int row, int col) { return data_[(c * plane_size()) + static_cast<std::size_t>(row) * width_ + col]; }
  double at(int c, int row, int col) const {
    return data_[(c * plane_size()) + static_cast<std::size_t>(row) * width_ + col];
  }

  std::span<double> plane(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
  std::span<const double> plane(int c) const { return {data_.data() + c * plane_size(), plane_size()}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Image& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }
  bool same_size(const Image& other) const { return height_ == other.height_ && width_ == other.width_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

// Dense 2-D integer grid (label maps, domain maps).
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, T fill = T{})
      : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width, fill) {}

  int height() const { return height_; }
  int width() const { return width_; }
  T& at(int row, int col) { return data_[static_cast<std::size_t>(row) * width_ + col]; }
  const T& at(int row, int col) const { return data_[static_cast<std::size_t>(row) * width_ + col]; }
  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

// PNG I/O. 8-bit only on write; value v is stored as round(255*v).
Image load_png(const std::filesystem::path& path);
void save_png(const Image& image, const std::filesystem::path& path);
Grid<int> load_label_png(const std::filesystem::path& path);
void save_label_png(const Grid<int>& labels, const std::filesystem::path& path);

// Quantizes to the 8-bit grid used by PNG storage.
Image quantize8(const Image& image);

// Luminance 0.299R + 0.587G + 0.114B; single-channel images pass through.
Image to_gray(const Image& image);

Image crop(const Image& image, int top, int left, int height, int width);
void paste(Image& dst, const Image& src, int top, int left);

// Separable Gaussian blur with replicate borders. sigma <= 0 returns a copy.
Image gaussian_blur(const Image& image, double sigma);

// Laplacian-of-Gaussian on a single plane (Gaussian sigma, then the 4-neighbour
// Laplacian), replicate borders. log_filter_adjoint is its exact transpose.
std::vector<double> log_filter(std::span<const double> plane, int height, int width, double sigma);
std::vector<double> log_filter_adjoint(std::span<const double> grad, int height, int width, double sigma);

double max_abs_diff(const Image& a, const Image& b);

}  // namespace localdom
