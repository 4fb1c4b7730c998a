#pragma once

// Minimal reverse-mode autodiff over NCHW double tensors: just enough
// convolutional machinery for small patch GANs and mask VAEs on a CPU.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "localdom/image.hpp"
#include "localdom/rng.hpp"

namespace localdom::nn {

struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const { return static_cast<std::size_t>(n) * c * h * w; }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  double at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  // Stacks same-shaped images into a batch.
  static Tensor from_images(std::span<const Image> images);
  static Tensor from_image(const Image& image);
  Image to_image(int n) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }

  Shape shape_;
  std::vector<double> data_;
};

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward;

  // Lazily zero-initialized gradient buffer.
  Tensor& grad_buffer();
};

Var constant(Tensor value);
Var parameter(Tensor value);

// Seeds d(root)/d(root) = 1 for every element of root and propagates to all
// ancestors that require gradients.
void backward(const Var& root);

struct ConvOptions {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
};

Var conv2d(const Var& x, const Var& weight, const Var& bias, ConvOptions opt = {});
Var linear(const Var& x, const Var& weight, const Var& bias);
Var reshape(const Var& x, Shape shape);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double s);
Var add_scalar(const Var& x, double s);
Var leaky_relu(const Var& x, double slope = 0.2);
Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var exp(const Var& x);
Var square(const Var& x);
Var abs(const Var& x);
Var reciprocal(const Var& x);
// Identity inside [0,1], clamped outside with zero gradient there.
Var clamp01(const Var& x);
// Nearest-neighbour resize; src index = floor(i * in / out).
Var upsample_to(const Var& x, int height, int width);
Var concat_channels(const Var& a, const Var& b);
Var mean(const Var& x);
Var sum(const Var& x);
// Mean over (c,h,w) per sample -> (n,1,1,1).
Var mean_per_sample(const Var& x);
// Luminance for 3-channel inputs, pass-through for 1 channel -> (n,1,h,w).
Var gray(const Var& x);

// 0.5 * sum(mu^2 + exp(logvar) - logvar - 1) per sample -> (n,1,1,1).
Var gaussian_kl(const Var& mu, const Var& logvar);
// -sum(t log p + (1-t) log(1-p)) per sample, p clamped to [eps, 1-eps].
Var bernoulli_nll(const Var& probs, const Tensor& target, double eps);
// Per-channel kernel-weighted histogram -> (n,c,bins,1); each pixel spreads
// unit mass over bins with Gaussian weights of the given bandwidth.
Var soft_histogram(const Var& x, int bins, double bandwidth);
// sum_k ref_k log(ref_k / max(gen_k, eps)), averaged over channels -> (n,1,1,1).
Var histogram_kl(const Tensor& reference, const Var& generated, double eps);
// Variance of the Laplacian-of-Gaussian response of the luminance -> (n,1,1,1).
Var log_variance(const Var& x, double sigma);

class ParamList {
 public:
  Var add(std::string name, Tensor value);
  void append(const std::string& prefix, const ParamList& other);

  const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
  std::size_t count() const;
  void zero_grad() const;
  Var find(const std::string& name) const;

 private:
  std::vector<std::pair<std::string, Var>> items_;
};

struct Conv2d {
  Var weight;
  Var bias;
  ConvOptions options;

  // He-normal init scaled by gain; gain == 0 gives an all-zero layer.
  static Conv2d create(ParamList& params, const std::string& name, int in_ch, int out_ch, int kernel, ConvOptions opt,
                       Rng& rng, double gain = 1.0);
  Var operator()(const Var& x) const { return conv2d(x, weight, bias, options); }
};

struct Linear {
  Var weight;
  Var bias;

  static Linear create(ParamList& params, const std::string& name, int in_features, int out_features, Rng& rng,
                       double gain = 1.0);
  Var operator()(const Var& x) const { return linear(x, weight, bias); }
};

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(const ParamList& params, AdamOptions options);

  void step();
  long step_count() const { return t_; }

  // Moment buffers, in parameter order (for checkpointing).
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  void set_step_count(long t) { t_ = t; }

 private:
  std::vector<Var> params_;
  AdamOptions options_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  long t_ = 0;
};

}  // namespace localdom::nn
