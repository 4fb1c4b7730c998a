#include "localdom/nn.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "localdom/error.hpp"

namespace localdom::nn {

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + ")";
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) throw Error(ErrorCode::kShapeMismatch, "tensor data does not match shape");
}

Tensor Tensor::from_images(std::span<const Image> images) {
  if (images.empty()) throw Error(ErrorCode::kEmptySet, "empty image batch");
  const Image& first = images.front();
  Tensor t({static_cast<int>(images.size()), first.channels(), first.height(), first.width()});
  const std::size_t per = first.size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!images[i].same_shape(first)) throw Error(ErrorCode::kShapeMismatch, "batch images differ in shape");
    std::copy(images[i].data().begin(), images[i].data().end(), t.data_.begin() + i * per);
  }
  return t;
}

Tensor Tensor::from_image(const Image& image) { return from_images(std::span<const Image>(&image, 1)); }

Image Tensor::to_image(int n) const {
  Image out(shape_.h, shape_.w, shape_.c);
  const std::size_t per = shape_.sample_size();
  std::copy(data_.begin() + n * per, data_.begin() + (n + 1) * per, out.data().begin());
  return out;
}

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return node;
}

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return node;
}

namespace {

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad =
      std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p && p->requires_grad; });
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward = std::move(bw);
  }
  return node;
}

void require_same(const Var& a, const Var& b, const char* op) {
  if (!(a->value.shape() == b->value.shape())) {
    throw Error(ErrorCode::kShapeMismatch, std::string(op) + ": " + to_string(a->value.shape()) + " vs " +
                                               to_string(b->value.shape()));
  }
}

template <typename Fwd, typename Deriv>
Var unary(const Var& x, Fwd fwd, Deriv deriv) {
  Tensor out(x->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x->value[i]);
  return make_node(std::move(out), {x}, [deriv](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(in.value[i], self.value[i]);
  });
}

}  // namespace

void backward(const Var& root) {
  if (!root->requires_grad) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  Tensor& seed = root->grad_buffer();
  std::fill(seed.data().begin(), seed.data().end(), 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, ConvOptions opt) {
  const Shape xs = x->value.shape();
  const Shape ws = weight->value.shape();  // (out, in, k, k)
  if (ws.c != xs.c) throw Error(ErrorCode::kShapeMismatch, "conv2d channel mismatch");
  const int k = ws.h;
  const int s = opt.stride;
  const int p = opt.padding;
  const int d = opt.dilation;
  const int oh = (xs.h + 2 * p - d * (k - 1) - 1) / s + 1;
  const int ow = (xs.w + 2 * p - d * (k - 1) - 1) / s + 1;
  if (oh <= 0 || ow <= 0) throw Error(ErrorCode::kTooSmall, "conv2d input smaller than kernel");
  const Shape os{xs.n, ws.n, oh, ow};

  // Valid output-column range for kernel column kw.
  auto col_range = [=](int kw) {
    const int off = kw * d - p;
    int lo = off >= 0 ? 0 : (-off + s - 1) / s;
    int hi = (xs.w - 1 - off) >= 0 ? (xs.w - 1 - off) / s : -1;
    return std::pair<int, int>{lo, std::min(hi, ow - 1)};
  };

  Tensor out(os);
  const auto& X = x->value.data();
  const auto& W = weight->value.data();
  auto& O = out.data();
  for (int n = 0; n < xs.n; ++n) {
    for (int co = 0; co < ws.n; ++co) {
      double* op = O.data() + (static_cast<std::size_t>(n) * os.c + co) * oh * ow;
      const double b = bias ? bias->value[co] : 0.0;
      std::fill(op, op + static_cast<std::size_t>(oh) * ow, b);
      for (int ci = 0; ci < xs.c; ++ci) {
        const double* xp = X.data() + (static_cast<std::size_t>(n) * xs.c + ci) * xs.h * xs.w;
        for (int kh = 0; kh < k; ++kh) {
          for (int kw = 0; kw < k; ++kw) {
            const double wv = W[((static_cast<std::size_t>(co) * ws.c + ci) * k + kh) * k + kw];
            const auto [c0, c1] = col_range(kw);
            const int off_w = kw * d - p;
            for (int r = 0; r < oh; ++r) {
              const int ir = r * s + kh * d - p;
              if (ir < 0 || ir >= xs.h) continue;
              const double* xrow = xp + static_cast<std::size_t>(ir) * xs.w;
              double* orow = op + static_cast<std::size_t>(r) * ow;
              for (int c = c0; c <= c1; ++c) orow[c] += wv * xrow[c * s + off_w];
            }
          }
        }
      }
    }
  }

  std::vector<Var> parents{x, weight};
  if (bias) parents.push_back(bias);
  return make_node(std::move(out), std::move(parents), [=](Node& self) {
    Node& xin = *self.parents[0];
    Node& win = *self.parents[1];
    Node* bin = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
    const auto& G = self.grad.data();
    const auto& Xv = xin.value.data();
    const auto& Wv = win.value.data();
    double* gx = xin.requires_grad ? xin.grad_buffer().data().data() : nullptr;
    double* gw = win.requires_grad ? win.grad_buffer().data().data() : nullptr;
    if (bin && bin->requires_grad) {
      Tensor& gb = bin->grad_buffer();
      for (int n = 0; n < xs.n; ++n) {
        for (int co = 0; co < ws.n; ++co) {
          const double* gp = G.data() + (static_cast<std::size_t>(n) * os.c + co) * oh * ow;
          double acc = 0.0;
          for (int i = 0; i < oh * ow; ++i) acc += gp[i];
          gb[co] += acc;
        }
      }
    }
    for (int n = 0; n < xs.n; ++n) {
      for (int co = 0; co < ws.n; ++co) {
        const double* gp = G.data() + (static_cast<std::size_t>(n) * os.c + co) * oh * ow;
        for (int ci = 0; ci < xs.c; ++ci) {
          const std::size_t xoff = (static_cast<std::size_t>(n) * xs.c + ci) * xs.h * xs.w;
          for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
              const std::size_t widx = ((static_cast<std::size_t>(co) * ws.c + ci) * k + kh) * k + kw;
              const double wv = Wv[widx];
              const auto [c0, c1] = col_range(kw);
              const int off_w = kw * d - p;
              double wacc = 0.0;
              for (int r = 0; r < oh; ++r) {
                const int ir = r * s + kh * d - p;
                if (ir < 0 || ir >= xs.h) continue;
                const double* grow = gp + static_cast<std::size_t>(r) * ow;
                const double* xrow = Xv.data() + xoff + static_cast<std::size_t>(ir) * xs.w;
                if (gx) {
                  double* gxrow = gx + xoff + static_cast<std::size_t>(ir) * xs.w;
                  for (int c = c0; c <= c1; ++c) gxrow[c * s + off_w] += wv * grow[c];
                }
                if (gw) {
                  for (int c = c0; c <= c1; ++c) wacc += xrow[c * s + off_w] * grow[c];
                }
              }
              if (gw) gw[widx] += wacc;
            }
          }
        }
      }
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Shape xs = x->value.shape();
  const Shape ws = weight->value.shape();  // (out, in, 1, 1)
  const int in = static_cast<int>(xs.sample_size());
  if (ws.c != in) throw Error(ErrorCode::kShapeMismatch, "linear feature mismatch");
  Tensor out({xs.n, ws.n, 1, 1});
  for (int n = 0; n < xs.n; ++n) {
    for (int o = 0; o < ws.n; ++o) {
      double acc = bias ? bias->value[o] : 0.0;
      const double* wr = weight->value.data().data() + static_cast<std::size_t>(o) * in;
      const double* xr = x->value.data().data() + static_cast<std::size_t>(n) * in;
      for (int i = 0; i < in; ++i) acc += wr[i] * xr[i];
      out.at(n, o, 0, 0) = acc;
    }
  }
  std::vector<Var> parents{x, weight};
  if (bias) parents.push_back(bias);
  return make_node(std::move(out), std::move(parents), [=](Node& self) {
    Node& xin = *self.parents[0];
    Node& win = *self.parents[1];
    Node* bin = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
    for (int n = 0; n < xs.n; ++n) {
      for (int o = 0; o < ws.n; ++o) {
        const double g = self.grad.at(n, o, 0, 0);
        if (g == 0.0) continue;
        if (bin && bin->requires_grad) bin->grad_buffer()[o] += g;
        const std::size_t wo = static_cast<std::size_t>(o) * in;
        const std::size_t xo = static_cast<std::size_t>(n) * in;
        if (xin.requires_grad) {
          auto& gx = xin.grad_buffer().data();
          for (int i = 0; i < in; ++i) gx[xo + i] += g * win.value[wo + i];
        }
        if (win.requires_grad) {
          auto& gw = win.grad_buffer().data();
          for (int i = 0; i < in; ++i) gw[wo + i] += g * xin.value[xo + i];
        }
      }
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  if (shape.numel() != x->value.size()) throw Error(ErrorCode::kShapeMismatch, "reshape size mismatch");
  return make_node(Tensor(shape, x->value.data()), {x}, [](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer().data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      Node& in = *self.parents[k];
      if (!in.requires_grad) continue;
      auto& g = in.grad_buffer().data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] - b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      Node& in = *self.parents[k];
      if (!in.requires_grad) continue;
      const double sign = k == 0 ? 1.0 : -1.0;
      auto& g = in.grad_buffer().data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    Node& l = *self.parents[0];
    Node& r = *self.parents[1];
    if (l.requires_grad) {
      auto& g = l.grad_buffer().data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * r.value[i];
    }
    if (r.requires_grad) {
      auto& g = r.grad_buffer().data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * l.value[i];
    }
  });
}

Var scale(const Var& x, double s) {
  return unary(x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& x, double s) {
  return unary(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Var leaky_relu(const Var& x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var sigmoid(const Var& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(const Var& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var square(const Var& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var abs(const Var& x) {
  return unary(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var reciprocal(const Var& x) {
  return unary(x, [](double v) { return 1.0 / v; }, [](double v, double) { return -1.0 / (v * v); });
}

Var clamp01(const Var& x) {
  return unary(
      x, [](double v) { return std::clamp(v, 0.0, 1.0); },
      [](double v, double) { return (v >= 0.0 && v <= 1.0) ? 1.0 : 0.0; });
}

Var upsample_to(const Var& x, int height, int width) {
  const Shape xs = x->value.shape();
  Tensor out({xs.n, xs.c, height, width});
  std::vector<int> rmap(height), cmap(width);
  for (int r = 0; r < height; ++r) rmap[r] = static_cast<int>(static_cast<long>(r) * xs.h / height);
  for (int c = 0; c < width; ++c) cmap[c] = static_cast<int>(static_cast<long>(c) * xs.w / width);
  for (int n = 0; n < xs.n; ++n) {
    for (int ch = 0; ch < xs.c; ++ch) {
      for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) out.at(n, ch, r, c) = x->value.at(n, ch, rmap[r], cmap[c]);
      }
    }
  }
  return make_node(std::move(out), {x}, [=](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (int n = 0; n < xs.n; ++n) {
      for (int ch = 0; ch < xs.c; ++ch) {
        for (int r = 0; r < height; ++r) {
          for (int c = 0; c < width; ++c) g.at(n, ch, rmap[r], cmap[c]) += self.grad.at(n, ch, r, c);
        }
      }
    }
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Shape as = a->value.shape();
  const Shape bs = b->value.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w) throw Error(ErrorCode::kShapeMismatch, "concat shape mismatch");
  const Shape os{as.n, as.c + bs.c, as.h, as.w};
  Tensor out(os);
  const std::size_t pa = as.sample_size();
  const std::size_t pb = bs.sample_size();
  for (int n = 0; n < as.n; ++n) {
    std::copy_n(a->value.data().begin() + n * pa, pa, out.data().begin() + n * (pa + pb));
    std::copy_n(b->value.data().begin() + n * pb, pb, out.data().begin() + n * (pa + pb) + pa);
  }
  return make_node(std::move(out), {a, b}, [=](Node& self) {
    Node& l = *self.parents[0];
    Node& r = *self.parents[1];
    for (int n = 0; n < as.n; ++n) {
      const std::size_t base = n * (pa + pb);
      if (l.requires_grad) {
        auto& g = l.grad_buffer().data();
        for (std::size_t i = 0; i < pa; ++i) g[n * pa + i] += self.grad[base + i];
      }
      if (r.requires_grad) {
        auto& g = r.grad_buffer().data();
        for (std::size_t i = 0; i < pb; ++i) g[n * pb + i] += self.grad[base + pa + i];
      }
    }
  });
}

Var sum(const Var& x) {
  double acc = 0.0;
  for (double v : x->value.data()) acc += v;
  return make_node(Tensor({1, 1, 1, 1}, acc), {x}, [](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer().data();
    const double s = self.grad[0];
    for (double& v : g) v += s;
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x->value.size())); }

Var mean_per_sample(const Var& x) {
  const Shape xs = x->value.shape();
  const std::size_t per = xs.sample_size();
  Tensor out({xs.n, 1, 1, 1});
  for (int n = 0; n < xs.n; ++n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < per; ++i) acc += x->value[n * per + i];
    out[n] = acc / static_cast<double>(per);
  }
  return make_node(std::move(out), {x}, [=](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer().data();
    for (int n = 0; n < xs.n; ++n) {
      const double s = self.grad[n] / static_cast<double>(per);
      for (std::size_t i = 0; i < per; ++i) g[n * per + i] += s;
    }
  });
}

namespace {
constexpr double kLuma[3] = {0.299, 0.587, 0.114};
}

Var gray(const Var& x) {
  const Shape xs = x->value.shape();
  if (xs.c == 1) return x;
  if (xs.c != 3) throw Error(ErrorCode::kShapeMismatch, "gray expects 1 or 3 channels");
  const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
  Tensor out({xs.n, 1, xs.h, xs.w});
  for (int n = 0; n < xs.n; ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      double acc = 0.0;
      for (int c = 0; c < 3; ++c) acc += kLuma[c] * x->value[(n * 3 + c) * plane + i];
      out[n * plane + i] = acc;
    }
  }
  return make_node(std::move(out), {x}, [=](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer().data();
    for (int n = 0; n < xs.n; ++n) {
      for (std::size_t i = 0; i < plane; ++i) {
        for (int c = 0; c < 3; ++c) g[(n * 3 + c) * plane + i] += kLuma[c] * self.grad[n * plane + i];
      }
    }
  });
}

Var gaussian_kl(const Var& mu, const Var& logvar) {
  require_same(mu, logvar, "gaussian_kl");
  const Shape s = mu->value.shape();
  const std::size_t per = s.sample_size();
  Tensor out({s.n, 1, 1, 1});
  for (int n = 0; n < s.n; ++n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      const double m = mu->value[n * per + i];
      const double lv = logvar->value[n * per + i];
      acc += m * m + std::exp(lv) - lv - 1.0;
    }
    out[n] = 0.5 * acc;
  }
  return make_node(std::move(out), {mu, logvar}, [=](Node& self) {
    Node& m = *self.parents[0];
    Node& lv = *self.parents[1];
    for (int n = 0; n < s.n; ++n) {
      const double g = self.grad[n];
      for (std::size_t i = 0; i < per; ++i) {
        const std::size_t k = n * per + i;
        if (m.requires_grad) m.grad_buffer()[k] += g * m.value[k];
        if (lv.requires_grad) lv.grad_buffer()[k] += g * 0.5 * (std::exp(lv.value[k]) - 1.0);
      }
    }
  });
}

Var bernoulli_nll(const Var& probs, const Tensor& target, double eps) {
  if (!(probs->value.shape() == target.shape())) throw Error(ErrorCode::kShapeMismatch, "bernoulli_nll shape");
  const Shape s = target.shape();
  const std::size_t per = s.sample_size();
  Tensor out({s.n, 1, 1, 1});
  for (int n = 0; n < s.n; ++n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      const double p = std::clamp(probs->value[n * per + i], eps, 1.0 - eps);
      const double t = target[n * per + i];
      acc -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
    out[n] = acc;
  }
  return make_node(std::move(out), {probs}, [=](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer().data();
    for (int n = 0; n < s.n; ++n) {
      for (std::size_t i = 0; i < per; ++i) {
        const std::size_t k = n * per + i;
        const double p = in.value[k];
        if (p <= eps || p >= 1.0 - eps) continue;
        const double t = target[k];
        g[k] += self.grad[n] * (-(t / p) + (1.0 - t) / (1.0 - p));
      }
    }
  });
}

namespace {

// Per-pixel normalized bin weights; relative to the nearest bin so the
// exponentials never all underflow.
void soft_bin_weights(double v, int bins, double bandwidth, std::vector<double>& w) {
  double dmin = 1e300;
  for (int k = 0; k < bins; ++k) dmin = std::min(dmin, std::abs(v - (k + 0.5) / bins));
  double total = 0.0;
  for (int k = 0; k < bins; ++k) {
    const double d = v - (k + 0.5) / bins;
    w[k] = std::exp(-(d * d - dmin * dmin) / (2.0 * bandwidth * bandwidth));
    total += w[k];
  }
  for (int k = 0; k < bins; ++k) w[k] /= total;
}

}  // namespace

Var soft_histogram(const Var& x, int bins, double bandwidth) {
  if (bins < 2) throw Error(ErrorCode::kInvalidArgument, "histogram needs at least 2 bins");
  const Shape xs = x->value.shape();
  const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
  Tensor out({xs.n, xs.c, bins, 1});
  std::vector<double> w(bins);
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      const double* px = x->value.data().data() + (static_cast<std::size_t>(n) * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        soft_bin_weights(px[i], bins, bandwidth, w);
        for (int k = 0; k < bins; ++k) out.at(n, c, k, 0) += w[k];
      }
      for (int k = 0; k < bins; ++k) out.at(n, c, k, 0) /= static_cast<double>(plane);
    }
  }
  return make_node(std::move(out), {x}, [=](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer().data();
    std::vector<double> wt(bins);
    const double inv_b2 = 1.0 / (bandwidth * bandwidth);
    for (int n = 0; n < xs.n; ++n) {
      for (int c = 0; c < xs.c; ++c) {
        const std::size_t base = (static_cast<std::size_t>(n) * xs.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double v = in.value[base + i];
          soft_bin_weights(v, bins, bandwidth, wt);
          // dw_k/dv = w_k (a_k - sum_j w_j a_j), a_k = -(v - c_k)/b^2
          double abar = 0.0;
          for (int k = 0; k < bins; ++k) abar += wt[k] * (-(v - (k + 0.5) / bins) * inv_b2);
          double acc = 0.0;
          for (int k = 0; k < bins; ++k) {
            const double a = -(v - (k + 0.5) / bins) * inv_b2;
            acc += self.grad.at(n, c, k, 0) * wt[k] * (a - abar);
          }
          g[base + i] += acc / static_cast<double>(plane);
        }
      }
    }
  });
}

Var histogram_kl(const Tensor& reference, const Var& generated, double eps) {
  if (!(reference.shape() == generated->value.shape())) throw Error(ErrorCode::kShapeMismatch, "histogram_kl");
  const Shape s = reference.shape();
  const int bins = s.h;
  Tensor out({s.n, 1, 1, 1});
  for (int n = 0; n < s.n; ++n) {
    double acc = 0.0;
    for (int c = 0; c < s.c; ++c) {
      for (int k = 0; k < bins; ++k) {
        const double r = reference.at(n, c, k, 0);
        if (r <= 0.0) continue;
        acc += r * std::log(r / std::max(generated->value.at(n, c, k, 0), eps));
      }
    }
    out[n] = acc / s.c;
  }
  return make_node(std::move(out), {generated}, [=](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        for (int k = 0; k < bins; ++k) {
          const double r = reference.at(n, c, k, 0);
          const double q = in.value.at(n, c, k, 0);
          if (r <= 0.0 || q <= eps) continue;
          g.at(n, c, k, 0) += self.grad[n] * (-r / q) / s.c;
        }
      }
    }
  });
}

Var log_variance(const Var& x, double sigma) {
  Var lum = gray(x);
  const Shape s = lum->value.shape();
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  Tensor out({s.n, 1, 1, 1});
  std::vector<std::vector<double>> responses(s.n);
  for (int n = 0; n < s.n; ++n) {
    std::span<const double> p(lum->value.data().data() + n * plane, plane);
    responses[n] = log_filter(p, s.h, s.w, sigma);
    double m = 0.0;
    for (double v : responses[n]) m += v;
    m /= static_cast<double>(plane);
    double var = 0.0;
    for (double v : responses[n]) var += (v - m) * (v - m);
    out[n] = var / static_cast<double>(plane);
  }
  return make_node(std::move(out), {lum}, [=](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer().data();
    std::vector<double> gl(plane);
    for (int n = 0; n < s.n; ++n) {
      const auto& resp = responses[n];
      double m = 0.0;
      for (double v : resp) m += v;
      m /= static_cast<double>(plane);
      for (std::size_t i = 0; i < plane; ++i) gl[i] = self.grad[n] * 2.0 * (resp[i] - m) / static_cast<double>(plane);
      const auto gi = log_filter_adjoint(gl, s.h, s.w, sigma);
      for (std::size_t i = 0; i < plane; ++i) g[n * plane + i] += gi[i];
    }
  });
}

Var ParamList::add(std::string name, Tensor value) {
  Var v = parameter(std::move(value));
  items_.emplace_back(std::move(name), v);
  return v;
}

void ParamList::append(const std::string& prefix, const ParamList& other) {
  for (const auto& [name, var] : other.items_) items_.emplace_back(prefix + name, var);
}

std::size_t ParamList::count() const {
  std::size_t total = 0;
  for (const auto& item : items_) total += item.second->value.size();
  return total;
}

void ParamList::zero_grad() const {
  for (const auto& item : items_) item.second->grad = Tensor();
}

Var ParamList::find(const std::string& name) const {
  for (const auto& item : items_) {
    if (item.first == name) return item.second;
  }
  return nullptr;
}

Conv2d Conv2d::create(ParamList& params, const std::string& name, int in_ch, int out_ch, int kernel, ConvOptions opt,
                      Rng& rng, double gain) {
  Tensor w({out_ch, in_ch, kernel, kernel});
  const double stddev = gain * std::sqrt(2.0 / (in_ch * kernel * kernel));
  if (gain != 0.0) {
    for (double& v : w.data()) v = stddev * standard_normal(rng);
  }
  Conv2d layer;
  layer.weight = params.add(name + ".weight", std::move(w));
  layer.bias = params.add(name + ".bias", Tensor({out_ch, 1, 1, 1}));
  layer.options = opt;
  return layer;
}

Linear Linear::create(ParamList& params, const std::string& name, int in_features, int out_features, Rng& rng,
                      double gain) {
  Tensor w({out_features, in_features, 1, 1});
  const double stddev = gain * std::sqrt(1.0 / in_features);
  if (gain != 0.0) {
    for (double& v : w.data()) v = stddev * standard_normal(rng);
  }
  Linear layer;
  layer.weight = params.add(name + ".weight", std::move(w));
  layer.bias = params.add(name + ".bias", Tensor({out_features, 1, 1, 1}));
  return layer;
}

Adam::Adam(const ParamList& params, AdamOptions options) : options_(options) {
  for (const auto& item : params.items()) {
    params_.push_back(item.second);
    m_.emplace_back(item.second->value.shape());
    v_.emplace_back(item.second->value.shape());
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    Node& node = *params_[p];
    if (node.grad.empty()) continue;
    auto& m = m_[p].data();
    auto& v = v_[p].data();
    auto& w = node.value.data();
    const auto& g = node.grad.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g[i];
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g[i] * g[i];
      w[i] -= options_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + options_.eps);
    }
  }
}

}  // namespace localdom::nn
