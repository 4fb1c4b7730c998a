#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "localdom/checkpoint.hpp"
#include "localdom/error.hpp"
#include "localdom/nn.hpp"

using namespace localdom;
using namespace localdom::nn;

namespace {

Tensor random_tensor(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  Tensor t(s);
  for (double& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

// Checks d/dx sum(R * f(x)) for a fixed random R against central differences.
double grad_error(const Tensor& x0, const std::function<Var(const Var&)>& f, double h = 1e-4) {
  Rng rng(1);
  const Tensor probe = f(constant(x0))->value;
  const Tensor weights = random_tensor(rng, probe.shape());
  auto loss = [&](const Var& x) { return sum(mul(f(x), constant(weights))); };
  auto x = parameter(x0);
  backward(loss(x));
  double worst = 0.0;
  double scale = 0.0;
  std::vector<double> numeric(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    Tensor p = x0;
    Tensor m = x0;
    p[i] += h;
    m[i] -= h;
    numeric[i] = (loss(constant(p))->value[0] - loss(constant(m))->value[0]) / (2 * h);
    scale = std::max(scale, std::abs(numeric[i]));
  }
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double a = x->grad.empty() ? 0.0 : x->grad[i];
    const double denom = std::max({std::abs(a), std::abs(numeric[i]), 1e-6 * scale, 1e-12});
    worst = std::max(worst, std::abs(a - numeric[i]) / denom);
  }
  return worst;
}

// Direct-loop convolution used as the forward oracle.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, ConvOptions o) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  const int k = ws.h;
  const int oh = (xs.h + 2 * o.padding - o.dilation * (k - 1) - 1) / o.stride + 1;
  const int ow = (xs.w + 2 * o.padding - o.dilation * (k - 1) - 1) / o.stride + 1;
  Tensor out({xs.n, ws.n, oh, ow});
  for (int n = 0; n < xs.n; ++n)
    for (int co = 0; co < ws.n; ++co)
      for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c) {
          double s = b[co];
          for (int ci = 0; ci < xs.c; ++ci)
            for (int kh = 0; kh < k; ++kh)
              for (int kw = 0; kw < k; ++kw) {
                const int ir = r * o.stride + kh * o.dilation - o.padding;
                const int ic = c * o.stride + kw * o.dilation - o.padding;
                if (ir < 0 || ic < 0 || ir >= xs.h || ic >= xs.w) continue;
                s += w.at(co, ci, kh, kw) * x.at(n, ci, ir, ic);
              }
          out.at(n, co, r, c) = s;
        }
  return out;
}

}  // namespace

TEST(Tensor, ImageRoundTrip) {
  Rng rng(1);
  Image a(5, 7, 3);
  Image b(5, 7, 3);
  for (double& v : a.data()) v = uniform(rng, 0, 1);
  for (double& v : b.data()) v = uniform(rng, 0, 1);
  const std::vector<Image> batch{a, b};
  const Tensor t = Tensor::from_images(batch);
  EXPECT_EQ(t.shape(), (Shape{2, 3, 5, 7}));
  EXPECT_EQ(t.to_image(0), a);
  EXPECT_EQ(t.to_image(1), b);
}

TEST(Conv2d, ForwardMatchesDirectLoops) {
  Rng rng(2);
  for (ConvOptions o : {ConvOptions{1, 1, 1}, ConvOptions{2, 1, 1}, ConvOptions{1, 2, 2}, ConvOptions{1, 0, 1},
                        ConvOptions{2, 4, 4}}) {
    const Tensor x = random_tensor(rng, {2, 3, 9, 8});
    const Tensor w = random_tensor(rng, {4, 3, 3, 3});
    const Tensor b = random_tensor(rng, {1, 4, 1, 1});
    const Tensor got = conv2d(constant(x), constant(w), constant(b), o)->value;
    const Tensor want = naive_conv(x, w, b, o);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Conv2d, GradientsForInputWeightAndBias) {
  Rng rng(3);
  const Tensor x = random_tensor(rng, {2, 2, 7, 6});
  const Tensor w = random_tensor(rng, {3, 2, 3, 3});
  const Tensor b = random_tensor(rng, {1, 3, 1, 1});
  for (ConvOptions o : {ConvOptions{1, 1, 1}, ConvOptions{2, 1, 1}, ConvOptions{1, 2, 2}}) {
    EXPECT_LT(grad_error(x, [&](const Var& v) { return conv2d(v, constant(w), constant(b), o); }), 1e-6);
    EXPECT_LT(grad_error(w, [&](const Var& v) { return conv2d(constant(x), v, constant(b), o); }), 1e-6);
    EXPECT_LT(grad_error(b, [&](const Var& v) { return conv2d(constant(x), constant(w), v, o); }), 1e-6);
  }
  EXPECT_THROW(conv2d(constant(x), constant(random_tensor(rng, {3, 5, 3, 3})), nullptr), Error);
}

TEST(Ops, ElementwiseGradients) {
  Rng rng(4);
  const Tensor x = random_tensor(rng, {2, 3, 4, 5});
  const Tensor pos = random_tensor(rng, {2, 3, 4, 5}, 0.5, 2.0);
  const Tensor y = random_tensor(rng, {2, 3, 4, 5});
  EXPECT_LT(grad_error(x, [](const Var& v) { return leaky_relu(v); }), 1e-6);
  EXPECT_LT(grad_error(x, [](const Var& v) { return sigmoid(v); }), 1e-6);
  EXPECT_LT(grad_error(x, [](const Var& v) { return nn::tanh(v); }), 1e-6);
  EXPECT_LT(grad_error(x, [](const Var& v) { return nn::exp(v); }), 1e-6);
  EXPECT_LT(grad_error(x, [](const Var& v) { return square(v); }), 1e-6);
  EXPECT_LT(grad_error(x, [](const Var& v) { return nn::abs(v); }), 1e-6);
  EXPECT_LT(grad_error(pos, [](const Var& v) { return reciprocal(v); }), 1e-6);
  EXPECT_LT(grad_error(x, [](const Var& v) { return scale(add_scalar(v, 0.3), -2.0); }), 1e-6);
  EXPECT_LT(grad_error(x, [&](const Var& v) { return mul(v, constant(y)); }), 1e-6);
  EXPECT_LT(grad_error(x, [&](const Var& v) { return sub(add(v, constant(y)), mul(v, v)); }), 1e-6);
  EXPECT_LT(grad_error(x, [](const Var& v) { return mean(v); }), 1e-6);
  EXPECT_LT(grad_error(x, [](const Var& v) { return mean_per_sample(v); }), 1e-6);
  EXPECT_LT(grad_error(x, [](const Var& v) { return gray(v); }), 1e-6);
  EXPECT_LT(grad_error(x, [&](const Var& v) { return concat_channels(v, mul(v, constant(y))); }), 1e-6);
  EXPECT_LT(grad_error(x, [](const Var& v) { return upsample_to(v, 9, 7); }), 1e-6);
  EXPECT_LT(grad_error(x, [](const Var& v) { return reshape(v, {2, 60, 1, 1}); }), 1e-6);
}

TEST(Ops, Clamp01HasZeroGradientOutside) {
  Tensor x({1, 1, 1, 3}, std::vector<double>{-0.5, 0.5, 1.5});
  auto v = parameter(x);
  backward(sum(clamp01(v)));
  EXPECT_EQ(v->grad[0], 0.0);
  EXPECT_EQ(v->grad[1], 1.0);
  EXPECT_EQ(v->grad[2], 0.0);
}

TEST(Ops, LinearGradients) {
  Rng rng(5);
  const Tensor x = random_tensor(rng, {3, 2, 2, 2});
  const Tensor w = random_tensor(rng, {4, 8, 1, 1});
  const Tensor b = random_tensor(rng, {4, 1, 1, 1});
  EXPECT_LT(grad_error(x, [&](const Var& v) { return linear(v, constant(w), constant(b)); }), 1e-6);
  EXPECT_LT(grad_error(w, [&](const Var& v) { return linear(constant(x), v, constant(b)); }), 1e-6);
  EXPECT_LT(grad_error(b, [&](const Var& v) { return linear(constant(x), constant(w), v); }), 1e-6);
}

TEST(Ops, LossPrimitivesGradients) {
  Rng rng(6);
  const Tensor mu = random_tensor(rng, {2, 5, 1, 1});
  const Tensor lv = random_tensor(rng, {2, 5, 1, 1});
  EXPECT_LT(grad_error(mu, [&](const Var& v) { return gaussian_kl(v, constant(lv)); }), 1e-6);
  EXPECT_LT(grad_error(lv, [&](const Var& v) { return gaussian_kl(constant(mu), v); }), 1e-6);

  Tensor target({2, 1, 4, 4});
  for (double& v : target.data()) v = uniform(rng, 0, 1) > 0.5 ? 1.0 : 0.0;
  const Tensor logits = random_tensor(rng, {2, 1, 4, 4}, -2, 2);
  EXPECT_LT(grad_error(logits, [&](const Var& v) { return bernoulli_nll(sigmoid(v), target, 1e-6); }), 1e-6);

  const Tensor img = random_tensor(rng, {2, 3, 8, 8}, 0.0, 1.0);
  // Narrow kernels need a smaller step for the central difference to resolve them.
  EXPECT_LT(grad_error(img, [](const Var& v) { return soft_histogram(v, 8, 0.125); }, 1e-5), 1e-5);
  EXPECT_LT(grad_error(img, [](const Var& v) { return log_variance(v, 1.0); }), 1e-5);
  const Tensor ref = soft_histogram(constant(random_tensor(rng, {2, 3, 8, 8}, 0, 1)), 8, 0.125)->value;
  EXPECT_LT(grad_error(img, [&](const Var& v) { return histogram_kl(ref, soft_histogram(v, 8, 0.125), 1e-8); }),
            1e-5);
}

TEST(Ops, SoftHistogramIsNormalized) {
  Rng rng(7);
  const Tensor img = random_tensor(rng, {1, 3, 6, 6}, 0.0, 1.0);
  const Tensor h = soft_histogram(constant(img), 16, 1.0 / 16)->value;
  ASSERT_EQ(h.shape(), (Shape{1, 3, 16, 1}));
  for (int c = 0; c < 3; ++c) {
    double s = 0.0;
    for (int k = 0; k < 16; ++k) {
      EXPECT_GE(h.at(0, c, k, 0), 0.0);
      s += h.at(0, c, k, 0);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Ops, BernoulliNllOracle) {
  Tensor p({1, 1, 1, 3}, std::vector<double>{0.2, 0.9, 0.0});
  Tensor t({1, 1, 1, 3}, std::vector<double>{0.0, 1.0, 1.0});
  const double want = -(std::log(0.8) + std::log(0.9) + std::log(1e-6));
  EXPECT_NEAR(bernoulli_nll(constant(p), t, 1e-6)->value[0], want, 1e-12);
}

TEST(Params, CreateFindAndCount) {
  Rng rng(8);
  ParamList params;
  const auto conv = Conv2d::create(params, "c", 3, 4, 3, {1, 1, 1}, rng);
  const auto zero = Conv2d::create(params, "z", 4, 2, 3, {1, 1, 1}, rng, 0.0);
  const auto lin = Linear::create(params, "l", 6, 2, rng);
  EXPECT_EQ(params.count(), 3u * 4 * 9 + 4 + 4u * 2 * 9 + 2 + 6u * 2 + 2);
  EXPECT_EQ(params.find("c.weight"), conv.weight);
  EXPECT_EQ(params.find("l.bias"), lin.bias);
  for (double v : zero.weight->value.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(params.find("missing"), nullptr);
}

TEST(Adam, MinimizesQuadratic) {
  ParamList params;
  auto w = params.add("w", Tensor({1, 1, 1, 3}, std::vector<double>{3.0, -2.0, 0.5}));
  Adam opt(params, {0.05, 0.9, 0.999, 1e-8});
  const Tensor target({1, 1, 1, 3}, std::vector<double>{1.0, 1.0, 1.0});
  for (int i = 0; i < 800; ++i) {
    params.zero_grad();
    backward(sum(square(sub(w, constant(target)))));
    opt.step();
  }
  for (double v : w->value.data()) EXPECT_NEAR(v, 1.0, 1e-3);
  EXPECT_EQ(opt.step_count(), 800);
}

TEST(Checkpoint, ArchiveRoundTripAndCorruption) {
  Rng rng(9);
  Archive a;
  a.config_json = R"({"k":1})";
  a.blobs.push_back({"x", random_tensor(rng, {1, 2, 3, 4})});
  a.blobs.push_back({"y", random_tensor(rng, {2, 1, 1, 1})});
  const std::string bytes = serialize_archive(a);
  const Archive b = parse_archive(bytes);
  EXPECT_EQ(b.config_json, a.config_json);
  ASSERT_EQ(b.blobs.size(), 2u);
  EXPECT_EQ(*b.find("x"), a.blobs[0].second);
  EXPECT_EQ(serialize_archive(b), bytes);

  auto code = [](const std::string& s) {
    try {
      parse_archive(s);
    } catch (const Error& e) {
      return e.code();
    }
    return static_cast<ErrorCode>(0);
  };
  EXPECT_EQ(code("XXXX" + bytes.substr(4)), ErrorCode::kBadCheckpoint);
  EXPECT_EQ(code(bytes.substr(0, bytes.size() - 3)), ErrorCode::kBadCheckpoint);
  EXPECT_EQ(code(bytes + "z"), ErrorCode::kBadCheckpoint);

  ParamList params;
  auto p = params.add("x", Tensor({1, 2, 3, 4}));
  load_params(a, params, "");
  EXPECT_EQ(p->value, a.blobs[0].second);
  ParamList wrong;
  wrong.add("y", Tensor({1, 1, 1, 1}));
  EXPECT_THROW(load_params(a, wrong, ""), Error);
}

TEST(Checkpoint, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
