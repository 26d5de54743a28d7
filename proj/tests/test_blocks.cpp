#include <gtest/gtest.h>

#include "support.hpp"

using namespace glahrr;
using namespace testing_support;

namespace {

bool strictly_inside_unit(const Tensor<double>& t) {
  for (double v : t.values())
    if (!(v > 0 && v < 1)) return false;
  return true;
}

int ceil_half(int v) { return (v + 1) / 2; }

}  // namespace

TEST(Conv, ParameterCountClosedForm) {
  Conv2d<float> conv("c", 3, 64, 3);
  std::size_t n = 0;
  for (auto* p : params_of(conv)) n += p->value.size();
  EXPECT_EQ(n, 3u * 64 * 9 + 64);
}

TEST(Conv, MatchesDirectConvolution) {
  Conv2d<double> conv("c", 3, 4, 3, 2, 1);
  init_layer(conv, 1);
  const auto x = random_tensor(Shape{2, 3, 7, 8}, 2, -1, 1);
  const auto y = conv.forward(x);
  ASSERT_EQ(y.shape(), (Shape{2, 4, 4, 4}));
  const auto& w = conv.weight().value;
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 4; ++o)
      for (int oy = 0; oy < 4; ++oy)
        for (int ox = 0; ox < 4; ++ox) {
          double s = conv.bias().value[o];
          for (int c = 0; c < 3; ++c)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
                if (iy >= 0 && iy < 7 && ix >= 0 && ix < 8) s += w(o, c, ky, kx) * x(n, c, iy, ix);
              }
          EXPECT_NEAR(y(n, o, oy, ox), s, 1e-12);
        }
}

TEST(ConvTranspose, IsAdjointOfStridedConv) {
  // <conv(x), y> == <x, deconv(y)> for shared weights and zero bias.
  Conv2d<double> conv("c", 3, 5, 3, 2, 1);
  ConvTranspose2d<double> deconv("d", 5, 3, 3, 2, 1, 1);
  init_layer(conv, 3);
  for (auto* p : params_of(conv))
    if (p->is_bias()) p->value.fill(0);
  deconv.weight().value = conv.weight().value;
  const auto x = random_tensor(Shape{1, 3, 8, 10}, 4, -1, 1);
  const auto cx = conv.forward(x);
  const auto y = random_tensor(cx.shape(), 5, -1, 1);
  const auto dy = deconv.forward(y);
  ASSERT_EQ(dy.shape(), x.shape());
  EXPECT_NEAR(dot(cx, y), dot(x, dy), 1e-10);
}

TEST(SpatialAttention, ShapeBoundAndMapRange) {
  SpatialAttention<double> sa("sa");
  init_layer(sa, 1);
  const auto x = random_tensor(Shape{1, 64, 16, 24}, 2, -2, 2);
  const auto y = sa.forward(x);
  EXPECT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LE(std::abs(y[i]), std::abs(x[i]));
  EXPECT_EQ(sa.attention().shape(), (Shape{1, 1, 16, 24}));
  EXPECT_TRUE(strictly_inside_unit(sa.attention()));
}

TEST(ChannelAttention, ShapeAndConstantInput) {
  ChannelAttention<double> ca("ca", 128, 16);
  init_layer(ca, 1);
  const auto y = ca.forward(random_tensor(Shape{2, 128, 8, 8}, 3));
  EXPECT_EQ(y.shape(), (Shape{2, 128, 8, 8}));
  EXPECT_TRUE(strictly_inside_unit(ca.scales()));

  Tensor<double> flat(Shape{1, 128, 6, 5});
  for (int c = 0; c < 128; ++c) std::fill(flat.plane(0, c), flat.plane(0, c) + 30, 0.01 * c - 0.5);
  const auto z = ca.forward(flat);
  for (int c = 0; c < 128; ++c)
    for (int i = 1; i < 30; ++i) EXPECT_EQ(z.plane(0, c)[i], z.plane(0, c)[0]);
}

TEST(ChannelAttention, IndivisibleChannelsIsConfigError) {
  EXPECT_THROW(ChannelAttention<float>("ca", 100, 16), ConfigError);
  EXPECT_THROW(ChannelAttention<float>("ca", 8, 16), ConfigError);
}

TEST(ScaBlock, StrideArithmetic) {
  ScaBlock<float> down("d", Direction::down, 64, 128);
  ScaBlock<float> up("u", Direction::up, 128, 64);
  init_layer(down, 1);
  init_layer(up, 2);
  const auto x = random_tensor<float>(Shape{1, 64, 20, 30}, 3);
  const auto d = down.forward(x);
  EXPECT_EQ(d.shape(), (Shape{1, 128, 10, 15}));
  EXPECT_EQ(up.forward(d).shape(), (Shape{1, 64, 20, 30}));
}

TEST(ScaBlock, ShapeSweep) {
  ScaBlock<float> down("d", Direction::down, 16, 32);
  ScaBlock<float> up("u", Direction::up, 32, 16);
  init_layer(down, 1);
  init_layer(up, 2);
  for (int h = 8; h <= 33; ++h)
    for (int w = 8; w <= 33; ++w) {
      const auto d = down.forward(random_tensor<float>(Shape{1, 16, h, w}, h * 100 + w));
      ASSERT_EQ(d.shape(), (Shape{1, 32, ceil_half(h), ceil_half(w)}));
      const auto u = up.forward(d);
      ASSERT_EQ(u.shape(), (Shape{1, 16, 2 * ceil_half(h), 2 * ceil_half(w)}));
      if (h % 2 == 0 && w % 2 == 0) ASSERT_EQ(u.h(), h);
    }
}

TEST(ScaBlock, AttentionFlagsChangeParameterSet) {
  auto count = [](AttentionFlags f) {
    ScaBlock<float> b("b", Direction::down, 32, 64, f);
    return params_of(b).size();
  };
  EXPECT_EQ(count({false, false}), 2u);
  EXPECT_EQ(count({true, false}), 4u);
  EXPECT_EQ(count({false, true}), 6u);
  EXPECT_EQ(count({true, true}), 8u);
}

class InceptionTest : public ::testing::TestWithParam<bool> {};

TEST_P(InceptionTest, ShapeAndResidualIdentity) {
  InceptionResidual<double> block("m", GetParam());
  init_layer(block, 4);
  const auto x = random_tensor(Shape{1, 256, 12, 18}, 5, -1, 1);
  EXPECT_EQ(block.forward(x).shape(), x.shape());

  for (std::size_t b = 0; b < 3; ++b) {
    block.branch_conv(b).weight().value.fill(0);
    block.branch_conv(b).bias().value.fill(0);
  }
  block.fuse().bias().value.fill(0);
  const auto y = block.forward(x);
  for (std::size_t i = 0; i < x.size(); ++i) ASSERT_EQ(y[i], std::max(0.0, x[i]));
}

TEST_P(InceptionTest, ShapeSweepAndChannelCheck) {
  InceptionResidual<float> block("m", GetParam());
  init_layer(block, 6);
  for (int h = 8; h <= 33; ++h) {
    const int w = 41 - h;
    EXPECT_EQ(block.forward(random_tensor<float>(Shape{1, 256, h, w}, h)).shape(), (Shape{1, 256, h, w}));
  }
  EXPECT_THROW(block.forward(random_tensor<float>(Shape{1, 128, 8, 8}, 1)), ConfigError);
}

INSTANTIATE_TEST_SUITE_P(RimAndCim, InceptionTest, ::testing::Values(false, true),
                         [](const auto& info) { return info.param ? "cim" : "rim"; });

TEST(Inception, CimHasChannelAttentionOver384) {
  Cim<float> cim("c");
  Rim<float> rim("r");
  const auto pc = params_of(cim);
  EXPECT_EQ(pc.size(), params_of(rim).size() + 4);
  bool found = false;
  for (auto* p : pc)
    if (p->name == "c.ca.squeeze.weight") {
      EXPECT_EQ(p->value.shape(), (Shape{24, 384, 1, 1}));
      found = true;
    }
  EXPECT_TRUE(found);
}

TEST(Blend, WeightMapsShapeRangeAndBatchIndependence) {
  AttentiveBlend<double> blend("b", 3);
  xavier_init([&] { ParamList<double> p; blend.collect_params(p); return p; }(), 7);
  const auto i0 = random_tensor(Shape{3, 3, 9, 11}, 1);
  const auto i1 = random_tensor(Shape{3, 3, 9, 11}, 2);
  const auto i2 = random_tensor(Shape{3, 3, 9, 11}, 3);
  const Tensor<double>* parts[] = {&i0, &i1, &i2};
  const auto w = blend.forward(parts);
  EXPECT_EQ(w.shape(), (Shape{3, 3, 9, 11}));
  EXPECT_EQ(w.kind(), Kind::weight_map);
  EXPECT_TRUE(strictly_inside_unit(w));

  // Reverse the batch order.
  auto reorder = [](const Tensor<double>& t) {
    std::vector<Tensor<double>> s{take_sample(t, 2), take_sample(t, 1), take_sample(t, 0)};
    return stack_samples<double>(s);
  };
  const auto r0 = reorder(i0), r1 = reorder(i1), r2 = reorder(i2);
  const Tensor<double>* rparts[] = {&r0, &r1, &r2};
  EXPECT_LT(max_abs_diff(blend.forward(rparts), reorder(w)), 1e-12);
}

TEST(Blend, ShapeMismatchAndArity) {
  AttentiveBlend<float> blend("b", 3);
  const auto a = random_tensor<float>(Shape{1, 3, 8, 8}, 1);
  const auto b = random_tensor<float>(Shape{1, 3, 8, 9}, 2);
  const Tensor<float>* parts[] = {&a, &a, &b};
  EXPECT_THROW(blend.forward(parts), ShapeError);
  const Tensor<float>* two[] = {&a, &a};
  EXPECT_THROW(blend.forward(two), ShapeError);
  EXPECT_THROW(AttentiveBlend<float>("b", 1), ConfigError);
}

TEST(Blocks, Deterministic) {
  ScaBlock<float> b("b", Direction::down, 16, 32);
  init_layer(b, 1);
  const auto x = random_tensor<float>(Shape{2, 16, 11, 13}, 2);
  EXPECT_EQ(max_abs_diff(b.forward(x), b.forward(x)), 0.0f);
}

// Finite-difference checks at 64-bit.

constexpr double kGradTolerance = 1e-3;

TEST(Gradients, Conv) {
  Conv2d<double> conv("c", 3, 4, 3, 2, 1);
  init_layer(conv, 1);
  EXPECT_LT(layer_gradient_error(conv, random_tensor(Shape{2, 3, 7, 6}, 2, -1, 1), 3), kGradTolerance);
  Conv2d<double> pointwise("p", 5, 3, 1);
  init_layer(pointwise, 4);
  EXPECT_LT(layer_gradient_error(pointwise, random_tensor(Shape{1, 5, 4, 3}, 5, -1, 1), 6), kGradTolerance);
}

TEST(Gradients, ConvTranspose) {
  ConvTranspose2d<double> up("u", 4, 3, 4, 2, 1, 0);
  init_layer(up, 1);
  EXPECT_LT(layer_gradient_error(up, random_tensor(Shape{2, 4, 3, 5}, 2, -1, 1), 3), kGradTolerance);
  ConvTranspose2d<double> odd("o", 3, 2, 3, 2, 1, 1);
  init_layer(odd, 4);
  EXPECT_LT(layer_gradient_error(odd, random_tensor(Shape{1, 3, 4, 3}, 5, -1, 1), 6), kGradTolerance);
}

TEST(Gradients, Activations) {
  Sigmoid<double> sig(2.0);
  Tanh<double> tanh_layer;
  EXPECT_LT(layer_gradient_error(sig, random_tensor(Shape{1, 3, 4, 4}, 1, -3, 3), 2), kGradTolerance);
  EXPECT_LT(layer_gradient_error(tanh_layer, random_tensor(Shape{1, 3, 4, 4}, 3, -3, 3), 4), kGradTolerance);
}

TEST(Gradients, SpatialAttention) {
  SpatialAttention<double> sa("sa");
  init_layer(sa, 1);
  EXPECT_LT(layer_gradient_error(sa, random_tensor(Shape{2, 6, 7, 9}, 2, -1, 1), 3, 24), kGradTolerance);
}

TEST(Gradients, ChannelAttention) {
  ChannelAttention<double> ca("ca", 32, 16);
  init_layer(ca, 1);
  EXPECT_LT(layer_gradient_error(ca, random_tensor(Shape{2, 32, 5, 6}, 2, -1, 1), 3, 24), kGradTolerance);
}

TEST(Gradients, ScaBlockDownAndUp) {
  ScaBlock<double> down("d", Direction::down, 16, 32);
  init_layer(down, 1);
  EXPECT_LT(layer_gradient_error(down, random_tensor(Shape{1, 16, 7, 9}, 2, -1, 1), 3, 16), kGradTolerance);
  ScaBlock<double> up("u", Direction::up, 32, 16);
  init_layer(up, 4);
  EXPECT_LT(layer_gradient_error(up, random_tensor(Shape{1, 32, 4, 5}, 5, -1, 1), 6, 16), kGradTolerance);
}

TEST(Gradients, Rim) {
  Rim<double> rim("r");
  init_layer(rim, 1);
  EXPECT_LT(layer_gradient_error(rim, random_tensor(Shape{1, 256, 5, 6}, 2, -1, 1), 3), kGradTolerance);
}

TEST(Gradients, Cim) {
  Cim<double> cim("c");
  init_layer(cim, 1);
  EXPECT_LT(layer_gradient_error(cim, random_tensor(Shape{1, 256, 5, 6}, 2, -1, 1), 3), kGradTolerance);
}

TEST(Gradients, Blend) {
  AttentiveBlend<double> blend("b", 3);
  ParamList<double> params;
  blend.collect_params(params);
  xavier_init(params, 5);
  std::vector<Tensor<double>> xs;
  for (int k = 0; k < 3; ++k) xs.push_back(random_tensor(Shape{2, 3, 6, 7}, 10 + k));
  auto run = [&] {
    const Tensor<double>* parts[] = {&xs[0], &xs[1], &xs[2]};
    return blend.forward(parts);
  };
  const auto w = run();
  const auto proj = random_tensor(w.shape(), 20, -1, 1);
  zero_grads(params);
  const auto dx = blend.backward(proj);
  auto loss = [&] { return dot(proj, run()); };
  GradientSamples samples;
  for (int k = 0; k < 3; ++k)
    for (std::size_t i : sample_indices(xs[k].size(), 12, 30 + k)) samples.add(dx[k][i], central_difference(&xs[k][i], loss));
  std::uint64_t stream = 40;
  for (auto* p : params)
    for (std::size_t i : sample_indices(p->value.size(), 12, stream++))
      samples.add(p->grad[i], central_difference(&p->value[i], loss));
  EXPECT_LT(samples.error(), kGradTolerance);
}
