/*
 * Copyright 2026 The EFDMVC Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <sstream>

#include "test_util.hpp"

using namespace efdmvc;
using efdmvc::testing::model_gradient_error;
using efdmvc::testing::random_matrix;

namespace {

Architecture small_arch() {
  Architecture a;
  a.view_dims = {3, 2, 4};
  a.latent_dim = 3;
  a.high_dim = 4;
  a.clusters = 2;
  a.encoder_hidden = 5;
  a.feature_hidden = 4;
  return a;
}

std::size_t affine_count(std::size_t in, std::size_t out) { return in * out + out; }

}  // namespace

TEST(Init, ParameterCountMatchesLayerSizes) {
  Architecture a = small_arch();
  auto p = init_params(a, 1);
  std::size_t expected = 0;
  for (std::size_t d : a.view_dims) {
    expected += affine_count(d, 5) + affine_count(5, 3);  // encoder
    expected += affine_count(3, 5) + affine_count(5, d);  // decoder
  }
  expected += affine_count(3, 4) + affine_count(4, 4);  // feature net
  expected += affine_count(4, 2);                       // cluster head
  EXPECT_EQ(p.parameter_count(), expected);
}

TEST(Init, NoHiddenLayerMeansSingleAffine) {
  Architecture a = small_arch();
  a.encoder_hidden = 0;
  a.feature_hidden = 0;
  auto p = init_params(a, 1);
  EXPECT_EQ(p.encoders[0].layers.size(), 1u);
  EXPECT_EQ(p.feature_net.layers.size(), 1u);
  EXPECT_EQ(p.encoders[2].in_dim(), 4u);
  EXPECT_EQ(p.decoders[2].out_dim(), 4u);
}

TEST(Init, GlorotBoundsAndZeroBias) {
  Architecture a = small_arch();
  a.encoder_hidden = 64;
  auto p = init_params(a, 3);
  for (const Mlp* m : {&p.encoders[0], &p.decoders[1], &p.feature_net, &p.cluster_head}) {
    for (const auto& l : m->layers) {
      const double s = std::sqrt(6.0 / static_cast<double>(l.weight.value.rows() + l.weight.value.cols()));
      double max_abs = 0.0;
      for (double w : l.weight.value.data()) max_abs = std::max(max_abs, std::abs(w));
      EXPECT_LE(max_abs, s);
      for (double b : l.bias.value.data()) EXPECT_EQ(b, 0.0);
    }
  }
}

TEST(Init, DeterministicPerSeed) {
  EXPECT_EQ(init_params(small_arch(), 5), init_params(small_arch(), 5));
  EXPECT_FALSE(init_params(small_arch(), 5) == init_params(small_arch(), 6));
}

TEST(Init, InvalidArchitecture) {
  Architecture a = small_arch();
  a.view_dims.clear();
  EXPECT_THROW(init_params(a, 0), ConfigError);
  a = small_arch();
  a.high_dim = 0;
  EXPECT_THROW(init_params(a, 0), ConfigError);
}

TEST(Params, FlattenRoundTripAndCanonicalOrder) {
  auto p = init_params(small_arch(), 2);
  auto flat = p.flatten();
  ASSERT_EQ(flat.size(), p.parameter_count());
  // canonical order starts with view 0's encoder first weight matrix
  EXPECT_EQ(flat[0], p.encoders[0].layers[0].weight.value(0, 0));
  EXPECT_EQ(flat.back(), p.cluster_head.layers.back().bias.value.data().back());
  for (double& v : flat) v += 1.0;
  auto q = p;
  q.unflatten(flat);
  EXPECT_EQ(q.flatten(), flat);
  EXPECT_THROW(q.unflatten(std::vector<double>(3)), DimensionError);
}

TEST(Params, TrainableSubsetIsOwnedViewsPlusShared) {
  auto p = init_params(small_arch(), 2);
  std::vector<std::size_t> views{2};
  auto tp = p.trainable_params(views);
  EXPECT_EQ(tp.size(), p.view_params(2).size() + p.shared_params().size());
  EXPECT_EQ(tp.front(), p.view_params(2).front());
}

TEST(Forward, ShapesAndFusionIsMean) {
  auto p = init_params(small_arch(), 4);
  Rng rng(1);
  Tape t;
  std::vector<std::size_t> views{0, 2};
  std::vector<Var> in{t.constant(random_matrix(6, 3, rng)), t.constant(random_matrix(6, 4, rng))};
  auto out = forward(t, p, in, views, Binding::frozen);
  ASSERT_EQ(out.h.size(), 2u);
  EXPECT_EQ(out.z[0].cols(), 3u);
  EXPECT_EQ(out.recon[1].cols(), 4u);
  EXPECT_EQ(out.fused.rows(), 6u);
  EXPECT_EQ(out.fused.cols(), 4u);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_NEAR(out.fused.value()(i, j), 0.5 * (out.h[0].value()(i, j) + out.h[1].value()(i, j)), 1e-14);
    }
    double s = 0.0;
    for (double q : out.q[0].value().row(i)) s += q;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Forward, ValueHelpersAgreeWithTape) {
  auto p = init_params(small_arch(), 4);
  Rng rng(2);
  Matrix x0 = random_matrix(5, 3, rng), x1 = random_matrix(5, 2, rng);
  Tape t;
  std::vector<std::size_t> views{0, 1};
  std::vector<Var> in{t.constant(x0), t.constant(x1)};
  auto out = forward(t, p, in, views, Binding::frozen);
  std::vector<Matrix> xs{x0, x1};
  EXPECT_EQ(common_semantics(p, xs, views), out.fused.value());
  auto ed = encode_decode(p, x0, 0);
  EXPECT_EQ(ed.z, out.z[0].value());
  EXPECT_EQ(ed.recon, out.recon[0].value());
  EXPECT_EQ(high_features(p, ed.z), out.h[0].value());
  EXPECT_EQ(cluster_assign(p, out.h[0].value()), out.q[0].value());
  std::vector<Matrix> hs{out.h[0].value(), out.h[1].value()};
  EXPECT_EQ(fuse(hs), out.fused.value());
}

TEST(Forward, Errors) {
  auto p = init_params(small_arch(), 4);
  Tape t;
  std::vector<std::size_t> views{0};
  std::vector<Var> wrong{t.constant(Matrix(3, 2))};
  EXPECT_THROW(forward(t, p, wrong, views, Binding::frozen), DimensionError);
  std::vector<Var> none;
  std::vector<std::size_t> no_views;
  EXPECT_THROW(forward(t, p, none, no_views, Binding::frozen), UsageError);
  EXPECT_THROW(fuse(std::span<const Matrix>{}), UsageError);
  EXPECT_THROW(encode_decode(p, Matrix(2, 3), 7), DimensionError);
}

TEST(Forward, FrozenBindingLeavesGradientsZero) {
  auto p = init_params(small_arch(), 4);
  Rng rng(3);
  Tape t;
  std::vector<std::size_t> views{1};
  std::vector<Var> in{t.constant(random_matrix(4, 2, rng))};
  auto out = forward(t, p, in, views, Binding::frozen);
  t.backward(ops::sum(out.fused));
  for (const Param* q : p.all_params())
    for (double g : q->grad.data()) EXPECT_EQ(g, 0.0);
}

TEST(Forward, OnlyUsedViewsReceiveGradient) {
  auto p = init_params(small_arch(), 4);
  Rng rng(3);
  Tape t;
  std::vector<std::size_t> views{1};
  std::vector<Var> in{t.constant(random_matrix(4, 2, rng))};
  auto out = forward(t, p, in, views, Binding::trainable);
  std::vector<Var> x{in[0]};
  t.backward(ops::add(reconstruction_loss(x, out.recon), ops::sum(out.q[0])));
  auto nonzero = [](const std::vector<Param*>& ps) {
    for (const Param* q : ps)
      for (double g : q->grad.data())
        if (g != 0.0) return true;
    return false;
  };
  EXPECT_TRUE(nonzero(p.view_params(1)));
  EXPECT_FALSE(nonzero(p.view_params(0)));
  EXPECT_FALSE(nonzero(p.view_params(2)));
}

// End-to-end gradient through encoders, decoders, feature net and head.
TEST(Forward, WholeModelGradientMatchesFiniteDifferences) {
  Architecture a = small_arch();
  a.view_dims = {3, 2};
  a.encoder_hidden = 4;
  auto p = init_params(a, 9);
  Rng rng(4);
  // Nonzero biases keep every h row away from the origin, where the cosine
  // is not differentiable.
  auto flat = p.flatten();
  for (double& w : flat) w += std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
  p.unflatten(flat);
  Matrix x0 = random_matrix(5, 3, rng), x1 = random_matrix(5, 2, rng);
  auto loss = [&](Tape& t, ModelParams& m) {
    std::vector<std::size_t> views{0, 1};
    std::vector<Var> in{t.constant(x0), t.constant(x1)};
    auto out = forward(t, m, in, views, Binding::trainable);
    LossComponents c;
    c.reconstruction = reconstruction_loss(in, out.recon);
    c.feature_contrast = feature_contrast_full(out.h, 0.5);
    c.label_contrast = label_contrast(out.q, 0.5);
    c.drift = t.constant(Matrix(1, 1, 0.0));
    return total_loss(ClientType::full, c, 0.5);
  };
  EXPECT_LT(model_gradient_error(loss, p), 1e-5);
}

TEST(Checkpoint, RoundTripAndArchitectureCheck) {
  auto p = init_params(small_arch(), 8);
  std::stringstream ss;
  write_checkpoint(ss, p, 17);
  auto ck = read_checkpoint(ss);
  EXPECT_EQ(ck.round, 17u);
  EXPECT_EQ(ck.params, p);
  EXPECT_EQ(ck.params.arch, p.arch);

  std::stringstream again;
  write_checkpoint(again, p, 1);
  Architecture other = small_arch();
  other.latent_dim = 7;
  EXPECT_THROW(read_checkpoint(again, other), FormatError);
}

TEST(Checkpoint, CorruptInputs) {
  std::stringstream bad("XXXX");
  EXPECT_THROW(read_checkpoint(bad), FormatError);
  auto p = init_params(small_arch(), 8);
  std::stringstream ss;
  write_checkpoint(ss, p, 1);
  std::string bytes = ss.str();
  std::stringstream cut(bytes.substr(0, bytes.size() - 5));
  EXPECT_THROW(read_checkpoint(cut), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/model.ckpt"), ConfigError);
}
