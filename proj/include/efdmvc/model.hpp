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

// Per-client network: one autoencoder per view, a shared feature network
// applied to every view's latent code and mean-pooled into the common
// semantics H, and a linear cluster head producing soft assignments Q.
//
// Every ModelParams holds all V autoencoders, whatever views its owner has,
// so every client's parameter vector has the same layout.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "efdmvc/error.hpp"
#include "efdmvc/random.hpp"
#include "efdmvc/tensor.hpp"

namespace efdmvc {

enum class Activation { relu, identity };

struct Architecture {
  std::vector<std::size_t> view_dims;
  std::size_t latent_dim = 16;      // d
  std::size_t high_dim = 32;        // h
  std::size_t clusters = 3;         // K
  std::size_t encoder_hidden = 128;  // 0 = single affine layer
  std::size_t feature_hidden = 128;  // 0 = single affine layer
  Activation activation = Activation::relu;

  std::size_t num_views() const { return view_dims.size(); }

  void validate() const {
    if (view_dims.empty()) throw ConfigError("architecture: no views");
    for (std::size_t d : view_dims)
      if (d < 1) throw ConfigError("architecture: view dims must be >= 1");
    if (latent_dim < 1 || high_dim < 1 || clusters < 1) {
      throw ConfigError("architecture: latent_dim, high_dim and clusters must be >= 1");
    }
  }

  bool operator==(const Architecture&) const = default;
};

struct Layer {
  Param weight;  // in x out
  Param bias;    // 1 x out
  bool operator==(const Layer&) const = default;
};

struct Mlp {
  std::vector<Layer> layers;

  std::size_t in_dim() const { return layers.front().weight.value.rows(); }
  std::size_t out_dim() const { return layers.back().weight.value.cols(); }
  bool operator==(const Mlp&) const = default;

  void collect(std::vector<Param*>& out) {
    for (auto& l : layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  }
  void collect(std::vector<const Param*>& out) const {
    for (const auto& l : layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  }
};

struct ModelParams {
  Architecture arch;
  std::vector<Mlp> encoders;  // D_v -> d
  std::vector<Mlp> decoders;  // d -> D_v
  Mlp feature_net;            // d -> h
  Mlp cluster_head;           // h -> K

  bool operator==(const ModelParams&) const = default;

  // Canonical order: encoder/decoder of view 0, ..., view V-1, feature_net,
  // cluster_head. flatten/unflatten and checkpoints use this order.
  std::vector<Param*> all_params() {
    std::vector<Param*> out;
    for (std::size_t v = 0; v < encoders.size(); ++v) {
      encoders[v].collect(out);
      decoders[v].collect(out);
    }
    feature_net.collect(out);
    cluster_head.collect(out);
    return out;
  }
  std::vector<const Param*> all_params() const {
    std::vector<const Param*> out;
    for (std::size_t v = 0; v < encoders.size(); ++v) {
      encoders[v].collect(out);
      decoders[v].collect(out);
    }
    feature_net.collect(out);
    cluster_head.collect(out);
    return out;
  }

  std::vector<Param*> view_params(std::size_t v) {
    std::vector<Param*> out;
    encoders.at(v).collect(out);
    decoders.at(v).collect(out);
    return out;
  }
  std::vector<const Param*> view_params(std::size_t v) const {
    std::vector<const Param*> out;
    encoders.at(v).collect(out);
    decoders.at(v).collect(out);
    return out;
  }

  std::vector<Param*> shared_params() {
    std::vector<Param*> out;
    feature_net.collect(out);
    cluster_head.collect(out);
    return out;
  }
  std::vector<const Param*> shared_params() const {
    std::vector<const Param*> out;
    feature_net.collect(out);
    cluster_head.collect(out);
    return out;
  }

  // Parameters a client with the given views trains: its own autoencoders
  // plus the shared networks.
  std::vector<Param*> trainable_params(std::span<const std::size_t> views) {
    std::vector<Param*> out;
    for (std::size_t v : views) {
      auto p = view_params(v);
      out.insert(out.end(), p.begin(), p.end());
    }
    auto s = shared_params();
    out.insert(out.end(), s.begin(), s.end());
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Param* p : all_params()) n += p->value.size();
    return n;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const Param* p : all_params()) out.insert(out.end(), p->value.data().begin(), p->value.data().end());
    return out;
  }

  void unflatten(std::span<const double> flat) {
    if (flat.size() != parameter_count()) {
      throw DimensionError("unflatten: got " + std::to_string(flat.size()) + " values, layout has " +
                           std::to_string(parameter_count()));
    }
    std::size_t off = 0;
    for (Param* p : all_params()) {
      auto dst = p->value.data();
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), dst.size(), dst.begin());
      off += dst.size();
    }
  }

  void zero_grad() {
    for (Param* p : all_params()) p->zero_grad();
  }
};

inline bool same_layout(const ModelParams& a, const ModelParams& b) {
  auto pa = a.all_params();
  auto pb = b.all_params();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!pa[i]->value.same_shape(pb[i]->value)) return false;
  return true;
}

namespace detail {

inline Mlp make_mlp(std::span<const std::size_t> widths, Rng& rng) {
  Mlp m;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::size_t fan_in = widths[i];
    const std::size_t fan_out = widths[i + 1];
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-s, s);
    Matrix w(fan_in, fan_out);
    for (double& x : w.data()) x = u(rng);
    m.layers.push_back(Layer{Param(std::move(w)), Param(Matrix(1, fan_out))});
  }
  return m;
}

inline std::vector<std::size_t> widths(std::size_t in, std::size_t hidden, std::size_t out) {
  if (hidden == 0) return {in, out};
  return {in, hidden, out};
}

}  // namespace detail

// Glorot-uniform weights, zero biases.
inline ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(seed);
  ModelParams p;
  p.arch = arch;
  for (std::size_t dim : arch.view_dims) {
    p.encoders.push_back(detail::make_mlp(detail::widths(dim, arch.encoder_hidden, arch.latent_dim), rng));
    p.decoders.push_back(detail::make_mlp(detail::widths(arch.latent_dim, arch.encoder_hidden, dim), rng));
  }
  p.feature_net = detail::make_mlp(detail::widths(arch.latent_dim, arch.feature_hidden, arch.high_dim), rng);
  p.cluster_head = detail::make_mlp(std::vector<std::size_t>{arch.high_dim, arch.clusters}, rng);
  return p;
}

// ---------------------------------------------------------------------------
// Forward pass on a tape
// ---------------------------------------------------------------------------

// How a model's parameters enter the tape: as trainable leaves (gradients
// flow into Param::grad) or as constants (reference models).
enum class Binding { trainable, frozen };

inline Var bind(Tape& tape, const Param& p, Binding b) {
  // const_cast is confined here: a trainable binding writes only p.grad,
  // and callers pass trainable params through a non-const ModelParams.
  return b == Binding::trainable ? tape.param(const_cast<Param&>(p)) : tape.constant(p.value);
}

// Hidden layers use the activation; the output layer is linear.
inline Var apply_mlp(Tape& tape, const Mlp& mlp, Var x, Activation act, Binding b) {
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    const Layer& l = mlp.layers[i];
    x = ops::affine(x, bind(tape, l.weight, b), bind(tape, l.bias, b));
    if (i + 1 < mlp.layers.size() && act == Activation::relu) x = ops::relu(x);
  }
  return x;
}

struct ForwardOutputs {
  std::vector<std::size_t> views;  // available views, ascending
  std::vector<Var> z;              // N x d per available view
  std::vector<Var> recon;          // N x D_v
  std::vector<Var> h;              // N x h
  std::vector<Var> q;              // N x K (only when clusters requested)
  Var fused;                       // H: N x h
};

// Runs the network over the available views. `inputs[i]` holds the data of
// view `views[i]`. A trainable binding requires a mutable model.
inline ForwardOutputs forward(Tape& tape, const ModelParams& params, std::span<const Var> inputs,
                              std::span<const std::size_t> views, Binding binding, bool with_clusters = true,
                              bool with_recon = true) {
  if (inputs.size() != views.size() || views.empty()) {
    throw UsageError("forward: need one input per available view (got " + std::to_string(inputs.size()) +
                     " inputs for " + std::to_string(views.size()) + " views)");
  }
  const Activation act = params.arch.activation;
  ForwardOutputs out;
  out.views.assign(views.begin(), views.end());
  for (std::size_t i = 0; i < views.size(); ++i) {
    const std::size_t v = views[i];
    if (v >= params.encoders.size()) throw DimensionError("forward: view " + std::to_string(v) + " out of range");
    if (inputs[i].cols() != params.arch.view_dims[v]) {
      throw DimensionError("forward: view " + std::to_string(v) + " has " + std::to_string(inputs[i].cols()) +
                           " columns, architecture expects " + std::to_string(params.arch.view_dims[v]));
    }
    Var z = apply_mlp(tape, params.encoders[v], inputs[i], act, binding);
    out.z.push_back(z);
    if (with_recon) out.recon.push_back(apply_mlp(tape, params.decoders[v], z, act, binding));
    out.h.push_back(apply_mlp(tape, params.feature_net, z, act, binding));
    if (with_clusters) out.q.push_back(ops::softmax_rows(apply_mlp(tape, params.cluster_head, out.h.back(), act, binding)));
  }
  out.fused = ops::mean_of(out.h);
  return out;
}

// ---------------------------------------------------------------------------
// Value-level conveniences (no gradients)
// ---------------------------------------------------------------------------

struct EncodeDecode {
  Matrix z;
  Matrix recon;
};

inline EncodeDecode encode_decode(const ModelParams& params, const Matrix& x, std::size_t view) {
  if (view >= params.encoders.size()) throw DimensionError("encode_decode: view out of range");
  if (x.cols() != params.arch.view_dims[view]) {
    throw DimensionError("encode_decode: view " + std::to_string(view) + " expects " +
                         std::to_string(params.arch.view_dims[view]) + " columns, got " + std::to_string(x.cols()));
  }
  Tape t;
  Var z = apply_mlp(t, params.encoders[view], t.constant(x), params.arch.activation, Binding::frozen);
  Var r = apply_mlp(t, params.decoders[view], z, params.arch.activation, Binding::frozen);
  return {z.value(), r.value()};
}

// H = elementwise mean of the per-view high-level features.
inline Matrix fuse(std::span<const Matrix> h_list) {
  if (h_list.empty()) throw UsageError("fuse: no views available");
  Matrix out = h_list.front();
  for (std::size_t i = 1; i < h_list.size(); ++i) {
    if (!h_list[i].same_shape(out)) throw DimensionError("fuse: view features differ in shape");
    out += h_list[i];
  }
  const double inv = 1.0 / static_cast<double>(h_list.size());
  for (double& v : out.data()) v *= inv;
  return out;
}

inline Matrix high_features(const ModelParams& params, const Matrix& z) {
  Tape t;
  return apply_mlp(t, params.feature_net, t.constant(z), params.arch.activation, Binding::frozen).value();
}

inline Matrix cluster_assign(const ModelParams& params, const Matrix& h) {
  if (h.cols() != params.arch.high_dim) throw DimensionError("cluster_assign: feature width mismatch");
  Tape t;
  return ops::softmax_rows(apply_mlp(t, params.cluster_head, t.constant(h), params.arch.activation, Binding::frozen))
      .value();
}

// Common semantics H for the given views of a sample block.
inline Matrix common_semantics(const ModelParams& params, std::span<const Matrix> inputs,
                               std::span<const std::size_t> views) {
  Tape t;
  std::vector<Var> in;
  for (const auto& x : inputs) in.push_back(t.constant(x));
  return forward(t, params, in, views, Binding::frozen, false, false).fused.value();
}

}  // namespace efdmvc
