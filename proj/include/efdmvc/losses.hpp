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

// Training objectives. Every loss is recorded on a Tape and returns a 1x1
// Var; similarities are cosine similarities throughout.

#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "efdmvc/dataset.hpp"
#include "efdmvc/error.hpp"
#include "efdmvc/model.hpp"
#include "efdmvc/tensor.hpp"

namespace efdmvc {

struct LossConfig {
  double tau = 0.5;          // temperature, > 0
  double alpha = 0.5;        // contrast vs drift balance, [0, 1]
  double mu = 0.01;          // proximal strength, >= 0
  double sigma_noise = 0.1;  // std of input noise for single-view clients, >= 0

  void validate() const {
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0,1]");
    if (!(mu >= 0.0)) throw ConfigError("mu must be >= 0");
    if (!(sigma_noise >= 0.0)) throw ConfigError("sigma_noise must be >= 0");
  }
};

struct CosineResult {
  double value = 0.0;
  bool degenerate = false;  // one of the vectors had zero norm; value is 0
};

inline CosineResult cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine_sim: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return {0.0, true};
  return {dot / (std::sqrt(na) * std::sqrt(nb)), false};
}

namespace detail {

inline void require_same_shapes(std::span<const Var> xs, const char* who) {
  for (const Var& x : xs) {
    if (!x.value().same_shape(xs.front().value())) {
      throw DimensionError(std::string(who) + ": inputs differ in shape (" + x.value().shape_string() + " vs " +
                           xs.front().value().shape_string() + ")");
    }
  }
}

inline Var scalar(Tape& t, double v) { return t.constant(Matrix(1, 1, v)); }

// Sum over views v and rows i of
//   log[ e^{d(x_i^v, x_i^n)/tau} / (sum_j sum_{v' in {v,n}} e^{d(x_i^v, x_j^{v'})/tau} - e^{1/tau}) ]
// with partner n = (v + 1) mod V. The -e^{1/tau} removes the self pair.
inline Var cross_view_log_ratio(std::span<const Var> xs, double tau) {
  const double inv_tau = 1.0 / tau;
  const double self_term = std::exp(inv_tau);
  Var total;
  for (std::size_t v = 0; v < xs.size(); ++v) {
    const std::size_t n = (v + 1) % xs.size();
    Var s_self = ops::scale(ops::cosine_matrix(xs[v], xs[v]), inv_tau);
    Var s_pair = ops::scale(ops::cosine_matrix(xs[v], xs[n]), inv_tau);
    Var denom = ops::add_scalar(ops::add(ops::row_sum(ops::exp(s_self)), ops::row_sum(ops::exp(s_pair))), -self_term);
    Var term = ops::sum(ops::sub(ops::diag(s_pair), ops::log(denom)));
    total = total.valid() ? ops::add(total, term) : term;
  }
  return total;
}

// -mean_i log[ e^{a_i} / (e^{a_i} + e^{b_i}) ] for N x 1 logits a, b.
inline Var pairwise_infonce(const Var& pos_logit, const Var& neg_logit) {
  Var denom = ops::log(ops::add(ops::exp(pos_logit), ops::exp(neg_logit)));
  return ops::scale(ops::mean(ops::sub(pos_logit, denom)), -1.0);
}

}  // namespace detail

// (1/N) sum_v sum_i ||x_i^v - xhat_i^v||^2
inline Var reconstruction_loss(std::span<const Var> x, std::span<const Var> recon) {
  if (x.empty() || x.size() != recon.size()) throw UsageError("reconstruction_loss: need matching nonempty view lists");
  const std::size_t n = x.front().rows();
  Var total;
  for (std::size_t v = 0; v < x.size(); ++v) {
    if (!x[v].value().same_shape(recon[v].value()) || x[v].rows() != n) {
      throw DimensionError("reconstruction_loss: view " + std::to_string(v) + " shape mismatch (" +
                           x[v].value().shape_string() + " vs " + recon[v].value().shape_string() + ")");
    }
    Var r = ops::sub(x[v], recon[v]);
    Var sq = ops::sum(ops::hadamard(r, r));
    total = total.valid() ? ops::add(total, sq) : sq;
  }
  return ops::scale(total, 1.0 / static_cast<double>(n));
}

// Cross-view feature contrast for full-view clients, normalized by 1/N.
inline Var feature_contrast_full(std::span<const Var> h, double tau) {
  if (h.size() < 2) throw UsageError("feature_contrast_full: needs at least 2 views, got " + std::to_string(h.size()));
  detail::require_same_shapes(h, "feature_contrast_full");
  return ops::scale(detail::cross_view_log_ratio(h, tau), -1.0 / static_cast<double>(h.front().rows()));
}

// sum_v sum_j s_j^v log s_j^v, s^v = column means of Q^v.
inline Var cluster_entropy_term(std::span<const Var> q) {
  if (q.empty()) throw UsageError("cluster_entropy_term: no views");
  Var total;
  for (const Var& qv : q) {
    Var e = ops::sum(ops::xlogx(ops::col_mean(qv)));
    total = total.valid() ? ops::add(total, e) : e;
  }
  return total;
}

// Column-level contrast of the soft assignments (cluster j of view v vs
// cluster j of the partner view), normalized by 1/K, plus the entropy term.
inline Var label_contrast(std::span<const Var> q, double tau) {
  if (q.size() < 2) throw UsageError("label_contrast: needs at least 2 views, got " + std::to_string(q.size()));
  detail::require_same_shapes(q, "label_contrast");
  std::vector<Var> cols;
  for (const Var& qv : q) cols.push_back(ops::transpose(qv));
  const double k = static_cast<double>(q.front().cols());
  Var contrast = ops::scale(detail::cross_view_log_ratio(cols, tau), -1.0 / k);
  return ops::add(contrast, cluster_entropy_term(q));
}

// Aligns each available view's features with the fused features H_p. The
// denominator holds negatives only (j != i), so the value can be negative.
inline Var partial_contrast(const Var& fused, std::span<const Var> h, double tau) {
  if (h.empty()) throw UsageError("partial_contrast: no views");
  const std::size_t n = fused.rows();
  if (n < 2) throw UsageError("partial_contrast: needs N >= 2 (negatives-only denominator is empty)");
  for (const Var& hv : h) {
    if (!hv.value().same_shape(fused.value())) throw DimensionError("partial_contrast: view features differ from H_p");
  }
  Tape& t = *fused.tape();
  Matrix mask(n, n, 1.0);
  for (std::size_t i = 0; i < n; ++i) mask(i, i) = 0.0;
  Var off_diag = t.constant(std::move(mask));
  const double inv_tau = 1.0 / tau;
  Var total;
  for (const Var& hv : h) {
    Var s = ops::scale(ops::cosine_matrix(fused, hv), inv_tau);
    Var denom = ops::row_sum(ops::hadamard(ops::exp(s), off_diag));
    Var term = ops::sum(ops::sub(ops::diag(s), ops::log(denom)));
    total = total.valid() ? ops::add(total, term) : term;
  }
  return ops::scale(total, -1.0 / static_cast<double>(n));
}

// Noise contrast for single-view clients: positive pair (H_s, h), virtual
// negative pair (h, h') with h' the features of the noise-perturbed input.
inline Var single_view_contrast(const Var& common, const Var& h, const Var& h_noisy, double tau) {
  if (!common.value().same_shape(h.value()) || !h.value().same_shape(h_noisy.value())) {
    throw DimensionError("single_view_contrast: shape mismatch");
  }
  const double inv_tau = 1.0 / tau;
  return detail::pairwise_infonce(ops::scale(ops::cosine_rows(common, h), inv_tau),
                                  ops::scale(ops::cosine_rows(h, h_noisy), inv_tau));
}

// Per-sample model contrast: one positive and one negative reference.
inline Var drift_contrast(const Var& fused, const Var& positive, const Var& negative, double tau) {
  if (!fused.value().same_shape(positive.value()) || !fused.value().same_shape(negative.value())) {
    throw DimensionError("drift_contrast: shape mismatch");
  }
  const double inv_tau = 1.0 / tau;
  return detail::pairwise_infonce(ops::scale(ops::cosine_rows(fused, positive), inv_tau),
                                  ops::scale(ops::cosine_rows(fused, negative), inv_tau));
}

// (mu/2) ||w_local - w_global||^2 over the full parameter vector. Views not
// listed in `trainable_views` enter as constants so they receive no gradient.
inline Var proximal_term(Tape& tape, ModelParams& local, const ModelParams& global, double mu,
                         std::span<const std::size_t> trainable_views) {
  if (!same_layout(local, global)) throw DimensionError("proximal_term: local and global layouts differ");
  std::vector<bool> owned(local.encoders.size(), false);
  for (std::size_t v : trainable_views) owned.at(v) = true;

  Var total = detail::scalar(tape, 0.0);
  auto add_pair = [&](Param& p, const Param& g, Binding b) {
    Var d = ops::sub(bind(tape, p, b), tape.constant(g.value));
    total = ops::add(total, ops::sum(ops::hadamard(d, d)));
  };
  for (std::size_t v = 0; v < local.encoders.size(); ++v) {
    auto lp = local.view_params(v);
    auto gp = global.view_params(v);
    for (std::size_t i = 0; i < lp.size(); ++i) add_pair(*lp[i], *gp[i], owned[v] ? Binding::trainable : Binding::frozen);
  }
  auto ls = local.shared_params();
  auto gs = global.shared_params();
  for (std::size_t i = 0; i < ls.size(); ++i) add_pair(*ls[i], *gs[i], Binding::trainable);
  return ops::scale(total, 0.5 * mu);
}

// drift contrast + proximal term.
inline Var drift_loss(const Var& fused, const Var& positive, const Var& negative, ModelParams& local,
                      const ModelParams& global, double tau, double mu,
                      std::span<const std::size_t> trainable_views) {
  Tape& t = *fused.tape();
  return ops::add(drift_contrast(fused, positive, negative, tau), proximal_term(t, local, global, mu, trainable_views));
}

// Components of one client's objective. Which ones are required depends on
// the client type.
struct LossComponents {
  std::optional<Var> reconstruction;    // L_R
  std::optional<Var> feature_contrast;  // L_C^f (full)
  std::optional<Var> label_contrast;    // L_C^l (full)
  std::optional<Var> partial_contrast;  // L_C^p (partial)
  std::optional<Var> single_contrast;   // L_C^s (single)
  std::optional<Var> drift;             // L_M
};

inline Var total_loss(ClientType type, const LossComponents& c, double alpha) {
  auto need = [](const std::optional<Var>& v, const char* name) -> const Var& {
    if (!v) throw UsageError(std::string("total_loss: missing component ") + name);
    return *v;
  };
  const Var& rec = need(c.reconstruction, "reconstruction");
  const Var& drift = need(c.drift, "drift");
  Var contrast;
  switch (type) {
    case ClientType::full:
      contrast = ops::add(need(c.label_contrast, "label_contrast"), need(c.feature_contrast, "feature_contrast"));
      break;
    case ClientType::partial:
      contrast = need(c.partial_contrast, "partial_contrast");
      break;
    case ClientType::single:
      contrast = need(c.single_contrast, "single_contrast");
      break;
  }
  return ops::add(rec, ops::add(ops::scale(contrast, alpha), ops::scale(drift, 1.0 - alpha)));
}

}  // namespace efdmvc
