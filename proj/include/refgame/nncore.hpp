#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "refgame/errors.hpp"
#include "refgame/rng.hpp"
#include "refgame/tensor.hpp"

namespace refgame {

// ---------------------------------------------------------------------------
// Dense (affine) layer
// ---------------------------------------------------------------------------

struct DenseParams {
  Matrix weights;  // out x in
  Vector bias;     // out

  std::size_t in_dim() const { return weights.cols(); }
  std::size_t out_dim() const { return weights.rows(); }

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    visit_matrix(self.weights, "weights", f);
    visit_vector(self.bias, "bias", f);
  }

  bool operator==(const DenseParams&) const = default;
};

using DenseGrads = DenseParams;

inline DenseParams make_dense(std::size_t out, std::size_t in) {
  return DenseParams{Matrix(out, in), Vector(out, 0.0)};
}

/// Glorot-uniform weights, zero bias.
inline DenseParams init_dense(std::size_t out, std::size_t in, Rng& rng) {
  DenseParams p = make_dense(out, in);
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-a, a);
  for (double& w : p.weights.flat()) w = dist(rng);
  return p;
}

struct DenseCache {
  Vector input;
};

struct DenseResult {
  Vector y;
  DenseCache cache;
};

inline void dense_apply(const DenseParams& p, std::span<const double> x, std::span<double> y) {
  for (std::size_t r = 0; r < p.out_dim(); ++r) y[r] = dot(p.weights.row(r), x) + p.bias[r];
}

inline DenseResult dense_forward(const DenseParams& p, std::span<const double> x) {
  if (x.size() != p.in_dim()) {
    throw ShapeError("dense_forward: input length " + std::to_string(x.size()) +
                     " does not match weights " + shape_string(p.out_dim(), p.in_dim()));
  }
  DenseResult r{Vector(p.out_dim()), DenseCache{Vector(x.begin(), x.end())}};
  dense_apply(p, x, r.y);
  return r;
}

/// Accumulates `scale * dL/dparams` into `grads` and, when `downstream` is
/// non-empty, writes dL/dx (overwriting).
inline void dense_backward_into(const DenseParams& p, std::span<const double> input,
                                std::span<const double> upstream, double scale,
                                DenseGrads& grads, std::span<double> downstream) {
  if (upstream.size() != p.out_dim() || input.size() != p.in_dim()) {
    throw ShapeError("dense_backward: upstream length " + std::to_string(upstream.size()) +
                     " / input length " + std::to_string(input.size()) +
                     " incompatible with weights " + shape_string(p.out_dim(), p.in_dim()));
  }
  if (!downstream.empty()) std::fill(downstream.begin(), downstream.end(), 0.0);
  for (std::size_t r = 0; r < p.out_dim(); ++r) {
    const double g = upstream[r];
    if (g == 0.0) continue;
    const double sg = scale * g;
    auto grow = grads.weights.row(r);
    for (std::size_t c = 0; c < input.size(); ++c) grow[c] += sg * input[c];
    grads.bias[r] += sg;
    if (!downstream.empty()) {
      auto wrow = p.weights.row(r);
      for (std::size_t c = 0; c < downstream.size(); ++c) downstream[c] += g * wrow[c];
    }
  }
}

struct DenseBackward {
  DenseGrads grads;
  Vector downstream;
};

inline DenseBackward dense_backward(const DenseParams& p, const DenseCache& cache,
                                    std::span<const double> upstream) {
  DenseBackward out{zeros_like(p), Vector(p.in_dim())};
  dense_backward_into(p, cache.input, upstream, 1.0, out.grads, out.downstream);
  return out;
}

// ---------------------------------------------------------------------------
// Sigmoid
// ---------------------------------------------------------------------------

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct SigmoidCache {
  Vector output;
};

struct SigmoidResult {
  Vector y;
  SigmoidCache cache;
};

inline void sigmoid_inplace(std::span<double> x) {
  for (double& v : x) v = sigmoid(v);
}

inline SigmoidResult sigmoid_forward(std::span<const double> x) {
  Vector y(x.begin(), x.end());
  sigmoid_inplace(y);
  return {y, SigmoidCache{y}};
}

inline void sigmoid_backward_into(std::span<const double> output, std::span<const double> upstream,
                                  std::span<double> downstream) {
  require_size(upstream.size(), output.size(), "sigmoid_backward upstream");
  for (std::size_t i = 0; i < output.size(); ++i) {
    downstream[i] = upstream[i] * output[i] * (1.0 - output[i]);
  }
}

inline Vector sigmoid_backward(const SigmoidCache& cache, std::span<const double> upstream) {
  Vector d(cache.output.size());
  sigmoid_backward_into(cache.output, upstream, d);
  return d;
}

// ---------------------------------------------------------------------------
// Pairwise 2x1 convolution over two embeddings, then an f x 1 combiner.
// ---------------------------------------------------------------------------

struct PairConvParams {
  Matrix filters;   // f x 2: column 0 weighs the first channel, column 1 the second
  Vector combiner;  // f

  std::size_t n_filters() const { return filters.rows(); }

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    visit_matrix(self.filters, "filters", f);
    visit_vector(self.combiner, "combiner", f);
  }

  bool operator==(const PairConvParams&) const = default;
};

using PairConvGrads = PairConvParams;

inline PairConvParams make_pair_conv(std::size_t f) {
  if (f < 1) throw ConfigError("pair conv: n_filters must be >= 1");
  return PairConvParams{Matrix(f, 2), Vector(f, 0.0)};
}

/// Each filter starts as a comparator, w1 = -w0, so the initial maps respond to
/// a - b rather than to the pair's common level. The combiner is shifted to zero
/// mean for the same reason; without both, the conv output is dominated by an
/// input-independent constant and the sender can lock onto a single symbol.
inline PairConvParams init_pair_conv(std::size_t f, Rng& rng) {
  PairConvParams p = make_pair_conv(f);
  const double af = std::sqrt(6.0 / 3.0);
  const double ac = std::sqrt(6.0 / static_cast<double>(f + 1));
  std::uniform_real_distribution<double> df(-af, af);
  std::uniform_real_distribution<double> dc(-ac, ac);
  for (std::size_t k = 0; k < f; ++k) {
    p.filters(k, 0) = df(rng);
    p.filters(k, 1) = -p.filters(k, 0);
  }
  double mean = 0.0;
  for (double& w : p.combiner) {
    w = dc(rng);
    mean += w;
  }
  mean /= static_cast<double>(f);
  for (double& w : p.combiner) w -= mean;
  return p;
}

struct PairConvCache {
  Vector a;
  Vector b;
  Matrix maps;  // f x d, post-sigmoid feature maps
};

struct PairConvResult {
  Vector y;
  PairConvCache cache;
};

inline PairConvResult pair_conv_forward(const PairConvParams& p, std::span<const double> a,
                                        std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("pair_conv_forward: channel lengths differ (" + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()) + ")");
  }
  if (p.combiner.size() != p.n_filters() || p.filters.cols() != 2) {
    throw ShapeError("pair_conv_forward: malformed parameters");
  }
  const std::size_t d = a.size();
  PairConvResult r{Vector(d, 0.0), PairConvCache{Vector(a.begin(), a.end()), Vector(b.begin(), b.end()),
                                                 Matrix(p.n_filters(), d)}};
  for (std::size_t k = 0; k < p.n_filters(); ++k) {
    const double wa = p.filters(k, 0);
    const double wb = p.filters(k, 1);
    const double c = p.combiner[k];
    auto m = r.cache.maps.row(k);
    for (std::size_t j = 0; j < d; ++j) {
      m[j] = sigmoid(wa * a[j] + wb * b[j]);
      r.y[j] += c * m[j];
    }
  }
  return r;
}

/// Accumulates parameter gradients (scaled) and writes dL/da, dL/db.
inline void pair_conv_backward_into(const PairConvParams& p, const PairConvCache& cache,
                                    std::span<const double> upstream, double scale,
                                    PairConvGrads& grads, std::span<double> grad_a,
                                    std::span<double> grad_b) {
  const std::size_t d = cache.a.size();
  require_size(upstream.size(), d, "pair_conv_backward upstream");
  std::fill(grad_a.begin(), grad_a.end(), 0.0);
  std::fill(grad_b.begin(), grad_b.end(), 0.0);
  for (std::size_t k = 0; k < p.n_filters(); ++k) {
    const double wa = p.filters(k, 0);
    const double wb = p.filters(k, 1);
    const double c = p.combiner[k];
    auto m = cache.maps.row(k);
    double g_c = 0.0, g_wa = 0.0, g_wb = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      g_c += upstream[j] * m[j];
      const double g_pre = c * upstream[j] * m[j] * (1.0 - m[j]);
      g_wa += g_pre * cache.a[j];
      g_wb += g_pre * cache.b[j];
      grad_a[j] += g_pre * wa;
      grad_b[j] += g_pre * wb;
    }
    grads.combiner[k] += scale * g_c;
    grads.filters(k, 0) += scale * g_wa;
    grads.filters(k, 1) += scale * g_wb;
  }
}

struct PairConvBackward {
  PairConvGrads grads;
  Vector grad_a;
  Vector grad_b;
};

inline PairConvBackward pair_conv_backward(const PairConvParams& p, const PairConvCache& cache,
                                           std::span<const double> upstream) {
  PairConvBackward out{zeros_like(p), Vector(cache.a.size()), Vector(cache.b.size())};
  pair_conv_backward_into(p, cache, upstream, 1.0, out.grads, out.grad_a, out.grad_b);
  return out;
}

// ---------------------------------------------------------------------------
// Gibbs distribution and sampling
// ---------------------------------------------------------------------------

/// How the temperature enters the exponent: exp(score / tau) or exp(score * tau).
enum class GibbsExponent { divide, multiply };

struct GibbsConfig {
  double tau = 10.0;
  GibbsExponent exponent = GibbsExponent::divide;

  /// Multiplier applied to every score before exponentiation.
  double factor() const { return exponent == GibbsExponent::divide ? 1.0 / tau : tau; }

  void validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("gibbs: tau must be > 0");
  }
};

inline Vector gibbs(std::span<const double> scores, const GibbsConfig& g) {
  g.validate();
  if (scores.empty()) throw NumericError("gibbs: empty score vector");
  double mx = -INFINITY;
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericError("gibbs: non-finite score");
    mx = std::max(mx, s);
  }
  const double k = g.factor();
  Vector p(scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    p[i] = std::exp((scores[i] - mx) * k);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

/// d log p[action] / d score_j = factor * (1[j == action] - p_j).
inline Vector gibbs_logprob_grad(std::span<const double> probs, std::size_t action,
                                 const GibbsConfig& g) {
  const double k = g.factor();
  Vector d(probs.size());
  for (std::size_t j = 0; j < probs.size(); ++j) d[j] = k * ((j == action ? 1.0 : 0.0) - probs[j]);
  return d;
}

inline void validate_distribution(std::span<const double> probs) {
  if (probs.empty()) throw DistributionError("empty distribution");
  double s = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw DistributionError("negative or non-finite probability");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-9) {
    throw DistributionError("probabilities sum to " + std::to_string(s) + ", not 1");
  }
}

inline std::size_t sample_categorical(std::span<const double> probs, Rng& rng) {
  validate_distribution(probs);
  const double u = uniform01(rng);
  double acc = 0.0;
  std::size_t last_nonzero = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] > 0.0) last_nonzero = i;
    acc += probs[i];
    if (u < acc && probs[i] > 0.0) return i;
  }
  return last_nonzero;
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// ---------------------------------------------------------------------------
// SGD
// ---------------------------------------------------------------------------

/// params -= lr * grads
template <class P>
void sgd_apply(P& params, const P& grads, double lr) {
  axpy(params, -lr, grads);
}

}  // namespace refgame
