#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>

#include "refgame/errors.hpp"
#include "refgame/nncore.hpp"
#include "refgame/rng.hpp"
#include "refgame/tensor.hpp"
#include "refgame/worldgen.hpp"

namespace refgame {

enum class SenderArch { agnostic, informed };

struct AgentDims {
  std::size_t feature_dim = 64;
  std::size_t embed_dim = 50;
  std::size_t n_filters = 20;
  std::size_t vocab_size = 100;

  void validate() const {
    if (vocab_size < 2) throw ConfigError("vocab_size: vocabulary needs at least 2 symbols");
    if (feature_dim < 1) throw ConfigError("feature_dim: must be >= 1");
    if (embed_dim < 1) throw ConfigError("embed_dim: must be >= 1");
    if (n_filters < 1) throw ConfigError("n_filters: must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct AgnosticSenderParams {
  DenseParams embed;  // embed_dim x feature_dim
  DenseParams out;    // K x 2*embed_dim

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    for_each_tensor(self.embed, prefixed("embed", f));
    for_each_tensor(self.out, prefixed("out", f));
  }
  bool operator==(const AgnosticSenderParams&) const = default;
};

struct InformedSenderParams {
  DenseParams embed;         // embed_dim x feature_dim
  PairConvParams pairconv;   // f filters
  DenseParams out;           // K x embed_dim

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    for_each_tensor(self.embed, prefixed("embed", f));
    for_each_tensor(self.pairconv, prefixed("pairconv", f));
    for_each_tensor(self.out, prefixed("out", f));
  }
  bool operator==(const InformedSenderParams&) const = default;
};

struct ReceiverParams {
  DenseParams img_embed;  // embed_dim x feature_dim
  DenseParams sym_embed;  // embed_dim x K

  std::size_t vocab_size() const { return sym_embed.in_dim(); }

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    for_each_tensor(self.img_embed, prefixed("img_embed", f));
    for_each_tensor(self.sym_embed, prefixed("sym_embed", f));
  }
  bool operator==(const ReceiverParams&) const = default;
};

using SenderParams = std::variant<AgnosticSenderParams, InformedSenderParams>;

inline SenderArch arch_of(const SenderParams& p) {
  return std::holds_alternative<AgnosticSenderParams>(p) ? SenderArch::agnostic : SenderArch::informed;
}

inline std::size_t vocab_size_of(const SenderParams& p) {
  return std::visit([](const auto& s) { return s.out.out_dim(); }, p);
}

inline std::size_t feature_dim_of(const SenderParams& p) {
  return std::visit([](const auto& s) { return s.embed.in_dim(); }, p);
}

/// Tensor visitation over whichever sender alternative is held.
template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, SenderParams>
void for_each_tensor(P& p, F&& f) {
  std::visit([&](auto& s) { for_each_tensor(s, f); }, p);
}

inline SenderParams zeros_like(const SenderParams& p) {
  return std::visit([](const auto& s) -> SenderParams { return zeros_like(s); }, p);
}

inline void axpy(SenderParams& y, double a, const SenderParams& x) {
  if (y.index() != x.index()) throw ShapeError("sender update: architecture mismatch");
  std::visit(
      [&](auto& ys) {
        using T = std::decay_t<decltype(ys)>;
        axpy(ys, a, std::get<T>(x));
      },
      y);
}

inline void sgd_apply(SenderParams& params, const SenderParams& grads, double lr) {
  axpy(params, -lr, grads);
}

struct Agents {
  SenderParams sender;
  ReceiverParams receiver;
};

inline SenderParams init_sender(SenderArch arch, const AgentDims& dims, Rng& rng) {
  dims.validate();
  if (arch == SenderArch::agnostic) {
    AgnosticSenderParams p;
    p.embed = init_dense(dims.embed_dim, dims.feature_dim, rng);
    p.out = init_dense(dims.vocab_size, 2 * dims.embed_dim, rng);
    return p;
  }
  InformedSenderParams p;
  p.embed = init_dense(dims.embed_dim, dims.feature_dim, rng);
  p.pairconv = init_pair_conv(dims.n_filters, rng);
  p.out = init_dense(dims.vocab_size, dims.embed_dim, rng);
  return p;
}

inline ReceiverParams init_receiver(const AgentDims& dims, Rng& rng) {
  dims.validate();
  ReceiverParams p;
  p.img_embed = init_dense(dims.embed_dim, dims.feature_dim, rng);
  p.sym_embed = init_dense(dims.embed_dim, dims.vocab_size, rng);
  return p;
}

/// Sender and receiver are initialized from separate streams of `rng` and
/// share no weights.
inline Agents init_agents(SenderArch arch, const AgentDims& dims, Rng& rng) {
  Rng sender_rng(rng());
  Rng receiver_rng(rng());
  return Agents{init_sender(arch, dims, sender_rng), init_receiver(dims, receiver_rng)};
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

namespace detail {

inline Vector embed_sigmoid(const DenseParams& p, std::span<const double> x, const char* who) {
  if (x.size() != p.in_dim()) {
    throw ShapeError(std::string(who) + ": feature length " + std::to_string(x.size()) +
                     " does not match embedding " + shape_string(p.out_dim(), p.in_dim()));
  }
  Vector y(p.out_dim());
  dense_apply(p, x, y);
  sigmoid_inplace(y);
  return y;
}

/// Backprop through sigmoid(embed(x)) given dL/d(sigmoid output).
inline void embed_sigmoid_backward(const DenseParams& p, std::span<const double> x,
                                   std::span<const double> y, std::span<double> upstream,
                                   double scale, DenseGrads& grads) {
  for (std::size_t i = 0; i < y.size(); ++i) upstream[i] *= y[i] * (1.0 - y[i]);
  dense_backward_into(p, x, upstream, scale, grads, {});
}

}  // namespace detail

struct AgnosticSenderCache {
  Vector target;
  Vector distractor;
  Vector e_target;
  Vector e_distractor;
  Vector concat;
};

struct InformedSenderCache {
  Vector target;
  Vector distractor;
  Vector e_target;
  Vector e_distractor;
  PairConvCache conv;
  Vector conv_out;
};

using SenderCache = std::variant<AgnosticSenderCache, InformedSenderCache>;

struct SenderAction {
  std::size_t symbol = 0;
  Vector scores;
  Vector probs;
  GibbsConfig gibbs;
  SenderCache cache;
};

/// Distribution over symbols; `symbol` is left at 0 until sampled.
inline SenderAction agnostic_sender_policy(const AgnosticSenderParams& p, std::span<const double> target,
                                           std::span<const double> distractor, const GibbsConfig& g) {
  AgnosticSenderCache c;
  c.target.assign(target.begin(), target.end());
  c.distractor.assign(distractor.begin(), distractor.end());
  c.e_target = detail::embed_sigmoid(p.embed, target, "agnostic sender");
  c.e_distractor = detail::embed_sigmoid(p.embed, distractor, "agnostic sender");
  c.concat = c.e_target;
  c.concat.insert(c.concat.end(), c.e_distractor.begin(), c.e_distractor.end());
  if (c.concat.size() != p.out.in_dim()) throw ShapeError("agnostic sender: head input mismatch");
  SenderAction a;
  a.scores.resize(p.out.out_dim());
  dense_apply(p.out, c.concat, a.scores);
  a.probs = gibbs(a.scores, g);
  a.gibbs = g;
  a.cache = std::move(c);
  return a;
}

inline SenderAction informed_sender_policy(const InformedSenderParams& p, std::span<const double> target,
                                           std::span<const double> distractor, const GibbsConfig& g) {
  InformedSenderCache c;
  c.target.assign(target.begin(), target.end());
  c.distractor.assign(distractor.begin(), distractor.end());
  c.e_target = detail::embed_sigmoid(p.embed, target, "informed sender");
  c.e_distractor = detail::embed_sigmoid(p.embed, distractor, "informed sender");
  auto conv = pair_conv_forward(p.pairconv, c.e_target, c.e_distractor);
  c.conv = std::move(conv.cache);
  c.conv_out = std::move(conv.y);
  if (c.conv_out.size() != p.out.in_dim()) throw ShapeError("informed sender: head input mismatch");
  SenderAction a;
  a.scores.resize(p.out.out_dim());
  dense_apply(p.out, c.conv_out, a.scores);
  a.probs = gibbs(a.scores, g);
  a.gibbs = g;
  a.cache = std::move(c);
  return a;
}

inline SenderAction sender_policy(const SenderParams& p, std::span<const double> target,
                                  std::span<const double> distractor, const GibbsConfig& g) {
  return std::visit(
      [&](const auto& s) {
        if constexpr (std::is_same_v<std::decay_t<decltype(s)>, AgnosticSenderParams>) {
          return agnostic_sender_policy(s, target, distractor, g);
        } else {
          return informed_sender_policy(s, target, distractor, g);
        }
      },
      p);
}

inline SenderAction agnostic_sender_forward(const AgnosticSenderParams& p, std::span<const double> target,
                                            std::span<const double> distractor, const GibbsConfig& g,
                                            Rng& rng) {
  SenderAction a = agnostic_sender_policy(p, target, distractor, g);
  a.symbol = sample_categorical(a.probs, rng);
  return a;
}

inline SenderAction informed_sender_forward(const InformedSenderParams& p, std::span<const double> target,
                                            std::span<const double> distractor, const GibbsConfig& g,
                                            Rng& rng) {
  SenderAction a = informed_sender_policy(p, target, distractor, g);
  a.symbol = sample_categorical(a.probs, rng);
  return a;
}

inline SenderAction sender_forward(const SenderParams& p, std::span<const double> target,
                                   std::span<const double> distractor, const GibbsConfig& g, Rng& rng) {
  SenderAction a = sender_policy(p, target, distractor, g);
  a.symbol = sample_categorical(a.probs, rng);
  return a;
}

struct ReceiverCache {
  Vector first;  // features of the image shown first (receiver frame)
  Vector second;
  Vector u_first;
  Vector u_second;
  Vector v;
  std::size_t symbol = 0;
};

/// `choice` is in the receiver's own frame: left = the image it was shown first.
struct ReceiverAction {
  Side choice = Side::left;
  Vector scores;
  Vector probs;
  GibbsConfig gibbs;
  ReceiverCache cache;
};

inline ReceiverAction receiver_policy(const ReceiverParams& p, std::span<const double> left,
                                      std::span<const double> right, std::size_t symbol,
                                      const GibbsConfig& g) {
  const std::size_t k = p.vocab_size();
  if (symbol >= k) {
    throw DomainError("receiver: symbol " + std::to_string(symbol) + " outside vocabulary of size " +
                      std::to_string(k));
  }
  ReceiverCache c;
  c.first.assign(left.begin(), left.end());
  c.second.assign(right.begin(), right.end());
  c.u_first = detail::embed_sigmoid(p.img_embed, left, "receiver");
  c.u_second = detail::embed_sigmoid(p.img_embed, right, "receiver");
  const std::size_t d = p.sym_embed.out_dim();
  c.v.resize(d);  // linear symbol embedding; a sigmoid here pins every v near 0.5 and stalls learning
  for (std::size_t i = 0; i < d; ++i) c.v[i] = p.sym_embed.weights(i, symbol) + p.sym_embed.bias[i];
  c.symbol = symbol;
  ReceiverAction a;
  a.scores = {dot(c.v, c.u_first), dot(c.v, c.u_second)};
  a.probs = gibbs(a.scores, g);
  a.gibbs = g;
  a.cache = std::move(c);
  return a;
}

inline ReceiverAction receiver_forward(const ReceiverParams& p, std::span<const double> left,
                                       std::span<const double> right, std::size_t symbol,
                                       const GibbsConfig& g, Rng& rng) {
  ReceiverAction a = receiver_policy(p, left, right, symbol, g);
  a.choice = sample_categorical(a.probs, rng) == 0 ? Side::left : Side::right;
  return a;
}

// ---------------------------------------------------------------------------
// Log-probability gradients
// ---------------------------------------------------------------------------

/// grads += scale * d log pi(action.symbol) / d params
inline void accumulate_sender_logprob_grad(const SenderParams& p, const SenderAction& action, double scale,
                                           SenderParams& grads) {
  if (p.index() != action.cache.index() || p.index() != grads.index()) {
    throw ShapeError("sender gradient: cache/params architecture mismatch");
  }
  Vector g_scores = gibbs_logprob_grad(action.probs, action.symbol, action.gibbs);
  if (const auto* ap = std::get_if<AgnosticSenderParams>(&p)) {
    const auto& c = std::get<AgnosticSenderCache>(action.cache);
    auto& gr = std::get<AgnosticSenderParams>(grads);
    if (g_scores.size() != ap->out.out_dim() || c.concat.size() != ap->out.in_dim()) {
      throw ShapeError("agnostic sender gradient: stale cache");
    }
    Vector g_concat(c.concat.size());
    dense_backward_into(ap->out, c.concat, g_scores, scale, gr.out, g_concat);
    const std::size_t d = c.e_target.size();
    std::span<double> gt(g_concat.data(), d);
    std::span<double> gd(g_concat.data() + d, d);
    detail::embed_sigmoid_backward(ap->embed, c.target, c.e_target, gt, scale, gr.embed);
    detail::embed_sigmoid_backward(ap->embed, c.distractor, c.e_distractor, gd, scale, gr.embed);
    return;
  }
  const auto& ip = std::get<InformedSenderParams>(p);
  const auto& c = std::get<InformedSenderCache>(action.cache);
  auto& gr = std::get<InformedSenderParams>(grads);
  if (g_scores.size() != ip.out.out_dim() || c.conv_out.size() != ip.out.in_dim()) {
    throw ShapeError("informed sender gradient: stale cache");
  }
  Vector g_conv(c.conv_out.size());
  dense_backward_into(ip.out, c.conv_out, g_scores, scale, gr.out, g_conv);
  Vector gt(c.e_target.size()), gd(c.e_distractor.size());
  pair_conv_backward_into(ip.pairconv, c.conv, g_conv, scale, gr.pairconv, gt, gd);
  detail::embed_sigmoid_backward(ip.embed, c.target, c.e_target, gt, scale, gr.embed);
  detail::embed_sigmoid_backward(ip.embed, c.distractor, c.e_distractor, gd, scale, gr.embed);
}

inline SenderParams sender_logprob_grad(const SenderParams& p, const SenderAction& action) {
  SenderParams grads = zeros_like(p);
  accumulate_sender_logprob_grad(p, action, 1.0, grads);
  return grads;
}

inline void accumulate_receiver_logprob_grad(const ReceiverParams& p, const ReceiverAction& action,
                                             double scale, ReceiverParams& grads) {
  const auto& c = action.cache;
  if (c.v.size() != p.sym_embed.out_dim() || c.u_first.size() != p.img_embed.out_dim() ||
      c.symbol >= p.vocab_size() || c.first.size() != p.img_embed.in_dim()) {
    throw ShapeError("receiver gradient: stale cache");
  }
  const std::size_t chosen = action.choice == Side::left ? 0 : 1;
  const Vector g_s = gibbs_logprob_grad(action.probs, chosen, action.gibbs);
  const std::size_t d = c.v.size();
  Vector g_u1(d), g_u2(d);
  for (std::size_t i = 0; i < d; ++i) {
    g_u1[i] = g_s[0] * c.v[i];
    g_u2[i] = g_s[1] * c.v[i];
    // symbol path: v = W[:, symbol] + b
    const double g_v = g_s[0] * c.u_first[i] + g_s[1] * c.u_second[i];
    const double g_pre = scale * g_v;
    grads.sym_embed.weights(i, c.symbol) += g_pre;
    grads.sym_embed.bias[i] += g_pre;
  }
  detail::embed_sigmoid_backward(p.img_embed, c.first, c.u_first, g_u1, scale, grads.img_embed);
  detail::embed_sigmoid_backward(p.img_embed, c.second, c.u_second, g_u2, scale, grads.img_embed);
}

inline ReceiverParams receiver_logprob_grad(const ReceiverParams& p, const ReceiverAction& action) {
  ReceiverParams grads = zeros_like(p);
  accumulate_receiver_logprob_grad(p, action, 1.0, grads);
  return grads;
}

/// log pi(symbol) for a sender action, from its stored distribution.
inline double log_prob(const SenderAction& a) { return std::log(a.probs.at(a.symbol)); }
inline double log_prob(const ReceiverAction& a) {
  return std::log(a.probs.at(a.choice == Side::left ? 0 : 1));
}

}  // namespace refgame
