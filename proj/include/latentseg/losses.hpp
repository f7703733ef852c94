#pragma once

#include <cmath>
#include <map>
#include <string>

#include <Eigen/Dense>

#include "latentseg/cooccurrence.hpp"
#include "latentseg/core.hpp"

namespace latentseg {

// Clamp applied to every log argument and division denominator.
constexpr double kLossEps = 1e-8;

struct LossValue {
  double value = 0.0;
  std::map<std::string, double> components;

  void check_finite(const std::string& who) const {
    if (!std::isfinite(value))
      throw StateError(who + ": non-finite loss value");
  }
};

// Value plus gradient with respect to one probability-map input.
template <typename T>
struct LossGrad {
  LossValue loss;
  Tensor<T> grad;
};

namespace detail {
inline double clamped_log(double x) { return std::log(x < kLossEps ? kLossEps : x); }
}  // namespace detail

// ---------------------------------------------------------------------------
// Cross-entropy on labeled pixels (semantic branch, labeled data).
// Ignored pixels are excluded from both the sum and the mean normalizer.
template <typename T>
LossGrad<T> ce_loss(const ProbMap<T>& pred, const LabelMap& target,
                    const ClassSpace& space, Reduction reduction = Reduction::mean) {
  const Tensor<T>& p = pred.values;
  if (p.n() != target.n || p.h() != target.h || p.w() != target.w)
    throw DimensionError("ce_loss: prediction " + p.shape_str() +
                         " does not match label map");
  if (p.c() != space.semantic_count)
    throw DimensionError("ce_loss: prediction has " + std::to_string(p.c()) +
                         " channels, expected " +
                         std::to_string(space.semantic_count));

  LossGrad<T> out;
  out.grad = Tensor<T>(p.n(), p.h(), p.w(), p.c());
  double sum = 0.0;
  long valid = 0;
  for (int n = 0; n < p.n(); ++n)
    for (int h = 0; h < p.h(); ++h)
      for (int w = 0; w < p.w(); ++w) {
        const std::int32_t y = target.at(n, h, w);
        if (y == space.ignore_index) continue;
        if (y < 0 || y >= space.semantic_count)
          throw ValidationError("ce_loss: label " + std::to_string(y) +
                                " at pixel (" + std::to_string(n) + "," +
                                std::to_string(h) + "," + std::to_string(w) +
                                ") outside class range");
        ++valid;
        const double pc = static_cast<double>(p(n, h, w, y));
        sum -= detail::clamped_log(pc);
        out.grad(n, h, w, y) = T(-1.0 / std::max(pc, kLossEps));
      }

  if (valid == 0) {
    out.loss.value = 0.0;
    out.loss.components["warn_all_ignored"] = 1.0;
    return out;
  }
  const double denom = reduction == Reduction::mean ? static_cast<double>(valid) : 1.0;
  out.loss.value = sum / denom;
  if (reduction == Reduction::mean) {
    const T scale = T(1.0 / denom);
    for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] *= scale;
  }
  out.loss.check_finite("ce_loss");
  return out;
}

// ---------------------------------------------------------------------------
// Adversarial term for the segmentation network: -log D(S_c) per pixel, where
// disc_out holds the discriminator's confidence that the input is ground
// truth. The gradient here is with respect to disc_out; the caller chains it
// through the (frozen) discriminator to reach the prediction.
template <typename T>
LossGrad<T> adv_gen_loss(const Tensor<T>& disc_out,
                         Reduction reduction = Reduction::mean) {
  if (disc_out.c() != 1)
    throw DimensionError("adv_gen_loss: confidence map must have one channel");
  LossGrad<T> out;
  out.grad = Tensor<T>(disc_out.n(), disc_out.h(), disc_out.w(), 1);
  double sum = 0.0;
  const std::size_t count = disc_out.size();
  const double denom = reduction == Reduction::mean ? static_cast<double>(count) : 1.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double d = std::max(static_cast<double>(disc_out[i]), kLossEps);
    sum -= std::log(d);
    out.grad[i] = T(-1.0 / (d * denom));
  }
  out.loss.value = sum / denom;
  out.loss.check_finite("adv_gen_loss");
  return out;
}

// ---------------------------------------------------------------------------
// Batchwise joint distribution over (semantic, latent) pairs. The normalizer
// counts non-ignored pixels so the result stays a probability distribution
// under ignore labels.
template <typename T>
Eigen::MatrixXd batch_joint(const ProbMap<T>& y, const ProbMap<T>& s_l,
                            long* non_ignored = nullptr) {
  const Tensor<T>& yv = y.values;
  Eigen::MatrixXd S = cooccurrence_batch_statistic(y, s_l);
  long valid = 0;
  for (int n = 0; n < yv.n(); ++n)
    for (int h = 0; h < yv.h(); ++h)
      for (int w = 0; w < yv.w(); ++w)
        for (int c = 0; c < yv.c(); ++c)
          if (yv(n, h, w, c) != T(0)) { ++valid; break; }
  if (non_ignored) *non_ignored = valid;
  if (valid > 0) S /= static_cast<double>(valid);
  return S;
}

// ---------------------------------------------------------------------------
// Conditional entropy H(C|L) of the batchwise joint: the latent branch loss.
// Latent columns with vanishing marginal contribute zero (x log x -> 0).
// Gradient flows into s_l only; value lies in [0, ln |C|].
template <typename T>
LossGrad<T> latent_loss(const ProbMap<T>& y, const ProbMap<T>& s_l) {
  const Tensor<T>& yv = y.values;
  const Tensor<T>& sv = s_l.values;
  long valid = 0;
  Eigen::MatrixXd J = batch_joint(y, s_l, &valid);
  const int C = static_cast<int>(J.rows()), L = static_cast<int>(J.cols());

  Eigen::VectorXd marginal = J.colwise().sum();  // P_b(l)
  double value = 0.0;
  // -log P_b(c|l), used both for the value and for the per-pixel gradient.
  Eigen::MatrixXd neg_log_cond = Eigen::MatrixXd::Zero(C, L);
  for (int l = 0; l < L; ++l) {
    if (marginal(l) < kLossEps) continue;
    for (int c = 0; c < C; ++c) {
      if (J(c, l) <= 0.0) continue;
      const double nl = -(std::log(J(c, l)) - std::log(marginal(l)));
      neg_log_cond(c, l) = nl;
      value += J(c, l) * nl;
    }
  }

  LossGrad<T> out;
  out.loss.value = value;
  out.grad = Tensor<T>(sv.n(), sv.h(), sv.w(), sv.c());
  if (valid > 0) {
    const double inv = 1.0 / static_cast<double>(valid);
    for (int n = 0; n < yv.n(); ++n)
      for (int h = 0; h < yv.h(); ++h)
        for (int w = 0; w < yv.w(); ++w) {
          int cls = -1;
          for (int c = 0; c < C; ++c)
            if (yv(n, h, w, c) != T(0)) { cls = c; break; }
          if (cls < 0) continue;
          const double yc = static_cast<double>(yv(n, h, w, cls));
          for (int l = 0; l < L; ++l)
            out.grad(n, h, w, l) = T(yc * neg_log_cond(cls, l) * inv);
        }
  }
  out.loss.check_finite("latent_loss");
  return out;
}

// ---------------------------------------------------------------------------
// Project semantic probabilities onto the latent space through P(l|c).
// P is a running statistic, treated as a constant: no gradient flows into it.
template <typename T>
ProbMap<T> semantic_to_latent(const ProbMap<T>& s_c, const LatentProjection& proj) {
  const Tensor<T>& v = s_c.values;
  if (v.c() != proj.semantic_count())
    throw DimensionError("semantic_to_latent: map has " + std::to_string(v.c()) +
                         " channels but projection has " +
                         std::to_string(proj.semantic_count()) + " rows");
  const int C = proj.semantic_count(), L = proj.latent_count();
  Tensor<T> out(v.n(), v.h(), v.w(), L);
  for (int n = 0; n < v.n(); ++n)
    for (int h = 0; h < v.h(); ++h)
      for (int w = 0; w < v.w(); ++w)
        for (int l = 0; l < L; ++l) {
          double acc = 0.0;
          for (int c = 0; c < C; ++c)
            acc += proj.P(c, l) * static_cast<double>(v(n, h, w, c));
          out(n, h, w, l) = T(acc);
        }
  return ProbMap<T>(std::move(out), MapKind::latent);
}

// Chain rule for the projection above: given dLoss/d(projected), produce
// dLoss/d(semantic input).
template <typename T>
Tensor<T> semantic_to_latent_backward(const Tensor<T>& grad_out,
                                      const LatentProjection& proj) {
  const int C = proj.semantic_count(), L = proj.latent_count();
  if (grad_out.c() != L)
    throw DimensionError("semantic_to_latent_backward: gradient channel mismatch");
  Tensor<T> grad_in(grad_out.n(), grad_out.h(), grad_out.w(), C);
  for (int n = 0; n < grad_out.n(); ++n)
    for (int h = 0; h < grad_out.h(); ++h)
      for (int w = 0; w < grad_out.w(); ++w)
        for (int c = 0; c < C; ++c) {
          double acc = 0.0;
          for (int l = 0; l < L; ++l)
            acc += proj.P(c, l) * static_cast<double>(grad_out(n, h, w, l));
          grad_in(n, h, w, c) = T(acc);
        }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Consistency between the latent branch prediction s_l and the projected
// semantic prediction s_lc, averaged over all pixels.
//   cross_entropy: s_l is a constant target; gradient reaches s_lc only.
//   symmetric_kl:  symmetric divergence with gradients into both maps.
template <typename T>
struct ConsistencyResult {
  LossValue loss;
  Tensor<T> grad_s_lc;
  Tensor<T> grad_s_l;
};

template <typename T>
ConsistencyResult<T> consistency_loss(const ProbMap<T>& s_l, const ProbMap<T>& s_lc,
                                      ConsistencyVariant variant) {
  const Tensor<T>& a = s_l.values;   // latent branch
  const Tensor<T>& b = s_lc.values;  // projected semantic branch
  if (!a.same_shape(b))
    throw DimensionError("consistency_loss: shapes disagree, " + a.shape_str() +
                         " vs " + b.shape_str());
  const std::size_t pixels = static_cast<std::size_t>(a.n()) * a.h() * a.w();
  const double inv = 1.0 / static_cast<double>(pixels);

  ConsistencyResult<T> out;
  out.grad_s_lc = Tensor<T>(b.n(), b.h(), b.w(), b.c());
  out.grad_s_l = Tensor<T>(a.n(), a.h(), a.w(), a.c());
  double sum = 0.0;

  if (variant == ConsistencyVariant::cross_entropy) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double ai = static_cast<double>(a[i]);
      const double bi = std::max(static_cast<double>(b[i]), kLossEps);
      sum -= ai * std::log(bi);
      out.grad_s_lc[i] = T(-ai / bi * inv);
    }
  } else {
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double ai = std::max(static_cast<double>(a[i]), kLossEps);
      const double bi = std::max(static_cast<double>(b[i]), kLossEps);
      const double log_ratio = std::log(ai) - std::log(bi);
      sum += (ai - bi) * log_ratio;
      // d/da [a log(a/b) + b log(b/a)] = log(a/b) + 1 - b/a
      out.grad_s_l[i] = T((log_ratio + 1.0 - bi / ai) * inv);
      out.grad_s_lc[i] = T((-log_ratio + 1.0 - ai / bi) * inv);
    }
  }
  out.loss.value = sum * inv;
  out.loss.check_finite("consistency_loss");
  return out;
}

// ---------------------------------------------------------------------------
// Discriminator training loss: fakes (network predictions) should score 0,
// ground-truth maps should score 1. Both terms mean-reduced over their own
// pixels; gradients are with respect to the discriminator outputs.
template <typename T>
struct DiscLossResult {
  LossValue loss;
  Tensor<T> grad_fake;
  Tensor<T> grad_real;
};

template <typename T>
DiscLossResult<T> disc_loss(const Tensor<T>& disc_on_pred,
                            const Tensor<T>& disc_on_gt,
                            Reduction reduction = Reduction::mean) {
  if (disc_on_pred.c() != 1 || disc_on_gt.c() != 1)
    throw DimensionError("disc_loss: confidence maps must have one channel");
  DiscLossResult<T> out;
  out.grad_fake = Tensor<T>(disc_on_pred.n(), disc_on_pred.h(), disc_on_pred.w(), 1);
  out.grad_real = Tensor<T>(disc_on_gt.n(), disc_on_gt.h(), disc_on_gt.w(), 1);

  double fake_sum = 0.0, real_sum = 0.0;
  const double fake_denom =
      reduction == Reduction::mean ? static_cast<double>(disc_on_pred.size()) : 1.0;
  const double real_denom =
      reduction == Reduction::mean ? static_cast<double>(disc_on_gt.size()) : 1.0;
  for (std::size_t i = 0; i < disc_on_pred.size(); ++i) {
    const double d = std::min(static_cast<double>(disc_on_pred[i]), 1.0 - kLossEps);
    fake_sum -= std::log(1.0 - d);
    out.grad_fake[i] = T(1.0 / ((1.0 - d) * fake_denom));
  }
  for (std::size_t i = 0; i < disc_on_gt.size(); ++i) {
    const double d = std::max(static_cast<double>(disc_on_gt[i]), kLossEps);
    real_sum -= std::log(d);
    out.grad_real[i] = T(-1.0 / (d * real_denom));
  }
  out.loss.value = fake_sum / fake_denom + real_sum / real_denom;
  out.loss.components["l_disc_fake"] = fake_sum / fake_denom;
  out.loss.components["l_disc_real"] = real_sum / real_denom;
  out.loss.check_finite("disc_loss");
  return out;
}

// ---------------------------------------------------------------------------
// Composite objectives.

inline LossValue composite_labeled(const LossValue& ce, const LossValue& latent,
                                   const LossValue& adv, const RunConfig& cfg) {
  LossValue out;
  out.value = ce.value + latent.value + cfg.lambda_adv * adv.value;
  out.components["l_ce"] = ce.value;
  out.components["l_latent"] = latent.value;
  out.components["l_adv_lab"] = adv.value;
  out.check_finite("composite_labeled");
  return out;
}

inline LossValue composite_unlabeled(const LossValue& cons, const LossValue& adv,
                                     const RunConfig& cfg) {
  LossValue out;
  out.value = cons.value + cfg.lambda_adv * adv.value;
  out.components["l_cons"] = cons.value;
  out.components["l_adv_unl"] = adv.value;
  out.check_finite("composite_unlabeled");
  return out;
}

inline LossValue total_objective(const LossValue& labeled, const LossValue& unlabeled,
                                 const RunConfig& cfg) {
  LossValue out;
  out.value = labeled.value + cfg.lambda_unlabeled * unlabeled.value;
  out.components = labeled.components;
  for (const auto& [k, v] : unlabeled.components) out.components[k] = v;
  out.check_finite("total_objective");
  return out;
}

}  // namespace latentseg
