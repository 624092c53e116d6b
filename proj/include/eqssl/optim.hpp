#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "eqssl/encoder.hpp"
#include "eqssl/errors.hpp"

namespace eqssl {

enum class LrSchedule { cosine, step };

/// Linear warmup (step 0 gets base/warmup, step warmup-1 gets base) followed
/// by cosine decay to `final_lr` or by x`gamma` at each milestone.
struct LrScheduler {
  double base_lr = 0.1;
  double final_lr = 1e-4;
  long warmup_steps = 0;
  long total_steps = 1;
  LrSchedule schedule = LrSchedule::cosine;
  std::vector<long> milestones;  // in steps
  double gamma = 0.1;

  double at(long step) const {
    if (step < warmup_steps) return base_lr * double(step + 1) / double(warmup_steps);
    if (schedule == LrSchedule::step) {
      double lr = base_lr;
      for (long m : milestones)
        if (step >= m) lr *= gamma;
      return lr;
    }
    const long span = total_steps - warmup_steps;
    if (span <= 1) return base_lr;
    const double progress = std::min(1.0, double(step - warmup_steps) / double(span - 1));
    return final_lr + 0.5 * (base_lr - final_lr) * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

/// Flat list of named arrays of any parameter container exposing for_each.
template <typename S, typename Params>
std::vector<ArrayView<S>> views_of(Params& p) {
  std::vector<ArrayView<S>> out;
  p.for_each([&out](ArrayView<S> a) { out.push_back(a); });
  return out;
}

/// SGD with heavy-ball momentum and L2 weight decay:
/// v = mu v + r (g + wd w); w -= lr v, where r = 1 for plain SGD and, with a
/// positive trust coefficient (LARS), r = trust * |w| / |g + wd w| for
/// multi-dimensional arrays (biases keep r = 1).
template <typename S>
class Sgd {
public:
  Sgd(double momentum = 0.9, double weight_decay = 0.0, double trust = 0.0)
      : momentum_(momentum), weight_decay_(weight_decay), trust_(trust) {}

  void step(std::vector<ArrayView<S>> params, const std::vector<ArrayView<S>>& grads, double lr) {
    check(params, grads);
    if (state_.empty())
      for (const auto& p : params) state_.emplace_back(p.size, S(0));
    const S mu = S(momentum_), wd = S(weight_decay_), eta = S(lr);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& v = state_[k];
      S ratio = S(1);
      if (trust_ > 0.0 && params[k].shape.size() > 1) {
        double wn = 0.0, gn = 0.0;
        for (std::size_t i = 0; i < params[k].size; ++i) {
          const double w = params[k].data[i];
          const double g = grads[k].data[i] + weight_decay_ * w;
          wn += w * w;
          gn += g * g;
        }
        wn = std::sqrt(wn);
        gn = std::sqrt(gn);
        if (wn > 0.0 && gn > 0.0) ratio = S(trust_ * wn / gn);
      }
      for (std::size_t i = 0; i < params[k].size; ++i) {
        v[i] = mu * v[i] + ratio * (grads[k].data[i] + wd * params[k].data[i]);
        params[k].data[i] -= eta * v[i];
      }
    }
  }

  /// Momentum buffers in parameter order (empty before the first step).
  std::vector<std::vector<S>>& state() noexcept { return state_; }

private:
  static void check(const std::vector<ArrayView<S>>& p, const std::vector<ArrayView<S>>& g) {
    if (p.size() != g.size()) throw ArgumentError("optimizer: parameter/gradient count mismatch");
    for (std::size_t k = 0; k < p.size(); ++k)
      if (p[k].size != g[k].size) throw ArgumentError("optimizer: shape mismatch for " + p[k].name);
  }

  double momentum_;
  double weight_decay_;
  double trust_;
  std::vector<std::vector<S>> state_;
};

template <typename S>
class Adam {
public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0)
      : b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {}

  void step(std::vector<ArrayView<S>> params, const std::vector<ArrayView<S>>& grads, double lr) {
    if (params.size() != grads.size()) throw ArgumentError("optimizer: parameter/gradient count mismatch");
    if (m_.empty())
      for (const auto& p : params) {
        m_.emplace_back(p.size, S(0));
        v_.emplace_back(p.size, S(0));
      }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, double(t_));
    const double c2 = 1.0 - std::pow(b2_, double(t_));
    const S b1 = S(b1_), b2 = S(b2_);
    const S step = S(lr * std::sqrt(c2) / c1);
    const S eps = S(eps_ * std::sqrt(c2));
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (params[k].size != grads[k].size) throw ArgumentError("optimizer: shape mismatch for " + params[k].name);
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < params[k].size; ++i) {
        const S g = grads[k].data[i] + S(wd_) * params[k].data[i];
        m[i] = b1 * m[i] + (S(1) - b1) * g;
        v[i] = b2 * v[i] + (S(1) - b2) * g * g;
        params[k].data[i] -= step * m[i] / (std::sqrt(v[i]) + eps);
      }
    }
  }

  long steps() const noexcept { return t_; }

private:
  double b1_, b2_, eps_, wd_;
  long t_ = 0;
  std::vector<std::vector<S>> m_, v_;
};

}  // namespace eqssl
