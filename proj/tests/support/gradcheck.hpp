#pragma once

// Central finite-difference oracle for the tape. Coordinates whose +/-h
// perturbation flips a relu sign or a maxpool winner are skipped: the
// function is not differentiable across the kink, so the difference
// quotient there says nothing about the backward pass.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "rkt/model.hpp"

namespace rkt::testkit {

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

inline std::vector<double> random_weights(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> w(n);
  for (double& v : w) v = g(rng);
  return w;
}

/// h = sum_b sum_c w[c] * logit[b, c]
inline HeadFn linear_head(std::vector<double> w) {
  return [w = std::move(w)](std::size_t, std::span<const double> logits, std::span<double> d) {
    double h = 0.0;
    for (std::size_t c = 0; c < logits.size(); ++c) {
      h += w[c] * logits[c];
      d[c] = w[c];
    }
    return h;
  };
}

struct Eval {
  double value = 0.0;
  std::vector<std::uint32_t> pattern;
};

/// Head value plus the discrete activation pattern (relu signs, pool winners)
/// of a forward pass started at activation `from`.
inline Eval evaluate_from(const Model& m, std::size_t from, const Tensor& features, const HeadFn& head) {
  Tensor cur = features;
  Eval e;
  for (std::size_t l = from + 1; l <= m.depth(); ++l) {
    ForwardAux aux;
    Tensor next = layer_forward(m.layer(l), cur, &aux);
    if (m.layer(l).spec.kind == LayerKind::relu)
      for (double v : next.data()) e.pattern.push_back(v > 0.0);
    if (m.layer(l).spec.kind == LayerKind::maxpool2d)
      e.pattern.insert(e.pattern.end(), aux.argmax.begin(), aux.argmax.end());
    cur = std::move(next);
  }
  const std::size_t classes = cur.dim(1);
  std::vector<double> d(classes);
  for (std::size_t b = 0; b < cur.dim(0); ++b) e.value += head(b, cur.data().subspan(b * classes, classes), d);
  return e;
}

inline void accumulate(GradCheck& r, std::span<const double> analytic, std::span<const double> numeric,
                       const std::vector<bool>& valid) {
  double scale = 1e-8;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    if (valid[i]) scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    if (!valid[i]) {
      ++r.skipped;
      continue;
    }
    ++r.checked;
    r.max_rel_error = std::max(r.max_rel_error, std::abs(analytic[i] - numeric[i]) / scale);
  }
}

/// Checks every parameter gradient and every activation gradient f_0..f_L.
inline GradCheck check_model_gradients(const Model& model, const Tensor& batch, const HeadFn& head, double step) {
  Tape tape;
  model.forward(batch, &tape);
  Gradients g = tape.backward(tape.head(head));
  GradCheck result;
  const Eval base = evaluate_from(model, 0, batch, head);

  for (std::size_t l = 1; l <= model.depth(); ++l) {
    if (!model.layer(l).spec.parameterized()) continue;
    for (int which = 0; which < 2; ++which) {
      const Tensor& analytic = which ? g.biases[l] : g.weights[l];
      std::vector<double> numeric(analytic.size());
      std::vector<bool> valid(analytic.size());
      for (std::size_t i = 0; i < analytic.size(); ++i) {
        Model plus = model, minus = model;
        (which ? plus.mutable_layer(l).bias : plus.mutable_layer(l).weight)[i] += step;
        (which ? minus.mutable_layer(l).bias : minus.mutable_layer(l).weight)[i] -= step;
        Eval ep = evaluate_from(plus, 0, batch, head), em = evaluate_from(minus, 0, batch, head);
        numeric[i] = (ep.value - em.value) / (2 * step);
        valid[i] = ep.pattern == base.pattern && em.pattern == base.pattern;
      }
      accumulate(result, analytic.data(), numeric, valid);
    }
  }

  for (std::size_t l = 0; l < model.depth(); ++l) {
    Tensor feat = tape.activation(l);
    const Eval fb = evaluate_from(model, l, feat, head);
    std::vector<double> numeric(feat.size());
    std::vector<bool> valid(feat.size());
    for (std::size_t i = 0; i < feat.size(); ++i) {
      const double keep = feat[i];
      feat[i] = keep + step;
      Eval ep = evaluate_from(model, l, feat, head);
      feat[i] = keep - step;
      Eval em = evaluate_from(model, l, feat, head);
      feat[i] = keep;
      numeric[i] = (ep.value - em.value) / (2 * step);
      valid[i] = ep.pattern == fb.pattern && em.pattern == fb.pattern;
    }
    accumulate(result, g.activations[l].data(), numeric, valid);
  }
  return result;
}

/// conv(1->3) relu maxpool conv(3->4) relu flatten dense(->3) on 1x6x6:
/// every layer kind, small enough for exhaustive finite differences.
inline Model tiny_two_conv(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.5);
  std::vector<LayerSpec> specs = {LayerSpec::conv2d(1, 3, 3), LayerSpec::relu(),    LayerSpec::maxpool2d(),
                                  LayerSpec::conv2d(3, 4, 3), LayerSpec::relu(),    LayerSpec::flatten(),
                                  LayerSpec::dense(4 * 3 * 3, 3)};
  std::vector<Layer> layers;
  for (const auto& s : specs) {
    Layer layer{s, {}, {}};
    if (s.parameterized()) {
      layer.weight = Tensor(s.weight_shape());
      layer.bias = Tensor(s.bias_shape());
      for (double& v : layer.weight.data()) v = g(rng);
      for (double& v : layer.bias.data()) v = 0.1 * g(rng);
    }
    layers.push_back(std::move(layer));
  }
  return Model({1, 6, 6}, std::move(layers), 3);
}

/// flatten dense(n->m) on an input of shape `input` with explicit W and b.
inline Model linear_model(const Shape& input, const Tensor& weight, const Tensor& bias) {
  const LayerSpec d = LayerSpec::dense(weight.dim(1), weight.dim(0));
  std::vector<Layer> layers = {Layer{LayerSpec::flatten(), {}, {}}, Layer{d, weight, bias}};
  return Model(input, std::move(layers), weight.dim(0));
}

inline Tensor random_batch(const Shape& sample, std::size_t n, std::mt19937_64& rng) {
  Shape s = {n};
  s.insert(s.end(), sample.begin(), sample.end());
  Tensor t(s);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : t.data()) v = u(rng);
  return t;
}

}  // namespace rkt::testkit
