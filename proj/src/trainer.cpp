#include "rkt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace rkt {

namespace {

struct Step {
  double loss = 0.0;
  std::size_t correct = 0;
};

// Forward + cross-entropy + backward on one batch; gradients are of the
// mean loss.
Step batch_gradients(const Model& model, const Tensor& x, std::span<const std::size_t> y, Gradients& g,
                     std::size_t stop_at) {
  Tape tape;
  model.forward(x, &tape);
  const double inv = 1.0 / static_cast<double>(y.size());
  Step s;
  Tensor h = tape.head([&](std::size_t b, std::span<const double> logits, std::span<double> d) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    for (std::size_t c = 0; c < logits.size(); ++c) d[c] = std::exp(logits[c] - mx) / z * inv;
    d[y[b]] -= inv;
    if (static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin()) == y[b]) ++s.correct;
    const double l = std::log(z) + mx - logits[y[b]];
    s.loss += l;
    return l * inv;
  });
  g = tape.backward(h, BackwardOptions{stop_at, true});
  return s;
}

class Sgd {
 public:
  Sgd(const Model& m, double momentum) : momentum_(momentum), vw_(m.depth() + 1), vb_(m.depth() + 1) {}

  void apply(Model& m, std::size_t l, const Gradients& g, double lr) {
    Layer& layer = m.mutable_layer(l);
    step(layer.weight, g.weights[l], vw_[l], lr);
    step(layer.bias, g.biases[l], vb_[l], lr);
  }

 private:
  void step(Tensor& p, const Tensor& grad, std::vector<double>& v, double lr) {
    if (v.empty()) v.assign(p.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum_ * v[i] + grad[i];
      p[i] -= lr * v[i];
    }
  }

  double momentum_;
  std::vector<std::vector<double>> vw_, vb_;
};

double accuracy(const Model& model, const Dataset& ds) {
  if (ds.size() == 0) return 0.0;
  auto pred = model.predict_labels(ds.images);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) ok += pred[i] == ds.labels[i];
  return static_cast<double>(ok) / static_cast<double>(ds.size());
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("train: learning rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("train: momentum must be in [0, 1)");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (i && milestones[i] <= milestones[i - 1])
      throw std::invalid_argument("train: milestones must be strictly increasing");
    if (milestones[i] >= epochs && epochs > 0) throw std::invalid_argument("train: milestones must be < epochs");
  }
}

double TrainConfig::lr_at(std::size_t epoch) const {
  double r = lr;
  for (auto m : milestones)
    if (epoch >= m) r *= decay;
  return r;
}

std::string TrainHistory::to_csv() const {
  std::ostringstream os;
  os.precision(8);
  os << "epoch,loss,clean_acc,asr\n";
  for (const auto& e : epochs) {
    os << e.epoch << ',' << e.loss << ',' << e.clean_acc << ',';
    if (e.asr) os << *e.asr;
    os << '\n';
  }
  return os.str();
}

std::pair<double, double> evaluate_loss(const Model& model, const Dataset& data) {
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += 128) {
    const std::size_t n = std::min<std::size_t>(128, data.size() - start);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), start);
    Tensor out = model.forward(data.batch(idx));
    const std::size_t c = model.classes();
    for (std::size_t b = 0; b < n; ++b) {
      auto row = out.data().subspan(b * c, c);
      const double mx = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      for (double v : row) z += std::exp(v - mx);
      const std::size_t y = data.labels[start + b];
      loss += std::log(z) + mx - row[y];
      correct += static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == y;
    }
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, data.size()));
  return {loss / n, static_cast<double>(correct) / n};
}

TrainResult train(const Model& model, const Dataset& data, const TrainConfig& cfg, const TrainMonitor& monitor) {
  cfg.validate();
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (data.sample_shape() != model.input_shape())
    throw ShapeError("train: dataset samples " + shape_str(data.sample_shape()) + " do not match model input " +
                     shape_str(model.input_shape()));

  TrainResult result{model, {}};
  if (cfg.epochs == 0) return result;
  Model& m = result.model;
  Sgd opt(m, cfg.momentum);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const Model before = m;
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = cfg.lr_at(epoch);
    double loss = 0.0;
    std::size_t correct = 0;
    try {
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t n = std::min(cfg.batch_size, order.size() - start);
        std::span<const std::size_t> idx(order.data() + start, n);
        std::vector<std::size_t> labels(n);
        for (std::size_t i = 0; i < n; ++i) labels[i] = data.labels[idx[i]];
        Gradients g;
        Step s = batch_gradients(m, data.batch(idx), labels, g, 0);
        if (!std::isfinite(s.loss)) throw NumericError("non-finite loss");
        loss += s.loss;
        correct += s.correct;
        for (std::size_t l = 1; l <= m.depth(); ++l)
          if (m.layer(l).spec.parameterized()) opt.apply(m, l, g, lr);
      }
    } catch (const NumericError& e) {
      throw DivergenceError("train: diverged in epoch " + std::to_string(epoch + 1) + " (" + e.what() +
                                "); last finite state is the end of epoch " + std::to_string(epoch),
                            round_to_storage(before), epoch);
    }
    EpochStats st;
    st.epoch = epoch + 1;
    st.loss = loss / static_cast<double>(data.size());
    st.clean_acc = monitor.clean ? accuracy(m, *monitor.clean)
                                 : static_cast<double>(correct) / static_cast<double>(data.size());
    if (monitor.triggered && monitor.triggered->size()) {
      auto pred = m.predict_labels(monitor.triggered->images);
      st.asr = static_cast<double>(std::count(pred.begin(), pred.end(), monitor.target)) /
               static_cast<double>(pred.size());
    }
    result.history.epochs.push_back(st);
  }
  m = round_to_storage(m);
  return result;
}

std::size_t last_conv_layer(const Model& model) {
  for (std::size_t l = model.depth(); l >= 1; --l)
    if (model.layer(l).spec.kind == LayerKind::conv2d) return l;
  throw std::invalid_argument("model has no conv layer");
}

Model fine_tune_last(const Model& model, std::span<const SamplePair> cleansed, const TrainConfig& cfg) {
  cfg.validate();
  if (cleansed.empty()) throw std::invalid_argument("fine_tune_last: no cleansed samples");
  const std::size_t target = last_conv_layer(model);
  Model m = model;
  Sgd opt(m, cfg.momentum);
  std::mt19937_64 rng(cfg.seed);
  // Both sides of every pair, labelled with the true class.
  std::vector<const Tensor*> inputs;
  std::vector<std::size_t> labels;
  for (const auto& p : cleansed) {
    inputs.push_back(&p.x);
    inputs.push_back(&p.x_tilde);
    labels.insert(labels.end(), 2, p.y);
  }
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      std::vector<Tensor> xs;
      std::vector<std::size_t> ys;
      for (std::size_t i = 0; i < n; ++i) {
        xs.push_back(*inputs[order[start + i]]);
        ys.push_back(labels[order[start + i]]);
      }
      Gradients g;
      Step s = batch_gradients(m, stack(xs), ys, g, target - 1);
      if (!std::isfinite(s.loss)) throw NumericError("fine_tune_last: non-finite loss");
      opt.apply(m, target, g, cfg.lr_at(epoch));
    }
  }
  return m;
}

}  // namespace rkt
