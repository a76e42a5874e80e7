#include "rkt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rkt {

Tensor batch_logits(const Model& model, std::span<const Tensor> samples, std::size_t batch_size) {
  Tensor out({samples.size(), model.classes()});
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    const Tensor logits = model.forward(stack(samples.subspan(start, end - start)));
    std::copy(logits.data().begin(), logits.data().end(), out.ptr() + start * model.classes());
  }
  return out;
}

namespace {

void require_nonempty(const Dataset& ds, const char* what) {
  if (ds.size() == 0) throw std::invalid_argument(std::string(what) + ": empty sample set");
}

void require_triggered(const Dataset& ds, std::size_t target, const char* what) {
  require_nonempty(ds, what);
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.labels[i] == target)
      throw std::invalid_argument(std::string(what) + ": sample " + std::to_string(i) + " is labelled with the target " +
                                  std::to_string(target));
}

}  // namespace

double accuracy(const Model& model, const Dataset& ds) {
  require_nonempty(ds, "accuracy");
  const auto pred = model.predict_labels(ds.images);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) ok += pred[i] == ds.labels[i];
  return static_cast<double>(ok) / static_cast<double>(ds.size());
}

double attack_success_rate(const Model& model, const Dataset& triggered, std::size_t target) {
  require_triggered(triggered, target, "attack_success_rate");
  const auto pred = model.predict_labels(triggered.images);
  const auto hits = std::count(pred.begin(), pred.end(), target);
  return static_cast<double>(hits) / static_cast<double>(triggered.size());
}

double false_confidence(const Model& model, const Dataset& triggered, std::size_t target) {
  require_triggered(triggered, target, "false_confidence");
  if (target >= model.classes()) throw std::out_of_range("false_confidence: target outside the model's classes");
  const Tensor logits = batch_logits(model, triggered.images);
  const std::size_t c = model.classes();
  double total = 0.0;
  for (std::size_t i = 0; i < triggered.size(); ++i) {
    const double* row = logits.ptr() + i * c;
    const double top = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - top);
    total += std::exp(row[target] - top) / z;
  }
  return total / static_cast<double>(triggered.size());
}

SpuriousAccuracy spurious_accuracy(const Model& model, const Dataset& clean_set, const Dataset& spurious_set) {
  return {accuracy(model, clean_set), accuracy(model, spurious_set)};
}

double leakage_share(const Model& model, const SamplePair& sample, std::size_t n_steps) {
  const Region& r = sample.region;
  if (r.height == 0 || r.width == 0) throw std::invalid_argument("leakage_ratio: sample has no null-block region");
  const Tensor& x = sample.x_tilde;
  const std::size_t h = x.dim(1), w = x.dim(2);
  if (r.row + r.height > h || r.col + r.width > w)
    throw std::invalid_argument("leakage_ratio: null-block region outside the image");
  const std::size_t layers[] = {0};
  const Tensor baseline(x.shape());
  const auto maps = path_ig(model, layers, x, baseline, HeadSpec::target_logit(sample.y), n_steps);
  const Tensor& M = maps.front().M;
  double inside = 0.0, total = 0.0;
  for (std::size_t c = 0; c < x.dim(0); ++c)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double a = std::abs(M[(c * h + i) * w + j]);
        total += a;
        if (i >= r.row && i < r.row + r.height && j >= r.col && j < r.col + r.width) inside += a;
      }
  return total > 0.0 ? inside / total : 0.0;
}

double leakage_ratio(const Model& model, std::span<const SamplePair> samples, std::size_t n_steps) {
  if (samples.empty()) throw std::invalid_argument("leakage_ratio: empty sample set");
  double total = 0.0;
  for (const auto& s : samples) total += leakage_share(model, s, n_steps);
  return total / static_cast<double>(samples.size());
}

double pcc(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("pcc: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  const std::size_t n = a.size();
  if (n == 0) return 0.0;
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::optional<double> MetricsReport::spurious_gap() const {
  if (!clean_set_accuracy || !spurious_set_accuracy) return std::nullopt;
  return *spurious_set_accuracy - *clean_set_accuracy;
}

std::string MetricsReport::csv_header() {
  return "label,overall_accuracy,attack_success_rate,false_confidence,clean_set_accuracy,spurious_set_accuracy,"
         "spurious_gap,leakage_ratio,pcc";
}

std::string MetricsReport::csv_row(const std::string& label) const {
  std::ostringstream out;
  out.precision(10);
  out << label;
  for (const auto& v : {overall_accuracy, attack_success_rate, false_confidence, clean_set_accuracy,
                        spurious_set_accuracy, spurious_gap(), leakage_ratio, pcc}) {
    out << ',';
    if (v) out << *v;
  }
  return out.str();
}

}  // namespace rkt
