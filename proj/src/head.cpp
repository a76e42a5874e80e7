#include "rkt/head.hpp"

#include <algorithm>
#include <stdexcept>

namespace rkt {

std::string to_string(HeadMode mode) { return mode == HeadMode::logit_gap ? "logit-gap" : "target-logit"; }

HeadMode head_mode_from_string(const std::string& name) {
  if (name == "logit-gap") return HeadMode::logit_gap;
  if (name == "target-logit") return HeadMode::target_logit;
  throw std::invalid_argument("unknown head mode '" + name + "'");
}

void HeadSpec::validate(std::size_t classes) const {
  if (cls >= classes || ref >= classes)
    throw std::invalid_argument("head class index out of range for " + std::to_string(classes) + " classes");
}

double HeadSpec::value(std::span<const double> logits) const {
  if (mode == HeadMode::logit_gap) return scale * (logits[cls] - logits[ref]);
  return scale * logits[cls];
}

void HeadSpec::gradient(std::span<double> d) const {
  std::fill(d.begin(), d.end(), 0.0);
  d[cls] += scale;
  if (mode == HeadMode::logit_gap) d[ref] -= scale;
}

HeadFn HeadSpec::fn() const {
  return [spec = *this](std::size_t, std::span<const double> logits, std::span<double> d) {
    spec.gradient(d);
    return spec.value(logits);
  };
}

}  // namespace rkt
