#pragma once

#include <span>
#include <string>

#include "rkt/autograd.hpp"

namespace rkt {

enum class HeadMode { logit_gap, target_logit };

std::string to_string(HeadMode mode);
HeadMode head_mode_from_string(const std::string& name);

/// Scalarization of the model output.
///   logit_gap:    h = scale * (logit[cls] - logit[ref])
///   target_logit: h = scale * logit[cls]
struct HeadSpec {
  HeadMode mode = HeadMode::logit_gap;
  std::size_t cls = 0;
  std::size_t ref = 0;
  double scale = 1.0;

  static HeadSpec logit_gap(std::size_t cls, std::size_t ref) { return {HeadMode::logit_gap, cls, ref, 1.0}; }
  static HeadSpec target_logit(std::size_t cls) { return {HeadMode::target_logit, cls, cls, 1.0}; }

  void validate(std::size_t classes) const;
  double value(std::span<const double> logits) const;
  void gradient(std::span<double> d_logits) const;
  HeadFn fn() const;

  friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

}  // namespace rkt
