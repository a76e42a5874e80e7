#pragma once

#include <functional>
#include <span>
#include <vector>

#include "rkt/layers.hpp"
#include "rkt/tensor.hpp"

namespace rkt {

/// One recorded forward step: layer `index` (1-based) mapped f_{index-1} to
/// f_index. The op pointer refers into the model that produced the tape.
struct TapeNode {
  LayerKind kind;
  std::size_t index;
  const Layer* op;
  ForwardAux aux;
};

/// Per-sample scalar head over the model output. Writes d head / d logits
/// into `d_logits` and returns the head value for that sample.
using HeadFn = std::function<double(std::size_t sample, std::span<const double> logits, std::span<double> d_logits)>;

struct BackwardOptions {
  /// Smallest activation index that needs a gradient; backward stops there.
  std::size_t stop_at = 0;
  bool param_grads = true;
};

/// Gradients of a scalar head. activations[l] is d head / d f_l for
/// l = 0..L (empty below stop_at); weights[l] / biases[l] are indexed by
/// 1-based layer and empty for unparameterized layers.
struct Gradients {
  std::vector<Tensor> activations;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
};

/// Reverse-mode record of one batched forward pass. Single-threaded; the
/// model that filled it must outlive it.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  std::uint64_t id() const { return id_; }

  void begin(const Tensor& input);
  void record(const Layer& layer, std::size_t index, const Tensor& output, ForwardAux aux);

  std::size_t depth() const { return nodes_.size(); }
  const Tensor& activation(std::size_t l) const;
  const Tensor& output() const { return activation(depth()); }
  const std::vector<TapeNode>& nodes() const { return nodes_; }

  /// Applies `fn` to every sample of the output and returns the batch sum
  /// as a one-element tensor bound to this tape.
  Tensor head(const HeadFn& fn);

  /// Backpropagates a scalar produced by head() on this tape.
  Gradients backward(const Tensor& scalar_head, const BackwardOptions& options = {}) const;

  /// Backpropagates an explicit output gradient (same shape as output()).
  Gradients backward_from(const Tensor& d_output, const BackwardOptions& options = {}) const;

 private:
  std::uint64_t id_;
  std::vector<Tensor> activations_;
  std::vector<TapeNode> nodes_;
  Tensor d_head_;
  bool has_head_ = false;
};

}  // namespace rkt
