#include "rkt/autograd.hpp"

#include <atomic>

namespace rkt {

namespace {
std::atomic<std::uint64_t> next_tape_id{1};
}

Tape::Tape() : id_(next_tape_id.fetch_add(1)) {}

void Tape::begin(const Tensor& input) {
  activations_.clear();
  nodes_.clear();
  has_head_ = false;
  activations_.push_back(input);
}

void Tape::record(const Layer& layer, std::size_t index, const Tensor& output, ForwardAux aux) {
  if (activations_.empty()) throw std::logic_error("tape: record() before begin()");
  if (index != nodes_.size() + 1) throw std::logic_error("tape: layers must be recorded in order");
  nodes_.push_back(TapeNode{layer.spec.kind, index, &layer, std::move(aux)});
  activations_.push_back(output);
  has_head_ = false;
}

const Tensor& Tape::activation(std::size_t l) const {
  if (l >= activations_.size())
    throw std::out_of_range("tape: activation " + std::to_string(l) + " not recorded (depth " +
                            std::to_string(nodes_.size()) + ")");
  return activations_[l];
}

Tensor Tape::head(const HeadFn& fn) {
  const Tensor& out = output();
  if (out.rank() != 2) throw ShapeError("head: model output must be [batch, classes], got " + shape_str(out.shape()));
  const std::size_t batch = out.dim(0), classes = out.dim(1);
  d_head_ = Tensor(out.shape());
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    auto logits = out.data().subspan(b * classes, classes);
    auto d = d_head_.data().subspan(b * classes, classes);
    total += fn(b, logits, d);
  }
  has_head_ = true;
  Tensor s = Tensor::vector({total});
  s.tape_id_ = id_;
  return s;
}

Gradients Tape::backward(const Tensor& scalar_head, const BackwardOptions& options) const {
  if (scalar_head.size() != 1)
    throw std::invalid_argument("backward: head must be a scalar, got shape " + shape_str(scalar_head.shape()));
  if (scalar_head.tape_id() != id_ || !has_head_)
    throw std::invalid_argument("backward: scalar was not produced by head() on this tape");
  return backward_from(d_head_, options);
}

Gradients Tape::backward_from(const Tensor& d_output, const BackwardOptions& options) const {
  if (nodes_.empty()) throw std::logic_error("backward: empty tape");
  if (d_output.shape() != output().shape())
    throw ShapeError("backward: output gradient " + shape_str(d_output.shape()) + " does not match output " +
                     shape_str(output().shape()));
  const std::size_t depth = nodes_.size();
  Gradients g;
  g.activations.resize(depth + 1);
  g.weights.resize(depth + 1);
  g.biases.resize(depth + 1);
  g.activations[depth] = d_output;
  for (std::size_t l = depth; l >= 1; --l) {
    const TapeNode& node = nodes_[l - 1];
    const bool need_input = l - 1 >= options.stop_at;
    const bool need_params = options.param_grads && node.op->spec.parameterized();
    if (!need_input && !need_params) break;
    LayerGrads lg;
    layer_backward(*node.op, activations_[l - 1], activations_[l], node.aux, g.activations[l], need_input,
                   need_params, lg);
    if (need_input) g.activations[l - 1] = std::move(lg.d_input);
    if (need_params) {
      g.weights[l] = std::move(lg.d_weight);
      g.biases[l] = std::move(lg.d_bias);
    }
    if (!need_input) break;
  }
  return g;
}

}  // namespace rkt
