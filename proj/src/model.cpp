#include "rkt/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <random>
#include <sstream>

namespace rkt {

Model::Model(Shape input_shape, std::vector<Layer> layers, std::size_t classes)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)), classes_(classes) {
  compute_shapes();
  for (std::size_t l = 1; l <= layers_.size(); ++l)
    if (layers_[l - 1].spec.parameterized()) editable_.push_back(l);
}

void Model::compute_shapes() {
  shapes_.clear();
  shapes_.push_back(input_shape_);
  for (std::size_t l = 1; l <= layers_.size(); ++l) {
    const Layer& layer = layers_[l - 1];
    try {
      shapes_.push_back(layer.spec.output_shape(shapes_.back()));
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(l) + ": " + e.what());
    }
    if (layer.spec.parameterized()) {
      if (layer.weight.shape() != layer.spec.weight_shape() || layer.bias.shape() != layer.spec.bias_shape())
        throw ShapeError("layer " + std::to_string(l) + ": parameter shape " + shape_str(layer.weight.shape()) +
                         " does not match declared " + shape_str(layer.spec.weight_shape()));
    }
  }
  if (shapes_.back() != Shape{classes_})
    throw ShapeError("model output " + shape_str(shapes_.back()) + " does not match classes = " +
                     std::to_string(classes_));
}

Model Model::small_cnn(const Shape& input_shape, std::size_t classes, std::uint64_t seed) {
  if (input_shape.size() != 3) throw ShapeError("small_cnn expects [C, H, W], got " + shape_str(input_shape));
  const std::size_t c = input_shape[0], h = input_shape[1], w = input_shape[2];
  if (h % 2 || w % 2) throw ShapeError("small_cnn needs even spatial size, got " + shape_str(input_shape));
  std::vector<LayerSpec> specs = {
      LayerSpec::conv2d(c, 8, 3),  LayerSpec::relu(),      LayerSpec::conv2d(8, 16, 3),
      LayerSpec::relu(),           LayerSpec::maxpool2d(), LayerSpec::conv2d(16, 16, 3),
      LayerSpec::relu(),           LayerSpec::flatten(),   LayerSpec::dense(16 * (h / 2) * (w / 2), classes),
  };
  std::mt19937_64 rng(seed);
  std::vector<Layer> layers;
  for (const auto& spec : specs) {
    Layer layer{spec, {}, {}};
    if (spec.parameterized()) {
      const double fan_in = static_cast<double>(spec.key_size());
      std::uniform_real_distribution<double> dist(-std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in));
      layer.weight = Tensor(spec.weight_shape());
      for (double& v : layer.weight.data()) v = static_cast<float>(dist(rng));
      layer.bias = Tensor(spec.bias_shape());
    }
    layers.push_back(std::move(layer));
  }
  return Model(input_shape, std::move(layers), classes);
}

const Layer& Model::layer(std::size_t l) const {
  if (l < 1 || l > layers_.size()) throw std::out_of_range("layer index " + std::to_string(l) + " out of range");
  return layers_[l - 1];
}

Layer& Model::mutable_layer(std::size_t l) {
  if (l < 1 || l > layers_.size()) throw std::out_of_range("layer index " + std::to_string(l) + " out of range");
  return layers_[l - 1];
}

bool Model::is_editable(std::size_t l) const { return std::find(editable_.begin(), editable_.end(), l) != editable_.end(); }

void Model::set_editable_layers(std::vector<std::size_t> layers) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i && layers[i] <= layers[i - 1]) throw std::invalid_argument("editable layers must be strictly increasing");
    if (!layer(layers[i]).spec.parameterized())
      throw std::invalid_argument("layer " + std::to_string(layers[i]) + " has no parameters to edit");
  }
  editable_ = std::move(layers);
}

const Shape& Model::activation_shape(std::size_t l) const {
  if (l >= shapes_.size()) throw std::out_of_range("activation index " + std::to_string(l) + " out of range");
  return shapes_[l];
}

void Model::check_input(const Tensor& batch) const {
  Shape inner(batch.shape().begin() + (batch.rank() ? 1 : 0), batch.shape().end());
  if (batch.rank() < 2 || inner != input_shape_)
    throw ShapeError("model input: expected [N, " + shape_str(input_shape_).substr(1) + ", got " +
                     shape_str(batch.shape()));
}

Tensor Model::forward(const Tensor& batch, Tape* tape) const {
  check_input(batch);
  if (tape) tape->begin(batch);
  Tensor cur = batch;
  for (std::size_t l = 1; l <= layers_.size(); ++l) {
    ForwardAux aux;
    Tensor next = layer_forward(layers_[l - 1], cur, tape ? &aux : nullptr);
    next.require_finite(("layer " + std::to_string(l)).c_str());
    if (tape) tape->record(layers_[l - 1], l, next, std::move(aux));
    cur = std::move(next);
  }
  return cur;
}

Tensor Model::forward_to(const Tensor& batch, std::size_t l) const {
  check_input(batch);
  if (l > layers_.size()) throw std::out_of_range("forward_to: layer " + std::to_string(l) + " out of range");
  Tensor cur = batch;
  for (std::size_t i = 1; i <= l; ++i) cur = layer_forward(layers_[i - 1], cur, nullptr);
  return cur;
}

Tensor Model::forward_from(const Tensor& features, std::size_t l) const {
  const Shape& expect = activation_shape(l);
  if (features.rank() < 2 || Shape(features.shape().begin() + 1, features.shape().end()) != expect)
    throw ShapeError("forward_from: expected [N, " + shape_str(expect).substr(1) + ", got " +
                     shape_str(features.shape()));
  Tensor cur = features;
  for (std::size_t i = l + 1; i <= layers_.size(); ++i) cur = layer_forward(layers_[i - 1], cur, nullptr);
  return cur;
}

Prediction Model::predict(const Tensor& x) const {
  Tensor logits = forward(batch_of_one(x)).reshaped({classes_});
  auto it = std::max_element(logits.data().begin(), logits.data().end());
  return Prediction{logits, static_cast<std::size_t>(it - logits.data().begin())};
}

std::vector<std::size_t> Model::predict_labels(std::span<const Tensor> samples, std::size_t batch_size) const {
  std::vector<std::size_t> labels;
  labels.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, samples.size() - start);
    Tensor out = forward(stack(samples.subspan(start, n)));
    for (std::size_t b = 0; b < n; ++b) {
      auto row = out.data().subspan(b * classes_, classes_);
      labels.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  return labels;
}

Capture Model::capture(const Tensor& x, std::size_t l) const {
  if (!is_editable(l)) throw std::invalid_argument("capture: layer " + std::to_string(l) + " is not editable");
  Tensor in = forward_to(batch_of_one(x), l - 1);
  Tensor out = layer_forward(layers_[l - 1], in, nullptr);
  return Capture{in.reshaped(activation_shape(l - 1)), out.reshaped(activation_shape(l))};
}

Model Model::with_layer(std::size_t l, Layer replacement) const {
  const Layer& old = layer(l);
  if (!(replacement.spec == old.spec) || replacement.weight.shape() != old.weight.shape() ||
      replacement.bias.shape() != old.bias.shape())
    throw ShapeError("with_layer: replacement for layer " + std::to_string(l) + " changes its shape");
  Model copy = *this;
  copy.layers_[l - 1] = std::move(replacement);
  return copy;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_)
    if (layer.spec.parameterized()) n += layer.weight.size() + layer.bias.size();
  return n;
}

std::string Model::parameter_digest() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&](const Tensor& t) {
    for (double v : t.data()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xffU;
        h *= 1099511628211ULL;
      }
    }
  };
  for (const auto& layer : layers_)
    if (layer.spec.parameterized()) {
      feed(layer.weight);
      feed(layer.bias);
    }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

bool operator==(const Model& a, const Model& b) {
  if (a.input_shape_ != b.input_shape_ || a.classes_ != b.classes_ || a.layers_.size() != b.layers_.size() ||
      a.editable_ != b.editable_)
    return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    const Layer &x = a.layers_[i], &y = b.layers_[i];
    if (!(x.spec == y.spec)) return false;
    if (x.spec.parameterized() && !(x.weight == y.weight && x.bias == y.bias)) return false;
  }
  return true;
}

Tensor grad_wrt_layer(const Model& model, std::size_t l, const HeadSpec& head, const Tensor& x) {
  if (l > model.depth())
    throw std::out_of_range("grad_wrt_layer: layer " + std::to_string(l) + " outside 0.." +
                            std::to_string(model.depth()));
  head.validate(model.classes());
  Tape tape;
  model.forward(batch_of_one(x), &tape);
  Tensor h = tape.head(head.fn());
  Gradients g = tape.backward(h, BackwardOptions{l, false});
  return g.activations[l].reshaped(model.activation_shape(l));
}

Model round_to_storage(const Model& model) {
  Model out = model;
  for (std::size_t l = 1; l <= out.depth(); ++l) {
    Layer& layer = out.mutable_layer(l);
    if (!layer.spec.parameterized()) continue;
    for (double& v : layer.weight.data()) v = static_cast<float>(v);
    for (double& v : layer.bias.data()) v = static_cast<float>(v);
  }
  return out;
}

}  // namespace rkt
