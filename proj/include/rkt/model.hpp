#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rkt/autograd.hpp"
#include "rkt/head.hpp"
#include "rkt/layers.hpp"

namespace rkt {

struct Prediction {
  Tensor logits;
  std::size_t label = 0;
};

/// Features on both sides of a parameterized layer: f_{l-1}(x) and f_l(x).
struct Capture {
  Tensor input_features;
  Tensor output_features;
};

/// Ordered stack of layers. Layer indices are 1-based: layer l maps the
/// activation f_{l-1} to f_l, and f_0 is the model input. Models are plain
/// values; editing or training produces a modified copy.
class Model {
 public:
  Model() = default;
  Model(Shape input_shape, std::vector<Layer> layers, std::size_t classes);

  /// conv3x3(c->8) relu conv3x3(8->16) relu maxpool2 conv3x3(16->16) relu
  /// flatten dense(->classes). Editable layers are 1, 3, 6 and 9.
  static Model small_cnn(const Shape& input_shape, std::size_t classes, std::uint64_t seed);

  const Shape& input_shape() const { return input_shape_; }
  std::size_t classes() const { return classes_; }
  std::size_t depth() const { return layers_.size(); }
  const std::vector<Layer>& layers() const { return layers_; }
  const Layer& layer(std::size_t l) const;
  Layer& mutable_layer(std::size_t l);
  const std::vector<std::size_t>& editable_layers() const { return editable_; }
  bool is_editable(std::size_t l) const;
  void set_editable_layers(std::vector<std::size_t> layers);

  /// Per-sample shape of f_l for l = 0..depth().
  const Shape& activation_shape(std::size_t l) const;

  /// Batched forward pass ([N, ...input_shape]). Records into `tape` when given.
  Tensor forward(const Tensor& batch, Tape* tape = nullptr) const;
  /// f_l of a batch, running only layers 1..l.
  Tensor forward_to(const Tensor& batch, std::size_t l) const;
  /// Continues a forward pass from f_l ([N, ...activation_shape(l)]).
  Tensor forward_from(const Tensor& features, std::size_t l) const;

  Prediction predict(const Tensor& x) const;
  std::vector<std::size_t> predict_labels(std::span<const Tensor> samples, std::size_t batch_size = 128) const;

  Capture capture(const Tensor& x, std::size_t l) const;

  /// Copy with the parameters of layer l replaced.
  Model with_layer(std::size_t l, Layer layer) const;

  std::size_t parameter_count() const;
  /// FNV-1a digest over the canonical little-endian float64 parameter bytes.
  std::string parameter_digest() const;

  friend bool operator==(const Model& a, const Model& b);

 private:
  void check_input(const Tensor& batch) const;
  void compute_shapes();

  Shape input_shape_;
  std::vector<Layer> layers_;
  std::size_t classes_ = 0;
  std::vector<std::size_t> editable_;
  std::vector<Shape> shapes_;
};

/// d head / d f_l for a single sample x; l ranges over 0..depth(), where 0
/// is the input itself.
Tensor grad_wrt_layer(const Model& model, std::size_t l, const HeadSpec& head, const Tensor& x);

/// Rounds every parameter to the nearest float32 (the checkpoint storage grid).
Model round_to_storage(const Model& model);

}  // namespace rkt
