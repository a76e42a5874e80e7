#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rkt/tensor.hpp"

namespace rkt {

enum class LayerKind { dense, conv2d, relu, maxpool2d, flatten };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

/// Static description of one layer. Per-sample shapes exclude the batch
/// dimension: images are [C, H, W], dense features are [n].
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  std::size_t pool = 2;

  static LayerSpec dense(std::size_t in, std::size_t out);
  static LayerSpec conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride = 1,
                          std::size_t padding = 1);
  static LayerSpec relu();
  static LayerSpec maxpool2d(std::size_t size = 2);
  static LayerSpec flatten();

  bool parameterized() const { return kind == LayerKind::dense || kind == LayerKind::conv2d; }

  /// Output shape for a per-sample input shape; throws ShapeError naming
  /// expected vs. actual on mismatch.
  Shape output_shape(const Shape& input) const;
  Shape weight_shape() const;
  Shape bias_shape() const;

  /// Length of a key vector: in_channels * kernel^2 for conv, in_features for dense.
  std::size_t key_size() const;
  /// Rows of the weight matrix (output channels or features).
  std::size_t value_size() const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct Layer {
  LayerSpec spec;
  Tensor weight;  // conv: [out, in, k, k]; dense: [out, in]
  Tensor bias;    // [out]
};

/// Geometry of a single-sample convolution, used by the patch-extraction map.
struct ConvGeometry {
  std::size_t channels = 0, height = 0, width = 0;
  std::size_t kernel = 0, stride = 1, padding = 0;
  std::size_t out_h = 0, out_w = 0;

  static ConvGeometry of(const LayerSpec& spec, const Shape& input);
  std::size_t positions() const { return out_h * out_w; }
  std::size_t patch_size() const { return channels * kernel * kernel; }
};

/// Writes every receptive-field patch of `image` ([C, H, W]) as a column of
/// a patch_size x positions block. Row r of the block starts at
/// cols + r * ld; zero padding contributes zeros.
void im2col(const double* image, const ConvGeometry& g, double* cols, std::size_t ld);

/// Transpose of im2col: accumulates patch columns back into `image`.
void col2im(const double* cols, const ConvGeometry& g, double* image, std::size_t ld);

/// Auxiliary state saved by a taped forward step.
struct ForwardAux {
  std::vector<double> cols;             // conv: patch matrix, key_size x (N * positions)
  std::vector<std::uint32_t> argmax;    // maxpool: flat input index per output element
};

/// Batched forward of one layer; `input` has a leading batch dimension.
Tensor layer_forward(const Layer& layer, const Tensor& input, ForwardAux* aux);

struct LayerGrads {
  Tensor d_input;
  Tensor d_weight;
  Tensor d_bias;
};

void layer_backward(const Layer& layer, const Tensor& input, const Tensor& output, const ForwardAux& aux,
                    const Tensor& d_output, bool need_input_grad, bool need_param_grads, LayerGrads& grads);

}  // namespace rkt
