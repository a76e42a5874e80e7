#include "rkt/layers.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <limits>

namespace rkt {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::flatten: return "flatten";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
  for (auto k : {LayerKind::dense, LayerKind::conv2d, LayerKind::relu, LayerKind::maxpool2d, LayerKind::flatten})
    if (to_string(k) == name) return k;
  throw std::invalid_argument("unknown layer kind '" + name + "'");
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.in_features = in;
  s.out_features = out;
  return s;
}

LayerSpec LayerSpec::conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
                            std::size_t padding) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.in_channels = in_ch;
  s.out_channels = out_ch;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::maxpool2d(std::size_t size) {
  LayerSpec s;
  s.kind = LayerKind::maxpool2d;
  s.pool = size;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::flatten;
  return s;
}

Shape LayerSpec::output_shape(const Shape& in) const {
  auto mismatch = [&](const std::string& expected) {
    return ShapeError(to_string(kind) + ": expected input " + expected + ", got " + shape_str(in));
  };
  switch (kind) {
    case LayerKind::dense:
      if (in.size() != 1 || in[0] != in_features) throw mismatch("[" + std::to_string(in_features) + "]");
      return {out_features};
    case LayerKind::conv2d: {
      if (in.size() != 3 || in[0] != in_channels)
        throw mismatch("[" + std::to_string(in_channels) + ", H, W]");
      if (in[1] + 2 * padding < kernel || in[2] + 2 * padding < kernel) throw mismatch("spatial size >= kernel");
      return {out_channels, (in[1] + 2 * padding - kernel) / stride + 1, (in[2] + 2 * padding - kernel) / stride + 1};
    }
    case LayerKind::relu:
      return in;
    case LayerKind::maxpool2d:
      if (in.size() != 3 || in[1] % pool != 0 || in[2] % pool != 0)
        throw mismatch("[C, H, W] with H, W divisible by " + std::to_string(pool));
      return {in[0], in[1] / pool, in[2] / pool};
    case LayerKind::flatten:
      return {shape_size(in)};
  }
  throw std::logic_error("unreachable");
}

Shape LayerSpec::weight_shape() const {
  if (kind == LayerKind::dense) return {out_features, in_features};
  if (kind == LayerKind::conv2d) return {out_channels, in_channels, kernel, kernel};
  return {};
}

Shape LayerSpec::bias_shape() const {
  if (kind == LayerKind::dense) return {out_features};
  if (kind == LayerKind::conv2d) return {out_channels};
  return {};
}

std::size_t LayerSpec::key_size() const {
  if (kind == LayerKind::dense) return in_features;
  if (kind == LayerKind::conv2d) return in_channels * kernel * kernel;
  return 0;
}

std::size_t LayerSpec::value_size() const {
  if (kind == LayerKind::dense) return out_features;
  if (kind == LayerKind::conv2d) return out_channels;
  return 0;
}

ConvGeometry ConvGeometry::of(const LayerSpec& spec, const Shape& input) {
  Shape out = spec.output_shape(input);
  ConvGeometry g;
  g.channels = input[0];
  g.height = input[1];
  g.width = input[2];
  g.kernel = spec.kernel;
  g.stride = spec.stride;
  g.padding = spec.padding;
  g.out_h = out[1];
  g.out_w = out[2];
  return g;
}

void im2col(const double* image, const ConvGeometry& g, double* cols, std::size_t ld) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double* plane = image + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx, ++row) {
        double* dst = cols + row * ld;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          const bool row_ok = iy >= 0 && iy < static_cast<std::ptrdiff_t>(g.height);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            const bool ok = row_ok && ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width);
            *dst++ = ok ? plane[iy * static_cast<std::ptrdiff_t>(g.width) + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeometry& g, double* image, std::size_t ld) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    double* plane = image + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx, ++row) {
        const double* src = cols + row * ld;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          const bool row_ok = iy >= 0 && iy < static_cast<std::ptrdiff_t>(g.height);
          for (std::size_t ox = 0; ox < g.out_w; ++ox, ++src) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            if (row_ok && ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width))
              plane[iy * static_cast<std::ptrdiff_t>(g.width) + ix] += *src;
          }
        }
      }
    }
  }
}

namespace {

Shape batched(std::size_t n, const Shape& inner) {
  Shape s{n};
  s.insert(s.end(), inner.begin(), inner.end());
  return s;
}

Shape sample_shape(const Tensor& t) {
  if (t.rank() < 2) throw ShapeError("expected a batched tensor, got " + shape_str(t.shape()));
  return Shape(t.shape().begin() + 1, t.shape().end());
}

Tensor conv_forward(const Layer& layer, const Tensor& x, ForwardAux* aux) {
  const std::size_t batch = x.dim(0);
  const Shape in = sample_shape(x);
  const ConvGeometry g = ConvGeometry::of(layer.spec, in);
  const std::size_t n = g.patch_size(), positions = g.positions(), ld = batch * positions;
  const std::size_t in_size = shape_size(in);
  const std::size_t out_ch = layer.spec.out_channels;

  std::vector<double> local;
  std::vector<double>& cols = aux ? aux->cols : local;
  cols.resize(n * ld);
  for (std::size_t b = 0; b < batch; ++b) im2col(x.ptr() + b * in_size, g, cols.data() + b * positions, ld);

  ConstMapMat w(layer.weight.ptr(), out_ch, n);
  ConstMapMat k(cols.data(), n, ld);
  RowMat y = w * k;

  Tensor out(batched(batch, {out_ch, g.out_h, g.out_w}));
  double* o = out.ptr();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < out_ch; ++c) {
      const double bias = layer.bias[c];
      const double* src = y.data() + c * ld + b * positions;
      double* dst = o + (b * out_ch + c) * positions;
      for (std::size_t p = 0; p < positions; ++p) dst[p] = src[p] + bias;
    }
  return out;
}

void conv_backward(const Layer& layer, const Tensor& x, const ForwardAux& aux, const Tensor& dy, bool need_input,
                   bool need_params, LayerGrads& grads) {
  const std::size_t batch = x.dim(0);
  const Shape in = sample_shape(x);
  const ConvGeometry g = ConvGeometry::of(layer.spec, in);
  const std::size_t n = g.patch_size(), positions = g.positions(), ld = batch * positions;
  const std::size_t out_ch = layer.spec.out_channels;

  std::vector<double> recomputed;
  const std::vector<double>* cols = &aux.cols;
  if (cols->size() != n * ld) {
    recomputed.resize(n * ld);
    for (std::size_t b = 0; b < batch; ++b)
      im2col(x.ptr() + b * shape_size(in), g, recomputed.data() + b * positions, ld);
    cols = &recomputed;
  }

  RowMat dym(out_ch, ld);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < out_ch; ++c)
      std::copy_n(dy.ptr() + (b * out_ch + c) * positions, positions, dym.data() + c * ld + b * positions);

  if (need_params) {
    ConstMapMat k(cols->data(), n, ld);
    grads.d_weight = Tensor(layer.spec.weight_shape());
    MapMat(grads.d_weight.ptr(), out_ch, n).noalias() = dym * k.transpose();
    grads.d_bias = Tensor(layer.spec.bias_shape());
    Eigen::Map<Eigen::VectorXd>(grads.d_bias.ptr(), out_ch) = dym.rowwise().sum();
  }
  if (need_input) {
    ConstMapMat w(layer.weight.ptr(), out_ch, n);
    RowMat dcols = w.transpose() * dym;
    grads.d_input = Tensor(x.shape());
    for (std::size_t b = 0; b < batch; ++b)
      col2im(dcols.data() + b * positions, g, grads.d_input.ptr() + b * shape_size(in), ld);
  }
}

Tensor dense_forward(const Layer& layer, const Tensor& x) {
  const std::size_t batch = x.dim(0);
  const std::size_t in = layer.spec.in_features, out_f = layer.spec.out_features;
  ConstMapMat xm(x.ptr(), batch, in);
  ConstMapMat w(layer.weight.ptr(), out_f, in);
  Tensor out({batch, out_f});
  MapMat om(out.ptr(), batch, out_f);
  om.noalias() = xm * w.transpose();
  om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(layer.bias.ptr(), out_f);
  return out;
}

void dense_backward(const Layer& layer, const Tensor& x, const Tensor& dy, bool need_input, bool need_params,
                    LayerGrads& grads) {
  const std::size_t batch = x.dim(0);
  const std::size_t in = layer.spec.in_features, out_f = layer.spec.out_features;
  ConstMapMat dym(dy.ptr(), batch, out_f);
  if (need_params) {
    ConstMapMat xm(x.ptr(), batch, in);
    grads.d_weight = Tensor(layer.spec.weight_shape());
    MapMat(grads.d_weight.ptr(), out_f, in).noalias() = dym.transpose() * xm;
    grads.d_bias = Tensor(layer.spec.bias_shape());
    Eigen::Map<Eigen::RowVectorXd>(grads.d_bias.ptr(), out_f) = dym.colwise().sum();
  }
  if (need_input) {
    ConstMapMat w(layer.weight.ptr(), out_f, in);
    grads.d_input = Tensor(x.shape());
    MapMat(grads.d_input.ptr(), batch, in).noalias() = dym * w;
  }
}

Tensor maxpool_forward(const LayerSpec& spec, const Tensor& x, ForwardAux* aux) {
  const std::size_t batch = x.dim(0);
  const Shape in = sample_shape(x);
  const Shape out_s = spec.output_shape(in);
  const std::size_t ch = in[0], h = in[1], w = in[2], oh = out_s[1], ow = out_s[2], k = spec.pool;
  Tensor out(batched(batch, out_s));
  if (aux) aux->argmax.resize(out.size());
  std::size_t o = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t base = (b * ch + c) * h * w;
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t arg = 0;
          for (std::size_t dy = 0; dy < k; ++dy)
            for (std::size_t dx = 0; dx < k; ++dx) {
              const std::size_t idx = base + (oy * k + dy) * w + ox * k + dx;
              if (x[idx] > best) {
                best = x[idx];
                arg = idx;
              }
            }
          out[o] = best;
          if (aux) aux->argmax[o] = static_cast<std::uint32_t>(arg);
        }
    }
  return out;
}

}  // namespace

Tensor layer_forward(const Layer& layer, const Tensor& input, ForwardAux* aux) {
  const Shape in = sample_shape(input);
  const Shape out_s = layer.spec.output_shape(in);
  switch (layer.spec.kind) {
    case LayerKind::conv2d:
      return conv_forward(layer, input, aux);
    case LayerKind::dense:
      return dense_forward(layer, input);
    case LayerKind::relu: {
      Tensor out(input.shape(), input.storage());
      for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
      return out;
    }
    case LayerKind::maxpool2d:
      return maxpool_forward(layer.spec, input, aux);
    case LayerKind::flatten:
      return input.reshaped(batched(input.dim(0), out_s));
  }
  throw std::logic_error("unreachable");
}

void layer_backward(const Layer& layer, const Tensor& input, const Tensor& output, const ForwardAux& aux,
                    const Tensor& d_output, bool need_input_grad, bool need_param_grads, LayerGrads& grads) {
  if (d_output.shape() != output.shape())
    throw ShapeError("backward: gradient shape " + shape_str(d_output.shape()) + " does not match output " +
                     shape_str(output.shape()));
  switch (layer.spec.kind) {
    case LayerKind::conv2d:
      conv_backward(layer, input, aux, d_output, need_input_grad, need_param_grads, grads);
      return;
    case LayerKind::dense:
      dense_backward(layer, input, d_output, need_input_grad, need_param_grads, grads);
      return;
    case LayerKind::relu:
      if (need_input_grad) {
        grads.d_input = d_output;
        for (std::size_t i = 0; i < output.size(); ++i)
          if (!(output[i] > 0.0)) grads.d_input[i] = 0.0;
      }
      return;
    case LayerKind::maxpool2d:
      if (need_input_grad) {
        grads.d_input = Tensor(input.shape());
        std::vector<std::uint32_t> recomputed;
        const std::vector<std::uint32_t>* argmax = &aux.argmax;
        if (argmax->size() != output.size()) {
          ForwardAux tmp;
          maxpool_forward(layer.spec, input, &tmp);
          recomputed = std::move(tmp.argmax);
          argmax = &recomputed;
        }
        for (std::size_t i = 0; i < output.size(); ++i) grads.d_input[(*argmax)[i]] += d_output[i];
      }
      return;
    case LayerKind::flatten:
      if (need_input_grad) grads.d_input = d_output.reshaped(input.shape());
      return;
  }
}

}  // namespace rkt
