#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "rkt/data.hpp"
#include "rkt/editor.hpp"
#include "rkt/model.hpp"

namespace rkt {

/// M over the features of layer l (l = 0 is the input).
struct AttributionMap {
  Tensor M;
  std::size_t layer = 0;
  HeadSpec head;
  std::size_t n_steps = 0;

  double sum() const;
};

/// Interpolation path of the quadrature. `input` evaluates dh/df_l at
/// f_l(x~ + a (x - x~)); `feature` evaluates it at f_l(x~) + a (f_l(x) - f_l(x~)),
/// the straight path in layer-l feature space.
enum class IgPath { feature, input };
std::string to_string(IgPath path);
IgPath ig_path_from_string(const std::string& s);

/// logit-gap between the class predicted on x~ and the true label; when the
/// two agree the gap is identically zero, so the true-label logit is used.
HeadSpec default_head(const Model& model, const SamplePair& pair);

/// M_i = (f_l(x) - f_l(x~))_i * mean_{a = 1/n..n/n} dh/df_l at the path point a.
AttributionMap layer_ig(const Model& model, std::size_t l, const SamplePair& pair, const HeadSpec& head,
                        std::size_t n_steps, IgPath path = IgPath::feature);

/// Same quadrature for several layers from one batched pass, along the path
/// from `reference` to `input`. Result order follows `layers`.
std::vector<AttributionMap> path_ig(const Model& model, std::span<const std::size_t> layers, const Tensor& input,
                                    const Tensor& reference, const HeadSpec& head, std::size_t n_steps,
                                    IgPath path = IgPath::feature);

/// h(x) - h(x~).
double head_delta(const Model& model, const SamplePair& pair, const HeadSpec& head);

/// |sum_i M_i - (h(x) - h(x~))|.
double completeness_gap(const AttributionMap& map, const Model& model, const SamplePair& pair, const HeadSpec& head);

enum class RemapMode { direction_outer, zca };
std::string to_string(RemapMode mode);
RemapMode remap_mode_from_string(const std::string& s);

/// Activation whose attribution `remap` expects for editable layer l:
/// f_l for direction-outer, f_{l-1} (the keys' source) for zca.
std::size_t remap_source(std::size_t l, RemapMode mode);

/// direction-outer: m-bar d^T with m-bar the spatial mean of M per output
/// channel and d = C^{-1} k-bar (m x n). zca: Z times the attribution of
/// f_{l-1} laid out as key patches (n x positions).
Matrix remap(const Model& model, std::size_t l, const AttributionMap& map, const KeyStatistics& stats,
             const Vector& k_bar, RemapMode mode);

/// Input-layer attribution as 8-bit binary PGM: |M| scaled so max -> 255.
void write_pgm(const std::filesystem::path& path, const Tensor& map);

}  // namespace rkt
