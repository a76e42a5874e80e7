#include "rkt/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace rkt {

double AttributionMap::sum() const {
  double s = 0.0;
  for (double v : M.data()) s += v;
  return s;
}

HeadSpec default_head(const Model& model, const SamplePair& pair) {
  const std::size_t c = model.predict(pair.x_tilde).label;
  return c == pair.y ? HeadSpec::target_logit(pair.y) : HeadSpec::logit_gap(c, pair.y);
}

namespace {

// Adds the gradient sum over alpha = start/n .. (start+count-1)/n of the
// straight path between `from` and `to`, both [1, ...shape of f_level].
void accumulate_path(const Model& model, std::size_t level, const Tensor& from, const Tensor& to,
                     const HeadSpec& head, std::size_t n_steps, std::span<const std::size_t> layers,
                     std::size_t lowest, std::vector<AttributionMap>& out) {
  const std::size_t per = from.size();
  for (std::size_t start = 1; start <= n_steps; start += 64) {
    const std::size_t count = std::min<std::size_t>(64, n_steps - start + 1);
    Shape bs = from.shape();
    bs[0] = count;
    Tensor batch(bs);
    for (std::size_t j = 0; j < count; ++j) {
      const double a = static_cast<double>(start + j) / static_cast<double>(n_steps);
      for (std::size_t k = 0; k < per; ++k) batch[j * per + k] = from[k] + a * (to[k] - from[k]);
    }
    Tape tape;
    if (level == 0) {
      model.forward(batch, &tape);
    } else {
      // Replay layers above `level` on the interpolated features.
      tape.begin(batch);
      Tensor cur = batch;
      for (std::size_t l = 1; l <= model.depth(); ++l) {
        if (l <= level) {
          tape.record(model.layer(l), l, l == level ? batch : Tensor({1}), {});
          continue;
        }
        ForwardAux aux;
        Tensor next = layer_forward(model.layer(l), cur, &aux);
        tape.record(model.layer(l), l, next, std::move(aux));
        cur = std::move(next);
      }
    }
    Gradients g = tape.backward(tape.head(head.fn()), BackwardOptions{lowest, false});
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const Tensor& ga = g.activations[layers[i]];
      const std::size_t m = out[i].M.size();
      for (std::size_t j = 0; j < count; ++j)
        for (std::size_t k = 0; k < m; ++k) out[i].M[k] += ga[j * m + k];
    }
  }
}

}  // namespace

std::string to_string(IgPath path) { return path == IgPath::feature ? "feature" : "input"; }

IgPath ig_path_from_string(const std::string& s) {
  if (s == "feature") return IgPath::feature;
  if (s == "input") return IgPath::input;
  throw std::invalid_argument("unknown IG path '" + s + "'");
}

std::vector<AttributionMap> path_ig(const Model& model, std::span<const std::size_t> layers, const Tensor& input,
                                    const Tensor& reference, const HeadSpec& head, std::size_t n_steps,
                                    IgPath path) {
  if (n_steps < 1) throw std::invalid_argument("layer_ig: n_steps must be >= 1");
  if (input.shape() != model.input_shape() || reference.shape() != model.input_shape())
    throw ShapeError("layer_ig: inputs must be " + shape_str(model.input_shape()) + ", got " +
                     shape_str(input.shape()) + " and " + shape_str(reference.shape()));
  head.validate(model.classes());
  if (layers.empty()) return {};
  std::size_t lowest = layers[0];
  for (auto l : layers) {
    if (l > model.depth())
      throw std::out_of_range("layer_ig: layer " + std::to_string(l) + " outside 0.." + std::to_string(model.depth()));
    lowest = std::min(lowest, l);
  }

  // Endpoint features f_l(x) and f_l(x~).
  Tape ends;
  std::vector<Tensor> both = {input, reference};
  model.forward(stack(both), &ends);

  std::vector<AttributionMap> out(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out[i].layer = layers[i];
    out[i].head = head;
    out[i].n_steps = n_steps;
    out[i].M = Tensor(model.activation_shape(layers[i]));
  }

  if (path == IgPath::input) {
    accumulate_path(model, 0, batch_of_one(reference), batch_of_one(input), head, n_steps, layers, lowest, out);
  } else {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::size_t l = layers[i];
      const Tensor& f = ends.activation(l);
      const std::size_t m = f.size() / 2;
      Shape s = f.shape();
      s[0] = 1;
      Tensor fx(s, std::vector<double>(f.ptr(), f.ptr() + m));
      Tensor ft(s, std::vector<double>(f.ptr() + m, f.ptr() + 2 * m));
      std::vector<AttributionMap> one(1);
      one[0] = out[i];
      const std::size_t single[] = {l};
      accumulate_path(model, l, ft, fx, head, n_steps, single, l, one);
      out[i] = std::move(one[0]);
    }
  }

  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Tensor& f = ends.activation(layers[i]);
    const std::size_t m = out[i].M.size();
    for (std::size_t k = 0; k < m; ++k) out[i].M[k] *= (f[k] - f[m + k]) / static_cast<double>(n_steps);
    out[i].M.require_finite("layer_ig");
  }
  return out;
}

AttributionMap layer_ig(const Model& model, std::size_t l, const SamplePair& pair, const HeadSpec& head,
                        std::size_t n_steps, IgPath path) {
  const std::size_t layers[] = {l};
  return path_ig(model, layers, pair.x, pair.x_tilde, head, n_steps, path).front();
}

double head_delta(const Model& model, const SamplePair& pair, const HeadSpec& head) {
  std::vector<Tensor> both = {pair.x, pair.x_tilde};
  Tensor out = model.forward(stack(both));
  const std::size_t c = model.classes();
  return head.value(out.data().subspan(0, c)) - head.value(out.data().subspan(c, c));
}

double completeness_gap(const AttributionMap& map, const Model& model, const SamplePair& pair, const HeadSpec& head) {
  return std::abs(map.sum() - head_delta(model, pair, head));
}

std::string to_string(RemapMode mode) { return mode == RemapMode::direction_outer ? "direction-outer" : "zca"; }

RemapMode remap_mode_from_string(const std::string& s) {
  if (s == "direction-outer") return RemapMode::direction_outer;
  if (s == "zca") return RemapMode::zca;
  throw std::invalid_argument("unknown remap mode '" + s + "'");
}

std::size_t remap_source(std::size_t l, RemapMode mode) { return mode == RemapMode::direction_outer ? l : l - 1; }

Matrix remap(const Model& model, std::size_t l, const AttributionMap& map, const KeyStatistics& stats,
             const Vector& k_bar, RemapMode mode) {
  const Layer& layer = model.layer(l);
  if (!layer.spec.parameterized()) throw std::invalid_argument("remap: layer " + std::to_string(l) + " is not editable");
  if (stats.n() != layer.spec.key_size())
    throw ShapeError("remap: statistics have n = " + std::to_string(stats.n()) + ", layer " + std::to_string(l) +
                     " has keys of length " + std::to_string(layer.spec.key_size()));
  const std::size_t src = remap_source(l, mode);
  if (map.layer != src || map.M.shape() != model.activation_shape(src))
    throw ShapeError("remap: " + to_string(mode) + " needs the attribution of f_" + std::to_string(src) + " " +
                     shape_str(model.activation_shape(src)) + ", got f_" + std::to_string(map.layer) + " " +
                     shape_str(map.M.shape()));

  if (mode == RemapMode::zca) return stats.Z * layer_keys(model, l, map.M);

  if (k_bar.size() != static_cast<Eigen::Index>(stats.n()))
    throw ShapeError("remap: k-bar of length " + std::to_string(k_bar.size()) + ", expected " +
                     std::to_string(stats.n()));
  const std::size_t m = layer.spec.value_size();
  const std::size_t positions = map.M.size() / m;
  Vector mbar = Vector::Zero(static_cast<Eigen::Index>(m));
  for (std::size_t c = 0; c < m; ++c) {
    for (std::size_t p = 0; p < positions; ++p) mbar(c) += map.M[c * positions + p];
    mbar(c) /= static_cast<double>(positions);
  }
  return mbar * stats.solve(k_bar).transpose();
}

void write_pgm(const std::filesystem::path& path, const Tensor& map) {
  std::size_t h = 0, w = 0;
  if (map.rank() == 2) h = map.dim(0), w = map.dim(1);
  else if (map.rank() == 3 && map.dim(0) == 1) h = map.dim(1), w = map.dim(2);
  else throw ShapeError("write_pgm: expected [H, W] or [1, H, W], got " + shape_str(map.shape()));
  double mx = 0.0;
  for (double v : map.data()) mx = std::max(mx, std::abs(v));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pgm: cannot open " + path.string());
  out << "P5\n" << w << ' ' << h << "\n255\n";
  for (double v : map.data()) {
    const double s = mx > 0.0 ? std::abs(v) / mx : 0.0;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * s))));
  }
}

}  // namespace rkt
