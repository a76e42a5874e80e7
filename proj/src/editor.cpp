#include "rkt/editor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace rkt {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Fnv {
 public:
  void feed(const double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto bits = std::bit_cast<std::uint64_t>(p[i]);
      for (int b = 0; b < 8; ++b) {
        h_ ^= (bits >> (8 * b)) & 0xffU;
        h_ *= 1099511628211ULL;
      }
    }
  }
  std::string hex() const {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h_;
    return os.str();
  }

 private:
  std::uint64_t h_ = 1469598103934665603ULL;
};

void require_key_layer(const Model& model, std::size_t l) {
  const Layer& layer = model.layer(l);
  if (!layer.spec.parameterized())
    throw std::invalid_argument("layer " + std::to_string(l) + " (" + to_string(layer.spec.kind) +
                                ") has no key/value structure");
}

// f_{l-1} for a list of samples, batched.
template <typename Fn>
void for_each_input(const Model& model, std::size_t l, std::span<const Tensor> samples, Fn&& fn) {
  const Shape& in_shape = model.activation_shape(l - 1);
  const std::size_t per = shape_size(in_shape);
  for (std::size_t start = 0; start < samples.size(); start += 128) {
    const std::size_t n = std::min<std::size_t>(128, samples.size() - start);
    Tensor feats = model.forward_to(stack(samples.subspan(start, n)), l - 1);
    for (std::size_t b = 0; b < n; ++b) {
      Tensor one(in_shape, std::vector<double>(feats.ptr() + b * per, feats.ptr() + (b + 1) * per));
      fn(one);
    }
  }
}

constexpr const char* kAggregationNames[] = {"mean-key", "top-difference"};
constexpr const char* kDirectionNames[] = {"inverse", "zca"};

}  // namespace

std::string to_string(Aggregation a) { return kAggregationNames[static_cast<int>(a)]; }
std::string to_string(DirectionMode d) { return kDirectionNames[static_cast<int>(d)]; }

Aggregation aggregation_from_string(const std::string& s) {
  if (s == "mean-key") return Aggregation::mean_key;
  if (s == "top-difference") return Aggregation::top_difference;
  throw std::invalid_argument("unknown aggregation '" + s + "'");
}

DirectionMode direction_mode_from_string(const std::string& s) {
  if (s == "inverse") return DirectionMode::inverse;
  if (s == "zca") return DirectionMode::zca;
  throw std::invalid_argument("unknown direction mode '" + s + "'");
}

void EditConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("edit: learning rate must be positive");
  if (projection_every < 1) throw std::invalid_argument("edit: projection frequency P must be >= 1");
  if (steps < 1) throw std::invalid_argument("edit: inner steps T must be >= 1");
  if (!(ridge_scale > 0.0) && !(ridge > 0.0)) throw std::invalid_argument("edit: ridge lambda must be positive");
  if (!(quantile >= 0.0 && quantile <= 1.0)) throw std::invalid_argument("edit: quantile must be in [0, 1]");
}

Matrix weight_matrix(const Layer& layer) {
  const auto m = static_cast<Eigen::Index>(layer.spec.value_size());
  const auto n = static_cast<Eigen::Index>(layer.spec.key_size());
  return Eigen::Map<const RowMajor>(layer.weight.ptr(), m, n);
}

Matrix layer_keys(const Model& model, std::size_t l, const Tensor& features) {
  require_key_layer(model, l);
  const Layer& layer = model.layer(l);
  if (features.shape() != model.activation_shape(l - 1))
    throw ShapeError("layer_keys: expected " + shape_str(model.activation_shape(l - 1)) + ", got " +
                     shape_str(features.shape()));
  if (layer.spec.kind == LayerKind::dense) return Eigen::Map<const Vector>(features.ptr(), features.size());
  const ConvGeometry g = ConvGeometry::of(layer.spec, features.shape());
  RowMajor cols(g.patch_size(), g.positions());
  im2col(features.ptr(), g, cols.data(), g.positions());
  return cols;
}

Matrix layer_values(const Model& model, std::size_t l, const Matrix& keys) {
  const Layer& layer = model.layer(l);
  Matrix v = weight_matrix(layer) * keys;
  v.colwise() += Eigen::Map<const Vector>(layer.bias.ptr(), layer.bias.size());
  return v;
}

KeySet collect_keys(const Model& model, std::size_t l, std::span<const Tensor> samples) {
  if (!model.is_editable(l)) throw std::invalid_argument("collect_keys: layer " + std::to_string(l) + " is not editable");
  require_key_layer(model, l);
  if (samples.empty()) throw std::invalid_argument("collect_keys: no samples");
  std::vector<Matrix> blocks;
  Eigen::Index cols = 0;
  for_each_input(model, l, samples, [&](const Tensor& f) {
    blocks.push_back(layer_keys(model, l, f));
    cols += blocks.back().cols();
  });
  KeySet ks;
  ks.layer = l;
  ks.K.resize(blocks.front().rows(), cols);
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    ks.K.middleCols(at, b.cols()) = b;
    at += b.cols();
  }
  Fnv h;
  h.feed(ks.K.data(), static_cast<std::size_t>(ks.K.size()));
  ks.digest = h.hex();
  return ks;
}

double ridge_for(const Matrix& moment, const EditConfig& cfg) {
  if (cfg.ridge > 0.0) return cfg.ridge;
  const double lam = cfg.ridge_scale * moment.trace() / static_cast<double>(moment.rows());
  return lam > 0.0 ? lam : cfg.ridge_scale;
}

KeyStatistics stats_from_moment(Matrix moment, std::size_t layer, std::size_t key_count, double lambda,
                                std::string digest) {
  if (!(lambda > 0.0)) throw std::invalid_argument("key_stats: lambda must be positive");
  KeyStatistics s;
  s.layer = layer;
  s.key_count = key_count;
  s.lambda = lambda;
  s.key_digest = std::move(digest);
  s.C = 0.5 * (moment + moment.transpose());
  s.C.diagonal().array() += lambda;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(s.C);
  if (eig.info() != Eigen::Success) {
    const Vector diag = s.C.diagonal();
    throw NumericError("key_stats: eigendecomposition did not converge (diagonal range " +
                       std::to_string(diag.minCoeff()) + " .. " + std::to_string(diag.maxCoeff()) + ")");
  }
  s.U = eig.eigenvectors();
  s.sigma = eig.eigenvalues();
  if (s.sigma(0) < lambda * (1.0 - 1e-8)) {
    // K K^T is PSD; anything below lambda is round-off, clamp it.
    s.sigma = s.sigma.cwiseMax(lambda);
  }
  s.Z = s.U * s.sigma.cwiseSqrt().cwiseInverse().asDiagonal() * s.U.transpose();
  if (!s.Z.allFinite())
    throw NumericError("key_stats: non-finite whitening matrix, condition number " +
                       std::to_string(s.condition_number()));
  return s;
}

KeyStatistics key_stats(const KeySet& keys, double lambda) {
  Matrix moment = Matrix::Zero(keys.K.rows(), keys.K.rows());
  moment.selfadjointView<Eigen::Lower>().rankUpdate(keys.K);
  moment = moment.selfadjointView<Eigen::Lower>();
  return stats_from_moment(std::move(moment), keys.layer, keys.count(), lambda, keys.digest);
}

KeyStatistics layer_stats(const Model& model, std::size_t l, std::span<const Tensor> samples, const EditConfig& cfg) {
  if (!model.is_editable(l)) throw std::invalid_argument("layer_stats: layer " + std::to_string(l) + " is not editable");
  require_key_layer(model, l);
  if (samples.empty()) throw std::invalid_argument("layer_stats: no samples");
  const auto n = static_cast<Eigen::Index>(model.layer(l).spec.key_size());
  Matrix moment = Matrix::Zero(n, n);
  std::size_t count = 0;
  Fnv h;
  for_each_input(model, l, samples, [&](const Tensor& f) {
    Matrix k = layer_keys(model, l, f);
    moment.selfadjointView<Eigen::Lower>().rankUpdate(k);
    count += static_cast<std::size_t>(k.cols());
    h.feed(k.data(), static_cast<std::size_t>(k.size()));
  });
  moment = moment.selfadjointView<Eigen::Lower>();
  const double lambda = ridge_for(moment, cfg);
  return stats_from_moment(std::move(moment), l, count, lambda, h.hex());
}

Vector KeyStatistics::solve(const Vector& k) const {
  if (k.size() != C.rows())
    throw ShapeError("key statistics: key of length " + std::to_string(k.size()) + ", expected " +
                     std::to_string(C.rows()));
  return U * (U.transpose() * k).cwiseQuotient(sigma);
}

Vector whiten(const Vector& k, const KeyStatistics& stats) {
  if (k.size() != stats.Z.cols())
    throw ShapeError("whiten: key of length " + std::to_string(k.size()) + ", expected " +
                     std::to_string(stats.Z.cols()));
  return stats.Z * k;
}

SpanResidual span_residual(const KeySet& keys, const Vector& k_star, double lambda) {
  if (k_star.size() != keys.K.rows())
    throw ShapeError("span_residual: k* of length " + std::to_string(k_star.size()) + ", expected " +
                     std::to_string(keys.K.rows()));
  Matrix moment = Matrix::Zero(keys.K.rows(), keys.K.rows());
  moment.selfadjointView<Eigen::Lower>().rankUpdate(keys.K);
  moment = moment.selfadjointView<Eigen::Lower>();
  if (!(lambda > 0.0)) {
    lambda = 1e-10 * moment.trace() / static_cast<double>(moment.rows());
    if (!(lambda > 0.0)) lambda = 1.0;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(moment);
  if (eig.info() != Eigen::Success) throw NumericError("span_residual: eigendecomposition did not converge");
  // Eigenvalues at round-off level belong to the null space of K K^T.
  const Vector& ev = eig.eigenvalues();
  const double tol = ev.cwiseAbs().maxCoeff() * static_cast<double>(ev.size()) * std::numeric_limits<double>::epsilon();
  const Vector s = (ev.array() > tol).select(ev, 0.0);
  const Vector shrink = (s.array() + lambda).inverse() * lambda;
  SpanResidual out;
  out.r = eig.eigenvectors() * shrink.cwiseProduct(eig.eigenvectors().transpose() * k_star);
  const double kn = k_star.norm();
  out.relative = kn > 0.0 ? out.r.norm() / kn : 0.0;
  out.in_span = out.relative <= 1e-6;
  return out;
}

EditKeys edit_keys(const Model& model, std::size_t l, std::span<const SamplePair> pairs) {
  require_key_layer(model, l);
  if (pairs.empty()) throw std::invalid_argument("edit_keys: no pairs");
  std::vector<Matrix> kc, kt;
  Eigen::Index cols = 0;
  for (const auto& p : pairs) {
    std::vector<Tensor> both = {p.x, p.x_tilde};
    Tensor feats = model.forward_to(stack(both), l - 1);
    kc.push_back(layer_keys(model, l, feats.slice(0)));
    kt.push_back(layer_keys(model, l, feats.slice(1)));
    cols += kc.back().cols();
  }
  EditKeys ek;
  const Eigen::Index n = kc.front().rows();
  ek.clean.resize(n, cols);
  ek.corrupted.resize(n, cols);
  Eigen::Index at = 0;
  for (std::size_t i = 0; i < kc.size(); ++i) {
    ek.clean.middleCols(at, kc[i].cols()) = kc[i];
    ek.corrupted.middleCols(at, kt[i].cols()) = kt[i];
    at += kc[i].cols();
  }
  ek.targets = layer_values(model, l, ek.clean);
  ek.difference.resize(static_cast<std::size_t>(cols));
  for (Eigen::Index c = 0; c < cols; ++c)
    ek.difference[static_cast<std::size_t>(c)] = (ek.corrupted.col(c) - ek.clean.col(c)).norm();
  return ek;
}

Vector aggregate_key(const EditKeys& keys, const EditConfig& cfg) {
  const auto& diff = keys.difference;
  const double top = diff.empty() ? 0.0 : *std::max_element(diff.begin(), diff.end());
  if (!(top > 0.0)) return {};
  const double floor = 1e-9 * top;
  if (cfg.aggregation == Aggregation::top_difference) {
    const auto c = std::max_element(diff.begin(), diff.end()) - diff.begin();
    return keys.corrupted.col(c);
  }
  std::vector<double> sorted(diff);
  std::sort(sorted.begin(), sorted.end());
  // Linear-interpolated quantile.
  const double pos = cfg.quantile * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double thr = sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  Vector sum = Vector::Zero(keys.corrupted.rows());
  std::size_t count = 0;
  for (std::size_t c = 0; c < diff.size(); ++c)
    if (diff[c] >= thr && diff[c] > floor) {
      sum += keys.corrupted.col(static_cast<Eigen::Index>(c));
      ++count;
    }
  return sum / static_cast<double>(count);
}

Vector edit_direction(const KeyStatistics& stats, const Vector& k_bar, DirectionMode mode) {
  return mode == DirectionMode::inverse ? stats.solve(k_bar) : whiten(k_bar, stats);
}

double value_loss(const Model& model, std::size_t l, const EditKeys& keys) {
  return (keys.targets - layer_values(model, l, keys.corrupted)).squaredNorm();
}

EditResult rank_one_edit(const Model& model, std::size_t l, std::span<const SamplePair> pairs,
                         const KeyStatistics& stats, const EditConfig& cfg) {
  cfg.validate();
  if (!model.is_editable(l)) throw std::invalid_argument("rank_one_edit: layer " + std::to_string(l) + " is not editable");
  if (pairs.empty()) throw std::invalid_argument("rank_one_edit: no pairs");
  const Layer& layer = model.layer(l);
  if (stats.layer != l || stats.n() != layer.spec.key_size())
    throw std::invalid_argument("rank_one_edit: statistics were built for layer " + std::to_string(stats.layer) +
                                " (n = " + std::to_string(stats.n()) + "), not layer " + std::to_string(l));

  EditResult res;
  res.model = model;
  res.layer = l;
  const EditKeys ek = edit_keys(model, l, pairs);
  const Matrix W = weight_matrix(layer);
  const Eigen::Map<const Vector> b(layer.bias.ptr(), layer.bias.size());

  Matrix R0 = ek.targets - W * ek.corrupted;
  R0.colwise() -= b;
  const double base = R0.squaredNorm();
  res.loss_before = res.loss_after = base;
  res.checkpoint_losses.push_back(base);

  const Vector k_bar = aggregate_key(ek, cfg);
  if (k_bar.size() == 0) {
    res.success = true;
    res.message = "corrupted keys equal clean keys; nothing to edit";
    return res;
  }
  for (double d : ek.difference) res.keys_selected += d > 0.0;
  Vector d = edit_direction(stats, k_bar, cfg.direction);
  const double dn = d.norm();
  if (!(dn > 0.0) || !std::isfinite(dn)) {
    res.message = "degenerate edit direction";
    return res;
  }
  d /= dn;

  const Matrix A = ek.corrupted * ek.corrupted.transpose();
  const Matrix B = R0 * ek.corrupted.transpose();
  auto loss = [&](const Matrix& dW) { return base - 2.0 * (dW.cwiseProduct(B)).sum() + (dW * A).cwiseProduct(dW).sum(); };

  Matrix dW = Matrix::Zero(W.rows(), W.cols());
  double lr = cfg.lr, last = base;
  for (std::size_t step = 0; step < cfg.steps;) {
    const std::size_t seg = std::min(cfg.projection_every, cfg.steps - step);
    Matrix trial = dW;
    for (std::size_t s = 0; s < seg; ++s) trial += (2.0 * lr) * (B - trial * A);
    step += seg;
    trial = (trial * d) * d.transpose();
    const double L = loss(trial);
    if (std::isfinite(L) && L <= last) {
      dW = std::move(trial);
      last = L;
      res.checkpoint_losses.push_back(L);
    } else {
      lr *= 0.5;
    }
  }

  res.loss_after = last;
  if (!(last < base)) {
    res.message = "value loss did not decrease within " + std::to_string(cfg.steps) + " steps";
    return res;
  }
  Layer edited = layer;
  RowMajor Wn = W + dW;
  std::copy(Wn.data(), Wn.data() + Wn.size(), edited.weight.ptr());
  res.model = model.with_layer(l, std::move(edited));
  res.success = true;
  res.changed = true;
  res.direction = d;
  res.lambda = dW * d;
  res.message = "ok";
  return res;
}

std::string diagnostics_csv(const KeyStatistics& stats, const Vector& direction) {
  std::ostringstream os;
  os.precision(12);
  os << "key_digest,index,eigenvalue,direction\n";
  for (Eigen::Index i = 0; i < stats.sigma.size(); ++i) {
    os << stats.key_digest << ',' << i << ',' << stats.sigma(i) << ',';
    if (i < direction.size()) os << direction(i);
    os << '\n';
  }
  return os.str();
}

}  // namespace rkt
