#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "rkt/data.hpp"
#include "rkt/model.hpp"

namespace rkt {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>;
using Vector = Eigen::VectorXd;

/// Keys of layer l as columns: n = key size, one column per spatial
/// position per sample (one per sample for dense layers).
struct KeySet {
  Matrix K;
  std::size_t layer = 0;
  std::string digest;

  std::size_t n() const { return static_cast<std::size_t>(K.rows()); }
  std::size_t count() const { return static_cast<std::size_t>(K.cols()); }
};

/// C = K K^T + lambda I with its eigendecomposition C = U diag(sigma) U^T
/// and the ZCA matrix Z = U diag(sigma)^{-1/2} U^T.
struct KeyStatistics {
  std::size_t layer = 0;
  std::size_t key_count = 0;
  double lambda = 0.0;
  Matrix C;
  Matrix U;
  Vector sigma;  // ascending
  Matrix Z;
  std::string key_digest;

  std::size_t n() const { return static_cast<std::size_t>(C.rows()); }
  /// C^{-1} k through the cached eigendecomposition.
  Vector solve(const Vector& k) const;
  double condition_number() const { return sigma(sigma.size() - 1) / sigma(0); }
};

enum class Aggregation { mean_key, top_difference };
enum class DirectionMode { inverse, zca };

std::string to_string(Aggregation a);
std::string to_string(DirectionMode d);
Aggregation aggregation_from_string(const std::string& s);
DirectionMode direction_mode_from_string(const std::string& s);

struct EditConfig {
  double lr = 1e-4;
  std::size_t projection_every = 10;  // P
  std::size_t steps = 200;            // T
  /// lambda = ridge_scale * trace(K K^T) / n unless `ridge` is positive.
  double ridge_scale = 1e-4;
  double ridge = 0.0;
  Aggregation aggregation = Aggregation::mean_key;
  DirectionMode direction = DirectionMode::inverse;
  double quantile = 0.75;

  void validate() const;
};

/// Patches of f_{l-1}(x) for every sample. Throws for layers without a
/// key/value reading (relu, maxpool, flatten) and for empty sample lists.
KeySet collect_keys(const Model& model, std::size_t l, std::span<const Tensor> samples);

/// Keys of a single per-sample input f_{l-1} (n x positions).
Matrix layer_keys(const Model& model, std::size_t l, const Tensor& features);

/// Values W k + b for the columns of `keys` (m x positions).
Matrix layer_values(const Model& model, std::size_t l, const Matrix& keys);

double ridge_for(const Matrix& C_no_ridge, const EditConfig& cfg);

/// Statistics of an explicit key set. lambda must be positive.
KeyStatistics key_stats(const KeySet& keys, double lambda);

/// Accumulates K K^T sample by sample (K is never materialized) and applies
/// the ridge from `cfg`.
KeyStatistics layer_stats(const Model& model, std::size_t l, std::span<const Tensor> samples, const EditConfig& cfg);

/// Builds the statistics from an accumulated second moment.
KeyStatistics stats_from_moment(Matrix moment, std::size_t layer, std::size_t key_count, double lambda,
                                std::string digest = "");

Vector whiten(const Vector& k, const KeyStatistics& stats);

struct SpanResidual {
  Vector r;
  double relative = 0.0;  // |r| / |k*|
  bool in_span = false;   // relative <= 1e-6
};

/// r = k* - K (K^T K + lambda I)^{-1} K^T k*, evaluated as lambda (K K^T + lambda I)^{-1} k*.
/// A non-positive lambda selects 1e-10 * trace(K K^T) / n.
SpanResidual span_residual(const KeySet& keys, const Vector& k_star, double lambda = 0.0);

/// Per-pair keys and values at layer l.
struct EditKeys {
  Matrix corrupted;     // k~ (n x P per pair, concatenated)
  Matrix clean;         // k
  Matrix targets;       // v* = W k + b
  std::vector<double> difference;  // |k~ - k| per column
};

EditKeys edit_keys(const Model& model, std::size_t l, std::span<const SamplePair> pairs);

/// k-bar*: mean of corrupted keys whose difference is at least the
/// cfg.quantile quantile (mean-key) or the single most changed key
/// (top-difference). Returns an empty vector when no key changed.
Vector aggregate_key(const EditKeys& keys, const EditConfig& cfg);

/// d = C^{-1} k (inverse) or Z k (zca).
Vector edit_direction(const KeyStatistics& stats, const Vector& k_bar, DirectionMode mode);

struct EditResult {
  Model model;
  bool success = false;
  bool changed = false;
  std::string message;
  std::size_t layer = 0;
  double loss_before = 0.0;
  double loss_after = 0.0;
  std::vector<double> checkpoint_losses;
  Vector direction;  // unit d
  Vector lambda;     // Lambda, so that Delta W = Lambda d^T
  std::size_t keys_selected = 0;
};

/// Projected gradient descent on the value loss sum |v* - (W' k~ + b)|^2 with
/// Delta W projected onto {Lambda d^T} every P steps. A segment whose
/// checkpoint loss would rise is discarded and the learning rate halved.
/// On failure the returned model is the input model.
EditResult rank_one_edit(const Model& model, std::size_t l, std::span<const SamplePair> pairs,
                         const KeyStatistics& stats, const EditConfig& cfg);

/// Value loss of `model` at layer l on precomputed edit keys.
double value_loss(const Model& model, std::size_t l, const EditKeys& keys);

/// weight matrix view of layer l as m x n.
Matrix weight_matrix(const Layer& layer);

/// key_digest,index,eigenvalue,direction
std::string diagnostics_csv(const KeyStatistics& stats, const Vector& direction);

}  // namespace rkt
