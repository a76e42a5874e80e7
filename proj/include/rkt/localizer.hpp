#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "rkt/attribution.hpp"
#include "rkt/editor.hpp"

namespace rkt {

/// Key statistics per editable layer.
using LayerStats = std::map<std::size_t, KeyStatistics>;

/// Statistics of every editable layer over the reference samples.
LayerStats editable_layer_stats(const Model& model, std::span<const Tensor> reference, const EditConfig& cfg);

struct LayerScores {
  std::vector<std::size_t> layers;  // ascending
  std::vector<double> scores;       // aligned with layers
  std::string pair_digest;
  RemapMode mode = RemapMode::direction_outer;

  double score(std::size_t layer) const;
};

struct ScoreConfig {
  RemapMode mode = RemapMode::direction_outer;
  std::size_t n_steps = 2;
  IgPath path = IgPath::feature;
  /// Aggregation and quantile for k-bar.
  EditConfig edit;
};

/// G_l = |remap(layer attribution, stats_l, k-bar_l)|_F per editable layer,
/// averaged over the pairs. Each pair uses default_head on its own.
LayerScores score_layers(const Model& model, std::span<const SamplePair> pairs, const LayerStats& stats,
                         const ScoreConfig& cfg);

/// Editable layer with the largest score; exact ties go to the deepest layer.
std::size_t locate(const LayerScores& scores);

struct OracleEntry {
  std::size_t layer = 0;
  double reduction = 0.0;  // false confidence before minus after
  bool failed = false;
  std::string message;
};

struct OracleRanking {
  std::vector<OracleEntry> entries;  // best first; failed edits last

  std::vector<std::size_t> order() const;
  /// 1-based rank of `layer`; throws when absent.
  std::size_t rank_of(std::size_t layer) const;
};

/// Edits every editable layer once from `model` with the same budget and
/// ranks the layers by the false-confidence reduction on `heldout`.
/// Ties go to the deepest layer. Layer edits run concurrently.
OracleRanking oracle_rank(const Model& model, std::span<const SamplePair> pairs, const LayerStats& stats,
                          const Dataset& heldout, std::size_t target, const EditConfig& cfg);

/// 1 when `chosen` is among the oracle's top k, else 0.
double recall_at_k(std::size_t chosen, const OracleRanking& oracle, std::size_t k);

/// Finite-difference estimate of the first-order drop of mean_head_gap when layer l moves by eta along the unit-norm projected
/// negative value-loss gradient.
double first_order_gain(const Model& model, std::size_t l, std::span<const SamplePair> pairs,
                        const KeyStatistics& stats, const EditConfig& cfg, double eta = 1e-4);

/// Mean over pairs of |h(x) - h(x~)| with each pair's head fixed on `heads_from`.
double mean_head_gap(const Model& model, const Model& heads_from, std::span<const SamplePair> pairs);

/// layer,score,oracle_rank (oracle_rank empty when no ranking is given).
std::string scores_csv(const LayerScores& scores, const OracleRanking* oracle = nullptr);

}  // namespace rkt
