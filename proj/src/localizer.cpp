#include "rkt/localizer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <future>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "rkt/metrics.hpp"

namespace rkt {

namespace {

std::string pairs_digest(std::span<const SamplePair> pairs) {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&](const Tensor& t) {
    for (double v : t.data()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xffU;
        h *= 1099511628211ULL;
      }
    }
  };
  for (const auto& p : pairs) {
    feed(p.x);
    feed(p.x_tilde);
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace

LayerStats editable_layer_stats(const Model& model, std::span<const Tensor> reference, const EditConfig& cfg) {
  LayerStats out;
  for (auto l : model.editable_layers()) out.emplace(l, layer_stats(model, l, reference, cfg));
  return out;
}

double LayerScores::score(std::size_t layer) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i] == layer) return scores[i];
  throw std::out_of_range("LayerScores: no score for layer " + std::to_string(layer));
}

LayerScores score_layers(const Model& model, std::span<const SamplePair> pairs, const LayerStats& stats,
                         const ScoreConfig& cfg) {
  if (pairs.empty()) throw std::invalid_argument("score_layers: no pairs");
  LayerScores out;
  out.mode = cfg.mode;
  out.layers = model.editable_layers();
  std::sort(out.layers.begin(), out.layers.end());
  out.scores.assign(out.layers.size(), 0.0);
  out.pair_digest = pairs_digest(pairs);
  for (auto l : out.layers)
    if (!stats.contains(l)) throw std::invalid_argument("score_layers: no statistics for layer " + std::to_string(l));

  std::vector<std::size_t> sources;
  for (auto l : out.layers) sources.push_back(remap_source(l, cfg.mode));
  std::vector<std::size_t> unique_sources(sources);
  std::sort(unique_sources.begin(), unique_sources.end());
  unique_sources.erase(std::unique(unique_sources.begin(), unique_sources.end()), unique_sources.end());

  for (const auto& pair : pairs) {
    const HeadSpec head = default_head(model, pair);
    const auto maps = path_ig(model, unique_sources, pair.x, pair.x_tilde, head, cfg.n_steps, cfg.path);
    const std::span<const SamplePair> one(&pair, 1);
    for (std::size_t i = 0; i < out.layers.size(); ++i) {
      const std::size_t l = out.layers[i];
      const auto at = std::find(unique_sources.begin(), unique_sources.end(), sources[i]) - unique_sources.begin();
      Vector k_bar;
      if (cfg.mode == RemapMode::direction_outer) {
        k_bar = aggregate_key(edit_keys(model, l, one), cfg.edit);
        if (k_bar.size() == 0) continue;
      }
      const double g = remap(model, l, maps[static_cast<std::size_t>(at)], stats.at(l), k_bar, cfg.mode).norm();
      if (!std::isfinite(g)) throw NumericError("score_layers: non-finite score at layer " + std::to_string(l));
      out.scores[i] += g;
    }
  }
  for (double& s : out.scores) s /= static_cast<double>(pairs.size());
  return out;
}

std::size_t locate(const LayerScores& scores) {
  if (scores.layers.empty()) throw std::invalid_argument("locate: no scores");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.layers.size(); ++i)
    if (scores.scores[i] > scores.scores[best] ||
        (scores.scores[i] == scores.scores[best] && scores.layers[i] > scores.layers[best]))
      best = i;
  return scores.layers[best];
}

std::vector<std::size_t> OracleRanking::order() const {
  std::vector<std::size_t> out;
  for (const auto& e : entries) out.push_back(e.layer);
  return out;
}

std::size_t OracleRanking::rank_of(std::size_t layer) const {
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].layer == layer) return i + 1;
  throw std::out_of_range("OracleRanking: layer " + std::to_string(layer) + " not ranked");
}

OracleRanking oracle_rank(const Model& model, std::span<const SamplePair> pairs, const LayerStats& stats,
                          const Dataset& heldout, std::size_t target, const EditConfig& cfg) {
  if (pairs.empty()) throw std::invalid_argument("oracle_rank: no pairs");
  const double before = false_confidence(model, heldout, target);
  std::vector<std::future<OracleEntry>> jobs;
  for (auto l : model.editable_layers()) {
    if (!stats.contains(l)) throw std::invalid_argument("oracle_rank: no statistics for layer " + std::to_string(l));
    jobs.push_back(std::async(std::launch::async, [&, l] {
      OracleEntry e;
      e.layer = l;
      try {
        const EditResult r = rank_one_edit(model, l, pairs, stats.at(l), cfg);
        e.failed = !r.success;
        e.message = r.message;
        if (r.success) e.reduction = before - false_confidence(r.model, heldout, target);
      } catch (const std::exception& ex) {
        e.failed = true;
        e.message = ex.what();
      }
      return e;
    }));
  }
  OracleRanking out;
  for (auto& j : jobs) out.entries.push_back(j.get());
  std::stable_sort(out.entries.begin(), out.entries.end(), [](const OracleEntry& a, const OracleEntry& b) {
    if (a.failed != b.failed) return !a.failed;
    if (a.reduction != b.reduction) return a.reduction > b.reduction;
    return a.layer > b.layer;
  });
  return out;
}

double recall_at_k(std::size_t chosen, const OracleRanking& oracle, std::size_t k) {
  if (k < 1) throw std::invalid_argument("recall_at_k: k must be >= 1");
  const std::size_t top = std::min(k, oracle.entries.size());
  for (std::size_t i = 0; i < top; ++i)
    if (oracle.entries[i].layer == chosen) return 1.0;
  return 0.0;
}

double mean_head_gap(const Model& model, const Model& heads_from, std::span<const SamplePair> pairs) {
  if (pairs.empty()) throw std::invalid_argument("mean_head_gap: no pairs");
  double total = 0.0;
  for (const auto& p : pairs) total += std::abs(head_delta(model, p, default_head(heads_from, p)));
  return total / static_cast<double>(pairs.size());
}

double first_order_gain(const Model& model, std::size_t l, std::span<const SamplePair> pairs,
                        const KeyStatistics& stats, const EditConfig& cfg, double eta) {
  if (!(eta > 0.0)) throw std::invalid_argument("first_order_gain: eta must be positive");
  const Layer& layer = model.layer(l);
  const EditKeys ek = edit_keys(model, l, pairs);
  const Vector k_bar = aggregate_key(ek, cfg);
  if (k_bar.size() == 0) return 0.0;
  Vector d = edit_direction(stats, k_bar, cfg.direction);
  d.normalize();
  const Matrix W = weight_matrix(layer);
  const Eigen::Map<const Vector> b(layer.bias.ptr(), layer.bias.size());
  Matrix R0 = ek.targets - W * ek.corrupted;
  R0.colwise() -= b;
  Matrix step = ((R0 * ek.corrupted.transpose()) * d) * d.transpose();
  const double norm = step.norm();
  if (!(norm > 0.0)) return 0.0;
  step *= eta / norm;

  Layer moved = layer;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> Wn = W + step;
  std::copy(Wn.data(), Wn.data() + Wn.size(), moved.weight.ptr());
  const Model shifted = model.with_layer(l, std::move(moved));
  return (mean_head_gap(model, model, pairs) - mean_head_gap(shifted, model, pairs)) / eta;
}

std::string scores_csv(const LayerScores& scores, const OracleRanking* oracle) {
  std::ostringstream os;
  os.precision(12);
  os << "layer,score,oracle_rank\n";
  for (std::size_t i = 0; i < scores.layers.size(); ++i) {
    os << scores.layers[i] << ',' << scores.scores[i] << ',';
    if (oracle) os << oracle->rank_of(scores.layers[i]);
    os << '\n';
  }
  return os.str();
}

}  // namespace rkt
