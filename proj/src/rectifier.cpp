#include "rkt/rectifier.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

#include "rkt/metrics.hpp"

namespace rkt {

void RectifyBudget::validate() const {
  if (!(epsilon >= 0.0)) throw std::invalid_argument("rectify budget: epsilon must be >= 0");
  if (!(delta >= 0.0)) throw std::invalid_argument("rectify budget: delta must be >= 0");
  if (steps < 1) throw std::invalid_argument("rectify budget: steps must be >= 1");
  if (max_rounds < 1) throw std::invalid_argument("rectify budget: max_rounds must be >= 1");
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::gap_met:
      return "gap-met";
    case Termination::budget_exceeded:
      return "budget-exceeded";
    case Termination::rounds_exhausted:
      return "rounds-exhausted";
    case Termination::edit_failed:
      return "edit-failed";
  }
  return "unknown";
}

std::size_t RectifyReport::accepted_rounds() const {
  std::size_t n = 0;
  for (const auto& r : rounds) n += r.accepted;
  return n;
}

std::string RectifyReport::to_json() const {
  nlohmann::json j;
  j["mode"] = mode;
  j["termination"] = to_string(termination);
  j["initial_delta"] = initial_delta;
  j["final_delta"] = final_delta;
  j["initial_accuracy"] = initial_accuracy;
  j["final_accuracy"] = final_accuracy;
  j["editable_layers"] = editable_layers;
  j["final_digest"] = final_digest;
  nlohmann::json rs = nlohmann::json::array();
  for (const auto& r : rounds)
    rs.push_back({{"round", r.round},
                  {"layer", r.layer},
                  {"delta_star", r.delta_star},
                  {"epsilon_star", r.epsilon_star},
                  {"accepted", r.accepted},
                  {"loss_before", r.loss_before},
                  {"loss_after", r.loss_after},
                  {"scores", r.scores},
                  {"message", r.message}});
  j["rounds"] = rs;
  return j.dump(2);
}

std::string RectifyReport::rounds_csv() const {
  std::ostringstream os;
  os.precision(12);
  os << "round,layer,delta_star,epsilon_star,accepted,loss_before,loss_after\n";
  for (const auto& r : rounds)
    os << r.round << ',' << r.layer << ',' << r.delta_star << ',' << r.epsilon_star << ',' << (r.accepted ? 1 : 0)
       << ',' << r.loss_before << ',' << r.loss_after << '\n';
  return os.str();
}

namespace {

RectifyResult run(const Model& model, std::span<const SamplePair> pairs, const Dataset& eval_set,
                  std::span<const Tensor> reference, const RectifyBudget& budget, const RectifyOptions& opts,
                  bool dynamic) {
  budget.validate();
  if (pairs.empty()) throw std::invalid_argument("rectify: no pairs");
  if (reference.empty()) throw std::invalid_argument("rectify: no reference samples for key statistics");
  if (model.editable_layers().empty()) throw std::invalid_argument("rectify: model has no editable layers");
  EditConfig edit = opts.edit;
  edit.steps = budget.steps;
  edit.validate();

  RectifyResult out{model, {}};
  RectifyReport& rep = out.report;
  rep.mode = dynamic ? "dynamic" : "static";
  rep.editable_layers = model.editable_layers();
  rep.initial_accuracy = rep.final_accuracy = accuracy(model, eval_set);
  rep.initial_delta = rep.final_delta = mean_head_gap(model, model, pairs);

  double delta_star = rep.initial_delta;
  rep.termination = Termination::rounds_exhausted;
  if (delta_star <= budget.delta) {
    rep.termination = Termination::gap_met;
  } else {
    const std::size_t fixed = *std::max_element(rep.editable_layers.begin(), rep.editable_layers.end());
    for (std::size_t round = 1; round <= budget.max_rounds; ++round) {
      RoundRecord rec;
      rec.round = round;
      try {
        LayerStats stats;
        if (dynamic) {
          stats = editable_layer_stats(out.model, reference, edit);
          const LayerScores scores = score_layers(out.model, pairs, stats, opts.score);
          rec.scores = scores.scores;
          rec.layer = locate(scores);
        } else {
          rec.layer = fixed;
          stats.emplace(fixed, layer_stats(out.model, fixed, reference, edit));
        }
        const EditResult r = rank_one_edit(out.model, rec.layer, pairs, stats.at(rec.layer), edit);
        rec.loss_before = r.loss_before;
        rec.loss_after = r.loss_after;
        rec.message = r.message;
        if (!r.success || !r.changed) throw std::runtime_error("edit failed: " + r.message);
        rec.epsilon_star = rep.initial_accuracy - accuracy(r.model, eval_set);
        rec.delta_star = mean_head_gap(r.model, model, pairs);
        rec.accepted = rec.epsilon_star <= budget.epsilon && rec.delta_star < delta_star;
        if (rec.accepted) out.model = r.model;
      } catch (const std::exception& e) {
        rec.message = e.what();
        rep.rounds.push_back(rec);
        rep.termination = Termination::edit_failed;
        break;
      }
      rep.rounds.push_back(rec);
      if (!rec.accepted) {
        if (rec.epsilon_star > budget.epsilon) {
          rep.termination = Termination::budget_exceeded;
        } else {
          rep.rounds.back().message = "mean head gap did not decrease";
          rep.termination = Termination::edit_failed;
        }
        break;
      }
      delta_star = rec.delta_star;
      if (delta_star <= budget.delta) {
        rep.termination = Termination::gap_met;
        break;
      }
    }
  }
  rep.final_delta = delta_star;
  rep.final_accuracy = rep.initial_accuracy;
  if (rep.accepted_rounds() > 0) rep.final_accuracy = accuracy(out.model, eval_set);
  rep.final_digest = out.model.parameter_digest();
  if (rep.initial_accuracy - rep.final_accuracy > budget.epsilon)
    throw std::logic_error("rectify: accepted model exceeds the accuracy budget");
  return out;
}

}  // namespace

RectifyResult rectify(const Model& model, std::span<const SamplePair> pairs, const Dataset& eval_set,
                      std::span<const Tensor> reference, const RectifyBudget& budget, const RectifyOptions& opts) {
  return run(model, pairs, eval_set, reference, budget, opts, true);
}

RectifyResult static_rectify(const Model& model, std::span<const SamplePair> pairs, const Dataset& eval_set,
                             std::span<const Tensor> reference, const RectifyBudget& budget,
                             const RectifyOptions& opts) {
  return run(model, pairs, eval_set, reference, budget, opts, false);
}

}  // namespace rkt
