#include "rkt/pipeline.hpp"

namespace rkt {

Shape experiment_input_shape(const ExperimentConfig& cfg) {
  const std::size_t h = cfg.corruption_kind == CorruptionKind::leakage ? 2 * cfg.data.height : cfg.data.height;
  return {1, h, cfg.data.width};
}

ExperimentData prepare_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const CorruptionSpec spec = cfg.corruption();
  const std::uint64_t data_seed = sub_seed(cfg.seed, "data");
  ExperimentData d;
  d.clean_train = generate(cfg.data, data_seed, Split::train);
  const Dataset clean_test = generate(cfg.data, data_seed, Split::test);
  d.train = corrupt_dataset(d.clean_train, spec, sub_seed(cfg.seed, "corruption"));

  const std::size_t n_ref = std::min(cfg.reference_samples, d.clean_train.size());
  switch (cfg.corruption_kind) {
    case CorruptionKind::trojan: {
      d.test = clean_test;
      d.triggered = triggered_set(clean_test, spec);
      for (std::size_t i = 0; i < clean_test.size() && d.pairs.size() < cfg.pairs; ++i)
        if (clean_test.labels[i] != cfg.target) d.pairs.push_back(make_pair(clean_test.images[i], clean_test.labels[i], spec));
      d.reference.assign(d.clean_train.images.begin(), d.clean_train.images.begin() + static_cast<std::ptrdiff_t>(n_ref));
      break;
    }
    case CorruptionKind::spurious: {
      d.test = clean_test;
      d.spurious_sets = spurious_sets(clean_test, spec);
      for (std::size_t i = 0; i < clean_test.size() && d.pairs.size() < cfg.pairs; ++i)
        if (clean_test.labels[i] == cfg.affected_class) d.pairs.push_back(make_pair(clean_test.images[i], cfg.affected_class, spec));
      d.reference.assign(d.clean_train.images.begin(), d.clean_train.images.begin() + static_cast<std::ptrdiff_t>(n_ref));
      break;
    }
    case CorruptionKind::leakage: {
      Corrupted test = corrupt_dataset(clean_test, spec, sub_seed(cfg.seed, "corruption-test"));
      d.test = test.data;
      d.leakage_eval = std::move(test.pairs);
      const std::size_t n_pairs = std::min(cfg.pairs, d.train.pairs.size());
      d.pairs.assign(d.train.pairs.begin(), d.train.pairs.begin() + static_cast<std::ptrdiff_t>(n_pairs));
      for (std::size_t i = 0; i < std::min(n_ref, d.train.pairs.size()); ++i) d.reference.push_back(d.train.pairs[i].x);
      break;
    }
  }
  if (d.pairs.empty()) throw ConfigError("config: no evaluation sample qualifies as an editing pair");
  return d;
}

TrainResult train_experiment_model(const ExperimentConfig& cfg, const ExperimentData& data) {
  TrainConfig tc = cfg.train;
  tc.seed = sub_seed(cfg.seed, "training");
  TrainMonitor monitor;
  monitor.clean = &data.test;
  if (data.triggered) {
    monitor.triggered = &*data.triggered;
    monitor.target = cfg.target;
  }
  const Model init = Model::small_cnn(experiment_input_shape(cfg), cfg.data.classes, sub_seed(cfg.seed, "init"));
  return train(init, data.train.data, tc, monitor);
}

CheckpointMetadata experiment_metadata(const ExperimentConfig& cfg, const std::string& note) {
  CheckpointMetadata meta;
  meta.seed = cfg.seed;
  meta.epochs = cfg.train.epochs;
  meta.corruption_digest = cfg.corruption().digest();
  meta.note = note;
  return meta;
}

MetricsReport evaluate_experiment(const Model& model, const ExperimentData& data, const ExperimentConfig& cfg,
                                  std::size_t ig_steps) {
  MetricsReport r;
  r.overall_accuracy = accuracy(model, data.test);
  if (data.triggered) {
    r.attack_success_rate = attack_success_rate(model, *data.triggered, cfg.target);
    r.false_confidence = false_confidence(model, *data.triggered, cfg.target);
  }
  if (data.spurious_sets) {
    const auto a = spurious_accuracy(model, data.spurious_sets->first, data.spurious_sets->second);
    r.clean_set_accuracy = a.clean;
    r.spurious_set_accuracy = a.spurious;
  }
  if (!data.leakage_eval.empty()) r.leakage_ratio = leakage_ratio(model, data.leakage_eval, ig_steps);
  return r;
}

RectifyOptions rectify_options(const ExperimentConfig& cfg) {
  RectifyOptions o;
  o.score = cfg.score;
  o.score.edit = cfg.edit;
  o.edit = cfg.edit;
  return o;
}

RectifyBudget rectify_budget(const ExperimentConfig& cfg) {
  RectifyBudget b = cfg.budget;
  b.steps = cfg.edit.steps;
  return b;
}

}  // namespace rkt
