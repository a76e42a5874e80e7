#include <CLI11.hpp>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <utility>

#include "rkt/checkpoint.hpp"
#include "rkt/pipeline.hpp"

namespace fs = std::filesystem;
using namespace rkt;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::string mode = "dynamic";
  std::optional<std::size_t> pairs;
  std::optional<std::size_t> ig_steps;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Model require_model(const fs::path& path, const char* producer) {
  if (!fs::exists(path))
    throw std::runtime_error("missing upstream artifact '" + path.string() + "' (run '" + producer + "' first)");
  return load_checkpoint(path).model;
}

class Runner {
 public:
  Runner(ExperimentConfig cfg, Flags flags) : cfg_(std::move(cfg)), flags_(std::move(flags)) {
    out_ = cfg_.out;
    fs::create_directories(out_);
  }

  void run(const std::string& cmd) {
    log(cmd);
    if (cmd == "gen-data") return gen_data();
    if (cmd == "train") return train_cmd();
    if (cmd == "trojan-eval") return trojan_eval();
    if (cmd == "localize") return localize();
    if (cmd == "rectify") return rectify_cmd(flags_.mode == "static");
    if (cmd == "rectify-static") return rectify_cmd(true);
    if (cmd == "fine-tune") return fine_tune();
    if (cmd == "oracle") return oracle();
    if (cmd == "report") return report();
    throw std::runtime_error("unknown subcommand '" + cmd + "'");
  }

 private:
  const ExperimentData& data() {
    if (!data_) data_ = prepare_experiment(cfg_);
    return *data_;
  }

  std::size_t ig_steps(std::size_t fallback) const { return flags_.ig_steps.value_or(fallback); }

  void log(const std::string& cmd) {
    std::ofstream out(out_ / "run.log", std::ios::app);
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%S", std::gmtime(&now));
    out << stamp << ' ' << cmd << " seed=" << cfg_.seed << '\n';
  }

  void gen_data() {
    const auto& d = data();
    export_dataset(out_ / "data" / "train", d.train.data, d.train.indices);
    export_dataset(out_ / "data" / "test", d.test);
    write_text(out_ / "config.cfg", serialize_config(cfg_));
    std::cout << "wrote " << d.train.data.size() << " training and " << d.test.size() << " test samples to "
              << (out_ / "data").string() << '\n';
  }

  void train_cmd() {
    const fs::path train_dir = out_ / "data" / "train";
    if (!fs::exists(train_dir / "dataset.json"))
      throw std::runtime_error("missing upstream artifact '" + train_dir.string() + "' (run 'gen-data' first)");
    ExperimentData d = data();
    d.train.data = import_dataset(train_dir);
    const TrainResult r = train_experiment_model(cfg_, d);
    save_checkpoint(out_ / "model.rkt", r.model, experiment_metadata(cfg_, "trained"));
    write_text(out_ / "train_history.csv", r.history.to_csv());
    const auto& last = r.history.epochs.back();
    std::cout << "trained " << cfg_.train.epochs << " epochs, loss " << last.loss << ", accuracy " << last.clean_acc
              << '\n';
  }

  void trojan_eval() {
    const Model model = require_model(out_ / "model.rkt", "train");
    if (!data().triggered) throw std::runtime_error("trojan-eval needs corruption.kind = trojan");
    const MetricsReport r = evaluate_experiment(model, data(), cfg_, ig_steps(64));
    write_text(out_ / "trojan_eval.csv", MetricsReport::csv_header() + '\n' + r.csv_row("model") + '\n');
    std::cout << "OA " << *r.overall_accuracy << " ASR " << *r.attack_success_rate << " false-confidence "
              << *r.false_confidence << '\n';
  }

  void localize() {
    const Model model = require_model(out_ / "model.rkt", "train");
    const auto& d = data();
    ScoreConfig sc = rectify_options(cfg_).score;
    if (flags_.ig_steps) sc.n_steps = *flags_.ig_steps;
    const LayerStats stats = editable_layer_stats(model, d.reference, cfg_.edit);
    const LayerScores scores = score_layers(model, d.pairs, stats, sc);
    const std::size_t chosen = locate(scores);

    std::optional<OracleRanking> oracle;
    if (fs::exists(out_ / "oracle.csv")) oracle = read_oracle(out_ / "oracle.csv");
    write_text(out_ / "scores.csv", scores_csv(scores, oracle ? &*oracle : nullptr));

    const auto maps = path_ig(model, std::vector<std::size_t>{0}, d.pairs.front().x, d.pairs.front().x_tilde,
                              default_head(model, d.pairs.front()), 64);
    write_pgm(out_ / "heatmap_input.pgm", maps.front().M);

    if (oracle) write_recall(chosen, *oracle);
    std::cout << "located layer " << chosen << '\n';
  }

  void write_recall(std::size_t chosen, const OracleRanking& oracle) {
    const fs::path path = out_ / "recall.csv";
    std::map<std::uint64_t, std::string> rows;
    if (fs::exists(path)) {
      std::stringstream in(read_text(path));
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line))
        if (!line.empty()) rows[std::stoull(line.substr(0, line.find(',')))] = line;
    }
    std::ostringstream row;
    row << cfg_.seed << ',' << chosen << ',' << oracle.entries.front().layer;
    for (std::size_t k = 1; k <= oracle.entries.size(); ++k) row << ',' << recall_at_k(chosen, oracle, k);
    rows[cfg_.seed] = row.str();
    std::ostringstream out;
    out << "seed,located,oracle_top1";
    for (std::size_t k = 1; k <= oracle.entries.size(); ++k) out << ",recall_at_" << k;
    out << '\n';
    for (const auto& [seed, line] : rows) out << line << '\n';
    write_text(path, out.str());
  }

  static OracleRanking read_oracle(const fs::path& path) {
    std::stringstream in(read_text(path));
    std::string line;
    std::getline(in, line);
    OracleRanking r;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::stringstream ls(line);
      std::string rank, layer, reduction, failed;
      std::getline(ls, rank, ',');
      std::getline(ls, layer, ',');
      std::getline(ls, reduction, ',');
      std::getline(ls, failed, ',');
      r.entries.push_back({std::stoul(layer), std::stod(reduction), failed == "1", ""});
    }
    return r;
  }

  void rectify_cmd(bool is_static) {
    const Model model = require_model(out_ / "model.rkt", "train");
    const auto& d = data();
    RectifyOptions opts = rectify_options(cfg_);
    if (flags_.ig_steps) opts.score.n_steps = *flags_.ig_steps;
    const RectifyBudget budget = rectify_budget(cfg_);
    const RectifyResult r = is_static ? static_rectify(model, d.pairs, d.test, d.reference, budget, opts)
                                      : rectify(model, d.pairs, d.test, d.reference, budget, opts);
    const std::string stem = is_static ? "rectified_static" : "rectified";
    save_checkpoint(out_ / (stem + ".rkt"), r.model, experiment_metadata(cfg_, stem));
    write_text(out_ / (stem + "_report.json"), r.report.to_json() + '\n');
    write_text(out_ / (stem + "_rounds.csv"), r.report.rounds_csv());
    std::cout << r.report.mode << " rectification: " << r.report.accepted_rounds() << " accepted round(s), termination "
              << to_string(r.report.termination) << ", accuracy " << r.report.initial_accuracy << " -> "
              << r.report.final_accuracy << '\n';
  }

  void fine_tune() {
    const Model model = require_model(out_ / "model.rkt", "train");
    TrainConfig tc = cfg_.train;
    tc.seed = sub_seed(cfg_.seed, "fine-tune");
    const Model tuned = fine_tune_last(model, data().pairs, tc);
    save_checkpoint(out_ / "finetuned.rkt", tuned, experiment_metadata(cfg_, "fine-tuned"));
    std::cout << "fine-tuned layer " << last_conv_layer(model) << " on " << data().pairs.size() << " pair(s)\n";
  }

  void oracle() {
    const Model model = require_model(out_ / "model.rkt", "train");
    const auto& d = data();
    if (!d.triggered) throw std::runtime_error("oracle needs corruption.kind = trojan");
    const LayerStats stats = editable_layer_stats(model, d.reference, cfg_.edit);
    const OracleRanking r = oracle_rank(model, d.pairs, stats, *d.triggered, cfg_.target, cfg_.edit);
    std::ostringstream out;
    out.precision(12);
    out << "rank,layer,reduction,failed\n";
    for (std::size_t i = 0; i < r.entries.size(); ++i) {
      const auto& e = r.entries[i];
      out << i + 1 << ',' << e.layer << ',' << e.reduction << ',' << (e.failed ? 1 : 0) << '\n';
      if (e.failed) std::cerr << "warning: oracle edit of layer " << e.layer << " failed: " << e.message << '\n';
    }
    write_text(out_ / "oracle.csv", out.str());
    std::cout << "oracle top layer " << r.entries.front().layer << '\n';
  }

  void report() {
    const Model model = require_model(out_ / "model.rkt", "train");
    std::ostringstream out;
    out << MetricsReport::csv_header() << '\n';
    auto add = [&](const std::string& label, const Model& m) {
      const MetricsReport r = evaluate_experiment(m, data(), cfg_, ig_steps(64));
      out << r.csv_row(label) << '\n';
      std::cout << label << ":";
      if (r.overall_accuracy) std::cout << " OA " << *r.overall_accuracy;
      if (r.attack_success_rate) std::cout << " ASR " << *r.attack_success_rate;
      if (r.spurious_gap()) std::cout << " spurious-gap " << *r.spurious_gap();
      if (r.leakage_ratio) std::cout << " leakage " << *r.leakage_ratio;
      std::cout << '\n';
    };
    add("model", model);
    for (const char* stem : {"rectified", "rectified_static", "finetuned"})
      if (fs::exists(out_ / (std::string(stem) + ".rkt"))) add(stem, load_checkpoint(out_ / (std::string(stem) + ".rkt")).model);
    write_text(out_ / "report.csv", out.str());
  }

  ExperimentConfig cfg_;
  Flags flags_;
  fs::path out_;
  std::optional<ExperimentData> data_;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rank-one model rectification toolkit"};
  app.require_subcommand(1, 1);
  Flags flags;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "write the synthetic train/test sets under <out>/data"},
      {"train", "train the model into <out>/model.rkt"},
      {"trojan-eval", "accuracy, attack success and false confidence of <out>/model.rkt"},
      {"localize", "layer scores, input heatmap and recall against oracle.csv"},
      {"rectify", "dynamic (or --mode static) rectification loop"},
      {"rectify-static", "rectification loop fixed to the last editable layer"},
      {"fine-tune", "baseline: fine-tune the last conv layer on the cleansed pairs"},
      {"oracle", "rank editable layers by single-edit gain"},
      {"report", "metrics of every checkpoint in <out>"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", flags.config, "config file (section.key = value)");
    sub->add_option("--seed", flags.seed, "override run.seed");
    sub->add_option("--out", flags.out, "override run.out");
    sub->add_option("--mode", flags.mode, "rectification mode")->check(CLI::IsMember({"dynamic", "static"}));
    sub->add_option("--pairs", flags.pairs, "override rectify.pairs");
    sub->add_option("--ig-steps", flags.ig_steps, "IG steps for scores and heatmaps");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    ExperimentConfig cfg = flags.config.empty() ? ExperimentConfig{} : load_config(flags.config);
    if (flags.seed) cfg.seed = *flags.seed;
    if (flags.out) cfg.out = *flags.out;
    if (flags.pairs) cfg.pairs = *flags.pairs;
    cfg.validate();
    Runner(std::move(cfg), flags).run(cmd);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& c : msg)
      if (c == '\n') c = ' ';
    std::cerr << "error: " << cmd << ": " << msg << '\n';
    return 1;
  }
  return 0;
}
