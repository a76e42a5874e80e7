#include "rkt/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace rkt {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Shortest text that parses back to the same double.
std::string fmt_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double parse_double(const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw std::invalid_argument("expected a number, got '" + v + "'");
  return out;
}

std::uint64_t parse_uint(const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
    throw std::invalid_argument("expected a non-negative integer, got '" + v + "'");
  return out;
}

std::vector<std::size_t> parse_list(const std::string& v) {
  std::vector<std::size_t> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_uint(trim(item)));
  return out;
}

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Key {
  std::string name;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define RKT_DOUBLE(NAME, FIELD) \
  Key{NAME, [](ExperimentConfig& c, const std::string& v) { c.FIELD = parse_double(v); }, \
      [](const ExperimentConfig& c) { return fmt_double(c.FIELD); }}
#define RKT_UINT(NAME, FIELD) \
  Key{NAME, [](ExperimentConfig& c, const std::string& v) { c.FIELD = static_cast<decltype(c.FIELD)>(parse_uint(v)); }, \
      [](const ExperimentConfig& c) { return std::to_string(c.FIELD); }}
#define RKT_ENUM(NAME, FIELD, FROM) \
  Key{NAME, [](ExperimentConfig& c, const std::string& v) { c.FIELD = FROM(v); }, \
      [](const ExperimentConfig& c) { return to_string(c.FIELD); }}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      RKT_UINT("run.seed", seed),
      Key{"run.out", [](ExperimentConfig& c, const std::string& v) { c.out = v; },
          [](const ExperimentConfig& c) { return c.out; }},
      RKT_UINT("data.classes", data.classes),
      RKT_UINT("data.per_class", data.per_class),
      RKT_UINT("data.height", data.height),
      RKT_UINT("data.width", data.width),
      RKT_DOUBLE("data.noise", data.noise),
      RKT_DOUBLE("data.distractor", data.distractor),
      RKT_ENUM("corruption.kind", corruption_kind, corruption_kind_from_string),
      RKT_ENUM("corruption.pattern", pattern, pattern_kind_from_string),
      RKT_DOUBLE("corruption.visibility", visibility),
      RKT_ENUM("corruption.location", location, location_from_string),
      RKT_DOUBLE("corruption.rate", rate),
      RKT_UINT("corruption.target", target),
      RKT_UINT("corruption.affected_class", affected_class),
      RKT_DOUBLE("train.lr", train.lr),
      RKT_DOUBLE("train.momentum", train.momentum),
      RKT_UINT("train.epochs", train.epochs),
      RKT_UINT("train.batch_size", train.batch_size),
      Key{"train.milestones", [](ExperimentConfig& c, const std::string& v) { c.train.milestones = parse_list(v); },
          [](const ExperimentConfig& c) { return fmt_list(c.train.milestones); }},
      RKT_DOUBLE("train.decay", train.decay),
      RKT_DOUBLE("edit.lr", edit.lr),
      RKT_UINT("edit.projection_every", edit.projection_every),
      RKT_UINT("edit.steps", edit.steps),
      RKT_DOUBLE("edit.ridge_scale", edit.ridge_scale),
      RKT_DOUBLE("edit.ridge", edit.ridge),
      RKT_ENUM("edit.aggregation", edit.aggregation, aggregation_from_string),
      RKT_ENUM("edit.direction", edit.direction, direction_mode_from_string),
      RKT_DOUBLE("edit.quantile", edit.quantile),
      RKT_ENUM("score.mode", score.mode, remap_mode_from_string),
      RKT_UINT("score.ig_steps", score.n_steps),
      RKT_ENUM("score.ig_path", score.path, ig_path_from_string),
      RKT_DOUBLE("rectify.epsilon", budget.epsilon),
      RKT_DOUBLE("rectify.delta", budget.delta),
      RKT_UINT("rectify.max_rounds", budget.max_rounds),
      RKT_UINT("rectify.pairs", pairs),
      RKT_UINT("rectify.reference_samples", reference_samples),
  };
  return table;
}

#undef RKT_DOUBLE
#undef RKT_UINT
#undef RKT_ENUM

}  // namespace

CorruptionSpec ExperimentConfig::corruption() const {
  CorruptionSpec s;
  s.kind = corruption_kind;
  s.pattern = builtin_pattern(pattern);
  s.visibility = visibility;
  s.location = location;
  s.rate = rate;
  if (corruption_kind == CorruptionKind::trojan) s.target = target;
  s.affected_class = affected_class;
  return s;
}

void ExperimentConfig::validate() const {
  auto check = [](const char* key, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config: ") + key + ": " + e.what());
    }
  };
  check("data", [&] {
    if (data.classes < 4 || data.classes > 10) throw std::invalid_argument("classes must be in 4..10");
    if (data.height < 16 || data.width < 16) throw std::invalid_argument("images must be at least 16x16");
    if (data.per_class == 0) throw std::invalid_argument("per_class must be positive");
    if (!(data.distractor >= 0.0 && data.distractor <= 1.0)) throw std::invalid_argument("distractor must be in [0,1]");
  });
  check("corruption", [&] {
    corruption().validate();
    if (corruption_kind == CorruptionKind::trojan && target >= data.classes)
      throw std::invalid_argument("target outside the class range");
    if (affected_class >= data.classes) throw std::invalid_argument("affected_class outside the class range");
  });
  check("train", [&] { train.validate(); });
  check("edit", [&] { edit.validate(); });
  check("score", [&] {
    if (score.n_steps < 1) throw std::invalid_argument("ig_steps must be >= 1");
  });
  check("rectify", [&] {
    budget.validate();
    if (pairs < 1) throw std::invalid_argument("pairs must be >= 1");
    if (reference_samples < 1) throw std::invalid_argument("reference_samples must be >= 1");
  });
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::map<std::string, const Key*> index;
  for (const auto& k : keys()) index[k.name] = &k;
  std::map<std::string, std::size_t> seen;
  std::stringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'section.key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = index.find(key);
    if (it == index.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (auto prev = seen.find(key); prev != seen.end())
      throw ConfigError(where + "duplicate key '" + key + "' (first set on line " + std::to_string(prev->second) + ")");
    seen[key] = line_no;
    try {
      it->second->set(cfg, value);
    } catch (const std::exception& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& k : keys()) {
    const std::string sec = k.name.substr(0, k.name.find('.'));
    if (sec != section) {
      if (!section.empty()) out += '\n';
      section = sec;
    }
    out += k.name + " = " + k.get(cfg) + '\n';
  }
  return out;
}

std::uint64_t sub_seed(std::uint64_t seed, const std::string& name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::uint64_t z = seed ^ h;
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) { return serialize_config(a) == serialize_config(b); }

}  // namespace rkt
