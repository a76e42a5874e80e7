#include "rkt/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <numeric>
#include <random>
#include <sstream>

namespace rkt {

namespace {

constexpr std::size_t kShapeCount = std::size(kShapeNames);
constexpr std::size_t kMargin = 1;

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Coverage of shape `cls` at offset (dy, dx) from its center, radius r.
bool covers(std::size_t cls, double dy, double dx, double r) {
  const double ay = std::abs(dy), ax = std::abs(dx), rr = std::hypot(dy, dx);
  const bool in_square = ay < r && ax < r;
  switch (cls) {
    case 0: return ay < 0.3 * r && ax < r;
    case 1: return (ay < 0.22 * r && ax < r) || (ax < 0.22 * r && ay < r);
    case 2: return rr < 0.85 * r;
    case 3: return rr < r && rr > 0.6 * r;
    case 4: return in_square && (static_cast<int>(std::floor((dy + r) / (r / 2))) +
                                 static_cast<int>(std::floor((dx + r) / (r / 2)))) % 2 == 0;
    case 5: return in_square && static_cast<int>(std::floor((dx + r) / (r / 3))) % 2 == 0;
    case 6: return in_square && std::max(ay, ax) > 0.65 * r;
    case 7: return in_square && std::abs(dx - dy) < 0.35 * r;
    case 8: return dy > -r && dy < r && ax < 0.5 * (dy + r);
    case 9: return std::hypot(ay - 0.55 * r, ax - 0.55 * r) < 0.3 * r;
  }
  return false;
}

void draw(Tensor& img, std::size_t cls, std::mt19937_64& rng, double intensity_scale = 1.0) {
  const std::size_t h = img.dim(1), w = img.dim(2);
  std::uniform_real_distribution<double> jitter(-2.0, 2.0), scale(0.8, 1.1), level(0.6, 1.0);
  const double cy = (h - 1) / 2.0 + jitter(rng), cx = (w - 1) / 2.0 + jitter(rng);
  const double r = 0.3 * static_cast<double>(std::min(h, w)) * scale(rng);
  const double a = level(rng) * intensity_scale;
  // 2x2 supersampling gives soft edges.
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      int hits = 0;
      for (double sy : {-0.25, 0.25})
        for (double sx : {-0.25, 0.25}) hits += covers(cls, y + sy - cy, x + sx - cx, r);
      double& v = img[y * w + x];
      v = std::max(v, a * hits / 4.0);
    }
}

void add_noise(Tensor& img, std::mt19937_64& rng, double sigma) {
  std::normal_distribution<double> g(0.0, sigma);
  for (double& v : img.data()) v = std::clamp(v + (sigma > 0 ? g(rng) : 0.0), 0.0, 1.0);
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

template <typename E, std::size_t N>
E parse_enum(const std::string& name, const char* const (&names)[N], const char* what) {
  for (std::size_t i = 0; i < N; ++i)
    if (name == names[i]) return static_cast<E>(i);
  throw std::invalid_argument(std::string("unknown ") + what + " '" + name + "'");
}

constexpr const char* kKindNames[] = {"trojan", "spurious", "leakage"};
constexpr const char* kLocationNames[] = {"TL", "TR", "C", "BL", "BR"};
constexpr const char* kPatternNames[] = {"glyph", "stripe"};

}  // namespace

std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }
std::string to_string(CorruptionKind kind) { return kKindNames[static_cast<int>(kind)]; }
std::string to_string(Location loc) { return kLocationNames[static_cast<int>(loc)]; }
std::string to_string(PatternKind kind) { return kPatternNames[static_cast<int>(kind)]; }
CorruptionKind corruption_kind_from_string(const std::string& s) {
  return parse_enum<CorruptionKind>(s, kKindNames, "corruption kind");
}
Location location_from_string(const std::string& s) { return parse_enum<Location>(s, kLocationNames, "location"); }
PatternKind pattern_kind_from_string(const std::string& s) {
  return parse_enum<PatternKind>(s, kPatternNames, "pattern");
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(classes, 0);
  for (auto y : labels) ++counts.at(y);
  return counts;
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  const Shape s = sample_shape();
  const std::size_t n = shape_size(s);
  Shape bs{indices.size()};
  bs.insert(bs.end(), s.begin(), s.end());
  Tensor out(bs);
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::copy(images.at(indices[i]).data().begin(), images[indices[i]].data().end(), out.ptr() + i * n);
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out{{}, {}, split, seed, classes};
  for (auto i : indices) {
    out.images.push_back(images.at(i));
    out.labels.push_back(labels.at(i));
  }
  return out;
}

Dataset generate(const DataSpec& spec, std::uint64_t seed, Split split) {
  if (spec.classes < 4 || spec.classes > kShapeCount)
    throw std::invalid_argument("generate: classes must be in 4.." + std::to_string(kShapeCount) + ", got " +
                                std::to_string(spec.classes));
  if (spec.height < 16 || spec.width < 16)
    throw std::invalid_argument("generate: size must be at least 16x16, got " + std::to_string(spec.height) + "x" +
                                std::to_string(spec.width));
  if (spec.per_class == 0) throw std::invalid_argument("generate: per_class must be positive");
  if (spec.noise < 0.0) throw std::invalid_argument("generate: noise must be non-negative");
  if (!(spec.distractor >= 0.0 && spec.distractor <= 1.0))
    throw std::invalid_argument("generate: distractor probability must be in [0, 1]");

  std::mt19937_64 rng(mix(seed, split == Split::train ? 1 : 2));
  Dataset ds{{}, {}, split, seed, spec.classes};
  const std::size_t n = spec.classes * spec.per_class;
  ds.images.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i % spec.classes;
    Tensor img({1, spec.height, spec.width});
    draw(img, cls, rng);
    if (spec.distractor > 0.0 && std::bernoulli_distribution(spec.distractor)(rng)) {
      const std::size_t other = (cls + 1 + rng() % (spec.classes - 1)) % spec.classes;
      draw(img, other, rng, std::uniform_real_distribution<double>(0.4, 0.9)(rng));
    }
    add_noise(img, rng, spec.noise);
    ds.images.push_back(std::move(img));
    ds.labels.push_back(cls);
  }
  return ds;
}

Tensor builtin_pattern(PatternKind kind) {
  if (kind == PatternKind::glyph) {
    return Tensor({5, 5}, {1, 1, 1, 1, 1,  //
                           1, 0, 0, 0, 1,  //
                           1, 0, 1, 0, 1,  //
                           1, 0, 0, 0, 1,  //
                           1, 1, 1, 1, 1});
  }
  Tensor t({7, 7});
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < 7; ++c) t[r * 7 + c] = (r + c) % 3 == 0 ? 1.0 : 0.0;
  return t;
}

void CorruptionSpec::validate() const {
  if (!(visibility >= 0.0 && visibility <= 1.0))
    throw std::invalid_argument("visibility phi must be in [0, 1], got " + std::to_string(visibility));
  if (!(rate >= 0.0 && rate <= 1.0)) throw std::invalid_argument("rate rho must be in [0, 1], got " + std::to_string(rate));
  if (kind == CorruptionKind::leakage) return;
  if (pattern.rank() != 2) throw ShapeError("trigger pattern must be [h, w], got " + shape_str(pattern.shape()));
  if (!mask.empty()) {
    if (mask.shape() != pattern.shape())
      throw ShapeError("mask " + shape_str(mask.shape()) + " does not match pattern " + shape_str(pattern.shape()));
    for (double v : mask.data())
      if (v != 0.0 && v != 1.0) throw std::invalid_argument("mask S must be 0/1 valued");
  }
}

std::string CorruptionSpec::digest() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  feed(static_cast<std::uint64_t>(kind));
  for (auto d : pattern.shape()) feed(d);
  for (double v : pattern.data()) feed(std::bit_cast<std::uint64_t>(v));
  for (double v : mask.data()) feed(std::bit_cast<std::uint64_t>(v));
  feed(std::bit_cast<std::uint64_t>(visibility));
  feed(static_cast<std::uint64_t>(location));
  feed(std::bit_cast<std::uint64_t>(rate));
  feed(target ? *target + 1 : 0);
  feed(affected_class);
  return hex64(h);
}

Region place(const CorruptionSpec& spec, std::size_t h, std::size_t w) {
  const std::size_t ph = spec.pattern.dim(0), pw = spec.pattern.dim(1);
  if (ph + 2 * kMargin > h || pw + 2 * kMargin > w)
    throw ShapeError("pattern " + shape_str(spec.pattern.shape()) + " does not fit a " + std::to_string(h) + "x" +
                     std::to_string(w) + " image");
  Region r{0, 0, ph, pw};
  switch (spec.location) {
    case Location::TL: r.row = kMargin, r.col = kMargin; break;
    case Location::TR: r.row = kMargin, r.col = w - pw - kMargin; break;
    case Location::C: r.row = (h - ph) / 2, r.col = (w - pw) / 2; break;
    case Location::BL: r.row = h - ph - kMargin, r.col = kMargin; break;
    case Location::BR: r.row = h - ph - kMargin, r.col = w - pw - kMargin; break;
  }
  return r;
}

Tensor apply_trigger(const Tensor& x, const CorruptionSpec& spec) { return apply_trigger(x, spec, spec.visibility); }

Tensor apply_trigger(const Tensor& x, const CorruptionSpec& spec, double phi) {
  if (!(phi >= 0.0 && phi <= 1.0)) throw std::invalid_argument("visibility phi must be in [0, 1], got " + std::to_string(phi));
  if (x.rank() != 3 || x.dim(0) != 1) throw ShapeError("apply_trigger: expected [1, H, W], got " + shape_str(x.shape()));
  const std::size_t w = x.dim(2);
  const Region r = place(spec, x.dim(1), w);
  Tensor out = x;
  for (std::size_t i = 0; i < r.height; ++i)
    for (std::size_t j = 0; j < r.width; ++j) {
      if (!spec.mask.empty() && spec.mask[i * r.width + j] == 0.0) continue;
      double& v = out[(r.row + i) * w + r.col + j];
      v = phi * spec.pattern[i * r.width + j] + (1.0 - phi) * v;
    }
  return out;
}

bool SamplePair::inside(std::size_t r, std::size_t c) const { return mask[r * x.dim(2) + c] != 0.0; }

SamplePair make_pair(const Tensor& x, std::size_t y, const CorruptionSpec& spec) {
  SamplePair p;
  p.x = x;
  p.x_tilde = apply_trigger(x, spec);
  p.y = y;
  if (spec.kind == CorruptionKind::trojan) p.target = spec.target;
  p.region = place(spec, x.dim(1), x.dim(2));
  p.mask = Tensor({x.dim(1), x.dim(2)});
  for (std::size_t i = 0; i < p.region.height; ++i)
    for (std::size_t j = 0; j < p.region.width; ++j)
      if (spec.mask.empty() || spec.mask[i * p.region.width + j] != 0.0)
        p.mask[(p.region.row + i) * x.dim(2) + p.region.col + j] = 1.0;
  return p;
}

Tensor null_block(std::size_t height, std::size_t width, std::uint64_t seed, double noise) {
  Tensor b({1, height, width}, 0.1);
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c)
      if (r == 0 || c == 0 || r + 1 == height || c + 1 == width) b[r * width + c] = 0.3;
  std::mt19937_64 rng(seed);
  add_noise(b, rng, noise);
  return b;
}

SamplePair leakage_pair(const Tensor& x, std::size_t y, bool top, std::uint64_t seed, double noise) {
  const std::size_t h = x.dim(1), w = x.dim(2);
  const Tensor block = null_block(h, w, seed, noise);
  SamplePair p;
  p.y = y;
  p.x = Tensor({1, 2 * h, w});
  const std::size_t shape_off = top ? h * w : 0, block_off = top ? 0 : h * w;
  std::copy(x.data().begin(), x.data().end(), p.x.ptr() + shape_off);
  p.x_tilde = p.x;
  std::copy(block.data().begin(), block.data().end(), p.x_tilde.ptr() + block_off);
  p.region = Region{top ? 0 : h, 0, h, w};
  p.mask = Tensor({2 * h, w});
  std::fill(p.mask.ptr() + block_off, p.mask.ptr() + block_off + h * w, 1.0);
  return p;
}

Corrupted corrupt_dataset(const Dataset& ds, const CorruptionSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(mix(seed, 7));
  Corrupted out{ds, {}, {}};

  if (spec.kind == CorruptionKind::leakage) {
    std::bernoulli_distribution coin(0.5);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      SamplePair p = leakage_pair(ds.images[i], ds.labels[i], coin(rng), rng());
      out.data.images[i] = p.x_tilde;
      out.pairs.push_back(std::move(p));
      out.indices.push_back(i);
    }
    return out;
  }

  std::vector<std::size_t> pool;
  std::size_t count = 0;
  if (spec.kind == CorruptionKind::trojan) {
    if (!spec.target) throw std::invalid_argument("trojan corruption needs a target label");
    if (*spec.target >= ds.classes) throw std::invalid_argument("trojan target label out of range");
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.labels[i] != *spec.target) pool.push_back(i);
    count = static_cast<std::size_t>(std::llround(spec.rate * static_cast<double>(ds.size())));
  } else {
    if (spec.affected_class >= ds.classes) throw std::invalid_argument("spurious class out of range");
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.labels[i] == spec.affected_class) pool.push_back(i);
    count = static_cast<std::size_t>(std::llround(spec.rate * static_cast<double>(pool.size())));
  }
  if (spec.rate > 0.0 && count == 0)
    throw std::invalid_argument("rate " + std::to_string(spec.rate) + " poisons no sample of a set of " +
                                std::to_string(ds.size()));
  count = std::min(count, pool.size());

  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  for (auto i : pool) {
    SamplePair p = make_pair(ds.images[i], ds.labels[i], spec);
    out.data.images[i] = p.x_tilde;
    if (spec.kind == CorruptionKind::trojan) out.data.labels[i] = *spec.target;
    out.pairs.push_back(std::move(p));
    out.indices.push_back(i);
  }
  return out;
}

Dataset triggered_set(const Dataset& ds, const CorruptionSpec& spec, std::optional<double> visibility) {
  if (!spec.target) throw std::invalid_argument("triggered_set needs a target label");
  Dataset out{{}, {}, ds.split, ds.seed, ds.classes};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] == *spec.target) continue;
    out.images.push_back(apply_trigger(ds.images[i], spec, visibility.value_or(spec.visibility)));
    out.labels.push_back(ds.labels[i]);
  }
  return out;
}

std::pair<Dataset, Dataset> spurious_sets(const Dataset& ds, const CorruptionSpec& spec) {
  Dataset clean{{}, {}, ds.split, ds.seed, ds.classes}, spurious = clean;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] != spec.affected_class) continue;
    clean.images.push_back(ds.images[i]);
    clean.labels.push_back(ds.labels[i]);
    spurious.images.push_back(apply_trigger(ds.images[i], spec));
    spurious.labels.push_back(ds.labels[i]);
  }
  return {std::move(clean), std::move(spurious)};
}

void export_dataset(const std::filesystem::path& dir, const Dataset& ds, std::span<const std::size_t> corrupted) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta{{"split", to_string(ds.split)},
                      {"seed", ds.seed},
                      {"classes", ds.classes},
                      {"count", ds.size()},
                      {"sample_shape", ds.sample_shape()}};
  std::ofstream(dir / "dataset.json") << meta.dump(2) << "\n";

  std::vector<long> pair_of(ds.size(), -1);
  for (std::size_t p = 0; p < corrupted.size(); ++p) pair_of.at(corrupted[p]) = static_cast<long>(p);

  std::ofstream manifest(dir / "manifest.csv");
  manifest << "file,label,corrupted,pair_id\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::ostringstream name;
    name << std::setw(6) << std::setfill('0') << i << ".f32";
    std::ofstream f(dir / name.str(), std::ios::binary);
    for (double v : ds.images[i].data()) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                             static_cast<char>((bits >> 16) & 0xff), static_cast<char>(bits >> 24)};
      f.write(bytes, 4);
    }
    manifest << name.str() << ',' << ds.labels[i] << ',' << (pair_of[i] >= 0 ? 1 : 0) << ',' << pair_of[i] << '\n';
  }
}

Dataset import_dataset(const std::filesystem::path& dir) {
  std::ifstream meta_in(dir / "dataset.json");
  if (!meta_in) throw std::runtime_error("dataset: missing " + (dir / "dataset.json").string());
  const auto meta = nlohmann::json::parse(meta_in);
  Dataset ds;
  ds.split = meta.at("split").get<std::string>() == "train" ? Split::train : Split::test;
  ds.seed = meta.at("seed").get<std::uint64_t>();
  ds.classes = meta.at("classes").get<std::size_t>();
  const Shape shape = meta.at("sample_shape").get<Shape>();
  const std::size_t n = shape_size(shape);

  std::ifstream manifest(dir / "manifest.csv");
  if (!manifest) throw std::runtime_error("dataset: missing " + (dir / "manifest.csv").string());
  std::string line;
  std::getline(manifest, line);
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string file, label;
    std::getline(row, file, ',');
    std::getline(row, label, ',');
    std::ifstream f(dir / file, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() != 4 * n)
      throw std::runtime_error("dataset: " + file + ": expected " + std::to_string(4 * n) + " bytes, got " +
                               std::to_string(bytes.size()));
    Tensor img(shape);
    for (std::size_t k = 0; k < n; ++k) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * k + b])) << (8 * b);
      img[k] = std::bit_cast<float>(bits);
    }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(std::stoul(label));
  }
  if (ds.size() != meta.at("count").get<std::size_t>())
    throw std::runtime_error("dataset: manifest lists " + std::to_string(ds.size()) + " samples, dataset.json says " +
                             std::to_string(meta.at("count").get<std::size_t>()));
  return ds;
}

}  // namespace rkt
