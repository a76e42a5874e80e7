#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rkt/tensor.hpp"

namespace rkt {

enum class Split { train, test };
std::string to_string(Split split);

/// Single-channel images ([1, H, W], values in [0, 1]) with labels.
struct Dataset {
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  Split split = Split::train;
  std::uint64_t seed = 0;
  std::size_t classes = 0;

  std::size_t size() const { return images.size(); }
  Shape sample_shape() const { return images.empty() ? Shape{} : images.front().shape(); }
  std::vector<std::size_t> class_counts() const;
  /// Images at `indices` stacked into [n, 1, H, W].
  Tensor batch(std::span<const std::size_t> indices) const;
  /// Subset holding the samples at `indices`, in that order.
  Dataset subset(std::span<const std::size_t> indices) const;
};

/// Shape primitives, one per class, in class order.
inline constexpr const char* kShapeNames[] = {"bar",   "cross",    "disk",     "ring", "checker",
                                              "stripe", "frame", "diagonal", "triangle", "dots"};

struct DataSpec {
  std::size_t classes = 4;
  std::size_t per_class = 250;
  std::size_t height = 16;
  std::size_t width = 16;
  double noise = 0.05;
  /// Probability that an image also carries a dimmer shape of another class.
  double distractor = 0.0;
};

/// Deterministic in (spec, seed, split). Throws std::invalid_argument for
/// classes outside 4..10, sizes below 16x16 or per_class == 0.
Dataset generate(const DataSpec& spec, std::uint64_t seed, Split split = Split::train);

enum class CorruptionKind { trojan, spurious, leakage };
enum class Location { TL, TR, C, BL, BR };
enum class PatternKind { glyph, stripe };

std::string to_string(CorruptionKind kind);
std::string to_string(Location loc);
std::string to_string(PatternKind kind);
CorruptionKind corruption_kind_from_string(const std::string& name);
Location location_from_string(const std::string& name);
PatternKind pattern_kind_from_string(const std::string& name);

/// 5x5 corner glyph or 7x7 diagonal stripe patch, values in {0, 1}.
Tensor builtin_pattern(PatternKind kind);

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::trojan;
  Tensor pattern = builtin_pattern(PatternKind::glyph);  // tau, [h, w]
  Tensor mask;                                           // S over the pattern window; empty means all ones
  double visibility = 0.5;                               // phi
  Location location = Location::BR;
  double rate = 0.01;                                    // rho
  std::optional<std::size_t> target;                     // y~, trojan
  std::size_t affected_class = 0;                        // spurious

  void validate() const;
  /// Stable hex digest of every field, recorded in checkpoints.
  std::string digest() const;
};

/// Axis-aligned corruption window inside an image.
struct Region {
  std::size_t row = 0, col = 0, height = 0, width = 0;
};

struct SamplePair {
  Tensor x;                            // clean
  Tensor x_tilde;                      // corrupted
  std::size_t y = 0;                   // true label
  std::optional<std::size_t> target;   // y~ for trojans
  Region region;
  Tensor mask;                         // full-image 0/1 mask of S

  /// Positions where x and x_tilde may differ.
  bool inside(std::size_t r, std::size_t c) const;
};

/// Top-left corner of the pattern window for an image of size h x w.
Region place(const CorruptionSpec& spec, std::size_t h, std::size_t w);

/// Inside S: phi * tau + (1 - phi) * x; outside S: x.
Tensor apply_trigger(const Tensor& x, const CorruptionSpec& spec);

/// Same blend with an explicit visibility (used for visibility sweeps).
Tensor apply_trigger(const Tensor& x, const CorruptionSpec& spec, double visibility);

SamplePair make_pair(const Tensor& x, std::size_t y, const CorruptionSpec& spec);

struct Corrupted {
  Dataset data;
  std::vector<SamplePair> pairs;
  std::vector<std::size_t> indices;  // dataset index of each pair's corrupted sample
};

/// trojan: round(rho * |ds|) samples with y != y~ get the trigger and label y~.
/// spurious: round(rho * |class y|) samples of class y get the pattern, labels kept.
/// leakage: every sample gets the null block on top or bottom (height doubles).
Corrupted corrupt_dataset(const Dataset& ds, const CorruptionSpec& spec, std::uint64_t seed);

/// Null-block placement for leakage images; `top` selects the upper half.
Tensor null_block(std::size_t height, std::size_t width, std::uint64_t seed, double noise = 0.05);
SamplePair leakage_pair(const Tensor& x, std::size_t y, bool top, std::uint64_t seed, double noise = 0.05);

/// Every sample with y != y~ carrying the trigger at `visibility`.
Dataset triggered_set(const Dataset& ds, const CorruptionSpec& spec, std::optional<double> visibility = {});

/// Class-y samples as is (clean set) and with the pattern applied (spurious set).
std::pair<Dataset, Dataset> spurious_sets(const Dataset& ds, const CorruptionSpec& spec);

/// Writes <dir>/dataset.json, <dir>/manifest.csv (file,label,corrupted,pair_id)
/// and one raw little-endian float32 file per image.
void export_dataset(const std::filesystem::path& dir, const Dataset& ds,
                    std::span<const std::size_t> corrupted_indices = {});
Dataset import_dataset(const std::filesystem::path& dir);

}  // namespace rkt
