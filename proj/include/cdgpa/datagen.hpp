#pragma once

// Synthetic two-domain data with controllable marginal and conditional shift,
// and the plain-text feature file format used to exchange batches.
//
// Feature file layout (UTF-8, LF line endings):
//   dim=<d>,domain=<s|t>,labeled=<0|1>
//   x_1,...,x_d[,label]

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cdgpa/tensor.hpp"

namespace cdgpa {

enum class Domain { kSource, kTarget };

struct DomainBatch {
  Tensor x;                                         // n × d_in
  std::optional<std::vector<std::size_t>> labels;  // present only for labeled data
  Domain domain = Domain::kSource;

  std::size_t size() const { return x.rows(); }
  std::size_t dim() const { return x.cols(); }
  bool labeled() const { return labels.has_value(); }
};

/// Ground-truth target labels. Only evaluation code accepts this type.
struct TargetLabels {
  std::vector<std::size_t> labels;
};

struct SyntheticSpec {
  std::size_t num_classes = 2;
  std::size_t input_dim = 2;
  std::size_t n_source = 200;
  std::size_t n_target = 200;
  std::vector<double> translation;  // empty means zero
  double rotation = 0.0;            // radians, in the first two coordinates
  double scale = 1.0;
  double conditional_shift = 0.0;   // per-class center perturbation magnitude
  double separation = 3.0;
  double noise = 1.0;
  std::uint64_t seed = 0;

  /// Throws ParameterError when n < K, σ ≤ 0, separation ≤ 0, d_in < 2 or the
  /// translation has the wrong length.
  void validate() const;
};

struct SyntheticDomains {
  DomainBatch source;  // labeled
  DomainBatch target;  // unlabeled
  TargetLabels hidden_target_labels;
};

/// Class centers evenly spaced on a circle of radius `separation`. Target
/// samples are source draws mapped by scale·R(rotation)·x + translation and
/// then shifted by a class-specific offset of norm `conditional_shift`; the
/// offsets sum to zero over classes, so balanced pooled means are unaffected.
SyntheticDomains gen_gaussian_domains(const SyntheticSpec& spec);

/// Two interleaved half circles (K must be 2). The marginal transform acts
/// about the layout center, so a half-turn maps each moon onto the other.
SyntheticDomains gen_two_moons_shift(const SyntheticSpec& spec);

/// Class-specific target offsets used by the generators, K × d_in.
Tensor conditional_offsets(const SyntheticSpec& spec);

/// Target batch with the hidden labels attached, for evaluation files.
DomainBatch labeled_target(const DomainBatch& target, const TargetLabels& labels);

std::string format_feature_csv(const DomainBatch& batch);
/// Parses the feature format. Labels, when present, must lie in
/// [0, num_classes) if num_classes is given.
DomainBatch parse_feature_csv(const std::string& text, std::optional<std::size_t> num_classes = std::nullopt);

void save_feature_file(const std::filesystem::path& path, const DomainBatch& batch);
DomainBatch load_feature_file(const std::filesystem::path& path, std::optional<std::size_t> num_classes = std::nullopt);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

}  // namespace cdgpa
