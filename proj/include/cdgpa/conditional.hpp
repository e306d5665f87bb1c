#pragma once

// Conditional alignment branch: per-class feature banks, the class mapping
// attention (queries = image features, keys = source class centers, values =
// target class centers, plus a residual), a linear class head, and the loss
// that supervises it.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cdgpa/tensor.hpp"

namespace cdgpa {

struct FeatureBank {
  Tensor source_centers;  // K × d
  Tensor target_centers;  // K × d
  std::size_t top_c = 0;
  std::size_t epoch_built = 0;
  std::vector<std::size_t> source_counts;  // samples averaged into each center
  std::vector<std::size_t> target_counts;
  std::vector<bool> source_fallback;  // center copied from the other domain (or zero)
  std::vector<bool> target_fallback;

  std::size_t num_classes() const { return source_centers.rows(); }
  std::size_t fallback_count() const;
};

/// Features, labels (true or pseudo) and confidences of one domain.
struct LabeledFeatures {
  Tensor feats;
  std::span<const std::size_t> labels;
  std::span<const double> confidences;
};

/// For each class and domain, averages the `top_c` most confident features of
/// that class (all of them if fewer exist). Ties in confidence keep ascending
/// sample order. A class missing from the target copies its source center; a
/// class missing from the source copies its target center; missing from both
/// gives a zero row. Every copy is flagged. Bank entries are constants.
FeatureBank build_banks(const LabeledFeatures& source, const LabeledFeatures& target, std::size_t top_c,
                        std::size_t num_classes);

/// softmax(I·f_sᵀ / √d), n × K.
Tensor cmm_attention(const Tensor& feats, const FeatureBank& bank);
/// I′ = softmax(I·f_sᵀ / √d)·f_t + I.
Tensor cmm_enhance(const Tensor& feats, const FeatureBank& bank);

struct CMMHead {
  Tensor weight;  // d × K
  Tensor bias;    // 1 × K

  static CMMHead init(std::size_t feature_dim, std::size_t num_classes, std::uint64_t seed);
  static CMMHead zeros(std::size_t feature_dim, std::size_t num_classes);
};

/// Per-row affine map I′·W + b, n × K.
Tensor class_logits(const CMMHead& head, const Tensor& enhanced);

/// CE(source logits, y_s) + CE(target logits of samples with confidence ≥
/// threshold, their pseudo-labels). The target term is zero when nothing
/// passes the threshold.
Tensor cal_loss(const Tensor& source_logits, std::span<const std::size_t> source_labels, const Tensor& target_logits,
                std::span<const std::size_t> pseudo_labels, std::span<const double> confidences, double threshold);

}  // namespace cdgpa
