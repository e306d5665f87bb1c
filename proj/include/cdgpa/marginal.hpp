#pragma once

// Marginal alignment branch: a two-layer domain discriminator, its binary
// cross-entropy loss, and the gradient-reversed adversarial loss that pushes
// the prompt toward features the discriminator cannot tell apart.
//
// Label convention: source = 1, target = 0.

#include <cstddef>
#include <cstdint>

#include "cdgpa/tensor.hpp"

namespace cdgpa {

struct DomainDiscriminator {
  Tensor w1;  // d × h
  Tensor b1;  // 1 × h
  Tensor w2;  // h × 1
  Tensor b2;  // 1 × 1

  /// U(-1/√fan_in, 1/√fan_in) weights, zero biases.
  static DomainDiscriminator init(std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed);
  static DomainDiscriminator zeros(std::size_t input_dim, std::size_t hidden_dim);

  std::size_t input_dim() const { return w1.rows(); }
  std::size_t hidden_dim() const { return w1.cols(); }
};

/// Source logit per row, n × 1.
Tensor discriminator_logits(const DomainDiscriminator& disc, const Tensor& feats);
/// Probability of source origin per row, n × 1, in (0, 1).
Tensor discriminate(const DomainDiscriminator& disc, const Tensor& feats);

/// L_d = −mean log P(source | I_s) − mean log P(target | I_t).
Tensor domain_loss(const DomainDiscriminator& disc, const Tensor& source_feats, const Tensor& target_feats);

/// domain_loss evaluated on grl(I_s), grl(I_t). Same forward value; the
/// gradient toward whatever produced the features is reversed while the
/// discriminator's own gradient is unchanged.
Tensor mal_loss(const DomainDiscriminator& disc, const Tensor& source_feats, const Tensor& target_feats,
                double grl_coefficient = 1.0);

/// Balanced accuracy (mean of per-domain accuracies) of thresholding the
/// source probability at 0.5.
double discriminator_accuracy(const DomainDiscriminator& disc, const Tensor& source_feats, const Tensor& target_feats);

}  // namespace cdgpa
