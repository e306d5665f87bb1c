#pragma once

#include <optional>

#include "cdgpa/conditional.hpp"
#include "cdgpa/marginal.hpp"
#include "cdgpa/model.hpp"

namespace cdgpa {

/// Everything a training run owns: frozen encoders, the prompt, the domain
/// discriminator, the class head, and the most recent feature bank.
struct AdaptationModel {
  ModelConfig config;
  FrozenEncoders frozen;
  PromptParams prompt;
  DomainDiscriminator discriminator;
  CMMHead head;
  std::optional<FeatureBank> bank;

  /// Fresh model with component sub-seeds derived from `seed`.
  static AdaptationModel create(const ModelConfig& config, std::size_t disc_hidden, std::uint64_t seed);

  Tensor text_features() const { return encode_text_all(frozen, prompt); }
  Tensor image_features(const Tensor& x) const { return encode_image(frozen, prompt, x); }
};

}  // namespace cdgpa
