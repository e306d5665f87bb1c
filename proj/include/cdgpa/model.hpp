#pragma once

// Frozen stand-in encoders plus the learnable prompt.
//
// Text side:  T_k = normalize(W_txt · (mean(context) + e_k))
// Image side: I   = normalize(MLP(x) + visual_prompt)
// Class probabilities are a temperature-scaled softmax over cosines ⟨T_k, I⟩.

#include <cstddef>
#include <cstdint>

#include "cdgpa/tensor.hpp"

namespace cdgpa {

struct ModelConfig {
  std::size_t input_dim = 2;
  std::size_t embed_dim = 16;
  std::size_t feature_dim = 16;
  std::size_t num_classes = 2;
  std::size_t context_length = 16;
  std::size_t hidden_dim = 32;
  double temperature = 0.01;
  std::uint64_t seed = 0;

  /// Throws ParameterError on zero dimensions, K < 2 or a non-positive temperature.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Never touched by an optimizer.
struct FrozenEncoders {
  Tensor text_proj;         // d_e × d
  Tensor image_w1;          // d_in × h
  Tensor image_b1;          // 1 × h
  Tensor image_w2;          // h × d
  Tensor image_b2;          // 1 × d
  Tensor class_embeddings;  // K × d_e
  double temperature = 0.01;

  std::size_t input_dim() const { return image_w1.rows(); }
  std::size_t embed_dim() const { return text_proj.rows(); }
  std::size_t feature_dim() const { return text_proj.cols(); }
  std::size_t num_classes() const { return class_embeddings.rows(); }
};

/// The trainable prompt θ_p.
struct PromptParams {
  Tensor context;        // L × d_e
  Tensor visual_prompt;  // 1 × d
};

/// Deterministic in config.seed; weights ~ U(-1/√fan_in, 1/√fan_in).
FrozenEncoders init_frozen(const ModelConfig& config);

/// Context ~ N(0, 0.02²), visual prompt zero.
PromptParams init_prompt(const ModelConfig& config, std::uint64_t seed);

/// Text feature of one class, 1 × d, unit norm.
Tensor encode_text(const FrozenEncoders& enc, const PromptParams& prompt, std::size_t k);
/// All K text features stacked, K × d.
Tensor encode_text_all(const FrozenEncoders& enc, const PromptParams& prompt);
/// Frozen image features before the prompt offset, n × d.
Tensor frozen_image_features(const FrozenEncoders& enc, const Tensor& x);
/// Prompted unit-norm image features, n × d.
Tensor encode_image(const FrozenEncoders& enc, const PromptParams& prompt, const Tensor& x);

/// ⟨T_k, I_i⟩ / τ, n × K.
Tensor clip_logits(const Tensor& image_feats, const Tensor& text_feats, double temperature);
/// Softmax of clip_logits; rows sum to one.
Tensor class_probs(const Tensor& image_feats, const Tensor& text_feats, double temperature);

/// Row-wise argmax, ties to the lowest index.
std::vector<std::size_t> argmax_rows(const Tensor& scores);

}  // namespace cdgpa
