#include "cdgpa/model.hpp"

#include <cmath>
#include <string>

#include "cdgpa/errors.hpp"
#include "cdgpa/random.hpp"

namespace cdgpa {

void ModelConfig::validate() const {
  if (input_dim == 0 || embed_dim == 0 || feature_dim == 0 || context_length == 0 || hidden_dim == 0) {
    throw ParameterError("model dimensions must be at least 1");
  }
  if (num_classes < 2) throw ParameterError("model needs at least 2 classes");
  if (!(temperature > 0.0)) throw ParameterError("temperature must be positive");
}

namespace {

Tensor fan_in_uniform(Rng& rng, std::size_t fan_in, std::size_t rows, std::size_t cols) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return uniform_tensor(rng, rows, cols, -bound, bound);
}

void check_temperature(double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("temperature must be positive, got " + std::to_string(temperature));
}

}  // namespace

FrozenEncoders init_frozen(const ModelConfig& config) {
  config.validate();
  Rng rng(derive_seed(config.seed, "frozen-encoders"));
  FrozenEncoders enc;
  enc.text_proj = fan_in_uniform(rng, config.embed_dim, config.embed_dim, config.feature_dim);
  enc.image_w1 = fan_in_uniform(rng, config.input_dim, config.input_dim, config.hidden_dim);
  enc.image_b1 = fan_in_uniform(rng, config.input_dim, 1, config.hidden_dim);
  enc.image_w2 = fan_in_uniform(rng, config.hidden_dim, config.hidden_dim, config.feature_dim);
  enc.image_b2 = fan_in_uniform(rng, config.hidden_dim, 1, config.feature_dim);
  enc.class_embeddings = uniform_tensor(rng, config.num_classes, config.embed_dim, -1.0, 1.0);
  enc.temperature = config.temperature;
  return enc;
}

PromptParams init_prompt(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, "prompt"));
  return {normal_tensor(rng, config.context_length, config.embed_dim, 0.0, 0.02), Tensor(1, config.feature_dim)};
}

Tensor encode_text_all(const FrozenEncoders& enc, const PromptParams& prompt) {
  if (prompt.context.cols() != enc.embed_dim()) {
    throw DimensionError("context width " + std::to_string(prompt.context.cols()) + " does not match embedding width " +
                         std::to_string(enc.embed_dim()));
  }
  const Tensor tokens = add_row(enc.class_embeddings, mean_rows(prompt.context));
  return l2_normalize_rows(matmul(tokens, enc.text_proj));
}

Tensor encode_text(const FrozenEncoders& enc, const PromptParams& prompt, std::size_t k) {
  if (k >= enc.num_classes()) {
    throw IndexError("class " + std::to_string(k) + " outside [0, " + std::to_string(enc.num_classes()) + ")");
  }
  const std::size_t row[] = {k};
  const Tensor token = add(gather_rows(enc.class_embeddings, row), mean_rows(prompt.context));
  return l2_normalize_rows(matmul(token, enc.text_proj));
}

Tensor frozen_image_features(const FrozenEncoders& enc, const Tensor& x) {
  if (x.cols() != enc.input_dim()) {
    throw DimensionError("image input has " + std::to_string(x.cols()) + " columns, encoder expects " +
                         std::to_string(enc.input_dim()));
  }
  return linear(relu(linear(x, enc.image_w1, enc.image_b1)), enc.image_w2, enc.image_b2);
}

Tensor encode_image(const FrozenEncoders& enc, const PromptParams& prompt, const Tensor& x) {
  return l2_normalize_rows(add_row(frozen_image_features(enc, x), prompt.visual_prompt));
}

Tensor clip_logits(const Tensor& image_feats, const Tensor& text_feats, double temperature) {
  check_temperature(temperature);
  if (image_feats.cols() != text_feats.cols()) {
    throw DimensionError("image features " + image_feats.shape().str() + " and text features " +
                         text_feats.shape().str() + " differ in width");
  }
  return scale(matmul(image_feats, transpose(text_feats)), 1.0 / temperature);
}

Tensor class_probs(const Tensor& image_feats, const Tensor& text_feats, double temperature) {
  return softmax_rows(clip_logits(image_feats, text_feats, temperature));
}

std::vector<std::size_t> argmax_rows(const Tensor& scores) {
  std::vector<std::size_t> out(scores.rows(), 0);
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    for (std::size_t j = 1; j < scores.cols(); ++j) {
      if (scores(i, j) > scores(i, out[i])) out[i] = j;
    }
  }
  return out;
}

}  // namespace cdgpa
