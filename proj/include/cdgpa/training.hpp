#pragma once

// Pseudo-labeling, the three-term objective, the cosine learning-rate
// schedule, and the paired-batch fit loop.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cdgpa/adaptation.hpp"
#include "cdgpa/datagen.hpp"
#include "cdgpa/diagnostics.hpp"
#include "cdgpa/tensor.hpp"

namespace cdgpa {

enum class PromptMode { kTextOnly, kMultimodal };

std::string to_string(PromptMode mode);
/// Accepts "text-only" and "multimodal"; throws ParameterError otherwise.
PromptMode parse_prompt_mode(const std::string& text);

struct TrainConfig {
  double gamma_mal = 0.01;
  double gamma_cal = 1.0;
  double lr = 0.003;
  double disc_lr = 0.1;
  double head_lr = 0.01;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  std::size_t top_c = 5;
  double confidence_threshold = 0.6;
  double grl_coefficient = 1.0;
  bool mal_on = true;
  bool cal_on = true;
  PromptMode mode = PromptMode::kMultimodal;
  std::uint64_t seed = 0;

  /// Throws ParameterError on lr ≤ 0, epochs or batch size 0, negative
  /// weights or rates, top_c 0, or a threshold outside [0, 1].
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct PseudoLabelSet {
  std::vector<std::size_t> labels;
  std::vector<double> confidences;
  std::vector<bool> accepted;  // confidence ≥ threshold
  double threshold = 0.0;

  std::size_t size() const { return labels.size(); }
  std::size_t accepted_count() const;
  double acceptance_rate() const;
};

/// Row-wise argmax of a probability matrix (ties to the lowest class) with the
/// winning probability as confidence.
PseudoLabelSet pseudo_label(const Tensor& probs, double threshold);
/// Pseudo-labels for target inputs under the current prompt.
PseudoLabelSet pseudo_label(const AdaptationModel& model, const Tensor& target_x, double threshold);

/// CE(source logits, y_s) + CE(accepted target logits, their pseudo-labels);
/// the target term is zero when nothing is accepted.
Tensor cls_loss(const Tensor& source_logits, std::span<const std::size_t> source_labels, const Tensor& target_logits,
                const PseudoLabelSet& pseudo);

struct LossParts {
  double cls = 0.0;
  double mal = 0.0;
  double cal = 0.0;
};

/// L_cls + γ_cal·L_cal + γ_mal·L_mal.
Tensor total_loss(const Tensor& cls, const Tensor& mal, const Tensor& cal, double gamma_mal, double gamma_cal);
double total_loss(const LossParts& parts, double gamma_mal, double gamma_cal);

/// lr0·(1 + cos(πt/T))/2 for 0 ≤ t ≤ T.
double cosine_lr(std::size_t t, std::size_t total_steps, double lr0);

/// Labeled source batch plus unlabeled target batch. Construction rejects a
/// target batch that carries labels, so ground truth cannot reach training.
class TrainingData {
 public:
  TrainingData(DomainBatch source, DomainBatch target);

  const DomainBatch& source() const { return source_; }
  const DomainBatch& target() const { return target_; }

 private:
  DomainBatch source_;
  DomainBatch target_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  LossParts losses;
  double total = 0.0;
  double learning_rate = 0.0;  // rate of the last step of the epoch; lr0 at epoch 0
  double source_accuracy = 0.0;
  double acceptance_rate = 0.0;
  std::size_t fallback_count = 0;
  std::optional<EpochMetrics> metrics;  // present when an evaluator is attached
};

struct RunReport {
  TrainConfig config;
  ModelConfig model_config;
  std::size_t steps_per_epoch = 0;
  std::vector<EpochRecord> epochs;  // epoch 0 is the untrained model
  std::vector<double> step_lrs;
};

struct FitResult {
  AdaptationModel model;
  RunReport report;
};

/// Trains the prompt (and the discriminator and class head when their branch
/// is on). Each epoch walks paired source/target mini-batches in a seeded
/// order, dropping partial batches, with one backward pass per step on the
/// weighted total. Pseudo-labels and banks are refreshed from the model at the
/// end of each epoch (and once before the first). Throws DivergenceError when
/// a step's loss is non-finite or above 1e6.
FitResult fit(const TrainConfig& config, const TrainingData& data, AdaptationModel model,
              const Evaluator* evaluator = nullptr);

}  // namespace cdgpa
