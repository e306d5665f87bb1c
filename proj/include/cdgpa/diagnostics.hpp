#pragma once

// Discrepancy measurements on feature sets: a proxy A-distance for the
// marginal gap, a class-prototype distance for the conditional gap, their
// additive joint report with the source error, and 2-D PCA projections.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cdgpa/adaptation.hpp"
#include "cdgpa/datagen.hpp"
#include "cdgpa/tensor.hpp"

namespace cdgpa {

struct ProxyADistanceOptions {
  std::size_t steps = 200;
  double learning_rate = 0.5;
  std::size_t hidden_dim = 16;
};

/// Trains a fresh discriminator on a seeded 50/50 split of each domain and
/// returns max(0, 2(1 − 2ε)) for its held-out balanced error ε. Needs at least
/// 20 samples per domain.
double proxy_a_distance(const Tensor& source_feats, const Tensor& target_feats, std::uint64_t seed,
                        const ProxyADistanceOptions& options = {});

struct ConditionalDiscrepancy {
  double value = 0.0;
  std::size_t matched_classes = 0;
  std::size_t skipped_classes = 0;  // present in only one domain
};

/// Mean over classes present in both domains of ‖μ_s,k − μ_t,k‖₂, where μ are
/// per-class feature means (source by label, target by pseudo-label).
ConditionalDiscrepancy conditional_discrepancy(const Tensor& source_feats, std::span<const std::size_t> source_labels,
                                               const Tensor& target_feats, std::span<const std::size_t> target_labels);

/// Joint discrepancy d_J = d_H + d_C and the computable part of the target
/// error bound, ε_S + d_J. The optimal joint error λ is not estimable and is
/// always reported as unknown. d_J is a sum by definition, not an estimate.
struct DiscrepancyReport {
  double d_h_proxy = 0.0;
  double d_c_empirical = 0.0;
  double d_j = 0.0;
  double source_error = 0.0;
  double bound_partial = 0.0;
  std::string lambda_status = "unknown";

  static DiscrepancyReport from_parts(double d_h_proxy, double d_c_empirical, double source_error);
};

struct EvaluationReport {
  DiscrepancyReport discrepancy;
  double source_accuracy = 0.0;
  double target_accuracy = 0.0;  // hidden labels; evaluation only
  std::optional<double> pclass_target_accuracy;
  std::size_t skipped_classes = 0;
};

/// Evaluates a model on labeled source data and unlabeled target data; the
/// hidden target labels only score predictions.
EvaluationReport make_report(const AdaptationModel& model, const DomainBatch& source, const DomainBatch& target,
                             const TargetLabels& hidden, std::uint64_t seed, const ProxyADistanceOptions& pad = {});

/// Projection onto the top `dims` principal components. Component signs are
/// fixed so that the first non-negligible loading is positive.
Tensor pca_project(const Tensor& feats, std::size_t dims = 2);

/// Per-epoch measurements written into a run report.
struct EpochMetrics {
  double source_accuracy = 0.0;
  double target_accuracy = 0.0;
  std::optional<double> proxy_a_distance;
  double conditional_discrepancy = 0.0;
  double discriminator_accuracy = 0.0;
  std::optional<double> pclass_target_accuracy;
};

/// Observer holding the evaluation-only data (hidden target labels and
/// optional held-out draws). A training run hands it the current model after
/// each epoch; nothing it computes flows back into training.
class Evaluator {
 public:
  Evaluator(DomainBatch source, DomainBatch target, TargetLabels hidden, std::uint64_t seed);

  /// Held-out samples for the discriminator accuracy; the training features
  /// are used when none are set.
  void set_held_out(DomainBatch source, DomainBatch target);
  /// Proxy A-distance is computed on epochs divisible by `every` and on the
  /// final epoch; 0 restricts it to epoch 0 and the final epoch.
  void set_pad_schedule(std::size_t every) { pad_every_ = every; }
  void set_pad_options(const ProxyADistanceOptions& options) { pad_options_ = options; }

  EpochMetrics evaluate(const AdaptationModel& model, std::size_t epoch, bool final_epoch) const;

 private:
  DomainBatch source_;
  DomainBatch target_;
  TargetLabels hidden_;
  std::optional<DomainBatch> held_out_source_;
  std::optional<DomainBatch> held_out_target_;
  std::uint64_t seed_;
  std::size_t pad_every_ = 1;
  ProxyADistanceOptions pad_options_;
};

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth);

/// CSV rows `x,y,domain,label_or_pseudo` for the 2-D projection of source and
/// target features stacked in that order.
std::string projection_csv(const Tensor& source_feats, std::span<const std::size_t> source_labels,
                           const Tensor& target_feats, std::span<const std::size_t> target_labels);

}  // namespace cdgpa
