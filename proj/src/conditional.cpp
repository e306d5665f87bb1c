#include "cdgpa/conditional.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cdgpa/errors.hpp"
#include "cdgpa/random.hpp"

namespace cdgpa {

std::size_t FeatureBank::fallback_count() const {
  return static_cast<std::size_t>(std::count(source_fallback.begin(), source_fallback.end(), true) +
                                  std::count(target_fallback.begin(), target_fallback.end(), true));
}

namespace {

void validate_domain(const LabeledFeatures& d, std::size_t num_classes, const char* name) {
  if (d.labels.size() != d.feats.rows() || d.confidences.size() != d.feats.rows()) {
    throw DimensionError(std::string(name) + " bank input: " + std::to_string(d.feats.rows()) + " feature rows, " +
                         std::to_string(d.labels.size()) + " labels, " + std::to_string(d.confidences.size()) +
                         " confidences");
  }
  for (std::size_t y : d.labels) {
    if (y >= num_classes) {
      throw IndexError(std::string(name) + " label " + std::to_string(y) + " outside [0, " +
                       std::to_string(num_classes) + ")");
    }
  }
  for (double c : d.confidences) {
    if (!(c >= 0.0 && c <= 1.0)) throw PreconditionError(std::string(name) + " confidence outside [0, 1]");
  }
}

// Means of the top_c most confident rows per class; empty classes yield no row.
struct Centers {
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> counts;
};

Centers top_c_centers(const LabeledFeatures& d, std::size_t top_c, std::size_t num_classes) {
  const std::size_t dim = d.feats.cols();
  std::vector<std::vector<std::size_t>> members(num_classes);
  for (std::size_t i = 0; i < d.labels.size(); ++i) members[d.labels[i]].push_back(i);

  Centers out{std::vector<std::vector<double>>(num_classes), std::vector<std::size_t>(num_classes, 0)};
  for (std::size_t k = 0; k < num_classes; ++k) {
    auto& idx = members[k];
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return d.confidences[a] > d.confidences[b]; });
    const std::size_t take = std::min(top_c, idx.size());
    out.counts[k] = take;
    if (take == 0) continue;
    std::vector<double> center(dim, 0.0);
    for (std::size_t s = 0; s < take; ++s)
      for (std::size_t j = 0; j < dim; ++j) center[j] += d.feats(idx[s], j);
    for (double& v : center) v /= static_cast<double>(take);
    out.rows[k] = std::move(center);
  }
  return out;
}

}  // namespace

FeatureBank build_banks(const LabeledFeatures& source, const LabeledFeatures& target, std::size_t top_c,
                        std::size_t num_classes) {
  if (top_c == 0) throw ParameterError("top_c must be at least 1");
  if (num_classes == 0) throw ParameterError("bank needs at least one class");
  if (source.feats.cols() != target.feats.cols()) {
    throw DimensionError("source features " + source.feats.shape().str() + " and target features " +
                         target.feats.shape().str() + " differ in width");
  }
  validate_domain(source, num_classes, "source");
  validate_domain(target, num_classes, "target");

  const std::size_t dim = source.feats.cols();
  Centers s = top_c_centers(source, top_c, num_classes);
  Centers t = top_c_centers(target, top_c, num_classes);

  FeatureBank bank;
  bank.top_c = top_c;
  bank.source_counts = s.counts;
  bank.target_counts = t.counts;
  bank.source_fallback.assign(num_classes, false);
  bank.target_fallback.assign(num_classes, false);
  std::vector<double> fs, ft;
  fs.reserve(num_classes * dim);
  ft.reserve(num_classes * dim);
  const std::vector<double> zero(dim, 0.0);
  for (std::size_t k = 0; k < num_classes; ++k) {
    const bool has_s = s.counts[k] > 0, has_t = t.counts[k] > 0;
    const std::vector<double>& src = has_s ? s.rows[k] : (has_t ? t.rows[k] : zero);
    const std::vector<double>& tgt = has_t ? t.rows[k] : src;
    bank.source_fallback[k] = !has_s;
    bank.target_fallback[k] = !has_t;
    fs.insert(fs.end(), src.begin(), src.end());
    ft.insert(ft.end(), tgt.begin(), tgt.end());
  }
  bank.source_centers = Tensor(num_classes, dim, std::move(fs));
  bank.target_centers = Tensor(num_classes, dim, std::move(ft));
  return bank;
}

Tensor cmm_attention(const Tensor& feats, const FeatureBank& bank) {
  if (feats.cols() != bank.source_centers.cols()) {
    throw DimensionError("features " + feats.shape().str() + " do not match bank " + bank.source_centers.shape().str());
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(feats.cols()));
  return softmax_rows(scale(matmul(feats, transpose(bank.source_centers.detach())), inv_sqrt_d));
}

Tensor cmm_enhance(const Tensor& feats, const FeatureBank& bank) {
  return add(matmul(cmm_attention(feats, bank), bank.target_centers.detach()), feats);
}

CMMHead CMMHead::init(std::size_t feature_dim, std::size_t num_classes, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "cmm-head"));
  const double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  return {uniform_tensor(rng, feature_dim, num_classes, -bound, bound), Tensor(1, num_classes)};
}

CMMHead CMMHead::zeros(std::size_t feature_dim, std::size_t num_classes) {
  return {Tensor(feature_dim, num_classes), Tensor(1, num_classes)};
}

Tensor class_logits(const CMMHead& head, const Tensor& enhanced) {
  if (enhanced.cols() != head.weight.rows()) {
    throw DimensionError("class head expects width " + std::to_string(head.weight.rows()) + ", got " +
                         enhanced.shape().str());
  }
  return linear(enhanced, head.weight, head.bias);
}

Tensor cal_loss(const Tensor& source_logits, std::span<const std::size_t> source_labels, const Tensor& target_logits,
                std::span<const std::size_t> pseudo_labels, std::span<const double> confidences, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ParameterError("confidence threshold outside [0, 1]");
  if (pseudo_labels.size() != target_logits.rows() || confidences.size() != target_logits.rows()) {
    throw DimensionError("cal_loss: pseudo-label count does not match target logits " + target_logits.shape().str());
  }
  const Tensor source_term = cross_entropy_rows(source_logits, source_labels);
  std::vector<std::size_t> rows, labels;
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    if (confidences[i] >= threshold) {
      rows.push_back(i);
      labels.push_back(pseudo_labels[i]);
    }
  }
  if (rows.empty()) return source_term;
  return add(source_term, cross_entropy_rows(gather_rows(target_logits, rows), labels));
}

}  // namespace cdgpa
