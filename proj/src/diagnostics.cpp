#include "cdgpa/diagnostics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cdgpa/errors.hpp"
#include "cdgpa/marginal.hpp"
#include "cdgpa/random.hpp"

namespace cdgpa {

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

}  // namespace

double proxy_a_distance(const Tensor& source_feats, const Tensor& target_feats, std::uint64_t seed,
                        const ProxyADistanceOptions& options) {
  constexpr std::size_t kMinSamples = 20;
  if (source_feats.rows() < kMinSamples || target_feats.rows() < kMinSamples) {
    throw PreconditionError("proxy A-distance needs at least 20 samples per domain");
  }
  if (source_feats.cols() != target_feats.cols()) {
    throw DimensionError("proxy A-distance: feature widths differ " + source_feats.shape().str() + " vs " +
                         target_feats.shape().str());
  }
  Rng rng(derive_seed(seed, "pad-split"));
  const auto ps = shuffled_indices(source_feats.rows(), rng);
  const auto pt = shuffled_indices(target_feats.rows(), rng);
  const std::size_t hs = ps.size() / 2, ht = pt.size() / 2;
  const std::span<const std::size_t> s_idx(ps), t_idx(pt);
  const Tensor s_train = gather_rows(source_feats.detach(), s_idx.first(hs));
  const Tensor s_test = gather_rows(source_feats.detach(), s_idx.subspan(hs));
  const Tensor t_train = gather_rows(target_feats.detach(), t_idx.first(ht));
  const Tensor t_test = gather_rows(target_feats.detach(), t_idx.subspan(ht));

  DomainDiscriminator disc =
      DomainDiscriminator::init(source_feats.cols(), options.hidden_dim, derive_seed(seed, "pad-discriminator"));
  for (std::size_t step = 0; step < options.steps; ++step) {
    Tape tape;
    const DomainDiscriminator bound{tape.watch(disc.w1), tape.watch(disc.b1), tape.watch(disc.w2),
                                    tape.watch(disc.b2)};
    const Gradients g = tape.backward(domain_loss(bound, s_train, t_train));
    sgd_step(disc.w1, g.of(bound.w1), options.learning_rate);
    sgd_step(disc.b1, g.of(bound.b1), options.learning_rate);
    sgd_step(disc.w2, g.of(bound.w2), options.learning_rate);
    sgd_step(disc.b2, g.of(bound.b2), options.learning_rate);
  }
  const double error = 1.0 - discriminator_accuracy(disc, s_test, t_test);
  return std::max(0.0, 2.0 * (1.0 - 2.0 * error));
}

ConditionalDiscrepancy conditional_discrepancy(const Tensor& source_feats, std::span<const std::size_t> source_labels,
                                               const Tensor& target_feats, std::span<const std::size_t> target_labels) {
  if (source_feats.rows() != source_labels.size() || target_feats.rows() != target_labels.size()) {
    throw DimensionError("conditional_discrepancy: label counts do not match feature rows");
  }
  if (source_feats.cols() != target_feats.cols()) {
    throw DimensionError("conditional_discrepancy: feature widths differ");
  }
  const std::size_t d = source_feats.cols();
  std::size_t classes = 0;
  for (std::size_t y : source_labels) classes = std::max(classes, y + 1);
  for (std::size_t y : target_labels) classes = std::max(classes, y + 1);

  auto class_means = [&](const Tensor& f, std::span<const std::size_t> y) {
    std::vector<std::vector<double>> sums(classes, std::vector<double>(d, 0.0));
    std::vector<std::size_t> counts(classes, 0);
    for (std::size_t i = 0; i < y.size(); ++i) {
      ++counts[y[i]];
      for (std::size_t j = 0; j < d; ++j) sums[y[i]][j] += f(i, j);
    }
    for (std::size_t k = 0; k < classes; ++k)
      if (counts[k])
        for (double& v : sums[k]) v /= static_cast<double>(counts[k]);
    return std::pair{sums, counts};
  };
  const auto [ms, cs] = class_means(source_feats, source_labels);
  const auto [mt, ct] = class_means(target_feats, target_labels);

  ConditionalDiscrepancy out;
  double total = 0.0;
  for (std::size_t k = 0; k < classes; ++k) {
    if (cs[k] == 0 && ct[k] == 0) continue;
    if (cs[k] == 0 || ct[k] == 0) {
      ++out.skipped_classes;
      continue;
    }
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += (ms[k][j] - mt[k][j]) * (ms[k][j] - mt[k][j]);
    total += std::sqrt(ss);
    ++out.matched_classes;
  }
  if (out.matched_classes == 0) throw DiagnosticError("conditional discrepancy: no class present in both domains");
  out.value = total / static_cast<double>(out.matched_classes);
  return out;
}

DiscrepancyReport DiscrepancyReport::from_parts(double d_h_proxy, double d_c_empirical, double source_error) {
  DiscrepancyReport r;
  r.d_h_proxy = d_h_proxy;
  r.d_c_empirical = d_c_empirical;
  r.d_j = d_h_proxy + d_c_empirical;
  r.source_error = source_error;
  r.bound_partial = source_error + r.d_j;
  return r;
}

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth) {
  if (predicted.size() != truth.size() || truth.empty()) throw DimensionError("accuracy: mismatched or empty labels");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

EvaluationReport make_report(const AdaptationModel& model, const DomainBatch& source, const DomainBatch& target,
                             const TargetLabels& hidden, std::uint64_t seed, const ProxyADistanceOptions& pad) {
  if (!source.labeled()) throw PreconditionError("make_report needs labeled source data");
  const Tensor text = model.text_features();
  const Tensor fs = model.image_features(source.x);
  const Tensor ft = model.image_features(target.x);
  const auto pred_s = argmax_rows(clip_logits(fs, text, model.frozen.temperature));
  const auto pred_t = argmax_rows(clip_logits(ft, text, model.frozen.temperature));

  EvaluationReport out;
  out.source_accuracy = accuracy(pred_s, *source.labels);
  out.target_accuracy = accuracy(pred_t, hidden.labels);
  const auto cond = conditional_discrepancy(fs, *source.labels, ft, pred_t);
  out.skipped_classes = cond.skipped_classes;
  out.discrepancy = DiscrepancyReport::from_parts(proxy_a_distance(fs, ft, seed, pad), cond.value,
                                                  1.0 - out.source_accuracy);
  if (model.bank) {
    out.pclass_target_accuracy = accuracy(argmax_rows(class_logits(model.head, cmm_enhance(ft, *model.bank))),
                                          hidden.labels);
  }
  return out;
}

Tensor pca_project(const Tensor& feats, std::size_t dims) {
  const std::size_t n = feats.rows(), d = feats.cols();
  if (n < 2) throw PreconditionError("PCA needs at least 2 rows");
  if (dims == 0) throw ParameterError("PCA needs at least one output dimension");
  Eigen::MatrixXd x(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x(i, j) = feats(i, j);
  x.rowwise() -= x.colwise().mean();
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
  if (cov.trace() <= 0.0) throw DegenerateDataError("PCA input has zero variance");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  // Eigenvalues come back ascending.
  const Eigen::MatrixXd& vecs = solver.eigenvectors();
  const double tol = 1e-12;
  std::vector<double> out(n * dims, 0.0);
  for (std::size_t c = 0; c < std::min(dims, d); ++c) {
    Eigen::VectorXd v = vecs.col(static_cast<Eigen::Index>(d - 1 - c));
    for (Eigen::Index j = 0; j < v.size(); ++j) {
      if (std::abs(v(j)) > tol) {
        if (v(j) < 0.0) v = -v;
        break;
      }
    }
    const Eigen::VectorXd proj = x * v;
    for (std::size_t i = 0; i < n; ++i) out[i * dims + c] = proj(static_cast<Eigen::Index>(i));
  }
  return Tensor(n, dims, std::move(out));
}

std::string projection_csv(const Tensor& source_feats, std::span<const std::size_t> source_labels,
                           const Tensor& target_feats, std::span<const std::size_t> target_labels) {
  if (source_feats.rows() != source_labels.size() || target_feats.rows() != target_labels.size()) {
    throw DimensionError("projection_csv: label counts do not match feature rows");
  }
  if (source_feats.cols() != target_feats.cols()) throw DimensionError("projection_csv: feature widths differ");
  const std::size_t ns = source_feats.rows(), nt = target_feats.rows(), d = source_feats.cols();
  std::vector<double> stacked;
  stacked.reserve((ns + nt) * d);
  stacked.insert(stacked.end(), source_feats.data().begin(), source_feats.data().end());
  stacked.insert(stacked.end(), target_feats.data().begin(), target_feats.data().end());
  const Tensor proj = pca_project(Tensor(ns + nt, d, std::move(stacked)), 2);
  std::string out = "x,y,domain,label_or_pseudo\n";
  for (std::size_t i = 0; i < ns + nt; ++i) {
    const bool is_source = i < ns;
    out += format_double(proj(i, 0)) + "," + format_double(proj(i, 1)) + (is_source ? ",s," : ",t,") +
           std::to_string(is_source ? source_labels[i] : target_labels[i - ns]) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------- Evaluator

Evaluator::Evaluator(DomainBatch source, DomainBatch target, TargetLabels hidden, std::uint64_t seed)
    : source_(std::move(source)), target_(std::move(target)), hidden_(std::move(hidden)), seed_(seed) {
  if (!source_.labeled()) throw PreconditionError("evaluator needs labeled source data");
  if (hidden_.labels.size() != target_.size()) throw DimensionError("hidden label count does not match target batch");
}

void Evaluator::set_held_out(DomainBatch source, DomainBatch target) {
  held_out_source_ = std::move(source);
  held_out_target_ = std::move(target);
}

EpochMetrics Evaluator::evaluate(const AdaptationModel& model, std::size_t epoch, bool final_epoch) const {
  const Tensor text = model.text_features();
  const Tensor fs = model.image_features(source_.x);
  const Tensor ft = model.image_features(target_.x);
  const auto pred_s = argmax_rows(clip_logits(fs, text, model.frozen.temperature));
  const auto pred_t = argmax_rows(clip_logits(ft, text, model.frozen.temperature));

  EpochMetrics m;
  m.source_accuracy = accuracy(pred_s, *source_.labels);
  m.target_accuracy = accuracy(pred_t, hidden_.labels);
  m.conditional_discrepancy = conditional_discrepancy(fs, *source_.labels, ft, pred_t).value;
  const bool pad_due = epoch == 0 || final_epoch || (pad_every_ != 0 && epoch % pad_every_ == 0);
  if (pad_due) m.proxy_a_distance = proxy_a_distance(fs, ft, derive_seed(seed_, "pad") + epoch, pad_options_);
  if (held_out_source_ && held_out_target_) {
    m.discriminator_accuracy = discriminator_accuracy(model.discriminator, model.image_features(held_out_source_->x),
                                                      model.image_features(held_out_target_->x));
  } else {
    m.discriminator_accuracy = discriminator_accuracy(model.discriminator, fs, ft);
  }
  if (model.bank) {
    m.pclass_target_accuracy =
        accuracy(argmax_rows(class_logits(model.head, cmm_enhance(ft, *model.bank))), hidden_.labels);
  }
  return m;
}

}  // namespace cdgpa
