#include "cdgpa/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "json.hpp"

#include "cdgpa/errors.hpp"
#include "cdgpa/random.hpp"

namespace cdgpa {

std::string to_string(PromptMode mode) { return mode == PromptMode::kTextOnly ? "text-only" : "multimodal"; }

PromptMode parse_prompt_mode(const std::string& text) {
  if (text == "text-only") return PromptMode::kTextOnly;
  if (text == "multimodal") return PromptMode::kMultimodal;
  throw ParameterError("prompt mode must be text-only or multimodal, got '" + text + "'");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ParameterError("learning rate must be positive");
  if (epochs == 0) throw ParameterError("epochs must be at least 1");
  if (batch_size == 0) throw ParameterError("batch size must be at least 1");
  if (!(gamma_mal >= 0.0) || !(gamma_cal >= 0.0)) throw ParameterError("loss weights must be non-negative");
  if (!(disc_lr >= 0.0) || !(head_lr >= 0.0)) throw ParameterError("discriminator and head rates must be non-negative");
  if (top_c == 0) throw ParameterError("top_c must be at least 1");
  if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0)) {
    throw ParameterError("confidence threshold outside [0, 1]");
  }
  if (!std::isfinite(grl_coefficient)) throw ParameterError("GRL coefficient must be finite");
}

// ---------------------------------------------------------------- pseudo-labels

std::size_t PseudoLabelSet::accepted_count() const {
  return static_cast<std::size_t>(std::count(accepted.begin(), accepted.end(), true));
}

double PseudoLabelSet::acceptance_rate() const {
  return labels.empty() ? 0.0 : static_cast<double>(accepted_count()) / static_cast<double>(labels.size());
}

PseudoLabelSet pseudo_label(const Tensor& probs, double threshold) {
  PseudoLabelSet out;
  out.threshold = threshold;
  out.labels = argmax_rows(probs);
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const double c = probs(i, out.labels[i]);
    out.confidences.push_back(c);
    out.accepted.push_back(c >= threshold);
  }
  return out;
}

PseudoLabelSet pseudo_label(const AdaptationModel& model, const Tensor& target_x, double threshold) {
  return pseudo_label(class_probs(model.image_features(target_x), model.text_features(), model.frozen.temperature),
                      threshold);
}

Tensor cls_loss(const Tensor& source_logits, std::span<const std::size_t> source_labels, const Tensor& target_logits,
                const PseudoLabelSet& pseudo) {
  if (pseudo.size() != target_logits.rows()) {
    throw DimensionError("cls_loss: pseudo-label count does not match target logits " + target_logits.shape().str());
  }
  const Tensor source_term = cross_entropy_rows(source_logits, source_labels);
  std::vector<std::size_t> rows, labels;
  for (std::size_t i = 0; i < pseudo.size(); ++i) {
    if (pseudo.accepted[i]) {
      rows.push_back(i);
      labels.push_back(pseudo.labels[i]);
    }
  }
  if (rows.empty()) return source_term;
  return add(source_term, cross_entropy_rows(gather_rows(target_logits, rows), labels));
}

Tensor total_loss(const Tensor& cls, const Tensor& mal, const Tensor& cal, double gamma_mal, double gamma_cal) {
  return add(add(cls, scale(cal, gamma_cal)), scale(mal, gamma_mal));
}

double total_loss(const LossParts& parts, double gamma_mal, double gamma_cal) {
  return parts.cls + gamma_cal * parts.cal + gamma_mal * parts.mal;
}

double cosine_lr(std::size_t t, std::size_t total_steps, double lr0) {
  if (total_steps == 0) throw ParameterError("cosine schedule needs at least one step");
  if (t > total_steps) throw ParameterError("step beyond the end of the schedule");
  if (t == total_steps) return 0.0;
  const double ratio = static_cast<double>(t) / static_cast<double>(total_steps);
  return lr0 * (1.0 + std::cos(std::numbers::pi * ratio)) / 2.0;
}

TrainingData::TrainingData(DomainBatch source, DomainBatch target)
    : source_(std::move(source)), target_(std::move(target)) {
  if (!source_.labeled()) throw PreconditionError("training source batch must be labeled");
  if (target_.labeled()) throw PreconditionError("training target batch must not carry labels");
  if (source_.size() == 0 || target_.size() == 0) throw PreconditionError("training batches must be non-empty");
  if (source_.dim() != target_.dim()) {
    throw DimensionError("source dim " + std::to_string(source_.dim()) + " differs from target dim " +
                         std::to_string(target_.dim()));
  }
}

// ---------------------------------------------------------------- fit

namespace {

// Parameters as seen by one forward pass; either the stored tensors or their
// watched copies on a tape.
struct Params {
  PromptParams prompt;
  DomainDiscriminator disc;
  CMMHead head;
};

struct StepLosses {
  Tensor cls, mal, cal, total;
};

StepLosses forward(const TrainConfig& cfg, const AdaptationModel& model, const Params& p, const Tensor& xs,
                   std::span<const std::size_t> ys, const Tensor& xt, const PseudoLabelSet& pseudo) {
  const FrozenEncoders& enc = model.frozen;
  const Tensor text = encode_text_all(enc, p.prompt);
  const Tensor is = encode_image(enc, p.prompt, xs);
  const Tensor it = encode_image(enc, p.prompt, xt);
  StepLosses out;
  out.cls = cls_loss(clip_logits(is, text, enc.temperature), ys, clip_logits(it, text, enc.temperature), pseudo);
  out.mal = cfg.mal_on ? mal_loss(p.disc, is, it, cfg.grl_coefficient) : Tensor::scalar(0.0);
  if (cfg.cal_on && model.bank) {
    const Tensor ls = class_logits(p.head, cmm_enhance(is, *model.bank));
    const Tensor lt = class_logits(p.head, cmm_enhance(it, *model.bank));
    out.cal = cal_loss(ls, ys, lt, pseudo.labels, pseudo.confidences, pseudo.threshold);
  } else {
    out.cal = Tensor::scalar(0.0);
  }
  out.total = total_loss(out.cls, out.mal, out.cal, cfg.gamma_mal, cfg.gamma_cal);
  return out;
}

PseudoLabelSet subset(const PseudoLabelSet& all, std::span<const std::size_t> rows) {
  PseudoLabelSet out;
  out.threshold = all.threshold;
  for (std::size_t r : rows) {
    out.labels.push_back(all.labels[r]);
    out.confidences.push_back(all.confidences[r]);
    out.accepted.push_back(all.accepted[r]);
  }
  return out;
}

// Pseudo-labels for the whole target set and a bank built from them. Source
// confidences are the probabilities of the true labels.
PseudoLabelSet refresh(const TrainConfig& cfg, const TrainingData& data, AdaptationModel& model, std::size_t epoch) {
  const Tensor text = model.text_features();
  const Tensor is = model.image_features(data.source().x);
  const Tensor it = model.image_features(data.target().x);
  const Tensor ps = class_probs(is, text, model.frozen.temperature);
  PseudoLabelSet pseudo = pseudo_label(class_probs(it, text, model.frozen.temperature), cfg.confidence_threshold);
  const auto& ys = *data.source().labels;
  std::vector<double> src_conf(ys.size());
  for (std::size_t i = 0; i < ys.size(); ++i) src_conf[i] = ps(i, ys[i]);
  FeatureBank bank = build_banks({is, ys, src_conf}, {it, pseudo.labels, pseudo.confidences}, cfg.top_c,
                                 model.config.num_classes);
  bank.epoch_built = epoch;
  model.bank = std::move(bank);
  return pseudo;
}

EpochRecord record_epoch(const TrainConfig& cfg, const TrainingData& data, const AdaptationModel& model,
                         const PseudoLabelSet& pseudo, std::size_t epoch, double lr, const Evaluator* evaluator,
                         bool final_epoch) {
  const Params p{model.prompt, model.discriminator, model.head};
  const auto& ys = *data.source().labels;
  const StepLosses l = forward(cfg, model, p, data.source().x, ys, data.target().x, pseudo);
  EpochRecord r;
  r.epoch = epoch;
  r.losses = {l.cls.item(), l.mal.item(), l.cal.item()};
  r.total = total_loss(r.losses, cfg.gamma_mal, cfg.gamma_cal);
  r.learning_rate = lr;
  const auto pred = argmax_rows(clip_logits(model.image_features(data.source().x), model.text_features(),
                                            model.frozen.temperature));
  r.source_accuracy = accuracy(pred, ys);
  r.acceptance_rate = pseudo.acceptance_rate();
  r.fallback_count = model.bank ? model.bank->fallback_count() : 0;
  if (evaluator) r.metrics = evaluator->evaluate(model, epoch, final_epoch);
  return r;
}

std::string snapshot(std::size_t epoch, std::size_t step, double lr, const StepLosses& l) {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["step"] = step;
  j["learning_rate"] = lr;
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(std::to_string(v)); };
  j["L_cls"] = num(l.cls.item());
  j["L_mal"] = num(l.mal.item());
  j["L_cal"] = num(l.cal.item());
  j["total"] = num(l.total.item());
  return j.dump();
}

}  // namespace

FitResult fit(const TrainConfig& config, const TrainingData& data, AdaptationModel model, const Evaluator* evaluator) {
  config.validate();
  model.config.validate();
  if (data.source().dim() != model.config.input_dim) {
    throw DimensionError("data dim " + std::to_string(data.source().dim()) + " does not match model input dim " +
                         std::to_string(model.config.input_dim));
  }
  for (std::size_t y : *data.source().labels) {
    if (y >= model.config.num_classes) throw IndexError("source label " + std::to_string(y) + " outside model classes");
  }

  const std::size_t ns = data.source().size(), nt = data.target().size();
  const std::size_t batch = std::min({config.batch_size, ns, nt});
  const std::size_t steps_per_epoch = std::min(ns, nt) / batch;
  const std::size_t total_steps = steps_per_epoch * config.epochs;

  FitResult result;
  RunReport& report = result.report;
  report.config = config;
  report.model_config = model.config;
  report.steps_per_epoch = steps_per_epoch;

  PseudoLabelSet pseudo = refresh(config, data, model, 0);
  report.epochs.push_back(record_epoch(config, data, model, pseudo, 0, config.lr, evaluator, false));

  const bool train_disc = config.mal_on && config.gamma_mal > 0.0;
  const bool train_head = config.cal_on && config.gamma_cal > 0.0;
  const bool train_visual = config.mode == PromptMode::kMultimodal;
  Rng order_rng(derive_seed(config.seed, "batch-order"));
  std::vector<std::size_t> src_order(ns), tgt_order(nt);
  const auto& ys_all = *data.source().labels;

  std::size_t t = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(src_order.begin(), src_order.end(), 0);
    std::iota(tgt_order.begin(), tgt_order.end(), 0);
    std::shuffle(src_order.begin(), src_order.end(), order_rng);
    std::shuffle(tgt_order.begin(), tgt_order.end(), order_rng);
    double lr = config.lr;
    for (std::size_t step = 0; step < steps_per_epoch; ++step, ++t) {
      const std::span<const std::size_t> s_rows(src_order.data() + step * batch, batch);
      const std::span<const std::size_t> t_rows(tgt_order.data() + step * batch, batch);
      std::vector<std::size_t> ys(batch);
      for (std::size_t i = 0; i < batch; ++i) ys[i] = ys_all[s_rows[i]];
      const Tensor xs = gather_rows(data.source().x, s_rows);
      const Tensor xt = gather_rows(data.target().x, t_rows);
      const PseudoLabelSet batch_pseudo = subset(pseudo, t_rows);

      Tape tape;
      Params p{model.prompt, model.discriminator, model.head};
      p.prompt.context = tape.watch(model.prompt.context);
      if (train_visual) p.prompt.visual_prompt = tape.watch(model.prompt.visual_prompt);
      if (train_disc) {
        p.disc = {tape.watch(model.discriminator.w1), tape.watch(model.discriminator.b1),
                  tape.watch(model.discriminator.w2), tape.watch(model.discriminator.b2)};
      }
      if (train_head) p.head = {tape.watch(model.head.weight), tape.watch(model.head.bias)};

      const StepLosses l = forward(config, model, p, xs, ys, xt, batch_pseudo);
      lr = cosine_lr(t, total_steps, config.lr);
      const double value = l.total.item();
      if (!std::isfinite(value) || std::abs(value) > 1e6) {
        throw DivergenceError("loss diverged at epoch " + std::to_string(epoch) + ", step " + std::to_string(step),
                              snapshot(epoch, step, lr, l));
      }
      const Gradients g = tape.backward(l.total);
      report.step_lrs.push_back(lr);

      sgd_step(model.prompt.context, g.of(p.prompt.context), lr);
      if (train_visual) sgd_step(model.prompt.visual_prompt, g.of(p.prompt.visual_prompt), lr);
      // The total loss carries the branch weight; these optimizers see the
      // unweighted branch gradient at their own base rate.
      if (train_disc) {
        const double rate = cosine_lr(t, total_steps, config.disc_lr) / config.gamma_mal;
        sgd_step(model.discriminator.w1, g.of(p.disc.w1), rate);
        sgd_step(model.discriminator.b1, g.of(p.disc.b1), rate);
        sgd_step(model.discriminator.w2, g.of(p.disc.w2), rate);
        sgd_step(model.discriminator.b2, g.of(p.disc.b2), rate);
      }
      if (train_head) {
        const double rate = cosine_lr(t, total_steps, config.head_lr) / config.gamma_cal;
        sgd_step(model.head.weight, g.of(p.head.weight), rate);
        sgd_step(model.head.bias, g.of(p.head.bias), rate);
      }
    }
    pseudo = refresh(config, data, model, epoch);
    report.epochs.push_back(
        record_epoch(config, data, model, pseudo, epoch, lr, evaluator, epoch == config.epochs));
  }
  result.model = std::move(model);
  return result;
}

}  // namespace cdgpa
