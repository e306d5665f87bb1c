#include "cdgpa/io.hpp"

#include <fstream>
#include <sstream>

#include "cdgpa/errors.hpp"

namespace cdgpa {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "cdgpa-checkpoint";
constexpr int kVersion = 1;

json array_json(const Tensor& t) {
  return json{{"shape", {t.rows(), t.cols()}}, {"data", t.to_vector()}};
}

Tensor array_from(const json& arrays, const std::string& name) {
  if (!arrays.contains(name)) throw FormatError("checkpoint is missing array '" + name + "'");
  const json& a = arrays.at(name);
  try {
    const auto shape = a.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2) throw FormatError("array '" + name + "' must be rank 2");
    auto data = a.at("data").get<std::vector<double>>();
    if (data.size() != shape[0] * shape[1]) throw FormatError("array '" + name + "' has the wrong element count");
    return Tensor(shape[0], shape[1], std::move(data));
  } catch (const json::exception& e) {
    throw FormatError("array '" + name + "': " + e.what());
  }
}

void expect_shape(const Tensor& t, std::size_t rows, std::size_t cols, const std::string& name) {
  if (t.rows() != rows || t.cols() != cols) {
    throw FormatError("array '" + name + "' has shape " + t.shape().str() + ", expected " +
                      Shape{rows, cols}.str());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

json to_json(const ModelConfig& c) {
  return json{{"input_dim", c.input_dim},     {"embed_dim", c.embed_dim},
              {"feature_dim", c.feature_dim}, {"num_classes", c.num_classes},
              {"context_length", c.context_length}, {"hidden_dim", c.hidden_dim},
              {"temperature", c.temperature}, {"seed", c.seed}};
}

json to_json(const TrainConfig& c) {
  return json{{"gamma_mal", c.gamma_mal},
              {"gamma_cal", c.gamma_cal},
              {"lr", c.lr},
              {"disc_lr", c.disc_lr},
              {"head_lr", c.head_lr},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"top_c", c.top_c},
              {"confidence_threshold", c.confidence_threshold},
              {"grl_coefficient", c.grl_coefficient},
              {"mal_on", c.mal_on},
              {"cal_on", c.cal_on},
              {"mode", to_string(c.mode)},
              {"seed", c.seed}};
}

json to_json(const EpochMetrics& m) {
  return json{{"source_accuracy", m.source_accuracy},
              {"target_accuracy", m.target_accuracy},
              {"proxy_a_distance", optional_json(m.proxy_a_distance)},
              {"conditional_discrepancy", m.conditional_discrepancy},
              {"discriminator_accuracy", m.discriminator_accuracy},
              {"pclass_target_accuracy", optional_json(m.pclass_target_accuracy)}};
}

json to_json(const EpochRecord& r) {
  json j{{"epoch", r.epoch},
         {"L_cls", r.losses.cls},
         {"L_mal", r.losses.mal},
         {"L_cal", r.losses.cal},
         {"total", r.total},
         {"learning_rate", r.learning_rate},
         {"source_accuracy", r.source_accuracy},
         {"pseudo_label_acceptance", r.acceptance_rate},
         {"fallback_count", r.fallback_count}};
  j["evaluation"] = r.metrics ? to_json(*r.metrics) : json(nullptr);
  return j;
}

json to_json(const DiscrepancyReport& r) {
  return json{{"d_H_proxy", r.d_h_proxy},         {"d_C_empirical", r.d_c_empirical},
              {"d_J", r.d_j},                     {"source_error", r.source_error},
              {"bound_partial", r.bound_partial}, {"lambda", r.lambda_status}};
}

std::string report_jsonl(const RunReport& report) {
  std::string out;
  for (const auto& r : report.epochs) out += to_json(r).dump() + "\n";
  return out;
}

json report_summary(const RunReport& report) {
  json j{{"train_config", to_json(report.config)},
         {"model_config", to_json(report.model_config)},
         {"seed", report.config.seed},
         {"steps_per_epoch", report.steps_per_epoch},
         {"step_learning_rates", report.step_lrs}};
  j["initial"] = report.epochs.empty() ? json(nullptr) : to_json(report.epochs.front());
  j["final"] = report.epochs.empty() ? json(nullptr) : to_json(report.epochs.back());
  return j;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------- checkpoints

json checkpoint_to_json(const AdaptationModel& m, std::uint64_t seed) {
  json arrays;
  arrays["frozen.text_proj"] = array_json(m.frozen.text_proj);
  arrays["frozen.image_w1"] = array_json(m.frozen.image_w1);
  arrays["frozen.image_b1"] = array_json(m.frozen.image_b1);
  arrays["frozen.image_w2"] = array_json(m.frozen.image_w2);
  arrays["frozen.image_b2"] = array_json(m.frozen.image_b2);
  arrays["frozen.class_embeddings"] = array_json(m.frozen.class_embeddings);
  arrays["prompt.context"] = array_json(m.prompt.context);
  arrays["prompt.visual_prompt"] = array_json(m.prompt.visual_prompt);
  arrays["discriminator.w1"] = array_json(m.discriminator.w1);
  arrays["discriminator.b1"] = array_json(m.discriminator.b1);
  arrays["discriminator.w2"] = array_json(m.discriminator.w2);
  arrays["discriminator.b2"] = array_json(m.discriminator.b2);
  arrays["head.weight"] = array_json(m.head.weight);
  arrays["head.bias"] = array_json(m.head.bias);
  json j{{"format", kFormat}, {"version", kVersion}, {"seed", seed}, {"model_config", to_json(m.config)}};
  j["temperature"] = m.frozen.temperature;
  if (m.bank) {
    const FeatureBank& b = *m.bank;
    arrays["bank.source_centers"] = array_json(b.source_centers);
    arrays["bank.target_centers"] = array_json(b.target_centers);
    j["bank"] = json{{"top_c", b.top_c},
                     {"epoch_built", b.epoch_built},
                     {"source_counts", b.source_counts},
                     {"target_counts", b.target_counts},
                     {"source_fallback", b.source_fallback},
                     {"target_fallback", b.target_fallback}};
  } else {
    j["bank"] = nullptr;
  }
  j["arrays"] = std::move(arrays);
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  try {
    if (j.value("format", "") != kFormat) throw FormatError("not a cdgpa checkpoint");
    if (j.at("version").get<int>() != kVersion) throw FormatError("unsupported checkpoint version");
    const json& mc = j.at("model_config");
    Checkpoint out;
    AdaptationModel& m = out.model;
    m.config.input_dim = mc.at("input_dim").get<std::size_t>();
    m.config.embed_dim = mc.at("embed_dim").get<std::size_t>();
    m.config.feature_dim = mc.at("feature_dim").get<std::size_t>();
    m.config.num_classes = mc.at("num_classes").get<std::size_t>();
    m.config.context_length = mc.at("context_length").get<std::size_t>();
    m.config.hidden_dim = mc.at("hidden_dim").get<std::size_t>();
    m.config.temperature = mc.at("temperature").get<double>();
    m.config.seed = mc.at("seed").get<std::uint64_t>();
    m.config.validate();
    out.seed = j.at("seed").get<std::uint64_t>();

    const json& a = j.at("arrays");
    const ModelConfig& c = m.config;
    m.frozen.text_proj = array_from(a, "frozen.text_proj");
    m.frozen.image_w1 = array_from(a, "frozen.image_w1");
    m.frozen.image_b1 = array_from(a, "frozen.image_b1");
    m.frozen.image_w2 = array_from(a, "frozen.image_w2");
    m.frozen.image_b2 = array_from(a, "frozen.image_b2");
    m.frozen.class_embeddings = array_from(a, "frozen.class_embeddings");
    m.frozen.temperature = j.at("temperature").get<double>();
    m.prompt.context = array_from(a, "prompt.context");
    m.prompt.visual_prompt = array_from(a, "prompt.visual_prompt");
    m.discriminator.w1 = array_from(a, "discriminator.w1");
    m.discriminator.b1 = array_from(a, "discriminator.b1");
    m.discriminator.w2 = array_from(a, "discriminator.w2");
    m.discriminator.b2 = array_from(a, "discriminator.b2");
    m.head.weight = array_from(a, "head.weight");
    m.head.bias = array_from(a, "head.bias");

    expect_shape(m.frozen.text_proj, c.embed_dim, c.feature_dim, "frozen.text_proj");
    expect_shape(m.frozen.image_w1, c.input_dim, c.hidden_dim, "frozen.image_w1");
    expect_shape(m.frozen.image_b1, 1, c.hidden_dim, "frozen.image_b1");
    expect_shape(m.frozen.image_w2, c.hidden_dim, c.feature_dim, "frozen.image_w2");
    expect_shape(m.frozen.image_b2, 1, c.feature_dim, "frozen.image_b2");
    expect_shape(m.frozen.class_embeddings, c.num_classes, c.embed_dim, "frozen.class_embeddings");
    expect_shape(m.prompt.context, c.context_length, c.embed_dim, "prompt.context");
    expect_shape(m.prompt.visual_prompt, 1, c.feature_dim, "prompt.visual_prompt");
    const std::size_t h = m.discriminator.w1.cols();
    expect_shape(m.discriminator.w1, c.feature_dim, h, "discriminator.w1");
    expect_shape(m.discriminator.b1, 1, h, "discriminator.b1");
    expect_shape(m.discriminator.w2, h, 1, "discriminator.w2");
    expect_shape(m.discriminator.b2, 1, 1, "discriminator.b2");
    expect_shape(m.head.weight, c.feature_dim, c.num_classes, "head.weight");
    expect_shape(m.head.bias, 1, c.num_classes, "head.bias");
    out.disc_hidden = h;

    if (!j.at("bank").is_null()) {
      const json& b = j.at("bank");
      FeatureBank bank;
      bank.source_centers = array_from(a, "bank.source_centers");
      bank.target_centers = array_from(a, "bank.target_centers");
      expect_shape(bank.source_centers, c.num_classes, c.feature_dim, "bank.source_centers");
      expect_shape(bank.target_centers, c.num_classes, c.feature_dim, "bank.target_centers");
      bank.top_c = b.at("top_c").get<std::size_t>();
      bank.epoch_built = b.at("epoch_built").get<std::size_t>();
      bank.source_counts = b.at("source_counts").get<std::vector<std::size_t>>();
      bank.target_counts = b.at("target_counts").get<std::vector<std::size_t>>();
      bank.source_fallback = b.at("source_fallback").get<std::vector<bool>>();
      bank.target_fallback = b.at("target_fallback").get<std::vector<bool>>();
      m.bank = std::move(bank);
    }
    return out;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ParameterError& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const AdaptationModel& model, std::uint64_t seed) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << checkpoint_to_json(model, seed).dump() << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw FormatError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace cdgpa
