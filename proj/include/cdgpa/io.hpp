#pragma once

// JSON persistence: model checkpoints (named parameter arrays with shapes)
// and run reports (one JSON object per epoch plus a summary).

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "cdgpa/adaptation.hpp"
#include "cdgpa/diagnostics.hpp"
#include "cdgpa/training.hpp"

namespace cdgpa {

struct Checkpoint {
  AdaptationModel model;
  std::uint64_t seed = 0;
  std::size_t disc_hidden = 0;
};

/// Every parameter array (frozen encoders, prompt, discriminator, class head
/// and bank if present) keyed by name with its shape. Values use shortest
/// round-trip decimal form, so load(save(x)) is bitwise equal to x.
nlohmann::json checkpoint_to_json(const AdaptationModel& model, std::uint64_t seed);
/// Throws FormatError on missing or misshapen entries.
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const AdaptationModel& model, std::uint64_t seed);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json to_json(const ModelConfig& config);
nlohmann::json to_json(const TrainConfig& config);
nlohmann::json to_json(const EpochMetrics& metrics);
nlohmann::json to_json(const EpochRecord& record);
nlohmann::json to_json(const DiscrepancyReport& report);

/// One compact JSON object per line, epoch 0 first.
std::string report_jsonl(const RunReport& report);
/// Resolved configs, the step learning rates and the final epoch.
nlohmann::json report_summary(const RunReport& report);

/// Pretty-printed with a trailing newline.
std::string dump(const nlohmann::json& j);

}  // namespace cdgpa
