#pragma once

// Resolved run configuration and its INI-style file form:
//
//   [data]    layout, classes, dim, n_source, n_target, translation, rotation,
//             scale, conditional_shift, separation, noise
//   [model]   embed_dim, feature_dim, hidden_dim, context_length, temperature,
//             disc_hidden
//   [train]   gamma_mal, gamma_cal, lr, disc_lr, head_lr, epochs, batch_size,
//             top_c, confidence_threshold, grl_coefficient, mal_on, cal_on, mode
//   [run]     seed, seeds, gamma_mal_grid, gamma_cal_grid, pad_every
//
// Lists are comma separated. Comments start with ';'.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "cdgpa/datagen.hpp"
#include "cdgpa/model.hpp"
#include "cdgpa/training.hpp"

namespace cdgpa {

struct RunConfig {
  std::string layout = "gaussian";  // or "moons"
  SyntheticSpec data;
  ModelConfig model;
  std::size_t disc_hidden = 16;
  TrainConfig train;
  std::uint64_t seed = 0;
  std::size_t seeds = 5;
  std::vector<double> gamma_mal_grid{2.0, 1.0, 0.1, 0.01};
  std::vector<double> gamma_cal_grid{2.0, 1.0, 0.1, 0.01};
  std::size_t pad_every = 1;

  /// Copies the root seed into every component that consumes one.
  void propagate_seed(std::uint64_t root);
  /// Throws ParameterError on any invalid component.
  void validate() const;
};

/// Overlays the keys of an INI document onto `config`. Unknown sections or
/// keys and malformed values throw ParameterError.
void apply_config_text(RunConfig& config, const std::string& text);
void apply_config_file(RunConfig& config, const std::string& path);

nlohmann::json to_json(const RunConfig& config);

std::vector<double> parse_double_list(const std::string& text);

}  // namespace cdgpa
