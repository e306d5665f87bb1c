#include "cdgpa/adaptation.hpp"

#include "cdgpa/random.hpp"

namespace cdgpa {

AdaptationModel AdaptationModel::create(const ModelConfig& config, std::size_t disc_hidden, std::uint64_t seed) {
  AdaptationModel m;
  m.config = config;
  m.frozen = init_frozen(config);
  m.prompt = init_prompt(config, seed);
  m.discriminator = DomainDiscriminator::init(config.feature_dim, disc_hidden, seed);
  m.head = CMMHead::init(config.feature_dim, config.num_classes, seed);
  return m;
}

}  // namespace cdgpa
