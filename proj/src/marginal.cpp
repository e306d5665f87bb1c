#include "cdgpa/marginal.hpp"

#include <cmath>
#include <string>

#include "cdgpa/errors.hpp"
#include "cdgpa/random.hpp"

namespace cdgpa {

DomainDiscriminator DomainDiscriminator::init(std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "domain-discriminator"));
  const double b1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double b2 = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  return {uniform_tensor(rng, input_dim, hidden_dim, -b1, b1), Tensor(1, hidden_dim),
          uniform_tensor(rng, hidden_dim, 1, -b2, b2), Tensor(1, 1)};
}

DomainDiscriminator DomainDiscriminator::zeros(std::size_t input_dim, std::size_t hidden_dim) {
  return {Tensor(input_dim, hidden_dim), Tensor(1, hidden_dim), Tensor(hidden_dim, 1), Tensor(1, 1)};
}

Tensor discriminator_logits(const DomainDiscriminator& disc, const Tensor& feats) {
  if (feats.cols() != disc.input_dim()) {
    throw DimensionError("discriminator expects width " + std::to_string(disc.input_dim()) + ", got features " +
                         feats.shape().str());
  }
  return linear(relu(linear(feats, disc.w1, disc.b1)), disc.w2, disc.b2);
}

Tensor discriminate(const DomainDiscriminator& disc, const Tensor& feats) {
  return sigmoid(discriminator_logits(disc, feats));
}

Tensor domain_loss(const DomainDiscriminator& disc, const Tensor& source_feats, const Tensor& target_feats) {
  if (source_feats.rows() == 0 || target_feats.rows() == 0) {
    throw PreconditionError("domain_loss needs at least one source and one target sample");
  }
  // log P(target | z) = log(1 − σ(z)) = log σ(−z)
  const Tensor source_term = mean(log_sigmoid(discriminator_logits(disc, source_feats)));
  const Tensor target_term = mean(log_sigmoid(scale(discriminator_logits(disc, target_feats), -1.0)));
  return scale(add(source_term, target_term), -1.0);
}

Tensor mal_loss(const DomainDiscriminator& disc, const Tensor& source_feats, const Tensor& target_feats,
                double grl_coefficient) {
  return domain_loss(disc, grl(source_feats, grl_coefficient), grl(target_feats, grl_coefficient));
}

double discriminator_accuracy(const DomainDiscriminator& disc, const Tensor& source_feats, const Tensor& target_feats) {
  if (source_feats.rows() == 0 || target_feats.rows() == 0) {
    throw PreconditionError("discriminator_accuracy needs both domains");
  }
  const Tensor ps = discriminate(disc, source_feats.detach());
  const Tensor pt = discriminate(disc, target_feats.detach());
  double hit_s = 0.0, hit_t = 0.0;
  for (double p : ps.data()) hit_s += p > 0.5 ? 1.0 : 0.0;
  for (double p : pt.data()) hit_t += p <= 0.5 ? 1.0 : 0.0;
  return 0.5 * (hit_s / static_cast<double>(ps.rows()) + hit_t / static_cast<double>(pt.rows()));
}

}  // namespace cdgpa
