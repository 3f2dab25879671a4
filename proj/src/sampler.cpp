#include "memlab/sampler.hpp"

namespace memlab {

SamplerMethod parse_sampler_method(const std::string& s) {
  if (s == "ode-euler") return SamplerMethod::OdeEuler;
  if (s == "sde-euler") return SamplerMethod::SdeEuler;
  throw DataError("unknown sampler method: " + s);
}

GridKind parse_grid_kind(const std::string& s) {
  if (s == "uniform") return GridKind::Uniform;
  if (s == "geometric") return GridKind::Geometric;
  throw DataError("unknown time grid: " + s);
}

SdeNoise parse_sde_noise(const std::string& s) {
  if (s == "appendix") return SdeNoise::Appendix;
  if (s == "euler-maruyama") return SdeNoise::EulerMaruyama;
  throw DataError("unknown sde noise mode: " + s);
}

std::string to_string(SamplerMethod m) { return m == SamplerMethod::OdeEuler ? "ode-euler" : "sde-euler"; }
std::string to_string(GridKind g) { return g == GridKind::Uniform ? "uniform" : "geometric"; }
std::string to_string(SdeNoise n) { return n == SdeNoise::Appendix ? "appendix" : "euler-maruyama"; }

void SamplerConfig::validate() const {
  if (num_steps < 2) throw DataError("sampler.num_steps must be >= 2");
  if (batch_size < 1) throw DataError("sampler.batch_size must be >= 1");
}

SamplerConfig SamplerConfig::from_config(const Config& cfg, const std::string& prefix) {
  const auto p = prefix + ".";
  SamplerConfig c;
  if (auto v = cfg.find(p + "method")) c.method = parse_sampler_method(*v);
  c.num_steps = cfg.get_int(p + "num_steps", c.num_steps);
  if (auto v = cfg.find(p + "grid")) c.grid = parse_grid_kind(*v);
  if (auto v = cfg.find(p + "sde_noise")) c.sde_noise = parse_sde_noise(*v);
  c.seed = cfg.get_u64(p + "seed", c.seed);
  c.batch_size = cfg.get_int(p + "batch_size", c.batch_size);
  c.validate();
  return c;
}

void SamplerConfig::write_config(Config& cfg, const std::string& prefix) const {
  const auto p = prefix + ".";
  cfg.set(p + "method", to_string(method));
  cfg.set(p + "num_steps", std::to_string(num_steps));
  cfg.set(p + "grid", to_string(grid));
  cfg.set(p + "sde_noise", to_string(sde_noise));
  cfg.set(p + "seed", std::to_string(seed));
  cfg.set(p + "batch_size", std::to_string(batch_size));
}

}  // namespace memlab
