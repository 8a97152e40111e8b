#include "mmrl/rng.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <stdexcept>

namespace mmrl {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t domain, std::uint64_t index,
                          std::uint64_t salt) {
  std::uint64_t h = mix64(master);
  h = mix64(h ^ mix64(domain + 0x1000));
  h = mix64(h ^ mix64(index + 0x2000));
  h = mix64(h ^ mix64(salt + 0x3000));
  return h;
}

std::uint64_t episode_seed(std::uint64_t master, Phase phase, std::uint64_t index) {
  return derive_seed(master, static_cast<std::uint64_t>(phase), index, 0xe915);
}

std::uint64_t stream_seed(std::uint64_t scope_seed, Stream stream) {
  return derive_seed(scope_seed, 0x57, static_cast<std::uint64_t>(stream), 0x5eed);
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u = 0.0;
  double v = 0.0;
  double s = 0.0;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double scale = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * scale;
  has_spare_ = true;
  return u * scale;
}

bool Rng::bernoulli(double p) {
  return uniform() < p;
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) {
    throw std::invalid_argument("Rng::below: empty range");
  }
  // Rejection keeps the draw exactly uniform.
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
  std::uint64_t x = engine_();
  while (x >= limit) {
    x = engine_();
  }
  return x % n;
}

std::string Rng::serialize() const {
  std::ostringstream out;
  out << engine_;
  char buf[64];
  std::snprintf(buf, sizeof(buf), " %d %a", has_spare_ ? 1 : 0, spare_);
  out << buf;
  return out.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream in(state);
  in >> engine_;
  int spare_flag = 0;
  std::string spare_text;
  in >> spare_flag >> spare_text;
  if (!in) {
    throw std::runtime_error("Rng::restore: malformed generator state");
  }
  has_spare_ = spare_flag != 0;
  spare_ = std::strtod(spare_text.c_str(), nullptr);
}

}  // namespace mmrl
