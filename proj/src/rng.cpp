#include "swindle/rng.hpp"

#include "swindle/errors.hpp"

#include <cmath>
#include <numbers>

namespace swindle {
namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                    std::uint32_t& lo) noexcept {
  const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(product >> 32);
  lo = static_cast<std::uint32_t>(product);
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::array<double, 2> box_muller(const PhiloxCounter& w) noexcept {
  const double u0 = uniform_from_words(w[0], w[1]);
  const double u1 = uniform_from_words(w[2], w[3]);
  const double r = std::sqrt(-2.0 * std::log1p(-u0));
  const double theta = 2.0 * std::numbers::pi * u1;
  return {r * std::cos(theta), r * std::sin(theta)};
}

}  // namespace

PhiloxCounter philox4x32(PhiloxCounter ctr, PhiloxKey key) noexcept {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, ctr[0], hi0, lo0);
    mulhilo(kMul1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

double uniform_from_words(std::uint32_t hi, std::uint32_t lo) noexcept {
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32) | lo;
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

PhiloxCounter counter_block(std::uint64_t seed, StreamTag tag, std::uint64_t index,
                            std::uint32_t block) noexcept {
  const PhiloxCounter ctr{block, static_cast<std::uint32_t>(tag),
                          static_cast<std::uint32_t>(index),
                          static_cast<std::uint32_t>(index >> 32)};
  const PhiloxKey key{static_cast<std::uint32_t>(seed),
                      static_cast<std::uint32_t>(seed >> 32)};
  return philox4x32(ctr, key);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(base) ^ splitmix64(index + 0x632BE59BD9B4E019ull));
}

NoiseStream::NoiseStream(std::uint64_t seed, Eigen::Index dimension)
    : seed_(seed), dimension_(dimension) {
  if (dimension < 1) throw ContractError("noise stream dimension must be >= 1");
}

Vector NoiseStream::momentum(std::uint64_t step) const {
  Vector p(dimension_);
  for (Eigen::Index d = 0; d < dimension_; d += 2) {
    const auto pair = box_muller(counter_block(
        seed_, StreamTag::momentum, step, static_cast<std::uint32_t>(d / 2)));
    p[d] = pair[0];
    if (d + 1 < dimension_) p[d + 1] = pair[1];
  }
  return p;
}

double NoiseStream::uniform(std::uint64_t step) const {
  const auto w = counter_block(seed_, StreamTag::accept, step, 0);
  return uniform_from_words(w[0], w[1]);
}

StepNoise NoiseStream::draw(std::uint64_t step) const {
  return {momentum(step), uniform(step)};
}

StepNoise draw_step_noise(const NoiseStream& stream, std::uint64_t step) {
  return stream.draw(step);
}

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t stream, StreamTag tag)
    : seed_(seed), stream_(stream), tag_(tag) {}

void CounterRng::refill() {
  words_ = counter_block(seed_, tag_, stream_, block_++);
  used_ = 0;
}

double CounterRng::uniform() {
  if (used_ > 2) refill();
  const double u = uniform_from_words(words_[used_], words_[used_ + 1]);
  used_ += 2;
  return u;
}

double CounterRng::normal() {
  if (has_spare_normal_) {
    has_spare_normal_ = false;
    return spare_normal_;
  }
  refill();
  const auto pair = box_muller(words_);
  used_ = 4;
  spare_normal_ = pair[1];
  has_spare_normal_ = true;
  return pair[0];
}

Vector CounterRng::normal_vector(Eigen::Index n) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
  return v;
}

double CounterRng::gamma(double shape, double rate) {
  if (!(shape > 0.0) || !(rate > 0.0)) throw ContractError("gamma needs shape, rate > 0");
  if (shape < 1.0) {
    const double boost = std::pow(1.0 - uniform(), 1.0 / shape);
    return gamma(shape + 1.0, rate) * boost;
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = 1.0 - uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / rate;
  }
}

std::uint64_t CounterRng::below(std::uint64_t n) {
  if (n == 0) throw ContractError("below(0)");
  // 53-bit uniform is plenty for the index ranges used here.
  auto k = static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
  return k < n ? k : n - 1;
}

}  // namespace swindle
