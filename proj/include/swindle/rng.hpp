#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>

namespace swindle {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Philox4x32-10 block function (Salmon et al., SC'11). Pure: the output
// depends only on (counter, key).
using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;
PhiloxCounter philox4x32(PhiloxCounter counter, PhiloxKey key) noexcept;

// Stable conventions, part of the reproducibility guarantee:
//  * a uniform double takes two 32-bit words (hi, lo), keeps the top 53 bits
//    of hi:lo and scales by 2^-53, giving a value in [0, 1);
//  * a pair of normals comes from one Philox block via Box-Muller,
//    r = sqrt(-2 log(1 - u0)), theta = 2 pi u1, (r cos theta, r sin theta).
double uniform_from_words(std::uint32_t hi, std::uint32_t lo) noexcept;

// Stream tags separate the independent uses of one seed.
enum class StreamTag : std::uint32_t {
  momentum = 1,
  accept = 2,
  initial_state = 3,
  general = 4,
};

// Counter-keyed draws: block `block` of stream `tag` at position `index`.
PhiloxCounter counter_block(std::uint64_t seed, StreamTag tag, std::uint64_t index,
                            std::uint32_t block) noexcept;

// Mixes a base seed with an index (chain id, replication id) into a new seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept;

struct StepNoise {
  Vector momentum;  // standard normal in R^D
  double uniform;   // in [0, 1)
};

// Immutable description of the per-step noise of a chain group. draw() is pure.
class NoiseStream {
 public:
  NoiseStream(std::uint64_t seed, Eigen::Index dimension);

  std::uint64_t seed() const noexcept { return seed_; }
  Eigen::Index dimension() const noexcept { return dimension_; }

  StepNoise draw(std::uint64_t step) const;
  Vector momentum(std::uint64_t step) const;
  double uniform(std::uint64_t step) const;

 private:
  std::uint64_t seed_;
  Eigen::Index dimension_;
};

StepNoise draw_step_noise(const NoiseStream& stream, std::uint64_t step);

// Sequential generator built on the same counter scheme, for data synthesis,
// VI minibatches and initial states. Deterministic given (seed, tag, stream).
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream = 0,
             StreamTag tag = StreamTag::general);

  double uniform();
  double normal();
  Vector normal_vector(Eigen::Index n);
  // Gamma(shape, rate); Marsaglia-Tsang with the u^(1/shape) boost below 1.
  double gamma(double shape, double rate);
  bool bernoulli(double p) { return uniform() < p; }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_;
  StreamTag tag_;
  std::uint32_t block_ = 0;
  std::array<std::uint32_t, 4> words_{};
  int used_ = 4;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

}  // namespace swindle
