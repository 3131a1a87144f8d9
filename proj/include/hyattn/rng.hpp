#pragma once

#include <cstdint>
#include <vector>

#include "hyattn/tensor.hpp"

namespace hyattn {

enum class Dist {
    UniformSym, // uniform on [-1, 1)
    Normal,     // standard normal
};

/// Counter-based generator: the output sequence is a pure function of
/// (seed, stream, draw index), so independent streams need no shared state
/// and sequences are identical across runs and platforms.
class Rng {
  public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    std::uint64_t next_u64();
    double uniform();     // [0, 1)
    double uniform_sym(); // [-1, 1)
    double normal();      // Box-Muller over counter-based uniforms

  private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

template <std::floating_point S>
Tensor<S> random_tensor(Rng& rng, std::vector<std::size_t> shape, Dist dist) {
    Tensor<S> out(std::move(shape));
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<S>(dist == Dist::Normal ? rng.normal() : rng.uniform_sym());
    return out;
}

} // namespace hyattn
