#pragma once

#include <string>
#include <vector>

#include "hyattn/config.hpp"
#include "hyattn/recurrent.hpp"

namespace hyattn {

struct PropertyResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

/// Runs the invariant suite of every module. Honors the config's fault
/// injection hook.
std::vector<PropertyResult> run_verification(const ExperimentConfig& cfg);

bool all_passed(const std::vector<PropertyResult>& results);

/// Randomized instance of the causal hybrid problem for cross-checking the
/// batch and streaming paths.
template <std::floating_point S>
struct EquivalenceInstance {
    ChunkLayout layout;
    std::vector<HeadProjection<S>> heads;
    std::vector<FeatureMap<S>> fmq, fmk;
    Tensor<S> x;
};

template <std::floating_point S>
EquivalenceInstance<S> random_equivalence_instance(Rng& dims_rng, std::uint64_t seed,
                                                   int t_max = 12, int hw_max = 3,
                                                   int d_max = 8) {
    const int T = 1 + int(dims_rng.next_u64() % std::uint64_t(t_max));
    const int H = 1 + int(dims_rng.next_u64() % std::uint64_t(hw_max));
    const int W = 1 + int(dims_rng.next_u64() % std::uint64_t(hw_max));
    const int D = 2 * (1 + int(dims_rng.next_u64() % std::uint64_t(d_max / 2)));
    const int Tc = 1 + int(dims_rng.next_u64() % std::uint64_t(T));
    const int To = int(dims_rng.next_u64() % std::uint64_t(Tc + 1));
    const int n_heads = 1 + int(dims_rng.next_u64() % 2);

    EquivalenceInstance<S> inst;
    inst.layout = make_layout(T, H, W, D, Tc, To);
    Rng value_rng(seed, dims_rng.next_u64());
    for (int h = 0; h < n_heads; ++h) {
        inst.heads.push_back(random_head_projection<S>(D, value_rng));
        inst.fmq.push_back(default_feature_map<S>(D, value_rng));
        inst.fmk.push_back(default_feature_map<S>(D, value_rng));
    }
    inst.x = random_tensor<S>(
        value_rng, {inst.layout.n_tokens(), std::size_t(n_heads * D)}, Dist::Normal);
    return inst;
}

/// Max |batch - stream| over randomized causal instances.
template <std::floating_point S>
double rnn_batch_equivalence_max_diff(std::uint64_t seed, int instances, int t_max = 12,
                                      int hw_max = 3, int d_max = 8) {
    Rng dims_rng(seed, 0xE0);
    double worst = 0.0;
    for (int i = 0; i < instances; ++i) {
        const auto inst =
            random_equivalence_instance<S>(dims_rng, seed, t_max, hw_max, d_max);
        const Tensor<S> batch = hybrid_attention_full_multihead(
            inst.x, inst.heads, inst.fmq, inst.fmk, inst.layout, /*causal=*/true);
        auto session =
            make_stream_session<S>(inst.layout, inst.heads, inst.fmq, inst.fmk);
        const auto run = stream_run(session, inst.x);
        worst = std::max(worst, double(max_abs_diff(batch, run.output)));
    }
    return worst;
}

} // namespace hyattn
