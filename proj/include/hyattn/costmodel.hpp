#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hyattn/recurrent.hpp"

namespace hyattn {

/// Analytic operation count. Convention: one FLOP per scalar multiply and per
/// add; exp, div and compare count one each. flops is the sum of the five
/// breakdown terms.
struct CostReport {
    std::string variant;
    std::uint64_t flops = 0;
    std::uint64_t flops_projection = 0;
    std::uint64_t flops_scores = 0;   // exp-branch logits
    std::uint64_t flops_weighted = 0; // exp-branch value aggregation
    std::uint64_t flops_linear = 0;   // kernelized branch: sums, folds, normalizers
    std::uint64_t flops_phi = 0;      // feature-map applications
    std::size_t peak_activation_bytes = 0;
    std::size_t state_bytes = 0;

    std::uint64_t breakdown_sum() const {
        return flops_projection + flops_scores + flops_weighted + flops_linear + flops_phi;
    }
};

/// Feature-map cost shape; defaults mirror default_feature_map.
struct PhiDims {
    int hidden = 0; // D_h
    int out = 0;    // D_e == D'
    int degree = 2;
    bool nonneg = true;

    static PhiDims defaults(int head_dim, int d_prime) {
        return PhiDims{2 * head_dim, d_prime, 2, true};
    }
    std::uint64_t flops_per_token(int input_dim) const;
};

CostReport flops_softmax(std::size_t n_tokens, int head_dim, int heads,
                         Precision precision = Precision::Single);

CostReport flops_linear_attn(std::size_t n_tokens, int head_dim, int heads, int d_prime,
                             const PhiDims& phi, bool include_phi_cost = true,
                             Precision precision = Precision::Single);

CostReport flops_hybrid(const ChunkLayout& layout, int d_prime, int heads, bool causal,
                        bool include_phi_cost = true,
                        const PhiDims* phi_dims = nullptr,
                        Precision precision = Precision::Single);

struct SweepRow {
    std::string variant;
    ChunkLayout layout;
    int heads = 0;
    int d_prime = 0;
    CostReport cost;
};

struct SweepSpec {
    int H = 30, W = 52;
    int head_dim = 128;
    int heads = 12;
    int Tc = 3, To = 1;
    int d_prime = 256; // 2 * head_dim
    bool causal = true;
    Precision precision = Precision::Single;
    std::vector<std::string> variants{"softmax", "linear", "hybrid"};
};

std::vector<SweepRow> sweep_durations(const SweepSpec& spec,
                                      const std::vector<int>& durations);

std::string sweep_csv_header();
std::string sweep_csv_row(const SweepRow& row);

/// Least-squares slope of log(flops) against log(N) over sweep points.
double loglog_slope(const std::vector<std::pair<double, double>>& n_vs_flops);

/// Smallest duration T (in [Tc, t_max]) from which hybrid stays cheaper than
/// full softmax; returns the token count N*, or 0 if no crossover was found.
std::size_t crossover_tokens(const SweepSpec& spec, int t_max);

} // namespace hyattn
