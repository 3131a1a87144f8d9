#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "hyattn/chunk.hpp"
#include "hyattn/distill.hpp"
#include "hyattn/recurrent.hpp"

namespace hyattn {

/// Experiment configuration; JSON with strict unknown-key rejection, since a
/// silently ignored typo in a hyperparameter is the classic reproduction
/// killer. All module-level invariants are re-validated at load.
struct ExperimentConfig {
    // layout
    int T = 12, H = 2, W = 2;
    int D_model = 16;
    int heads = 2;
    int Tc = 2, To = 1;
    bool causal = true;

    // feature map
    int P = 2;
    int D_h = 0; // 0 -> 2 * head_dim
    int D_e = 0; // 0 -> 2 * head_dim
    std::string nonneg_mode = "shifted-elu";
    std::string activation = "tanh";

    // distillation
    double eta = 1e-3;
    int steps = 500;
    std::uint64_t seed = 7;
    int batch_size = 1;
    std::string optimizer = "sgd";
    std::string match_point = "block";
    int heldout_samples = 8;
    int eval_interval = 25;

    // sweeps
    std::vector<int> durations{21, 42, 84, 168};
    std::vector<std::string> variants{"softmax", "linear", "hybrid"};
    std::vector<int> stream_durations{21, 210, 2100};

    // cost-model dims for the bench sweep (Wan-like defaults)
    int bench_H = 30, bench_W = 52;
    int bench_heads = 12;
    int bench_head_dim = 128;
    int bench_Tc = 3, bench_To = 1;
    int bench_Dprime = 256;

    std::string precision = "double";
    std::string out_dir = "out";

    // test hook: deliberately breaks the kernelized accumulation so the
    // verification suite can prove it detects faults
    bool inject_fault_linear_sign = false;

    int head_dim() const { return D_model / heads; }
    int phi_hidden() const { return D_h > 0 ? D_h : 2 * head_dim(); }
    int phi_out() const { return D_e > 0 ? D_e : 2 * head_dim(); }
    ChunkLayout layout() const { return make_layout(T, H, W, head_dim(), Tc, To); }
    Precision precision_enum() const;
    Activation activation_enum() const { return activation_from_string(activation); }
    NonnegMode nonneg_enum() const { return nonneg_from_string(nonneg_mode); }
    DistillConfig distill_config() const;

    void validate() const;

    bool operator==(const ExperimentConfig&) const = default;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);

} // namespace hyattn
