#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hyattn/toy_block.hpp"

namespace hyattn {

enum class Optimizer { Sgd, AdamW };

struct DistillConfig {
    double eta = 1e-3;
    int steps = 500;
    int batch_size = 1;
    std::uint64_t seed = 7;
    Optimizer optimizer = Optimizer::Sgd;
    MatchPoint match = MatchPoint::BlockOutput;
    int heldout_samples = 8;
    int eval_interval = 25;
    // adaptive-moment settings, used only with Optimizer::AdamW
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;
};

/// Synthetic stand-in for a diffusion-trajectory activation: standard normal
/// tokens with a per-sample global scale drawn log-uniform in [0.5, 2].
/// Reproducible from its identifiers.
struct DistillSample {
    Tensor<double> x;
    std::uint64_t epsilon_seed = 0;
    int prompt_id = 0;
    int step_id = 0;
};

DistillSample make_distill_sample(const ChunkLayout& layout, int model_dim,
                                  std::uint64_t base_seed, std::uint64_t sample_index);

/// Mean absolute teacher-student activation gap.
double distill_loss(const Tensor<double>& y_teacher, const Tensor<double>& y_student);

struct FeatureMapGrads {
    Tensor<double> w1, b1, w2, b2;
};

struct PhiGradients {
    std::vector<FeatureMapGrads> fmq, fmk; // per head
    double loss = 0.0;
};

/// Exact reverse-mode gradients of the distillation loss with respect to all
/// feature-map parameters of the hybrid-causal student. Projection weights
/// and the feed-forward map are frozen and receive no gradient.
PhiGradients grad_phi(const ToyBlock& student, const Tensor<double>& x,
                      const Tensor<double>& teacher_out, MatchPoint match);

/// Forward-only loss through the same evaluation path the gradients use.
double student_loss(const ToyBlock& student, const Tensor<double>& x,
                    const Tensor<double>& teacher_out, MatchPoint match);

// Flat views over the student's feature-map parameters, in a fixed order.
std::vector<double> flatten_phi_params(const ToyBlock& student);
void set_phi_params(ToyBlock& student, const std::vector<double>& values);
std::vector<double> flatten_phi_grads(const PhiGradients& grads);

/// Central-difference gradient of the student loss; the oracle for the
/// reverse-mode path.
std::vector<double> finite_difference_phi(const ToyBlock& student, const Tensor<double>& x,
                                          const Tensor<double>& teacher_out, MatchPoint match,
                                          double h = 1e-5);

/// Worst per-parameter |a - f| / (|a| + |f|). Pairs whose absolute gap is
/// below abs_floor count as agreeing: central differences bottom out around
/// eps * loss / h, so relative error is meaningless for near-zero gradients.
double worst_gradient_error(const std::vector<double>& analytic,
                            const std::vector<double>& fd, double abs_floor = 1e-8);

struct LossRow {
    int step = 0;
    double train_loss = 0.0;
    double heldout_loss = 0.0; // most recent evaluation
};

struct TrainResult {
    std::vector<LossRow> trace;
    double initial_heldout = 0.0;
    double final_heldout = 0.0;
    ToyBlock student; // with trained feature maps
};

/// Gradient descent on the feature-map parameters only; deterministic given
/// the config. Throws on divergence, reporting the step index.
TrainResult train_distill(const ToyBlock& teacher, ToyBlock student,
                          const DistillConfig& cfg);

} // namespace hyattn
