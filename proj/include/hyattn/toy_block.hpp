#pragma once

#include <vector>

#include "hyattn/chunk.hpp"

namespace hyattn {

enum class AttentionVariant { SoftmaxFull, HybridCausal };
enum class MatchPoint { BlockOutput, AttentionOutput };

/// Frozen token-wise feed-forward map: two dense layers with one nonlinearity.
struct FeedForward {
    Tensor<double> w1; // Dm x Fh
    Tensor<double> b1; // 1 x Fh
    Tensor<double> w2; // Fh x Dm
    Tensor<double> b2; // 1 x Dm
    Activation activation = Activation::Tanh;
};

/// Single transformer block at toy scale: T(x) = f(A(x) + x). Teacher and
/// student share projections and the feed-forward map bit for bit; only the
/// student carries feature maps.
struct ToyBlock {
    AttentionVariant variant = AttentionVariant::SoftmaxFull;
    ChunkLayout layout; // layout.D is the per-head dim
    int n_heads = 1;
    std::vector<HeadProjection<double>> heads;
    FeedForward ff;
    std::vector<FeatureMap<double>> fmq, fmk; // per head; student only

    int model_dim() const { return n_heads * layout.D; }
};

ToyBlock make_toy_teacher(const ChunkLayout& layout, int n_heads, Rng& rng);

/// Copies the teacher's frozen weights and attaches freshly initialized
/// feature maps; the result is the hybrid-causal student.
ToyBlock make_toy_student(const ToyBlock& teacher, int degree, int hidden_dim,
                          int output_dim, Activation activation, NonnegMode nonneg,
                          Rng& rng);

Tensor<double> attention_forward(const ToyBlock& block, const Tensor<double>& x);
Tensor<double> feed_forward_apply(const FeedForward& ff, const Tensor<double>& u);
Tensor<double> block_forward(const ToyBlock& block, const Tensor<double>& x);

/// Teacher reference at the configured match point.
Tensor<double> teacher_targets(const ToyBlock& teacher, const Tensor<double>& x,
                               MatchPoint match);

bool frozen_weights_equal(const ToyBlock& a, const ToyBlock& b);

} // namespace hyattn
