#include "hyattn/toy_block.hpp"

namespace hyattn {

ToyBlock make_toy_teacher(const ChunkLayout& layout, int n_heads, Rng& rng) {
    ToyBlock b;
    b.variant = AttentionVariant::SoftmaxFull;
    b.layout = layout;
    b.n_heads = n_heads;
    for (int h = 0; h < n_heads; ++h)
        b.heads.push_back(random_head_projection<double>(layout.D, rng));

    const int dm = b.model_dim();
    const int fh = 2 * dm;
    const double s1 = 1.0 / std::sqrt(double(dm));
    const double s2 = 1.0 / std::sqrt(double(fh));
    b.ff.w1 = random_tensor<double>(rng, {std::size_t(dm), std::size_t(fh)}, Dist::Normal);
    b.ff.w2 = random_tensor<double>(rng, {std::size_t(fh), std::size_t(dm)}, Dist::Normal);
    for (std::size_t i = 0; i < b.ff.w1.size(); ++i) b.ff.w1[i] *= s1;
    for (std::size_t i = 0; i < b.ff.w2.size(); ++i) b.ff.w2[i] *= s2;
    b.ff.b1 = Tensor<double>({1, std::size_t(fh)});
    b.ff.b2 = Tensor<double>({1, std::size_t(dm)});
    b.ff.activation = Activation::Tanh;
    return b;
}

ToyBlock make_toy_student(const ToyBlock& teacher, int degree, int hidden_dim,
                          int output_dim, Activation activation, NonnegMode nonneg,
                          Rng& rng) {
    ToyBlock s = teacher;
    s.variant = AttentionVariant::HybridCausal;
    s.fmq.clear();
    s.fmk.clear();
    for (int h = 0; h < s.n_heads; ++h) {
        s.fmq.push_back(init_feature_map<double>(s.layout.D, hidden_dim, output_dim, degree,
                                                 activation, nonneg, rng));
        s.fmk.push_back(init_feature_map<double>(s.layout.D, hidden_dim, output_dim, degree,
                                                 activation, nonneg, rng));
    }
    return s;
}

Tensor<double> attention_forward(const ToyBlock& block, const Tensor<double>& x) {
    if (block.variant == AttentionVariant::SoftmaxFull)
        return softmax_attention_multihead(x, block.heads, block.layout.D);
    return hybrid_attention_full_multihead(x, block.heads, block.fmq, block.fmk,
                                           block.layout, /*causal=*/true);
}

Tensor<double> feed_forward_apply(const FeedForward& ff, const Tensor<double>& u) {
    Tensor<double> h1 = matmul(u, ff.w1);
    for (std::size_t i = 0; i < h1.rows(); ++i)
        for (std::size_t j = 0; j < h1.cols(); ++j)
            h1.at(i, j) = apply_activation(ff.activation, h1.at(i, j) + ff.b1.at(0, j));
    Tensor<double> out = matmul(h1, ff.w2);
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) += ff.b2.at(0, j);
    return out;
}

Tensor<double> block_forward(const ToyBlock& block, const Tensor<double>& x) {
    return feed_forward_apply(block.ff, add(attention_forward(block, x), x));
}

Tensor<double> teacher_targets(const ToyBlock& teacher, const Tensor<double>& x,
                               MatchPoint match) {
    return match == MatchPoint::BlockOutput ? block_forward(teacher, x)
                                            : attention_forward(teacher, x);
}

bool frozen_weights_equal(const ToyBlock& a, const ToyBlock& b) {
    if (a.n_heads != b.n_heads) return false;
    for (int h = 0; h < a.n_heads; ++h) {
        if (!(a.heads[h].wq == b.heads[h].wq) || !(a.heads[h].wk == b.heads[h].wk) ||
            !(a.heads[h].wv == b.heads[h].wv))
            return false;
    }
    return a.ff.w1 == b.ff.w1 && a.ff.b1 == b.ff.b1 && a.ff.w2 == b.ff.w2 &&
           a.ff.b2 == b.ff.b2 && a.ff.activation == b.ff.activation;
}

} // namespace hyattn
