#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "hyattn/feature_map.hpp"
#include "hyattn/tensor.hpp"

namespace hyattn {

/// Per-head q/k/v projection weights, each D x D for per-head dim D.
template <std::floating_point S>
struct HeadProjection {
    Tensor<S> wq, wk, wv;

    void validate() const {
        const std::size_t d = wq.rows();
        if (wq.cols() != d || wk.rows() != d || wk.cols() != d || wv.rows() != d ||
            wv.cols() != d)
            throw std::invalid_argument("head projection: weights must be square and matching");
    }
};

struct AttentionConfig {
    int n_heads = 1;
    int head_dim = 0;
    double scale = 0.0; // defaults to 1/sqrt(head_dim) when <= 0

    double effective_scale() const {
        if (head_dim <= 0) throw std::invalid_argument("attention config: head_dim must be positive");
        return scale > 0.0 ? scale : 1.0 / std::sqrt(double(head_dim));
    }
};

// Denominator floor for the kernelized normalizer; positivity of phi makes a
// true zero measure-zero but finite precision still needs a floor.
template <std::floating_point S>
inline constexpr S denom_floor = std::same_as<S, double> ? S(1e-12) : S(1e-6);

struct ClampPolicy {
    double max_clamped_fraction = 0.5; // error beyond this fraction of rows
};

template <std::floating_point S>
struct QkvProjection {
    Tensor<S> q, k, v;
};

template <std::floating_point S>
QkvProjection<S> project_qkv(const Tensor<S>& x, const HeadProjection<S>& w) {
    w.validate();
    if (x.cols() != w.wq.rows())
        throw std::invalid_argument("project_qkv: input width does not match weights");
    return {matmul(x, w.wq), matmul(x, w.wk), matmul(x, w.wv)};
}

/// Reference softmax attention, Eq. 2 semantics with row-max stabilization.
template <std::floating_point S>
Tensor<S> softmax_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                            double scale_factor) {
    if (q.cols() != k.cols() || k.rows() != v.rows())
        throw std::invalid_argument("softmax_attention: shape mismatch");
    Tensor<S> logits = matmul_bt(q, k);
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] *= S(scale_factor);
    opcount::mul(logits.size());

    const SoftmaxTerms<S> terms = stable_row_softmax_terms(logits);
    Tensor<S> out = matmul(terms.expvals, v);
    const std::size_t n = q.rows(), d = v.cols(), m = k.rows();
    for (std::size_t i = 0; i < n; ++i) {
        S denom = 0;
        auto e_i = terms.expvals.row(i);
        for (std::size_t j = 0; j < m; ++j) denom += e_i[j];
        const S inv = S(1) / denom;
        auto o_i = out.row(i);
        for (std::size_t j = 0; j < d; ++j) o_i[j] *= inv;
    }
    opcount::add(n * m);
    opcount::div(n);
    opcount::mul(n * d);
    require_finite(out, "softmax_attention");
    return out;
}

/// Kernelized linear attention: the key/value sums are computed once, giving
/// O(N * D' * D) total work.
template <std::floating_point S>
Tensor<S> linear_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                           const FeatureMap<S>& fmq, const FeatureMap<S>& fmk,
                           ClampPolicy clamp = {}) {
    if (fmq.feature_dim() != fmk.feature_dim())
        throw std::invalid_argument("linear_attention: feature dims differ");
    if (k.rows() != v.rows())
        throw std::invalid_argument("linear_attention: k/v row mismatch");
    const std::size_t n = q.rows(), m = k.rows(), d = v.cols();
    const std::size_t dp = fmq.feature_dim();

    const Tensor<S> phi_q = feature_map_apply(fmq, q);
    const Tensor<S> phi_k = feature_map_apply(fmk, k);

    // kv_sum = sum_j phi(k_j) v_j^T, key_sum = sum_j phi(k_j)
    Tensor<S> kv_sum({dp, d});
    Tensor<S> key_sum({dp, 1});
    for (std::size_t j = 0; j < m; ++j) {
        auto pk = phi_k.row(j);
        auto vj = v.row(j);
        for (std::size_t a = 0; a < dp; ++a) {
            const S pka = pk[a];
            key_sum.at(a, 0) += pka;
            auto row = kv_sum.row(a);
            for (std::size_t b = 0; b < d; ++b) row[b] += pka * vj[b];
        }
    }
    opcount::madd(m * dp * d);
    opcount::add(m * dp);

    Tensor<S> num = matmul(phi_q, kv_sum);
    Tensor<S> den = matmul(phi_q, key_sum);
    std::size_t clamped = 0;
    Tensor<S> out({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        S denom = den.at(i, 0);
        if (denom < denom_floor<S>) {
            denom = denom_floor<S>;
            ++clamped;
        }
        const S inv = S(1) / denom;
        for (std::size_t b = 0; b < d; ++b) out.at(i, b) = num.at(i, b) * inv;
    }
    opcount::div(n);
    opcount::mul(n * d);
    if (n > 0 && double(clamped) / double(n) > clamp.max_clamped_fraction)
        throw std::domain_error("linear_attention: normalizer underflowed on too many rows");
    require_finite(out, "linear_attention");
    return out;
}

/// Column split of an N x (heads*D) activation into per-head N x D slices.
template <std::floating_point S>
std::vector<Tensor<S>> split_heads(const Tensor<S>& x, int n_heads) {
    if (n_heads <= 0 || x.cols() % std::size_t(n_heads) != 0)
        throw std::invalid_argument("split_heads: width not divisible by head count");
    const std::size_t d = x.cols() / std::size_t(n_heads);
    std::vector<Tensor<S>> out;
    out.reserve(n_heads);
    for (int h = 0; h < n_heads; ++h)
        out.push_back(col_slice(x, h * d, (h + 1) * d));
    return out;
}

template <std::floating_point S>
Tensor<S> concat_heads(const std::vector<Tensor<S>>& heads) {
    if (heads.empty()) throw std::invalid_argument("concat_heads: no heads");
    const std::size_t n = heads.front().rows();
    std::size_t total = 0;
    for (const auto& h : heads) {
        if (h.rows() != n) throw std::invalid_argument("concat_heads: row mismatch");
        total += h.cols();
    }
    Tensor<S> out({n, total});
    std::size_t off = 0;
    for (const auto& h : heads) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < h.cols(); ++j) out.at(i, off + j) = h.at(i, j);
        off += h.cols();
    }
    return out;
}

template <std::floating_point S>
HeadProjection<S> random_head_projection(int head_dim, Rng& rng) {
    const S s = S(1) / std::sqrt(S(head_dim));
    auto draw = [&] {
        Tensor<S> w =
            random_tensor<S>(rng, {std::size_t(head_dim), std::size_t(head_dim)}, Dist::Normal);
        for (std::size_t i = 0; i < w.size(); ++i) w[i] *= s;
        return w;
    };
    HeadProjection<S> p{draw(), draw(), draw()};
    return p;
}

} // namespace hyattn
