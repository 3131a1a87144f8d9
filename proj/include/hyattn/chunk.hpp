#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "hyattn/attention.hpp"
#include "hyattn/feature_map.hpp"
#include "hyattn/tensor.hpp"

namespace hyattn {

namespace testhooks {
// Verification-suite fault injection: flips the sign of the kernelized
// key/value accumulation so a deliberately broken build is detectable.
inline bool linear_sign_fault = false;
} // namespace testhooks

/// Geometry of the temporally chunked token stream. Tokens are the row-major
/// flattening of a (T, H, W) latent; a chunk is Tc consecutive temporal
/// slices, and each chunk's softmax window reaches To slices back.
struct ChunkLayout {
    int T = 0;  // temporal slices
    int H = 0;  // height in tokens
    int W = 0;  // width in tokens
    int D = 0;  // per-head dim
    int Tc = 1; // chunk size in slices
    int To = 0; // overlap size in slices

    std::size_t tokens_per_slice() const { return std::size_t(H) * std::size_t(W); }
    std::size_t n_tokens() const { return std::size_t(T) * tokens_per_slice(); } // N
    std::size_t chunk_tokens() const { return std::size_t(Tc) * tokens_per_slice(); } // N'
    int n_chunks() const { return (T + Tc - 1) / Tc; } // T'

    std::size_t chunk_begin(int t) const { return std::size_t(t) * chunk_tokens(); }
    std::size_t chunk_end(int t) const {
        return std::min((std::size_t(t) + 1) * chunk_tokens(), n_tokens());
    }
    // Start of chunk t's softmax window: max(t*N' - To*H*W, 0).
    std::size_t window_begin(int t) const {
        const std::size_t cb = chunk_begin(t);
        const std::size_t back = std::size_t(To) * tokens_per_slice();
        return cb > back ? cb - back : 0;
    }
    // End of the delta set folded into the recurrent state after chunk t:
    // the tokens [window_begin(t), fold_end(t)) leave every later window.
    std::size_t fold_end(int t) const {
        const std::size_t next = (std::size_t(t) + 1) * chunk_tokens();
        const std::size_t back = std::size_t(To) * tokens_per_slice();
        return std::min(next > back ? next - back : 0, n_tokens());
    }
};

inline ChunkLayout make_layout(int T, int H, int W, int D, int Tc, int To) {
    if (T <= 0 || H <= 0 || W <= 0 || D <= 0)
        throw std::invalid_argument("layout: extents must be positive");
    if (Tc < 1 || Tc > T)
        throw std::invalid_argument("layout: chunk size must satisfy 1 <= Tc <= T");
    if (To < 0 || To > Tc)
        throw std::invalid_argument("layout: overlap must satisfy 0 <= To <= Tc");
    return ChunkLayout{T, H, W, D, Tc, To};
}

struct IndexRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - begin; }
    bool empty() const { return begin >= end; }
};

inline std::size_t total_size(const std::vector<IndexRange>& ranges) {
    std::size_t n = 0;
    for (const auto& r : ranges) n += r.size();
    return n;
}

/// Token partition for one chunk: the softmax set is the To-extended local
/// window in every variant; the linear set is everything else (non-causal)
/// or everything strictly before the window (causal).
struct Partition {
    int chunk = 0;
    bool causal = false;
    std::vector<IndexRange> softmax_set;
    std::vector<IndexRange> linear_set;
};

inline Partition partition_tokens(const ChunkLayout& layout, int t, bool causal) {
    if (t < 0 || t >= layout.n_chunks())
        throw std::out_of_range("partition_tokens: chunk index out of range");
    const std::size_t wb = layout.window_begin(t);
    const std::size_t ce = layout.chunk_end(t);
    const std::size_t n = layout.n_tokens();

    Partition p;
    p.chunk = t;
    p.causal = causal;
    p.softmax_set.push_back({wb, ce});
    if (wb > 0) p.linear_set.push_back({0, wb});
    if (!causal && ce < n) p.linear_set.push_back({ce, n});
    return p;
}

template <std::floating_point S>
struct SoftmaxPartial {
    Tensor<S> attn;       // a_S: shifted-exponential weighted value sum
    Tensor<S> norm;       // n_S: weight sum, one column
    Tensor<S> stabilizer; // c_t: per-query-row max scaled logit over the window
};

/// Softmax branch over the window set. The stabilizer is the per-row maximum
/// of the scaled logits; it shifts only this branch, so it is part of the
/// output contract, not just an implementation detail.
template <std::floating_point S>
SoftmaxPartial<S> softmax_partial(const Tensor<S>& q_chunk, const Tensor<S>& k,
                                  const Tensor<S>& v,
                                  const std::vector<IndexRange>& softmax_set,
                                  double scale_factor) {
    const std::size_t w = total_size(softmax_set);
    if (w == 0)
        throw std::invalid_argument("softmax_partial: empty softmax set (use the pure-linear path)");
    const std::size_t n = q_chunk.rows(), d = v.cols();
    if (q_chunk.cols() != k.cols() || k.rows() != v.rows())
        throw std::invalid_argument("softmax_partial: shape mismatch");

    SoftmaxPartial<S> out{Tensor<S>({n, d}), Tensor<S>({n, 1}), Tensor<S>({n, 1})};
    std::vector<S> logits(w);
    const S sc = S(scale_factor);
    for (std::size_t i = 0; i < n; ++i) {
        auto qi = q_chunk.row(i);
        std::size_t idx = 0;
        S mx = -std::numeric_limits<S>::infinity();
        for (const auto& r : softmax_set) {
            for (std::size_t j = r.begin; j < r.end; ++j, ++idx) {
                auto kj = k.row(j);
                S dot = 0;
                for (std::size_t c = 0; c < qi.size(); ++c) dot += qi[c] * kj[c];
                dot *= sc;
                logits[idx] = dot;
                mx = std::max(mx, dot);
            }
        }
        out.stabilizer.at(i, 0) = mx;
        auto a_i = out.attn.row(i);
        S norm = 0;
        idx = 0;
        for (const auto& r : softmax_set) {
            for (std::size_t j = r.begin; j < r.end; ++j, ++idx) {
                const S wgt = std::exp(logits[idx] - mx);
                norm += wgt;
                auto vj = v.row(j);
                for (std::size_t c = 0; c < d; ++c) a_i[c] += wgt * vj[c];
            }
        }
        out.norm.at(i, 0) = norm;
    }
    opcount::madd(n * w * q_chunk.cols()); // logits
    opcount::mul(n * w);                   // scaling
    opcount::cmp(n * w);
    opcount::add(n * w); // shift
    opcount::expo(n * w);
    opcount::add(n * w);     // weight sums
    opcount::madd(n * w * d); // weighted values
    require_finite(out.attn, "softmax_partial");
    return out;
}

/// Running sums of the kernelized branch: kv_sum = sum phi(k_j) v_j^T and
/// key_sum = sum phi(k_j) over whatever token set has been folded in.
template <std::floating_point S>
struct LinearState {
    Tensor<S> kv_sum;  // D' x D
    Tensor<S> key_sum; // D' x 1

    static LinearState zeros(std::size_t d_prime, std::size_t d) {
        return {Tensor<S>({d_prime, d}), Tensor<S>({d_prime, 1})};
    }
};

/// Folds tokens [begin, end) into the state, in index order.
template <std::floating_point S>
void fold_linear_state(LinearState<S>& state, const Tensor<S>& phi_k_rows,
                       const Tensor<S>& v, std::size_t v_begin, std::size_t phi_begin,
                       std::size_t count) {
    const std::size_t dp = state.kv_sum.rows(), d = state.kv_sum.cols();
    const S sign = testhooks::linear_sign_fault ? S(-1) : S(1);
    for (std::size_t j = 0; j < count; ++j) {
        auto pk = phi_k_rows.row(phi_begin + j);
        auto vj = v.row(v_begin + j);
        for (std::size_t a = 0; a < dp; ++a) {
            const S pka = sign * pk[a];
            state.key_sum.at(a, 0) += pka;
            auto row = state.kv_sum.row(a);
            for (std::size_t b = 0; b < d; ++b) row[b] += pka * vj[b];
        }
    }
    opcount::madd(count * dp * d);
    opcount::add(count * dp);
}

template <std::floating_point S>
LinearState<S> linear_state_sums(const Tensor<S>& k, const Tensor<S>& v,
                                 const std::vector<IndexRange>& linear_set,
                                 const FeatureMap<S>& fmk) {
    auto state = LinearState<S>::zeros(fmk.feature_dim(), v.cols());
    for (const auto& r : linear_set) {
        if (r.empty()) continue;
        const Tensor<S> phi_k = feature_map_apply(fmk, row_slice(k, r.begin, r.end));
        fold_linear_state(state, phi_k, v, r.begin, 0, r.size());
    }
    return state;
}

template <std::floating_point S>
struct LinearPartial {
    Tensor<S> attn; // a_L
    Tensor<S> norm; // n_L, one column
};

template <std::floating_point S>
LinearPartial<S> linear_from_state(const Tensor<S>& phi_q, const LinearState<S>& state) {
    return {matmul(phi_q, state.kv_sum), matmul(phi_q, state.key_sum)};
}

/// Kernelized branch over the linear set; an empty set yields zeros.
template <std::floating_point S>
LinearPartial<S> linear_partial(const Tensor<S>& q_chunk, const Tensor<S>& k,
                                const Tensor<S>& v,
                                const std::vector<IndexRange>& linear_set,
                                const FeatureMap<S>& fmq, const FeatureMap<S>& fmk) {
    if (fmq.feature_dim() != fmk.feature_dim())
        throw std::invalid_argument("linear_partial: feature dims differ");
    if (total_size(linear_set) == 0)
        return {Tensor<S>({q_chunk.rows(), v.cols()}), Tensor<S>({q_chunk.rows(), 1})};
    const Tensor<S> phi_q = feature_map_apply(fmq, q_chunk);
    return linear_from_state(phi_q, linear_state_sums(k, v, linear_set, fmk));
}

template <std::floating_point S>
struct HybridChunkOutput {
    Tensor<S> attn_softmax; // a_S
    Tensor<S> norm_softmax; // n_S
    Tensor<S> attn_linear;  // a_L
    Tensor<S> norm_linear;  // n_L
    Tensor<S> stabilizer;   // c_t
    Tensor<S> output;       // y-hat = (a_S + a_L) / (n_S + n_L)
};

/// Joint normalization of the two branches, with the denominator floored.
template <std::floating_point S>
Tensor<S> combine_hybrid(const Tensor<S>& attn_softmax, const Tensor<S>& norm_softmax,
                         const Tensor<S>& attn_linear, const Tensor<S>& norm_linear) {
    const std::size_t n = attn_softmax.rows(), d = attn_softmax.cols();
    Tensor<S> out({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        S denom = norm_softmax.at(i, 0) + norm_linear.at(i, 0);
        if (denom < denom_floor<S>) denom = denom_floor<S>;
        const S inv = S(1) / denom;
        for (std::size_t c = 0; c < d; ++c)
            out.at(i, c) = (attn_softmax.at(i, c) + attn_linear.at(i, c)) * inv;
    }
    opcount::add(n * (d + 1));
    opcount::div(n);
    opcount::mul(n * d);
    require_finite(out, "combine_hybrid");
    return out;
}

/// Hybrid attention for one chunk of a single head. The optional partition
/// override exists so degenerate token splits (pure softmax, pure linear)
/// are reachable in tests; the configuration space cannot express them.
template <std::floating_point S>
HybridChunkOutput<S> hybrid_attention_chunk(const Tensor<S>& x, const HeadProjection<S>& w,
                                            const FeatureMap<S>& fmq, const FeatureMap<S>& fmk,
                                            const ChunkLayout& layout, int t, bool causal,
                                            const Partition* partition_override = nullptr) {
    if (x.rows() != layout.n_tokens() || x.cols() != std::size_t(layout.D))
        throw std::invalid_argument("hybrid_attention_chunk: input does not match layout");
    const Partition part =
        partition_override ? *partition_override : partition_tokens(layout, t, causal);
    const auto [q, k, v] = project_qkv(x, w);
    const Tensor<S> q_chunk = row_slice(q, layout.chunk_begin(t), layout.chunk_end(t));
    const double scale_factor = 1.0 / std::sqrt(double(layout.D));

    HybridChunkOutput<S> out;
    const std::size_t n = q_chunk.rows(), d = v.cols();
    if (total_size(part.softmax_set) > 0) {
        auto sp = softmax_partial(q_chunk, k, v, part.softmax_set, scale_factor);
        out.attn_softmax = std::move(sp.attn);
        out.norm_softmax = std::move(sp.norm);
        out.stabilizer = std::move(sp.stabilizer);
    } else {
        out.attn_softmax = Tensor<S>({n, d});
        out.norm_softmax = Tensor<S>({n, 1});
        out.stabilizer = Tensor<S>({n, 1});
    }
    auto lp = linear_partial(q_chunk, k, v, part.linear_set, fmq, fmk);
    out.attn_linear = std::move(lp.attn);
    out.norm_linear = std::move(lp.norm);
    out.output = combine_hybrid(out.attn_softmax, out.norm_softmax, out.attn_linear,
                                out.norm_linear);
    return out;
}

/// All chunks of a single head. The linear-branch sums are maintained
/// incrementally (prefix state folded in token order, plus per-chunk suffix
/// snapshots in the non-causal form), so total work is linear in N.
template <std::floating_point S>
Tensor<S> hybrid_attention_full(const Tensor<S>& x, const HeadProjection<S>& w,
                                const FeatureMap<S>& fmq, const FeatureMap<S>& fmk,
                                const ChunkLayout& layout, bool causal) {
    if (x.rows() != layout.n_tokens() || x.cols() != std::size_t(layout.D))
        throw std::invalid_argument("hybrid_attention_full: input does not match layout");
    const auto [q, k, v] = project_qkv(x, w);
    const double scale_factor = 1.0 / std::sqrt(double(layout.D));
    const int n_chunks = layout.n_chunks();
    const std::size_t n = layout.n_tokens(), d = v.cols();
    const std::size_t dp = fmq.feature_dim();

    // Suffix-sum snapshots for the non-causal linear set [chunk_end, N).
    std::vector<LinearState<S>> suffix;
    Tensor<S> phi_k_all;
    if (!causal) {
        phi_k_all = feature_map_apply(fmk, k);
        suffix.assign(n_chunks, LinearState<S>::zeros(dp, d));
        for (int t = n_chunks - 2; t >= 0; --t) {
            suffix[t] = suffix[t + 1];
            const std::size_t b = layout.chunk_end(t), e = layout.chunk_end(t + 1);
            fold_linear_state(suffix[t], phi_k_all, v, b, b, e - b);
        }
    }

    auto prefix = LinearState<S>::zeros(dp, d);
    Tensor<S> out({n, d});
    for (int t = 0; t < n_chunks; ++t) {
        const std::size_t cb = layout.chunk_begin(t), ce = layout.chunk_end(t);
        const std::size_t wb = layout.window_begin(t);
        const Tensor<S> q_chunk = row_slice(q, cb, ce);
        auto sp = softmax_partial(q_chunk, k, v, {{wb, ce}}, scale_factor);

        const Tensor<S> phi_q = feature_map_apply(fmq, q_chunk);
        LinearPartial<S> lp;
        if (causal) {
            lp = linear_from_state(phi_q, prefix);
        } else {
            LinearState<S> both{add(prefix.kv_sum, suffix[t].kv_sum),
                                add(prefix.key_sum, suffix[t].key_sum)};
            lp = linear_from_state(phi_q, both);
        }
        const Tensor<S> y = combine_hybrid(sp.attn, sp.norm, lp.attn, lp.norm);
        for (std::size_t i = 0; i < y.rows(); ++i)
            std::copy(y.row(i).begin(), y.row(i).end(), out.row(i + cb).begin());

        // Fold the tokens that leave every later softmax window:
        // delta_t = [window_begin(t), fold_end(t)).
        const std::size_t next_wb = layout.fold_end(t);
        if (next_wb > wb) {
            if (causal) {
                const Tensor<S> phi_k =
                    feature_map_apply(fmk, row_slice(k, wb, next_wb));
                fold_linear_state(prefix, phi_k, v, wb, 0, next_wb - wb);
            } else {
                fold_linear_state(prefix, phi_k_all, v, wb, wb, next_wb - wb);
            }
        }
    }
    return out;
}

/// Multi-head batch form: heads are independent, each with its own
/// projections and feature maps; outputs are concatenated along features.
template <std::floating_point S>
Tensor<S> hybrid_attention_full_multihead(const Tensor<S>& x,
                                          const std::vector<HeadProjection<S>>& heads,
                                          const std::vector<FeatureMap<S>>& fmq,
                                          const std::vector<FeatureMap<S>>& fmk,
                                          const ChunkLayout& layout, bool causal) {
    const int n_heads = int(heads.size());
    if (fmq.size() != heads.size() || fmk.size() != heads.size())
        throw std::invalid_argument("hybrid multihead: per-head map count mismatch");
    const auto head_inputs = split_heads(x, n_heads);
    std::vector<Tensor<S>> outs;
    outs.reserve(n_heads);
    for (int h = 0; h < n_heads; ++h)
        outs.push_back(
            hybrid_attention_full(head_inputs[h], heads[h], fmq[h], fmk[h], layout, causal));
    return concat_heads(outs);
}

template <std::floating_point S>
Tensor<S> softmax_attention_multihead(const Tensor<S>& x,
                                      const std::vector<HeadProjection<S>>& heads,
                                      int head_dim) {
    const auto head_inputs = split_heads(x, int(heads.size()));
    const double scale_factor = 1.0 / std::sqrt(double(head_dim));
    std::vector<Tensor<S>> outs;
    outs.reserve(heads.size());
    for (std::size_t h = 0; h < heads.size(); ++h) {
        const auto [q, k, v] = project_qkv(head_inputs[h], heads[h]);
        outs.push_back(softmax_attention(q, k, v, scale_factor));
    }
    return concat_heads(outs);
}

} // namespace hyattn
