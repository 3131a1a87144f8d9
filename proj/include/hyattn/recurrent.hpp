#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "hyattn/chunk.hpp"

namespace hyattn {

enum class Precision { Single, Double };

inline std::size_t bytes_per_scalar(Precision p) {
    return p == Precision::Double ? 8 : 4;
}

/// Constant-size memory of the streaming form: the kernelized key/value sum
/// and its normalizer over every token that has left the softmax window.
/// Size depends only on (D', D), never on the stream length.
template <std::floating_point S>
struct RecurrentState {
    Tensor<S> value_state; // s: D' x D
    Tensor<S> norm_state;  // z: D' x 1
    std::size_t absorbed = 0; // tokens folded in so far
    int chunk_cursor = 0;

    std::size_t state_bytes() const {
        return (value_state.size() + norm_state.size()) * sizeof(S);
    }
};

template <std::floating_point S>
RecurrentState<S> init_state(int d_prime, int head_dim) {
    if (d_prime <= 0 || head_dim <= 0)
        throw std::invalid_argument("init_state: dims must be positive");
    return RecurrentState<S>{Tensor<S>({std::size_t(d_prime), std::size_t(head_dim)}),
                             Tensor<S>({std::size_t(d_prime), 1})};
}

struct MemoryReport {
    std::size_t state_bytes = 0;
    std::size_t window_bytes = 0;
    std::size_t per_chunk_transient_bytes = 0;
};

/// Closed-form per-head byte counts for one streaming step. state_bytes is a
/// function of (D', D, precision) only.
inline MemoryReport peak_memory_report(const ChunkLayout& layout, int d_prime,
                                       Precision precision) {
    const std::size_t b = bytes_per_scalar(precision);
    const std::size_t dp = std::size_t(d_prime), d = std::size_t(layout.D);
    const std::size_t window_rows =
        std::min(std::size_t(layout.Tc + layout.To) * layout.tokens_per_slice(),
                 layout.n_tokens());
    const std::size_t np = layout.chunk_tokens();
    MemoryReport r;
    r.state_bytes = (dp * d + dp) * b;
    r.window_bytes = 2 * window_rows * d * b; // cached k and v
    // window + per-chunk q, phi_q, output, normalizer and stabilizer columns
    r.per_chunk_transient_bytes = r.window_bytes + np * (2 * d + dp + 2) * b;
    return r;
}

/// Streaming evaluator. Chunks must be fed in order; the session owns the
/// per-head recurrent states plus a cache of the last To slices' keys and
/// values so the next chunk's softmax window needs no recomputation.
template <std::floating_point S>
struct StreamSession {
    ChunkLayout layout;
    std::vector<HeadProjection<S>> heads;
    std::vector<FeatureMap<S>> fmq, fmk;
    std::vector<RecurrentState<S>> states;
    std::vector<Tensor<S>> cache_k, cache_v; // per head; rows cover [cb - cached, cb)
    int cursor = 0;

    int n_heads() const { return int(heads.size()); }
    int model_dim() const { return n_heads() * layout.D; }
};

template <std::floating_point S>
StreamSession<S> make_stream_session(const ChunkLayout& layout,
                                     std::vector<HeadProjection<S>> heads,
                                     std::vector<FeatureMap<S>> fmq,
                                     std::vector<FeatureMap<S>> fmk) {
    if (heads.empty() || fmq.size() != heads.size() || fmk.size() != heads.size())
        throw std::invalid_argument("stream session: per-head weights/maps mismatch");
    StreamSession<S> s;
    s.layout = layout;
    s.heads = std::move(heads);
    s.fmq = std::move(fmq);
    s.fmk = std::move(fmk);
    for (std::size_t h = 0; h < s.heads.size(); ++h) {
        s.heads[h].validate();
        s.states.push_back(init_state<S>(s.fmq[h].feature_dim(), layout.D));
        s.cache_k.push_back(Tensor<S>({0, std::size_t(layout.D)}));
        s.cache_v.push_back(Tensor<S>({0, std::size_t(layout.D)}));
    }
    return s;
}

/// Feeds the next chunk (rows of the model-dim input) and returns its
/// attention output. Within-chunk softmax is bidirectional; the linear
/// branch reads only the state, i.e. tokens strictly before the window.
template <std::floating_point S>
Tensor<S> step(StreamSession<S>& session, const Tensor<S>& chunk_x) {
    const ChunkLayout& L = session.layout;
    const int t = session.cursor;
    if (t >= L.n_chunks())
        throw std::logic_error("step: all chunks already consumed");
    const std::size_t cb = L.chunk_begin(t), ce = L.chunk_end(t);
    if (chunk_x.rows() != ce - cb || chunk_x.cols() != std::size_t(session.model_dim()))
        throw std::invalid_argument("step: chunk shape does not match layout/cursor");

    const double scale_factor = 1.0 / std::sqrt(double(L.D));
    const std::size_t wb = L.window_begin(t);
    const std::size_t fold_to = L.fold_end(t);
    const auto head_inputs = split_heads(chunk_x, session.n_heads());

    std::vector<Tensor<S>> outs(session.heads.size());
    for (std::size_t h = 0; h < session.heads.size(); ++h) {
        const auto [q, k, v] = project_qkv(head_inputs[h], session.heads[h]);
        const std::size_t cached = session.cache_k[h].rows();
        if (cb - wb != cached)
            throw std::logic_error("step: overlap cache out of sync");

        // Softmax window = cached overlap rows ++ current chunk rows.
        const std::size_t win = cached + k.rows();
        Tensor<S> wk({win, std::size_t(L.D)}), wv({win, std::size_t(L.D)});
        for (std::size_t i = 0; i < cached; ++i) {
            std::copy(session.cache_k[h].row(i).begin(), session.cache_k[h].row(i).end(),
                      wk.row(i).begin());
            std::copy(session.cache_v[h].row(i).begin(), session.cache_v[h].row(i).end(),
                      wv.row(i).begin());
        }
        for (std::size_t i = 0; i < k.rows(); ++i) {
            std::copy(k.row(i).begin(), k.row(i).end(), wk.row(cached + i).begin());
            std::copy(v.row(i).begin(), v.row(i).end(), wv.row(cached + i).begin());
        }

        auto sp = softmax_partial(q, wk, wv, {{std::size_t(0), win}}, scale_factor);
        const Tensor<S> phi_q = feature_map_apply(session.fmq[h], q);
        LinearState<S> state{session.states[h].value_state, session.states[h].norm_state};
        const auto lp = linear_from_state(phi_q, state);
        outs[h] = combine_hybrid(sp.attn, sp.norm, lp.attn, lp.norm);

        // Fold delta = [wb, fold_to): the whole cached overlap, then the
        // leading rows of the current chunk. Same token order as the batch
        // form, so the two paths stay numerically identical.
        if (fold_to > wb) {
            const std::size_t count = fold_to - wb;
            Tensor<S> fold_k({count, std::size_t(L.D)}), fold_v({count, std::size_t(L.D)});
            for (std::size_t i = 0; i < count; ++i) {
                const std::size_t g = wb + i; // global token index
                auto src_k = g < cb ? session.cache_k[h].row(g - (cb - cached))
                                    : k.row(g - cb);
                auto src_v = g < cb ? session.cache_v[h].row(g - (cb - cached))
                                    : v.row(g - cb);
                std::copy(src_k.begin(), src_k.end(), fold_k.row(i).begin());
                std::copy(src_v.begin(), src_v.end(), fold_v.row(i).begin());
            }
            const Tensor<S> phi_k = feature_map_apply(session.fmk[h], fold_k);
            fold_linear_state(state, phi_k, fold_v, 0, 0, count);
        }
        session.states[h].value_state = std::move(state.kv_sum);
        session.states[h].norm_state = std::move(state.key_sum);
        session.states[h].absorbed = fold_to;
        session.states[h].chunk_cursor = t + 1;

        // Cache the last To slices of this chunk for the next window.
        const std::size_t keep =
            std::min(std::size_t(L.To) * L.tokens_per_slice(), k.rows());
        session.cache_k[h] = row_slice(k, k.rows() - keep, k.rows());
        session.cache_v[h] = row_slice(v, v.rows() - keep, v.rows());
    }
    ++session.cursor;
    return concat_heads(outs);
}

template <std::floating_point S>
struct StreamRunResult {
    Tensor<S> output;
    std::size_t peak_state_bytes = 0;
    std::size_t peak_transient_bytes = 0; // softmax window + per-chunk buffers
    std::size_t output_bytes = 0;
};

/// Drives step over all chunks of a full input and accounts peak memory.
template <std::floating_point S>
StreamRunResult<S> stream_run(StreamSession<S>& session, const Tensor<S>& x) {
    const ChunkLayout& L = session.layout;
    if (x.rows() != L.n_tokens() || x.cols() != std::size_t(session.model_dim()))
        throw std::invalid_argument("stream_run: input does not match layout");
    StreamRunResult<S> r;
    r.output = Tensor<S>({x.rows(), x.cols()});
    for (int t = session.cursor; t < L.n_chunks(); ++t) {
        const std::size_t cb = L.chunk_begin(t), ce = L.chunk_end(t);
        const Tensor<S> y = step(session, row_slice(x, cb, ce));
        for (std::size_t i = 0; i < y.rows(); ++i)
            std::copy(y.row(i).begin(), y.row(i).end(), r.output.row(cb + i).begin());

        std::size_t state = 0, transient = 0;
        for (std::size_t h = 0; h < session.heads.size(); ++h) {
            state += session.states[h].state_bytes();
            const std::size_t win = (cb - L.window_begin(t)) + (ce - cb);
            const std::size_t dp = std::size_t(session.fmq[h].feature_dim());
            transient += sizeof(S) * (2 * win * std::size_t(L.D) +
                                      (ce - cb) * (2 * std::size_t(L.D) + dp + 2));
        }
        r.peak_state_bytes = std::max(r.peak_state_bytes, state);
        r.peak_transient_bytes = std::max(r.peak_transient_bytes, transient);
    }
    r.output_bytes = r.output.size() * sizeof(S);
    return r;
}

} // namespace hyattn
