#include "hyattn/costmodel.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace hyattn {

namespace {

using u64 = std::uint64_t;

} // namespace

u64 PhiDims::flops_per_token(int input_dim) const {
    // Mirrors feature_map_apply: two dense layers, bias+activation, the
    // nonnegativity pass, and the polynomial powers.
    const u64 d = u64(input_dim), dh = u64(hidden), de = u64(out);
    u64 f = 2 * d * dh + 2 * dh; // layer 1 + bias/activation
    f += 2 * dh * de + de;       // layer 2 + bias
    if (nonneg) f += de;
    f += de * u64(degree - 1) / 2; // part i needs i-1 multiplies
    return f;
}

CostReport flops_softmax(std::size_t n_tokens, int head_dim, int heads,
                         Precision precision) {
    if (n_tokens == 0 || head_dim <= 0 || heads <= 0)
        throw std::invalid_argument("flops_softmax: arguments must be positive");
    const u64 n = n_tokens, d = u64(head_dim), h = u64(heads);
    const std::size_t b = bytes_per_scalar(precision);
    CostReport r;
    r.variant = "softmax";
    r.flops_projection = 6 * n * d * d * h;
    r.flops_scores = 2 * n * n * d * h;
    r.flops_weighted = 2 * n * n * d * h;
    r.flops_linear = 5 * n * n * h; // max, shift, exp, sum, normalize
    r.flops_phi = 0;
    r.flops = r.breakdown_sum();
    r.peak_activation_bytes = b * h * (3 * n * d + n * n + n * d);
    r.state_bytes = 0;
    return r;
}

CostReport flops_linear_attn(std::size_t n_tokens, int head_dim, int heads, int d_prime,
                             const PhiDims& phi, bool include_phi_cost,
                             Precision precision) {
    const u64 n = n_tokens, d = u64(head_dim), h = u64(heads), dp = u64(d_prime);
    const std::size_t b = bytes_per_scalar(precision);
    CostReport r;
    r.variant = "linear";
    r.flops_projection = 6 * n * d * d * h;
    r.flops_scores = 0;
    r.flops_weighted = 0;
    // key/value fold, numerator contraction, normalizer, final division
    r.flops_linear = h * (2 * n * dp * d     // sum phi(k) v^T
                          + n * dp           // sum phi(k)
                          + 2 * n * dp * d   // phi(q) . kv_sum
                          + 2 * n * dp       // phi(q) . key_sum
                          + n * (d + 1)      // combine adds
                          + n                // div
                          + n * d);          // scale by 1/denom
    r.flops_phi = include_phi_cost ? h * 2 * n * phi.flops_per_token(head_dim) : 0;
    r.flops = r.breakdown_sum();
    r.peak_activation_bytes = b * h * (3 * n * d + n * dp + dp * d + dp + n * d);
    r.state_bytes = b * h * (dp * d + dp);
    return r;
}

CostReport flops_hybrid(const ChunkLayout& layout, int d_prime, int heads, bool causal,
                        bool include_phi_cost, const PhiDims* phi_dims,
                        Precision precision) {
    const PhiDims phi =
        phi_dims ? *phi_dims : PhiDims::defaults(layout.D, d_prime);
    if (phi.out != d_prime)
        throw std::invalid_argument("flops_hybrid: phi output dim must equal d_prime");
    const u64 d = u64(layout.D), h = u64(heads), dp = u64(d_prime);
    const std::size_t b = bytes_per_scalar(precision);
    const u64 n = layout.n_tokens();
    const u64 phi_tok = phi.flops_per_token(layout.D);

    CostReport r;
    r.variant = "hybrid";
    r.flops_projection = 6 * n * d * d * h;
    for (int t = 0; t < layout.n_chunks(); ++t) {
        const u64 nt = layout.chunk_end(t) - layout.chunk_begin(t);
        const u64 wt = layout.chunk_end(t) - layout.window_begin(t);
        const u64 dt = layout.fold_end(t) - layout.window_begin(t); // delta fold
        r.flops_scores += 2 * nt * wt * d * h;
        r.flops_weighted += 2 * nt * wt * d * h;
        r.flops_linear += h * (5 * nt * wt       // softmax bookkeeping
                               + 2 * nt * dp * d // a_L contraction
                               + 2 * nt * dp     // n_L contraction
                               + 2 * dt * dp * d // prefix state fold
                               + dt * dp         // normalizer fold
                               + nt * (d + 1)    // combine adds
                               + nt              // div
                               + nt * d);        // scale
        u64 phi_tokens = nt + dt; // queries plus folded keys
        if (!causal) {
            // non-causal form folds each token into the suffix chain once and
            // evaluates phi_k for every token up front
            const u64 st = t + 1 < layout.n_chunks()
                               ? layout.chunk_end(t + 1) - layout.chunk_end(t)
                               : 0;
            r.flops_linear += h * (2 * st * dp * d + st * dp // suffix fold
                                   + (dp * d + dp));         // prefix+suffix add
            phi_tokens = nt + (t == 0 ? n : 0); // phi_k evaluated once, up front
        }
        if (include_phi_cost) r.flops_phi += h * phi_tokens * phi_tok;
    }
    r.flops = r.breakdown_sum();

    const MemoryReport mem = peak_memory_report(layout, d_prime, precision);
    r.state_bytes = h * mem.state_bytes * (causal ? 1 : 2);
    r.peak_activation_bytes = h * mem.per_chunk_transient_bytes + r.state_bytes;
    return r;
}

std::vector<SweepRow> sweep_durations(const SweepSpec& spec,
                                      const std::vector<int>& durations) {
    if (durations.empty())
        throw std::invalid_argument("sweep_durations: empty duration list");
    std::vector<SweepRow> rows;
    for (const std::string& variant : spec.variants) {
        for (int T : durations) {
            const ChunkLayout layout =
                make_layout(T, spec.H, spec.W, spec.head_dim, std::min(spec.Tc, T),
                            std::min(spec.To, std::min(spec.Tc, T)));
            SweepRow row;
            row.variant = variant;
            row.layout = layout;
            row.heads = spec.heads;
            row.d_prime = spec.d_prime;
            if (variant == "softmax") {
                row.cost = flops_softmax(layout.n_tokens(), spec.head_dim, spec.heads,
                                         spec.precision);
            } else if (variant == "linear") {
                row.cost = flops_linear_attn(layout.n_tokens(), spec.head_dim, spec.heads,
                                             spec.d_prime,
                                             PhiDims::defaults(spec.head_dim, spec.d_prime),
                                             true, spec.precision);
            } else if (variant == "hybrid") {
                row.cost = flops_hybrid(layout, spec.d_prime, spec.heads, spec.causal,
                                        true, nullptr, spec.precision);
            } else {
                throw std::invalid_argument("sweep_durations: unknown variant " + variant);
            }
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

std::string sweep_csv_header() {
    return "variant,T,H,W,D,heads,Tc,To,Dprime,flops,flops_scores,flops_linear,"
           "flops_phi,peak_bytes,state_bytes";
}

std::string sweep_csv_row(const SweepRow& row) {
    std::ostringstream os;
    os << row.variant << ',' << row.layout.T << ',' << row.layout.H << ','
       << row.layout.W << ',' << row.layout.D << ',' << row.heads << ','
       << row.layout.Tc << ',' << row.layout.To << ',' << row.d_prime << ','
       << row.cost.flops << ',' << row.cost.flops_scores << ',' << row.cost.flops_linear
       << ',' << row.cost.flops_phi << ',' << row.cost.peak_activation_bytes << ','
       << row.cost.state_bytes;
    return os.str();
}

double loglog_slope(const std::vector<std::pair<double, double>>& n_vs_flops) {
    if (n_vs_flops.size() < 2)
        throw std::invalid_argument("loglog_slope: need at least two points");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double m = double(n_vs_flops.size());
    for (const auto& [n, f] : n_vs_flops) {
        const double x = std::log(n), y = std::log(f);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

std::size_t crossover_tokens(const SweepSpec& spec, int t_max) {
    for (int T = spec.Tc; T <= t_max; ++T) {
        const ChunkLayout layout = make_layout(T, spec.H, spec.W, spec.head_dim, spec.Tc,
                                               std::min(spec.To, spec.Tc));
        const auto hybrid = flops_hybrid(layout, spec.d_prime, spec.heads, spec.causal,
                                         true, nullptr, spec.precision);
        const auto softmax =
            flops_softmax(layout.n_tokens(), spec.head_dim, spec.heads, spec.precision);
        if (hybrid.flops < softmax.flops) return layout.n_tokens();
    }
    return 0;
}

} // namespace hyattn
