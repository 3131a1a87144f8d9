#include "hyattn/distill.hpp"

#include <cmath>
#include <stdexcept>

namespace hyattn {

namespace {

// ---------------------------------------------------------------------------
// Feature-map forward with cached intermediates, mirroring feature_map_apply
// operation for operation so the gradient path evaluates the exact same
// numbers as the production kernels.
// ---------------------------------------------------------------------------

struct FmRowsCache {
    Tensor<double> input; // rows the map was applied to
    Tensor<double> h1pre; // pre-activation of layer 1
    Tensor<double> h1;
    Tensor<double> u; // pre-nonneg output of layer 2
    Tensor<double> w; // post-nonneg, pre-power
    Tensor<double> out;
};

FmRowsCache fm_forward_cached(const FeatureMap<double>& fm, Tensor<double> rows) {
    const std::size_t n = rows.rows();
    const std::size_t dh = fm.hidden_dim, de = fm.output_dim;
    FmRowsCache c;
    c.h1pre = matmul(rows, fm.w1);
    c.h1 = Tensor<double>({n, dh});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dh; ++j) {
            c.h1pre.at(i, j) += fm.b1.at(0, j);
            c.h1.at(i, j) = apply_activation(fm.activation, c.h1pre.at(i, j));
        }
    c.u = matmul(c.h1, fm.w2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < de; ++j) c.u.at(i, j) += fm.b2.at(0, j);

    const std::size_t part = de / std::size_t(fm.degree);
    c.w = Tensor<double>({n, de});
    c.out = Tensor<double>({n, de});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < de; ++j) {
            double w = c.u.at(i, j);
            if (fm.nonneg == NonnegMode::ShiftedElu) w = shifted_elu(w);
            c.w.at(i, j) = w;
            const int power = int(j / part) + 1;
            double v = w;
            for (int p = 1; p < power; ++p) v *= w;
            c.out.at(i, j) = v;
        }
    c.input = std::move(rows);
    return c;
}

void fm_backward(const FeatureMap<double>& fm, const FmRowsCache& c,
                 const Tensor<double>& d_out, FeatureMapGrads& g) {
    const std::size_t n = c.out.rows();
    const std::size_t dh = fm.hidden_dim, de = fm.output_dim;
    const std::size_t part = de / std::size_t(fm.degree);

    Tensor<double> du({n, de});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < de; ++j) {
            const int power = int(j / part) + 1;
            const double w = c.w.at(i, j);
            double dpow = 1.0;
            for (int p = 1; p < power; ++p) dpow *= w;
            double d = d_out.at(i, j) * double(power) * dpow;
            if (fm.nonneg == NonnegMode::ShiftedElu) d *= shifted_elu_grad(c.u.at(i, j));
            du.at(i, j) = d;
        }

    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < de; ++j) g.b2.at(0, j) += du.at(i, j);
    add_inplace(g.w2, matmul_at(c.h1, du));

    Tensor<double> dpre = matmul_bt(du, fm.w2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dh; ++j) {
            dpre.at(i, j) *= activation_grad(fm.activation, c.h1pre.at(i, j));
            g.b1.at(0, j) += dpre.at(i, j);
        }
    add_inplace(g.w1, matmul_at(c.input, dpre));
}

FeatureMapGrads zero_grads(const FeatureMap<double>& fm) {
    return {Tensor<double>({fm.w1.rows(), fm.w1.cols()}),
            Tensor<double>({fm.b1.rows(), fm.b1.cols()}),
            Tensor<double>({fm.w2.rows(), fm.w2.cols()}),
            Tensor<double>({fm.b2.rows(), fm.b2.cols()})};
}

// ---------------------------------------------------------------------------
// Student forward pass with full caches; same chunk/fold order as
// hybrid_attention_full so the two paths agree bit for bit.
// ---------------------------------------------------------------------------

struct ChunkCache {
    std::size_t cb = 0, ce = 0, wb = 0, fold_to = 0;
    Tensor<double> attn_softmax, norm_softmax;
    FmRowsCache phi_q;
    Tensor<double> state_s, state_z; // prefix state seen by this chunk
    Tensor<double> attn_linear, norm_linear;
    Tensor<double> denom; // post-floor
    std::vector<char> clamped;
    Tensor<double> y;
    FmRowsCache phi_k_fold; // over the delta rows folded after this chunk
    Tensor<double> fold_v;
};

struct HeadCache {
    Tensor<double> q, k, v;
    std::vector<ChunkCache> chunks;
    Tensor<double> y; // N x D
};

struct ForwardCache {
    std::vector<HeadCache> heads;
    Tensor<double> attn; // A(x), N x Dm
    Tensor<double> u;    // A(x) + x
    Tensor<double> ff_h1pre, ff_h1;
    Tensor<double> out;
    double loss = 0.0;
};

ForwardCache forward_student(const ToyBlock& student, const Tensor<double>& x,
                             const Tensor<double>& teacher_out, MatchPoint match) {
    if (student.variant != AttentionVariant::HybridCausal)
        throw std::invalid_argument("grad_phi: student must be the hybrid-causal variant");
    const ChunkLayout& L = student.layout;
    const double scale_factor = 1.0 / std::sqrt(double(L.D));
    const int n_chunks = L.n_chunks();

    ForwardCache fc;
    std::vector<Tensor<double>> head_outs;
    const auto head_inputs = split_heads(x, student.n_heads);
    for (int h = 0; h < student.n_heads; ++h) {
        HeadCache hc;
        auto qkv = project_qkv(head_inputs[h], student.heads[h]);
        hc.q = std::move(qkv.q);
        hc.k = std::move(qkv.k);
        hc.v = std::move(qkv.v);
        const std::size_t d = hc.v.cols();
        const std::size_t dp = std::size_t(student.fmq[h].feature_dim());

        auto prefix = LinearState<double>::zeros(dp, d);
        hc.y = Tensor<double>({L.n_tokens(), d});
        for (int t = 0; t < n_chunks; ++t) {
            ChunkCache cc;
            cc.cb = L.chunk_begin(t);
            cc.ce = L.chunk_end(t);
            cc.wb = L.window_begin(t);
            cc.fold_to = L.fold_end(t);
            const Tensor<double> q_chunk = row_slice(hc.q, cc.cb, cc.ce);
            auto sp = softmax_partial(q_chunk, hc.k, hc.v, {{cc.wb, cc.ce}}, scale_factor);
            cc.attn_softmax = std::move(sp.attn);
            cc.norm_softmax = std::move(sp.norm);

            cc.phi_q = fm_forward_cached(student.fmq[h], q_chunk);
            cc.state_s = prefix.kv_sum;
            cc.state_z = prefix.key_sum;
            cc.attn_linear = matmul(cc.phi_q.out, cc.state_s);
            cc.norm_linear = matmul(cc.phi_q.out, cc.state_z);

            const std::size_t rows = cc.ce - cc.cb;
            cc.denom = Tensor<double>({rows, 1});
            cc.clamped.assign(rows, 0);
            cc.y = Tensor<double>({rows, d});
            for (std::size_t i = 0; i < rows; ++i) {
                double denom = cc.norm_softmax.at(i, 0) + cc.norm_linear.at(i, 0);
                if (denom < denom_floor<double>) {
                    denom = denom_floor<double>;
                    cc.clamped[i] = 1;
                }
                cc.denom.at(i, 0) = denom;
                const double inv = 1.0 / denom;
                for (std::size_t c = 0; c < d; ++c)
                    cc.y.at(i, c) =
                        (cc.attn_softmax.at(i, c) + cc.attn_linear.at(i, c)) * inv;
                std::copy(cc.y.row(i).begin(), cc.y.row(i).end(),
                          hc.y.row(cc.cb + i).begin());
            }

            if (cc.fold_to > cc.wb) {
                cc.fold_v = row_slice(hc.v, cc.wb, cc.fold_to);
                cc.phi_k_fold =
                    fm_forward_cached(student.fmk[h], row_slice(hc.k, cc.wb, cc.fold_to));
                fold_linear_state(prefix, cc.phi_k_fold.out, cc.fold_v, 0, 0,
                                  cc.fold_to - cc.wb);
            }
            hc.chunks.push_back(std::move(cc));
        }
        head_outs.push_back(hc.y);
        fc.heads.push_back(std::move(hc));
    }

    fc.attn = concat_heads(head_outs);
    if (match == MatchPoint::BlockOutput) {
        fc.u = add(fc.attn, x);
        const FeedForward& ff = student.ff;
        fc.ff_h1pre = matmul(fc.u, ff.w1);
        fc.ff_h1 = Tensor<double>({fc.u.rows(), ff.w1.cols()});
        for (std::size_t i = 0; i < fc.ff_h1.rows(); ++i)
            for (std::size_t j = 0; j < fc.ff_h1.cols(); ++j) {
                fc.ff_h1pre.at(i, j) += ff.b1.at(0, j);
                fc.ff_h1.at(i, j) = apply_activation(ff.activation, fc.ff_h1pre.at(i, j));
            }
        fc.out = matmul(fc.ff_h1, ff.w2);
        for (std::size_t i = 0; i < fc.out.rows(); ++i)
            for (std::size_t j = 0; j < fc.out.cols(); ++j)
                fc.out.at(i, j) += ff.b2.at(0, j);
    } else {
        fc.out = fc.attn;
    }
    fc.loss = distill_loss(teacher_out, fc.out);
    return fc;
}

} // namespace

double distill_loss(const Tensor<double>& y_teacher, const Tensor<double>& y_student) {
    if (!y_teacher.same_shape(y_student))
        throw std::invalid_argument("distill_loss: shape mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < y_teacher.size(); ++i)
        sum += std::abs(y_teacher[i] - y_student[i]);
    return sum / double(y_teacher.size());
}

double student_loss(const ToyBlock& student, const Tensor<double>& x,
                    const Tensor<double>& teacher_out, MatchPoint match) {
    return forward_student(student, x, teacher_out, match).loss;
}

PhiGradients grad_phi(const ToyBlock& student, const Tensor<double>& x,
                      const Tensor<double>& teacher_out, MatchPoint match) {
    const ChunkLayout& L = student.layout;
    ForwardCache fc = forward_student(student, x, teacher_out, match);

    PhiGradients grads;
    for (int h = 0; h < student.n_heads; ++h) {
        grads.fmq.push_back(zero_grads(student.fmq[h]));
        grads.fmk.push_back(zero_grads(student.fmk[h]));
    }
    grads.loss = fc.loss;

    // d(mean |out - teacher|) / d(out); zero subgradient at exact ties
    Tensor<double> g_out({fc.out.rows(), fc.out.cols()});
    const double inv_count = 1.0 / double(fc.out.size());
    for (std::size_t i = 0; i < fc.out.size(); ++i) {
        const double diff = fc.out[i] - teacher_out[i];
        g_out[i] = diff > 0 ? inv_count : (diff < 0 ? -inv_count : 0.0);
    }

    Tensor<double> d_attn;
    if (match == MatchPoint::BlockOutput) {
        const FeedForward& ff = student.ff;
        Tensor<double> dpre = matmul_bt(g_out, ff.w2);
        for (std::size_t i = 0; i < dpre.rows(); ++i)
            for (std::size_t j = 0; j < dpre.cols(); ++j)
                dpre.at(i, j) *= activation_grad(ff.activation, fc.ff_h1pre.at(i, j));
        d_attn = matmul_bt(dpre, ff.w1); // residual passes d_attn through unchanged
    } else {
        d_attn = g_out;
    }

    const int n_chunks = L.n_chunks();
    for (int h = 0; h < student.n_heads; ++h) {
        const HeadCache& hc = fc.heads[h];
        const Tensor<double> dy_head =
            col_slice(d_attn, std::size_t(h) * L.D, (std::size_t(h) + 1) * L.D);
        const std::size_t d = hc.v.cols();

        std::vector<Tensor<double>> d_state_s(n_chunks), d_state_z(n_chunks);
        for (int t = 0; t < n_chunks; ++t) {
            const ChunkCache& cc = hc.chunks[t];
            const std::size_t rows = cc.ce - cc.cb;

            Tensor<double> da_l({rows, d});
            Tensor<double> dn_l({rows, 1});
            for (std::size_t i = 0; i < rows; ++i) {
                const double inv = 1.0 / cc.denom.at(i, 0);
                double dn = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    const double dy = dy_head.at(cc.cb + i, c);
                    da_l.at(i, c) = dy * inv;
                    dn -= dy * cc.y.at(i, c) * inv;
                }
                dn_l.at(i, 0) = cc.clamped[i] ? 0.0 : dn;
            }

            Tensor<double> d_phi_q = matmul_bt(da_l, cc.state_s);
            const std::size_t dp = d_phi_q.cols();
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t a = 0; a < dp; ++a)
                    d_phi_q.at(i, a) += dn_l.at(i, 0) * cc.state_z.at(a, 0);
            fm_backward(student.fmq[h], cc.phi_q, d_phi_q, grads.fmq[h]);

            d_state_s[t] = matmul_at(cc.phi_q.out, da_l);
            d_state_z[t] = matmul_at(cc.phi_q.out, dn_l);
        }

        // Tokens folded after chunk t-1 feed the states of chunks t..T'-1.
        const std::size_t dp = std::size_t(student.fmq[h].feature_dim());
        Tensor<double> acc_s({dp, d}), acc_z({dp, 1});
        for (int t = n_chunks - 1; t >= 1; --t) {
            add_inplace(acc_s, d_state_s[t]);
            add_inplace(acc_z, d_state_z[t]);
            const ChunkCache& prev = hc.chunks[t - 1];
            if (prev.fold_to <= prev.wb) continue;
            Tensor<double> d_phi_k = matmul_bt(prev.fold_v, acc_s);
            for (std::size_t i = 0; i < d_phi_k.rows(); ++i)
                for (std::size_t a = 0; a < dp; ++a)
                    d_phi_k.at(i, a) += acc_z.at(a, 0);
            fm_backward(student.fmk[h], prev.phi_k_fold, d_phi_k, grads.fmk[h]);
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Flat parameter views, finite differences, training loop
// ---------------------------------------------------------------------------

namespace {

template <typename Fn>
void for_each_phi_tensor(const ToyBlock& student, Fn&& fn) {
    for (int h = 0; h < student.n_heads; ++h) {
        fn(student.fmq[h].w1);
        fn(student.fmq[h].b1);
        fn(student.fmq[h].w2);
        fn(student.fmq[h].b2);
        fn(student.fmk[h].w1);
        fn(student.fmk[h].b1);
        fn(student.fmk[h].w2);
        fn(student.fmk[h].b2);
    }
}

template <typename Fn>
void for_each_phi_tensor_mut(ToyBlock& student, Fn&& fn) {
    for (int h = 0; h < student.n_heads; ++h) {
        fn(student.fmq[h].w1);
        fn(student.fmq[h].b1);
        fn(student.fmq[h].w2);
        fn(student.fmq[h].b2);
        fn(student.fmk[h].w1);
        fn(student.fmk[h].b1);
        fn(student.fmk[h].w2);
        fn(student.fmk[h].b2);
    }
}

} // namespace

std::vector<double> flatten_phi_params(const ToyBlock& student) {
    std::vector<double> out;
    for_each_phi_tensor(student, [&](const Tensor<double>& t) {
        out.insert(out.end(), t.flat().begin(), t.flat().end());
    });
    return out;
}

void set_phi_params(ToyBlock& student, const std::vector<double>& values) {
    std::size_t off = 0;
    for_each_phi_tensor_mut(student, [&](Tensor<double>& t) {
        if (off + t.size() > values.size())
            throw std::invalid_argument("set_phi_params: value vector too short");
        std::copy(values.begin() + off, values.begin() + off + t.size(), t.flat().begin());
        off += t.size();
    });
    if (off != values.size())
        throw std::invalid_argument("set_phi_params: value vector too long");
}

std::vector<double> flatten_phi_grads(const PhiGradients& grads) {
    std::vector<double> out;
    auto push = [&](const Tensor<double>& t) {
        out.insert(out.end(), t.flat().begin(), t.flat().end());
    };
    for (std::size_t h = 0; h < grads.fmq.size(); ++h) {
        push(grads.fmq[h].w1);
        push(grads.fmq[h].b1);
        push(grads.fmq[h].w2);
        push(grads.fmq[h].b2);
        push(grads.fmk[h].w1);
        push(grads.fmk[h].b1);
        push(grads.fmk[h].w2);
        push(grads.fmk[h].b2);
    }
    return out;
}

std::vector<double> finite_difference_phi(const ToyBlock& student, const Tensor<double>& x,
                                          const Tensor<double>& teacher_out, MatchPoint match,
                                          double h) {
    ToyBlock probe = student;
    std::vector<double> params = flatten_phi_params(probe);
    std::vector<double> grad(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double orig = params[i];
        params[i] = orig + h;
        set_phi_params(probe, params);
        const double up = student_loss(probe, x, teacher_out, match);
        params[i] = orig - h;
        set_phi_params(probe, params);
        const double down = student_loss(probe, x, teacher_out, match);
        params[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    set_phi_params(probe, params);
    return grad;
}

double worst_gradient_error(const std::vector<double>& analytic,
                            const std::vector<double>& fd, double abs_floor) {
    if (analytic.size() != fd.size())
        throw std::invalid_argument("worst_gradient_error: length mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double gap = std::abs(analytic[i] - fd[i]);
        if (gap <= abs_floor) continue;
        worst = std::max(worst, gap / (std::abs(analytic[i]) + std::abs(fd[i])));
    }
    return worst;
}

DistillSample make_distill_sample(const ChunkLayout& layout, int model_dim,
                                  std::uint64_t base_seed, std::uint64_t sample_index) {
    Rng rng(base_seed, /*stream=*/0x5A11D000ULL + sample_index);
    DistillSample s;
    s.epsilon_seed = rng.next_u64();
    s.prompt_id = int(sample_index % 17);
    s.step_id = int(sample_index % 50);
    s.x = random_tensor<double>(rng, {layout.n_tokens(), std::size_t(model_dim)},
                                Dist::Normal);
    // log-uniform global scale in [0.5, 2]
    const double u = rng.uniform();
    const double scale_val = std::exp(std::log(0.5) + u * (std::log(2.0) - std::log(0.5)));
    for (std::size_t i = 0; i < s.x.size(); ++i) s.x[i] *= scale_val;
    return s;
}

TrainResult train_distill(const ToyBlock& teacher, ToyBlock student,
                          const DistillConfig& cfg) {
    if (cfg.eta <= 0) throw std::invalid_argument("train_distill: eta must be positive");
    if (!frozen_weights_equal(teacher, student))
        throw std::invalid_argument("train_distill: teacher/student frozen weights differ");
    if (student.variant != AttentionVariant::HybridCausal)
        throw std::invalid_argument("train_distill: student must be hybrid-causal");
    const int dm = student.model_dim();
    const ChunkLayout& L = student.layout;

    constexpr std::uint64_t kHeldoutBase = 1ULL << 32;
    std::vector<DistillSample> heldout;
    std::vector<Tensor<double>> heldout_targets;
    for (int i = 0; i < cfg.heldout_samples; ++i) {
        heldout.push_back(make_distill_sample(L, dm, cfg.seed, kHeldoutBase + i));
        heldout_targets.push_back(teacher_targets(teacher, heldout.back().x, cfg.match));
    }
    auto eval_heldout = [&]() {
        double sum = 0.0;
        for (std::size_t i = 0; i < heldout.size(); ++i)
            sum += student_loss(student, heldout[i].x, heldout_targets[i], cfg.match);
        return heldout.empty() ? 0.0 : sum / double(heldout.size());
    };

    TrainResult result;
    result.initial_heldout = eval_heldout();
    double latest_heldout = result.initial_heldout;

    std::vector<double> params = flatten_phi_params(student);
    std::vector<double> m(params.size(), 0.0), v(params.size(), 0.0);

    {
        const DistillSample probe = make_distill_sample(L, dm, cfg.seed, 0);
        const double probe_loss = student_loss(
            student, probe.x, teacher_targets(teacher, probe.x, cfg.match), cfg.match);
        result.trace.push_back({0, probe_loss, latest_heldout});
    }

    for (int step = 1; step <= cfg.steps; ++step) {
        std::vector<double> grad(params.size(), 0.0);
        double batch_loss = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const std::uint64_t idx =
                std::uint64_t(step - 1) * std::uint64_t(cfg.batch_size) + std::uint64_t(b);
            const DistillSample sample = make_distill_sample(L, dm, cfg.seed, idx);
            const Tensor<double> target = teacher_targets(teacher, sample.x, cfg.match);
            const PhiGradients g = grad_phi(student, sample.x, target, cfg.match);
            const std::vector<double> flat = flatten_phi_grads(g);
            for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += flat[i];
            batch_loss += g.loss;
        }
        const double inv_b = 1.0 / double(cfg.batch_size);
        batch_loss *= inv_b;
        if (!std::isfinite(batch_loss))
            throw std::runtime_error("train_distill: loss diverged at step " +
                                     std::to_string(step));

        if (cfg.optimizer == Optimizer::Sgd) {
            for (std::size_t i = 0; i < params.size(); ++i)
                params[i] -= cfg.eta * grad[i] * inv_b;
        } else {
            const double b1t = 1.0 - std::pow(cfg.beta1, double(step));
            const double b2t = 1.0 - std::pow(cfg.beta2, double(step));
            for (std::size_t i = 0; i < params.size(); ++i) {
                const double gi = grad[i] * inv_b;
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                const double mh = m[i] / b1t;
                const double vh = v[i] / b2t;
                params[i] -= cfg.eta * (mh / (std::sqrt(vh) + cfg.adam_eps) +
                                        cfg.weight_decay * params[i]);
            }
        }
        set_phi_params(student, params);

        if (step % cfg.eval_interval == 0 || step == cfg.steps) latest_heldout = eval_heldout();
        result.trace.push_back({step, batch_loss, latest_heldout});
    }

    result.final_heldout = cfg.steps == 0 ? result.initial_heldout : eval_heldout();
    result.student = std::move(student);
    return result;
}

} // namespace hyattn
