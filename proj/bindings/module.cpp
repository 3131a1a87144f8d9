#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hyattn/costmodel.hpp"
#include "hyattn/distill.hpp"
#include "hyattn/serialize.hpp"
#include "hyattn/verify.hpp"

namespace py = pybind11;
using namespace hyattn;

namespace {

using Arr = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor<double> to_tensor(const Arr& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
    Tensor<double> t({std::size_t(a.shape(0)), std::size_t(a.shape(1))});
    std::copy(a.data(), a.data() + a.size(), t.data());
    return t;
}

py::array from_tensor(const Tensor<double>& t) {
    py::array_t<double> out({py::ssize_t(t.rows()), py::ssize_t(t.cols())});
    std::copy(t.data(), t.data() + t.size(), out.mutable_data());
    return out;
}

std::vector<HeadProjection<double>> heads_from_array(const Arr& wq, const Arr& wk,
                                                     const Arr& wv) {
    if (wq.ndim() != 3 || wk.ndim() != 3 || wv.ndim() != 3)
        throw std::invalid_argument("weights must have shape (heads, D, D)");
    const auto n_heads = wq.shape(0);
    const auto d = wq.shape(1);
    std::vector<HeadProjection<double>> heads;
    for (py::ssize_t h = 0; h < n_heads; ++h) {
        HeadProjection<double> p{Tensor<double>({std::size_t(d), std::size_t(d)}),
                                 Tensor<double>({std::size_t(d), std::size_t(d)}),
                                 Tensor<double>({std::size_t(d), std::size_t(d)})};
        const auto stride = d * d;
        std::copy(wq.data() + h * stride, wq.data() + (h + 1) * stride, p.wq.data());
        std::copy(wk.data() + h * stride, wk.data() + (h + 1) * stride, p.wk.data());
        std::copy(wv.data() + h * stride, wv.data() + (h + 1) * stride, p.wv.data());
        heads.push_back(std::move(p));
    }
    return heads;
}

} // namespace

PYBIND11_MODULE(_hyattn, m) {
    m.doc() = "chunked hybrid softmax/linear attention core";
    m.attr("__version__") = "0.1.0";

    py::class_<ChunkLayout>(m, "ChunkLayout")
        .def_readonly("T", &ChunkLayout::T)
        .def_readonly("H", &ChunkLayout::H)
        .def_readonly("W", &ChunkLayout::W)
        .def_readonly("D", &ChunkLayout::D)
        .def_readonly("Tc", &ChunkLayout::Tc)
        .def_readonly("To", &ChunkLayout::To)
        .def_property_readonly("n_tokens", &ChunkLayout::n_tokens)
        .def_property_readonly("chunk_tokens", &ChunkLayout::chunk_tokens)
        .def_property_readonly("n_chunks", &ChunkLayout::n_chunks)
        .def("__repr__", [](const ChunkLayout& l) {
            return "ChunkLayout(T=" + std::to_string(l.T) + ", H=" + std::to_string(l.H) +
                   ", W=" + std::to_string(l.W) + ", D=" + std::to_string(l.D) +
                   ", Tc=" + std::to_string(l.Tc) + ", To=" + std::to_string(l.To) + ")";
        });

    m.def("make_layout", &make_layout, py::arg("T"), py::arg("H"), py::arg("W"),
          py::arg("D"), py::arg("Tc"), py::arg("To"));

    m.def(
        "partition_tokens",
        [](const ChunkLayout& layout, int t, bool causal) {
            const Partition p = partition_tokens(layout, t, causal);
            auto to_list = [](const std::vector<IndexRange>& rs) {
                std::vector<std::pair<std::size_t, std::size_t>> out;
                for (const auto& r : rs) out.emplace_back(r.begin, r.end);
                return out;
            };
            return py::make_tuple(to_list(p.softmax_set), to_list(p.linear_set));
        },
        py::arg("layout"), py::arg("t"), py::arg("causal"),
        "half-open (begin, end) ranges of the softmax and linear token sets");

    py::class_<FeatureMap<double>>(m, "FeatureMap")
        .def_readonly("input_dim", &FeatureMap<double>::input_dim)
        .def_readonly("hidden_dim", &FeatureMap<double>::hidden_dim)
        .def_readonly("output_dim", &FeatureMap<double>::output_dim)
        .def_readonly("degree", &FeatureMap<double>::degree)
        .def("save", [](const FeatureMap<double>& fm,
                        const std::string& base) { save_feature_map(fm, base); })
        .def_static("load",
                    [](const std::string& base) { return load_feature_map<double>(base); });

    m.def(
        "make_feature_map",
        [](int input_dim, int hidden_dim, int output_dim, int degree,
           const std::string& activation, const std::string& nonneg, std::uint64_t seed,
           std::uint64_t stream) {
            Rng rng(seed, stream);
            return init_feature_map<double>(input_dim, hidden_dim, output_dim, degree,
                                            activation_from_string(activation),
                                            nonneg_from_string(nonneg), rng);
        },
        py::arg("input_dim"), py::arg("hidden_dim"), py::arg("output_dim"),
        py::arg("degree") = 2, py::arg("activation") = "tanh",
        py::arg("nonneg") = "shifted-elu", py::arg("seed") = 0, py::arg("stream") = 0);

    m.def(
        "feature_map_apply",
        [](const FeatureMap<double>& fm, const Arr& x) {
            return from_tensor(feature_map_apply(fm, to_tensor(x)));
        },
        py::arg("feature_map"), py::arg("x"));

    m.def(
        "softmax_attention",
        [](const Arr& q, const Arr& k, const Arr& v, double scale) {
            return from_tensor(
                softmax_attention(to_tensor(q), to_tensor(k), to_tensor(v), scale));
        },
        py::arg("q"), py::arg("k"), py::arg("v"), py::arg("scale"));

    m.def(
        "linear_attention",
        [](const Arr& q, const Arr& k, const Arr& v, const FeatureMap<double>& fmq,
           const FeatureMap<double>& fmk) {
            return from_tensor(
                linear_attention(to_tensor(q), to_tensor(k), to_tensor(v), fmq, fmk));
        },
        py::arg("q"), py::arg("k"), py::arg("v"), py::arg("phi_q"), py::arg("phi_k"));

    m.def(
        "hybrid_attention_full",
        [](const Arr& x, const Arr& wq, const Arr& wk, const Arr& wv,
           const std::vector<FeatureMap<double>>& fmq,
           const std::vector<FeatureMap<double>>& fmk, const ChunkLayout& layout,
           bool causal) {
            return from_tensor(hybrid_attention_full_multihead(
                to_tensor(x), heads_from_array(wq, wk, wv), fmq, fmk, layout, causal));
        },
        py::arg("x"), py::arg("wq"), py::arg("wk"), py::arg("wv"), py::arg("phi_q"),
        py::arg("phi_k"), py::arg("layout"), py::arg("causal") = true);

    py::class_<StreamSession<double>>(m, "StreamSession")
        .def(py::init([](const ChunkLayout& layout, const Arr& wq, const Arr& wk,
                         const Arr& wv, const std::vector<FeatureMap<double>>& fmq,
                         const std::vector<FeatureMap<double>>& fmk) {
                 return make_stream_session<double>(layout, heads_from_array(wq, wk, wv),
                                                    fmq, fmk);
             }),
             py::arg("layout"), py::arg("wq"), py::arg("wk"), py::arg("wv"),
             py::arg("phi_q"), py::arg("phi_k"))
        .def_property_readonly("cursor",
                               [](const StreamSession<double>& s) { return s.cursor; })
        .def("step",
             [](StreamSession<double>& s, const Arr& chunk_x) {
                 return from_tensor(step(s, to_tensor(chunk_x)));
             })
        .def("run",
             [](StreamSession<double>& s, const Arr& x) {
                 const auto r = stream_run(s, to_tensor(x));
                 return py::make_tuple(from_tensor(r.output), r.peak_state_bytes,
                                       r.output_bytes);
             })
        .def("state_bytes", [](const StreamSession<double>& s) {
            std::size_t total = 0;
            for (const auto& st : s.states) total += st.state_bytes();
            return total;
        });

    py::class_<CostReport>(m, "CostReport")
        .def_readonly("variant", &CostReport::variant)
        .def_readonly("flops", &CostReport::flops)
        .def_readonly("flops_projection", &CostReport::flops_projection)
        .def_readonly("flops_scores", &CostReport::flops_scores)
        .def_readonly("flops_weighted", &CostReport::flops_weighted)
        .def_readonly("flops_linear", &CostReport::flops_linear)
        .def_readonly("flops_phi", &CostReport::flops_phi)
        .def_readonly("peak_activation_bytes", &CostReport::peak_activation_bytes)
        .def_readonly("state_bytes", &CostReport::state_bytes);

    m.def(
        "flops_softmax",
        [](std::size_t n_tokens, int head_dim, int heads) {
            return flops_softmax(n_tokens, head_dim, heads);
        },
        py::arg("n_tokens"), py::arg("head_dim"), py::arg("heads"));

    m.def(
        "flops_hybrid",
        [](const ChunkLayout& layout, int d_prime, int heads, bool causal) {
            return flops_hybrid(layout, d_prime, heads, causal);
        },
        py::arg("layout"), py::arg("d_prime"), py::arg("heads"), py::arg("causal") = true);

    m.def(
        "train_distill_toy",
        [](int T, int H, int W, int heads, int head_dim, int Tc, int To, int steps,
           double eta, std::uint64_t seed) {
            Rng rng(seed, 100);
            const ChunkLayout layout = make_layout(T, H, W, head_dim, Tc, To);
            const ToyBlock teacher = make_toy_teacher(layout, heads, rng);
            const ToyBlock student =
                make_toy_student(teacher, 2, 2 * head_dim, 2 * head_dim, Activation::Tanh,
                                 NonnegMode::ShiftedElu, rng);
            DistillConfig cfg;
            cfg.steps = steps;
            cfg.eta = eta;
            cfg.seed = seed;
            const TrainResult r = train_distill(teacher, student, cfg);
            py::dict out;
            out["initial_heldout"] = r.initial_heldout;
            out["final_heldout"] = r.final_heldout;
            std::vector<double> train_losses;
            for (const auto& row : r.trace) train_losses.push_back(row.train_loss);
            out["train_loss"] = train_losses;
            return out;
        },
        py::arg("T") = 12, py::arg("H") = 2, py::arg("W") = 2, py::arg("heads") = 2,
        py::arg("head_dim") = 8, py::arg("Tc") = 2, py::arg("To") = 1,
        py::arg("steps") = 50, py::arg("eta") = 1e-3, py::arg("seed") = 7);
}
