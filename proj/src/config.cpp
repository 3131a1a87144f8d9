#include "hyattn/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace hyattn {

namespace {

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                const std::string& where) {
    if (!j.is_object()) throw std::runtime_error("config: " + where + " must be an object");
    for (const auto& [key, _] : j.items())
        if (!allowed.contains(key))
            throw std::runtime_error("config: unknown key '" + key + "' in " + where);
}

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

} // namespace

Precision ExperimentConfig::precision_enum() const {
    if (precision == "double") return Precision::Double;
    if (precision == "single") return Precision::Single;
    throw std::invalid_argument("config: precision must be 'single' or 'double'");
}

DistillConfig ExperimentConfig::distill_config() const {
    DistillConfig d;
    d.eta = eta;
    d.steps = steps;
    d.batch_size = batch_size;
    d.seed = seed;
    if (optimizer == "sgd") d.optimizer = Optimizer::Sgd;
    else if (optimizer == "adamw") d.optimizer = Optimizer::AdamW;
    else throw std::invalid_argument("config: optimizer must be 'sgd' or 'adamw'");
    if (match_point == "block") d.match = MatchPoint::BlockOutput;
    else if (match_point == "attention") d.match = MatchPoint::AttentionOutput;
    else throw std::invalid_argument("config: match_point must be 'block' or 'attention'");
    d.heldout_samples = heldout_samples;
    d.eval_interval = eval_interval;
    return d;
}

void ExperimentConfig::validate() const {
    if (heads <= 0 || D_model <= 0 || D_model % heads != 0)
        throw std::invalid_argument("config: D_model must be a positive multiple of heads");
    (void)layout(); // layout invariants
    if (phi_out() % P != 0)
        throw std::invalid_argument("config: D_e must be divisible by P");
    (void)activation_enum();
    (void)nonneg_enum();
    (void)precision_enum();
    if (eta <= 0) throw std::invalid_argument("config: eta must be positive");
    if (steps < 0 || batch_size <= 0 || heldout_samples < 0 || eval_interval <= 0)
        throw std::invalid_argument("config: invalid distillation counters");
    (void)distill_config();
    if (durations.empty() || stream_durations.empty())
        throw std::invalid_argument("config: duration lists must be non-empty");
    for (const auto& v : variants)
        if (v != "softmax" && v != "linear" && v != "hybrid")
            throw std::invalid_argument("config: unknown sweep variant " + v);
    (void)make_layout(durations.front(), bench_H, bench_W, bench_head_dim,
                      std::min(bench_Tc, durations.front()),
                      std::min(bench_To, std::min(bench_Tc, durations.front())));
    if (bench_Dprime <= 0 || bench_heads <= 0)
        throw std::invalid_argument("config: bench dims must be positive");
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
    check_keys(j, {"layout", "phi", "distill", "sweep", "bench", "precision", "out_dir",
                   "inject_fault_linear_sign"},
               "top level");
    ExperimentConfig c;
    if (j.contains("layout")) {
        const auto& l = j.at("layout");
        check_keys(l, {"T", "H", "W", "D_model", "heads", "Tc", "To", "causal"}, "layout");
        maybe(l, "T", c.T);
        maybe(l, "H", c.H);
        maybe(l, "W", c.W);
        maybe(l, "D_model", c.D_model);
        maybe(l, "heads", c.heads);
        maybe(l, "Tc", c.Tc);
        maybe(l, "To", c.To);
        maybe(l, "causal", c.causal);
    }
    if (j.contains("phi")) {
        const auto& p = j.at("phi");
        check_keys(p, {"P", "D_h", "D_e", "nonneg_mode", "activation"}, "phi");
        maybe(p, "P", c.P);
        maybe(p, "D_h", c.D_h);
        maybe(p, "D_e", c.D_e);
        maybe(p, "nonneg_mode", c.nonneg_mode);
        maybe(p, "activation", c.activation);
    }
    if (j.contains("distill")) {
        const auto& d = j.at("distill");
        check_keys(d,
                   {"eta", "steps", "seed", "batch_size", "optimizer", "match_point",
                    "heldout_samples", "eval_interval"},
                   "distill");
        maybe(d, "eta", c.eta);
        maybe(d, "steps", c.steps);
        maybe(d, "seed", c.seed);
        maybe(d, "batch_size", c.batch_size);
        maybe(d, "optimizer", c.optimizer);
        maybe(d, "match_point", c.match_point);
        maybe(d, "heldout_samples", c.heldout_samples);
        maybe(d, "eval_interval", c.eval_interval);
    }
    if (j.contains("sweep")) {
        const auto& s = j.at("sweep");
        check_keys(s, {"durations", "variants", "stream_durations"}, "sweep");
        maybe(s, "durations", c.durations);
        maybe(s, "variants", c.variants);
        maybe(s, "stream_durations", c.stream_durations);
    }
    if (j.contains("bench")) {
        const auto& b = j.at("bench");
        check_keys(b, {"H", "W", "heads", "head_dim", "Tc", "To", "Dprime"}, "bench");
        maybe(b, "H", c.bench_H);
        maybe(b, "W", c.bench_W);
        maybe(b, "heads", c.bench_heads);
        maybe(b, "head_dim", c.bench_head_dim);
        maybe(b, "Tc", c.bench_Tc);
        maybe(b, "To", c.bench_To);
        maybe(b, "Dprime", c.bench_Dprime);
    }
    maybe(j, "precision", c.precision);
    maybe(j, "out_dir", c.out_dir);
    maybe(j, "inject_fault_linear_sign", c.inject_fault_linear_sign);
    c.validate();
    return c;
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
    return nlohmann::json{
        {"layout",
         {{"T", c.T},
          {"H", c.H},
          {"W", c.W},
          {"D_model", c.D_model},
          {"heads", c.heads},
          {"Tc", c.Tc},
          {"To", c.To},
          {"causal", c.causal}}},
        {"phi",
         {{"P", c.P},
          {"D_h", c.D_h},
          {"D_e", c.D_e},
          {"nonneg_mode", c.nonneg_mode},
          {"activation", c.activation}}},
        {"distill",
         {{"eta", c.eta},
          {"steps", c.steps},
          {"seed", c.seed},
          {"batch_size", c.batch_size},
          {"optimizer", c.optimizer},
          {"match_point", c.match_point},
          {"heldout_samples", c.heldout_samples},
          {"eval_interval", c.eval_interval}}},
        {"sweep",
         {{"durations", c.durations},
          {"variants", c.variants},
          {"stream_durations", c.stream_durations}}},
        {"bench",
         {{"H", c.bench_H},
          {"W", c.bench_W},
          {"heads", c.bench_heads},
          {"head_dim", c.bench_head_dim},
          {"Tc", c.bench_Tc},
          {"To", c.bench_To},
          {"Dprime", c.bench_Dprime}}},
        {"precision", c.precision},
        {"out_dir", c.out_dir},
        {"inject_fault_linear_sign", c.inject_fault_linear_sign}};
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("config: parse error in " + path + ": " + e.what());
    }
    return config_from_json(j);
}

} // namespace hyattn
