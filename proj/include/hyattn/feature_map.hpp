#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "hyattn/rng.hpp"
#include "hyattn/tensor.hpp"

namespace hyattn {

enum class Activation { Identity, Tanh, Softplus };
enum class NonnegMode { None, ShiftedElu };

std::string to_string(Activation a);
std::string to_string(NonnegMode m);
Activation activation_from_string(const std::string& s);
NonnegMode nonneg_from_string(const std::string& s);

/// Learnable kernel feature map: a two-layer per-head embedding network whose
/// output is split into `degree` equal parts, part i raised elementwise to
/// power i, then concatenated. With NonnegMode::ShiftedElu the pre-power
/// values pass through z -> (1+z if z>=0 else e^z), so every feature is
/// positive.
template <std::floating_point S>
struct FeatureMap {
    int input_dim = 0;  // per-head D
    int hidden_dim = 0; // D_h
    int output_dim = 0; // D_e == D', must be divisible by degree
    int degree = 1;     // P
    Activation activation = Activation::Tanh;
    NonnegMode nonneg = NonnegMode::ShiftedElu;

    Tensor<S> w1; // D x D_h
    Tensor<S> b1; // 1 x D_h
    Tensor<S> w2; // D_h x D_e
    Tensor<S> b2; // 1 x D_e

    int feature_dim() const { return output_dim; }

    void validate() const {
        if (input_dim <= 0 || hidden_dim <= 0 || output_dim <= 0 || degree <= 0)
            throw std::invalid_argument("feature map: dimensions must be positive");
        if (output_dim % degree != 0)
            throw std::invalid_argument("feature map: output dim not divisible by degree");
        if (w1.rows() != std::size_t(input_dim) || w1.cols() != std::size_t(hidden_dim) ||
            w2.rows() != std::size_t(hidden_dim) || w2.cols() != std::size_t(output_dim) ||
            b1.cols() != std::size_t(hidden_dim) || b2.cols() != std::size_t(output_dim))
            throw std::invalid_argument("feature map: parameter shapes inconsistent");
    }
};

template <std::floating_point S>
S apply_activation(Activation a, S z) {
    switch (a) {
        case Activation::Identity: return z;
        case Activation::Tanh: return std::tanh(z);
        case Activation::Softplus:
            return z > S(20) ? z : std::log1p(std::exp(z));
    }
    throw std::logic_error("unknown activation");
}

template <std::floating_point S>
S activation_grad(Activation a, S z) {
    switch (a) {
        case Activation::Identity: return S(1);
        case Activation::Tanh: {
            const S t = std::tanh(z);
            return S(1) - t * t;
        }
        case Activation::Softplus:
            return S(1) / (S(1) + std::exp(-z));
    }
    throw std::logic_error("unknown activation");
}

template <std::floating_point S>
S shifted_elu(S z) {
    return z >= S(0) ? S(1) + z : std::exp(z);
}

template <std::floating_point S>
S shifted_elu_grad(S z) {
    return z >= S(0) ? S(1) : std::exp(z);
}

/// Embedding-layer weights normal(0, 1/sqrt(fan_in)), biases zero.
template <std::floating_point S>
FeatureMap<S> init_feature_map(int input_dim, int hidden_dim, int output_dim, int degree,
                               Activation activation, NonnegMode nonneg, Rng& rng) {
    FeatureMap<S> fm;
    fm.input_dim = input_dim;
    fm.hidden_dim = hidden_dim;
    fm.output_dim = output_dim;
    fm.degree = degree;
    fm.activation = activation;
    fm.nonneg = nonneg;
    fm.w1 = random_tensor<S>(rng, {std::size_t(input_dim), std::size_t(hidden_dim)}, Dist::Normal);
    fm.w2 = random_tensor<S>(rng, {std::size_t(hidden_dim), std::size_t(output_dim)}, Dist::Normal);
    const S s1 = S(1) / std::sqrt(S(input_dim));
    const S s2 = S(1) / std::sqrt(S(hidden_dim));
    for (std::size_t i = 0; i < fm.w1.size(); ++i) fm.w1[i] *= s1;
    for (std::size_t i = 0; i < fm.w2.size(); ++i) fm.w2[i] *= s2;
    fm.b1 = Tensor<S>({1, std::size_t(hidden_dim)});
    fm.b2 = Tensor<S>({1, std::size_t(output_dim)});
    fm.validate();
    return fm;
}

/// Defaults used throughout: D_h = D_e = 2*D, degree 2. At Wan-scale head
/// dims (12 heads x 128) this puts the two maps of a block at ~2.4M params.
template <std::floating_point S>
FeatureMap<S> default_feature_map(int head_dim, Rng& rng,
                                  Activation activation = Activation::Tanh,
                                  NonnegMode nonneg = NonnegMode::ShiftedElu) {
    return init_feature_map<S>(head_dim, 2 * head_dim, 2 * head_dim, 2, activation, nonneg, rng);
}

/// Embedding stubbed to the identity (requires D_e == D); used by tests and
/// the pure-polynomial limit.
template <std::floating_point S>
FeatureMap<S> identity_feature_map(int dim, int degree, NonnegMode nonneg) {
    FeatureMap<S> fm;
    fm.input_dim = fm.hidden_dim = fm.output_dim = dim;
    fm.degree = degree;
    fm.activation = Activation::Identity;
    fm.nonneg = nonneg;
    fm.w1 = Tensor<S>::identity(dim);
    fm.w2 = Tensor<S>::identity(dim);
    fm.b1 = Tensor<S>({1, std::size_t(dim)});
    fm.b2 = Tensor<S>({1, std::size_t(dim)});
    fm.validate();
    return fm;
}

/// phi(x) == 1 for every input (D' = 1): zero weights, shifted-elu at zero.
template <std::floating_point S>
FeatureMap<S> constant_one_feature_map(int input_dim) {
    FeatureMap<S> fm;
    fm.input_dim = input_dim;
    fm.hidden_dim = 1;
    fm.output_dim = 1;
    fm.degree = 1;
    fm.activation = Activation::Identity;
    fm.nonneg = NonnegMode::ShiftedElu;
    fm.w1 = Tensor<S>({std::size_t(input_dim), 1});
    fm.b1 = Tensor<S>({1, 1});
    fm.w2 = Tensor<S>({1, 1});
    fm.b2 = Tensor<S>({1, 1});
    fm.validate();
    return fm;
}

/// Row-wise application; output is N x D'.
template <std::floating_point S>
Tensor<S> feature_map_apply(const FeatureMap<S>& fm, const Tensor<S>& x) {
    fm.validate();
    if (x.cols() != std::size_t(fm.input_dim))
        throw std::invalid_argument("feature_map_apply: input width mismatch");
    const std::size_t n = x.rows();
    const std::size_t dh = fm.hidden_dim, de = fm.output_dim;

    Tensor<S> h1 = matmul(x, fm.w1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dh; ++j)
            h1.at(i, j) = apply_activation(fm.activation, h1.at(i, j) + fm.b1.at(0, j));
    opcount::add(n * dh);
    opcount::expo(n * dh); // activation, counted as one transcendental each

    Tensor<S> u = matmul(h1, fm.w2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < de; ++j) u.at(i, j) += fm.b2.at(0, j);
    opcount::add(n * de);

    const std::size_t part = de / std::size_t(fm.degree);
    Tensor<S> out({n, de});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < de; ++j) {
            S w = u.at(i, j);
            if (fm.nonneg == NonnegMode::ShiftedElu) w = shifted_elu(w);
            const int power = int(j / part) + 1;
            S v = w;
            for (int p = 1; p < power; ++p) v *= w;
            out.at(i, j) = v;
        }
    }
    if (fm.nonneg == NonnegMode::ShiftedElu) opcount::expo(n * de);
    opcount::mul(n * part * std::size_t(fm.degree) * std::size_t(fm.degree - 1) / 2);
    require_finite(out, "feature_map_apply");
    return out;
}

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::Identity: return "identity";
        case Activation::Tanh: return "tanh";
        case Activation::Softplus: return "softplus";
    }
    throw std::logic_error("unknown activation");
}

inline std::string to_string(NonnegMode m) {
    return m == NonnegMode::ShiftedElu ? "shifted-elu" : "none";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "identity") return Activation::Identity;
    if (s == "tanh") return Activation::Tanh;
    if (s == "softplus") return Activation::Softplus;
    throw std::invalid_argument("unknown activation name: " + s);
}

inline NonnegMode nonneg_from_string(const std::string& s) {
    if (s == "shifted-elu") return NonnegMode::ShiftedElu;
    if (s == "none") return NonnegMode::None;
    throw std::invalid_argument("unknown nonneg mode: " + s);
}

} // namespace hyattn
