#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hyattn/opcount.hpp"

namespace hyattn {

/// Dense row-major tensor of real scalars. Values are immutable by
/// convention once an operation returns; NaN/Inf are rejected at API
/// boundaries.
template <std::floating_point S>
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(checked_size(shape_), S(0)) {}

    Tensor(std::vector<std::size_t> shape, std::vector<S> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (checked_size(shape_) != data_.size())
            throw std::invalid_argument("tensor: shape does not match data length");
    }

    /// 2-D convenience: rows given as nested initializer lists.
    Tensor(std::initializer_list<std::initializer_list<S>> rows_init) {
        const std::size_t m = rows_init.size();
        const std::size_t n = m == 0 ? 0 : rows_init.begin()->size();
        shape_ = {m, n};
        data_.reserve(m * n);
        for (const auto& r : rows_init) {
            if (r.size() != n)
                throw std::invalid_argument("tensor: ragged initializer rows");
            data_.insert(data_.end(), r.begin(), r.end());
        }
    }

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<std::size_t> shape, S value) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t.at(i, i) = S(1);
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t rows() const { return require_2d().first; }
    std::size_t cols() const { return require_2d().second; }

    S& at(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
    S at(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }

    S& operator[](std::size_t flat) { return data_[flat]; }
    S operator[](std::size_t flat) const { return data_[flat]; }

    std::span<S> row(std::size_t i) {
        const std::size_t n = cols();
        return std::span<S>(data_.data() + i * n, n);
    }
    std::span<const S> row(std::size_t i) const {
        const std::size_t n = cols();
        return std::span<const S>(data_.data() + i * n, n);
    }

    std::span<S> flat() { return data_; }
    std::span<const S> flat() const { return data_; }
    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

  private:
    std::pair<std::size_t, std::size_t> require_2d() const {
        if (shape_.size() != 2) throw std::logic_error("tensor: 2-D access on non-matrix");
        return {shape_[0], shape_[1]};
    }

    static std::size_t checked_size(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t e : shape) n *= e;
        return shape.empty() ? 0 : n;
    }

    std::vector<std::size_t> shape_;
    std::vector<S> data_;
};

template <std::floating_point S>
void require_finite(const Tensor<S>& t, const char* what) {
    for (S v : t.flat())
        if (!std::isfinite(v))
            throw std::domain_error(std::string("non-finite value in ") + what);
}

/// Standard product with a fixed i-k-j loop order so accumulation is
/// bitwise reproducible across runs.
template <std::floating_point S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) throw std::invalid_argument("matmul: inner extents differ");
    Tensor<S> out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        auto out_i = out.row(i);
        auto a_i = a.row(i);
        for (std::size_t p = 0; p < k; ++p) {
            const S aip = a_i[p];
            auto b_p = b.row(p);
            for (std::size_t j = 0; j < n; ++j) out_i[j] += aip * b_p[j];
        }
    }
    opcount::madd(static_cast<std::uint64_t>(m) * k * n);
    require_finite(out, "matmul");
    return out;
}

/// a * b^T
template <std::floating_point S>
Tensor<S> matmul_bt(const Tensor<S>& a, const Tensor<S>& b) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) throw std::invalid_argument("matmul_bt: inner extents differ");
    Tensor<S> out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        auto a_i = a.row(i);
        for (std::size_t j = 0; j < n; ++j) {
            auto b_j = b.row(j);
            S acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += a_i[p] * b_j[p];
            out.at(i, j) = acc;
        }
    }
    opcount::madd(static_cast<std::uint64_t>(m) * k * n);
    require_finite(out, "matmul_bt");
    return out;
}

/// a^T * b
template <std::floating_point S>
Tensor<S> matmul_at(const Tensor<S>& a, const Tensor<S>& b) {
    const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
    if (b.rows() != k) throw std::invalid_argument("matmul_at: inner extents differ");
    Tensor<S> out({m, n});
    for (std::size_t p = 0; p < k; ++p) {
        auto a_p = a.row(p);
        auto b_p = b.row(p);
        for (std::size_t i = 0; i < m; ++i) {
            const S api = a_p[i];
            auto out_i = out.row(i);
            for (std::size_t j = 0; j < n; ++j) out_i[j] += api * b_p[j];
        }
    }
    opcount::madd(static_cast<std::uint64_t>(m) * k * n);
    require_finite(out, "matmul_at");
    return out;
}

template <std::floating_point S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
    Tensor<S> out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    opcount::add(out.size());
    return out;
}

template <std::floating_point S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("sub: shape mismatch");
    Tensor<S> out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    opcount::add(out.size());
    return out;
}

template <std::floating_point S>
void add_inplace(Tensor<S>& a, const Tensor<S>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("add_inplace: shape mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    opcount::add(a.size());
}

template <std::floating_point S>
Tensor<S> scale(const Tensor<S>& a, S factor) {
    Tensor<S> out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor;
    opcount::mul(out.size());
    return out;
}

/// Rows [begin, end) of a matrix as a new tensor.
template <std::floating_point S>
Tensor<S> row_slice(const Tensor<S>& a, std::size_t begin, std::size_t end) {
    if (begin > end || end > a.rows()) throw std::out_of_range("row_slice: bad range");
    const std::size_t n = a.cols();
    Tensor<S> out({end - begin, n});
    for (std::size_t i = begin; i < end; ++i)
        std::copy(a.row(i).begin(), a.row(i).end(), out.row(i - begin).begin());
    return out;
}

/// Columns [begin, end) of a matrix as a new tensor.
template <std::floating_point S>
Tensor<S> col_slice(const Tensor<S>& a, std::size_t begin, std::size_t end) {
    if (begin > end || end > a.cols()) throw std::out_of_range("col_slice: bad range");
    Tensor<S> out({a.rows(), end - begin});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = begin; j < end; ++j) out.at(i, j - begin) = a.at(i, j);
    return out;
}

template <std::floating_point S>
S max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    S worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

template <std::floating_point S>
struct SoftmaxTerms {
    Tensor<S> expvals; // exp(logit - row max); row max entry is exactly 1
    Tensor<S> rowmax;  // m x 1
};

/// Shifted exponentials of each row: expvals[i][j] = exp(logits[i][j] - max_i).
/// The caller normalizes; keeping the terms separate is what the hybrid
/// formulation needs.
template <std::floating_point S>
SoftmaxTerms<S> stable_row_softmax_terms(const Tensor<S>& logits) {
    require_finite(logits, "stable_row_softmax_terms input");
    const std::size_t m = logits.rows(), n = logits.cols();
    if (n == 0) throw std::invalid_argument("stable_row_softmax_terms: empty rows");
    SoftmaxTerms<S> out{Tensor<S>({m, n}), Tensor<S>({m, 1})};
    for (std::size_t i = 0; i < m; ++i) {
        auto in_i = logits.row(i);
        const S mx = *std::max_element(in_i.begin(), in_i.end());
        out.rowmax.at(i, 0) = mx;
        auto e_i = out.expvals.row(i);
        for (std::size_t j = 0; j < n; ++j) e_i[j] = std::exp(in_i[j] - mx);
    }
    opcount::cmp(m * n);
    opcount::add(m * n);
    opcount::expo(m * n);
    return out;
}

} // namespace hyattn
