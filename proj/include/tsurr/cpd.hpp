// SPDX-License-Identifier: MIT
//
// CP decomposition factors for sparse tensor completion: entry prediction,
// dense reconstruction, masked MSE, adjacent-row smoothness penalty and
// their analytic gradient.
#pragma once

#include "tsurr/error.hpp"
#include "tsurr/tensor_core.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace tsurr {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One I_m x R factor matrix per mode. Column r of every matrix together
/// forms the r-th rank-one component.
class FactorSet {
public:
    FactorSet() = default;

    explicit FactorSet(std::vector<Matrix> factors) : factors_(std::move(factors)) {
        detail::require(!factors_.empty(), ErrorKind::contract, "factor set needs at least one mode");
        const auto r = factors_.front().cols();
        detail::require(r >= 1, ErrorKind::contract, "rank must be at least 1");
        for (const auto& f : factors_) {
            detail::require(f.cols() == r, ErrorKind::contract,
                            "factor matrices must share the same rank");
            detail::require(f.rows() >= 1, ErrorKind::contract, "empty factor matrix");
        }
    }

    /// All-zero factors of the given shape and rank.
    static FactorSet zeros(const Shape& shape, std::size_t rank) {
        std::vector<Matrix> f;
        for (std::size_t n : shape)
            f.push_back(Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(rank)));
        return FactorSet(std::move(f));
    }

    [[nodiscard]] std::size_t modes() const { return factors_.size(); }
    [[nodiscard]] std::size_t rank() const {
        return factors_.empty() ? 0 : static_cast<std::size_t>(factors_.front().cols());
    }

    [[nodiscard]] Shape shape() const {
        Shape s;
        for (const auto& f : factors_) s.push_back(static_cast<std::size_t>(f.rows()));
        return s;
    }

    [[nodiscard]] const Matrix& operator[](std::size_t m) const { return factors_[m]; }
    [[nodiscard]] Matrix& operator[](std::size_t m) { return factors_[m]; }
    [[nodiscard]] const std::vector<Matrix>& matrices() const { return factors_; }

    [[nodiscard]] bool all_finite() const {
        for (const auto& f : factors_)
            if (!f.allFinite()) return false;
        return true;
    }

    /// Contiguous parameter blocks, one per mode, for the optimizer.
    [[nodiscard]] std::vector<std::span<double>> blocks() {
        std::vector<std::span<double>> out;
        for (auto& f : factors_) out.emplace_back(f.data(), static_cast<std::size_t>(f.size()));
        return out;
    }

    [[nodiscard]] std::vector<std::span<const double>> blocks() const {
        std::vector<std::span<const double>> out;
        for (const auto& f : factors_)
            out.emplace_back(f.data(), static_cast<std::size_t>(f.size()));
        return out;
    }

    [[nodiscard]] std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& f : factors_) n += static_cast<std::size_t>(f.size());
        return n;
    }

private:
    std::vector<Matrix> factors_;
};

struct SmoothnessConfig {
    double lambda = 0.0;
    std::vector<std::size_t> modes;

    void validate(std::size_t num_modes) const {
        detail::require(lambda >= 0.0 && std::isfinite(lambda), ErrorKind::contract,
                        "smoothness weight must be non-negative");
        for (std::size_t m : modes)
            detail::require(m < num_modes, ErrorKind::contract,
                            "smoothness mode " + std::to_string(m) + " out of range");
    }
};

/// Default standard deviation of the Gaussian factor initialization.
inline constexpr double kInitStddev = 0.5;

/// I.i.d. Gaussian(0, stddev) factors; mode-major, row-major draw order.
inline FactorSet init_factors(const Shape& shape, std::size_t rank, std::uint64_t seed,
                              double stddev = kInitStddev) {
    detail::require(rank >= 1, ErrorKind::contract, "rank must be at least 1");
    detail::require(!shape.empty(), ErrorKind::contract, "shape must have at least one mode");
    for (std::size_t n : shape)
        detail::require(n >= 1, ErrorKind::contract, "mode sizes must be at least 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, stddev);
    FactorSet f = FactorSet::zeros(shape, rank);
    for (std::size_t m = 0; m < f.modes(); ++m)
        for (Eigen::Index i = 0; i < f[m].rows(); ++i)
            for (Eigen::Index r = 0; r < f[m].cols(); ++r) f[m](i, r) = dist(rng);
    return f;
}

namespace detail {

inline void check_compatible(const FactorSet& f, const ObservationSet& obs) {
    require(f.shape() == obs.shape(), ErrorKind::contract,
            "observation shape does not match factor shape");
}

/// Sum over components of the product of indexed rows; no bounds check.
inline double cp_value(const FactorSet& f, std::span<const std::size_t> index) {
    const std::size_t R = f.rank();
    const std::size_t M = f.modes();
    double sum = 0.0;
    for (std::size_t r = 0; r < R; ++r) {
        double p = 1.0;
        for (std::size_t m = 0; m < M; ++m)
            p *= f[m](static_cast<Eigen::Index>(index[m]), static_cast<Eigen::Index>(r));
        sum += p;
    }
    return sum;
}

}  // namespace detail

inline double predict_entry(const FactorSet& f, std::span<const std::size_t> index) {
    check_index(f.shape(), index);
    return detail::cp_value(f, index);
}

/// Default upper bound on materialized dense cells.
inline constexpr std::size_t kDenseCellCap = 10'000'000;

inline DenseTensor reconstruct_full(const FactorSet& f, std::size_t cell_cap = kDenseCellCap) {
    const Shape shape = f.shape();
    const std::size_t cells = num_cells(shape);
    detail::require(cells <= cell_cap, ErrorKind::capacity,
                    "dense reconstruction of " + std::to_string(cells) +
                        " cells exceeds the cap of " + std::to_string(cell_cap));
    DenseTensor out(shape);
    auto data = out.data();
    Index idx(shape.size(), 0);
    std::size_t off = 0;
    do {
        data[off++] = detail::cp_value(f, idx);
    } while (next_index(shape, idx));
    return out;
}

inline double masked_mse(const FactorSet& f, const ObservationSet& obs) {
    detail::require(!obs.empty(), ErrorKind::undefined_loss, "masked MSE over zero observations");
    detail::check_compatible(f, obs);
    double sum = 0.0;
    for (const auto& e : obs.entries()) {
        const double r = e.value - detail::cp_value(f, e.index);
        sum += r * r;
    }
    return sum / static_cast<double>(obs.size());
}

/// lambda * sum over penalized modes of squared differences between
/// consecutive factor rows.
inline double smoothness_penalty(const FactorSet& f, const SmoothnessConfig& cfg) {
    cfg.validate(f.modes());
    if (cfg.lambda == 0.0) return 0.0;
    double sum = 0.0;
    for (std::size_t m : cfg.modes) {
        const Matrix& a = f[m];
        for (Eigen::Index i = 0; i + 1 < a.rows(); ++i)
            sum += (a.row(i + 1) - a.row(i)).squaredNorm();
    }
    return cfg.lambda * sum;
}

inline double objective(const FactorSet& f, const ObservationSet& obs, const SmoothnessConfig& cfg) {
    return masked_mse(f, obs) + smoothness_penalty(f, cfg);
}

/// Adds the smoothness gradient into `grad`.
inline void accumulate_smoothness_grad(const FactorSet& f, const SmoothnessConfig& cfg,
                                       FactorSet& grad) {
    if (cfg.lambda == 0.0) return;
    for (std::size_t m : cfg.modes) {
        const Matrix& a = f[m];
        Matrix& g = grad[m];
        for (Eigen::Index i = 0; i + 1 < a.rows(); ++i) {
            const Eigen::RowVectorXd d = 2.0 * cfg.lambda * (a.row(i + 1) - a.row(i));
            g.row(i + 1) += d;
            g.row(i) -= d;
        }
    }
}

/// Gradient of masked_mse + smoothness_penalty with respect to every factor
/// entry. Writes the objective value to `loss` when non-null.
inline FactorSet grad_masked_loss(const FactorSet& f, const ObservationSet& obs,
                                  const SmoothnessConfig& cfg, double* loss = nullptr) {
    detail::require(!obs.empty(), ErrorKind::undefined_loss, "masked MSE over zero observations");
    detail::check_compatible(f, obs);
    cfg.validate(f.modes());

    const std::size_t R = f.rank();
    const std::size_t M = f.modes();
    const double n = static_cast<double>(obs.size());
    FactorSet grad = FactorSet::zeros(f.shape(), R);

    // prefix[m] = prod_{k<m}, suffix[m] = prod_{k>m} of indexed entries.
    std::vector<double> prefix(M + 1), suffix(M + 1);
    double sse = 0.0;
    for (const auto& e : obs.entries()) {
        const double resid = detail::cp_value(f, e.index) - e.value;
        sse += resid * resid;
        const double coeff = 2.0 * resid / n;
        for (std::size_t r = 0; r < R; ++r) {
            const auto col = static_cast<Eigen::Index>(r);
            prefix[0] = 1.0;
            for (std::size_t m = 0; m < M; ++m)
                prefix[m + 1] = prefix[m] * f[m](static_cast<Eigen::Index>(e.index[m]), col);
            suffix[M] = 1.0;
            for (std::size_t m = M; m-- > 0;)
                suffix[m] = suffix[m + 1] * f[m](static_cast<Eigen::Index>(e.index[m]), col);
            for (std::size_t m = 0; m < M; ++m)
                grad[m](static_cast<Eigen::Index>(e.index[m]), col) +=
                    coeff * prefix[m] * suffix[m + 1];
        }
    }
    accumulate_smoothness_grad(f, cfg, grad);
    if (loss) *loss = sse / n + smoothness_penalty(f, cfg);
    return grad;
}

}  // namespace tsurr
