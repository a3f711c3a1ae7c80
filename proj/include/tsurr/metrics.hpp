// SPDX-License-Identifier: MIT
//
// Regression metrics, Factor Match Score between two CP factor sets, and
// l2-normalized component magnitude exports.
#pragma once

#include "tsurr/cpd.hpp"
#include "tsurr/csv.hpp"
#include "tsurr/error.hpp"
#include "tsurr/tensor_core.hpp"

#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace tsurr {

// ============================================================================
// Regression metrics
// ============================================================================

/// Targets with |y| below this are left out of MAPE.
inline constexpr double kMapeZeroTolerance = 1e-8;

struct MetricsReport {
    double r2 = 0.0;
    double mae = 0.0;
    double rmse = 0.0;
    double mape = 0.0;  // NaN when every target was excluded
    std::size_t n = 0;
    std::size_t mape_excluded = 0;
};

inline MetricsReport regression_metrics(std::span<const double> y, std::span<const double> yhat) {
    detail::require(y.size() == yhat.size(), ErrorKind::contract,
                    "metrics: target and prediction lengths differ");
    detail::require(!y.empty(), ErrorKind::contract, "metrics: no samples");
    const double n = static_cast<double>(y.size());
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / n;

    double ss_res = 0.0, ss_tot = 0.0, abs_sum = 0.0, pct_sum = 0.0;
    std::size_t excluded = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double r = y[i] - yhat[i];
        ss_res += r * r;
        ss_tot += (y[i] - mean) * (y[i] - mean);
        abs_sum += std::abs(r);
        if (std::abs(y[i]) < kMapeZeroTolerance)
            ++excluded;
        else
            pct_sum += std::abs(r / y[i]);
    }
    detail::require(ss_tot > 0.0, ErrorKind::undefined_metric,
                    "R^2 is undefined for constant targets");

    MetricsReport m;
    m.n = y.size();
    m.r2 = 1.0 - ss_res / ss_tot;
    m.mae = abs_sum / n;
    m.rmse = std::sqrt(ss_res / n);
    m.mape_excluded = excluded;
    const std::size_t kept = y.size() - excluded;
    m.mape = kept ? pct_sum / static_cast<double>(kept) : std::numeric_limits<double>::quiet_NaN();
    return m;
}

// ============================================================================
// Factor Match Score
// ============================================================================

struct FactorComparison {
    double fms = 0.0;
    /// permutation[r] is the column of the second factor set matched to
    /// column r of the first.
    std::vector<std::size_t> permutation;
    std::vector<double> per_component;
};

enum class FmsSearch { automatic, exhaustive, assignment };

/// Largest rank searched exhaustively under FmsSearch::automatic.
inline constexpr std::size_t kExhaustiveFmsMaxRank = 8;

namespace detail {

inline Eigen::RowVectorXd column_norms(const Matrix& a) { return a.colwise().norm(); }

inline void require_nonzero_columns(const FactorSet& f, const char* which) {
    for (std::size_t m = 0; m < f.modes(); ++m) {
        const auto norms = column_norms(f[m]);
        for (Eigen::Index r = 0; r < norms.size(); ++r)
            require(norms(r) > 0.0, ErrorKind::degenerate_factor,
                    std::string(which) + ": mode " + std::to_string(m) + " component " +
                        std::to_string(r + 1) + " has zero norm");
    }
}

/// score(r, s) = prod_m cos(A_m[:, r], B_m[:, s]).
inline Matrix congruence_products(const FactorSet& a, const FactorSet& b) {
    const auto R = static_cast<Eigen::Index>(a.rank());
    Matrix score = Matrix::Ones(R, R);
    for (std::size_t m = 0; m < a.modes(); ++m) {
        const Eigen::RowVectorXd na = column_norms(a[m]);
        const Eigen::RowVectorXd nb = column_norms(b[m]);
        const Matrix dots = a[m].transpose() * b[m];
        for (Eigen::Index r = 0; r < R; ++r)
            for (Eigen::Index s = 0; s < R; ++s) score(r, s) *= dots(r, s) / (na(r) * nb(s));
    }
    return score;
}

inline std::vector<std::size_t> best_permutation_exhaustive(const Matrix& score) {
    const auto R = static_cast<std::size_t>(score.rows());
    std::vector<std::size_t> perm(R), best;
    std::iota(perm.begin(), perm.end(), 0);
    double best_total = -std::numeric_limits<double>::infinity();
    do {
        double total = 0.0;
        for (std::size_t r = 0; r < R; ++r)
            total += score(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(perm[r]));
        if (total > best_total) {
            best_total = total;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

/// Hungarian algorithm (potentials form, O(n^3)) maximizing the total score.
inline std::vector<std::size_t> best_permutation_assignment(const Matrix& score) {
    const auto n = static_cast<std::size_t>(score.rows());
    const double inf = std::numeric_limits<double>::infinity();
    // 1-based arrays; cost = -score.
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);
    auto cost = [&](std::size_t i, std::size_t j) {
        return -score(static_cast<Eigen::Index>(i - 1), static_cast<Eigen::Index>(j - 1));
    };
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0, j) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> perm(n);
    for (std::size_t j = 1; j <= n; ++j) perm[p[j] - 1] = j - 1;
    return perm;
}

}  // namespace detail

/// Permutation-optimal mean over components of the product across modes
/// of column cosines. 1 is a perfect match.
inline FactorComparison fms(const FactorSet& a, const FactorSet& b,
                            FmsSearch search = FmsSearch::automatic) {
    detail::require(a.rank() == b.rank(), ErrorKind::contract, "FMS: rank mismatch");
    detail::require(a.shape() == b.shape(), ErrorKind::contract, "FMS: shape mismatch");
    detail::require_nonzero_columns(a, "FMS first factor set");
    detail::require_nonzero_columns(b, "FMS second factor set");

    const Matrix score = detail::congruence_products(a, b);
    const bool exhaustive =
        search == FmsSearch::exhaustive ||
        (search == FmsSearch::automatic && a.rank() <= kExhaustiveFmsMaxRank);

    FactorComparison out;
    out.permutation = exhaustive ? detail::best_permutation_exhaustive(score)
                                 : detail::best_permutation_assignment(score);
    double total = 0.0;
    for (std::size_t r = 0; r < out.permutation.size(); ++r) {
        const double s = score(static_cast<Eigen::Index>(r),
                               static_cast<Eigen::Index>(out.permutation[r]));
        out.per_component.push_back(s);
        total += s;
    }
    out.fms = total / static_cast<double>(a.rank());
    return out;
}

// ============================================================================
// Component magnitudes
// ============================================================================

/// |column / ||column||_2| for one mode.
inline Matrix normalized_components(const FactorSet& f, std::size_t mode) {
    detail::require(mode < f.modes(), ErrorKind::contract,
                    "mode " + std::to_string(mode) + " out of range");
    const Matrix& a = f[mode];
    const Eigen::RowVectorXd norms = a.colwise().norm();
    Matrix out(a.rows(), a.cols());
    for (Eigen::Index r = 0; r < a.cols(); ++r) {
        detail::require(norms(r) > 0.0, ErrorKind::degenerate_factor,
                        "mode " + std::to_string(mode) + " component " + std::to_string(r + 1) +
                            " has zero norm");
        out.col(r) = (a.col(r) / norms(r)).cwiseAbs();
    }
    return out;
}

/// Linear-interpolation quantile of an unsorted sample, q in [0, 1].
inline double quantile(std::vector<double> xs, double q) {
    detail::require(!xs.empty(), ErrorKind::contract, "quantile of an empty sample");
    std::sort(xs.begin(), xs.end());
    const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(xs.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, xs.size() - 1);
    return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline std::string mode_file_stem(const DesignSpace& space, std::size_t m) {
    std::string name = space.axis(m).name;
    for (char& c : name)
        if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
    return "mode_" + std::to_string(m) + "_" + name;
}

/// value_label, comp_1..comp_R table of one factor matrix.
inline CsvTable factor_table(const Matrix& a, const Axis& axis) {
    CsvTable t;
    t.header.push_back("value_label");
    for (Eigen::Index r = 0; r < a.cols(); ++r) t.header.push_back("comp_" + std::to_string(r + 1));
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        std::vector<std::string> row{axis.values.at(static_cast<std::size_t>(i))};
        for (Eigen::Index r = 0; r < a.cols(); ++r) row.push_back(detail::format_number(a(i, r)));
        t.rows.push_back(std::move(row));
    }
    return t;
}

/// Per component and axis, the value labels whose normalized magnitude is
/// strictly above the column's `threshold` quantile.
inline nlohmann::json component_highlights(const FactorSet& f, const DesignSpace& space,
                                           double threshold) {
    nlohmann::json comps = nlohmann::json::array();
    std::vector<Matrix> mags;
    for (std::size_t m = 0; m < f.modes(); ++m) mags.push_back(normalized_components(f, m));
    for (std::size_t r = 0; r < f.rank(); ++r) {
        nlohmann::json per_axis = nlohmann::json::object();
        for (std::size_t m = 0; m < f.modes(); ++m) {
            const auto col = mags[m].col(static_cast<Eigen::Index>(r));
            const double cut = quantile(std::vector<double>(col.begin(), col.end()), threshold);
            nlohmann::json labels = nlohmann::json::array();
            for (Eigen::Index i = 0; i < col.size(); ++i)
                if (col(i) > cut) labels.push_back(space.axis(m).values.at(static_cast<std::size_t>(i)));
            per_axis[space.axis(m).name] = std::move(labels);
        }
        comps.push_back({{"component", r + 1}, {"highlights", std::move(per_axis)}});
    }
    return {{"threshold", threshold}, {"components", std::move(comps)}};
}

/// Writes one normalized-magnitude CSV per mode plus highlights.json into
/// `dir`. Returns the written paths.
inline std::vector<std::filesystem::path> component_expression_export(
    const FactorSet& f, const DesignSpace& space, const std::filesystem::path& dir,
    double threshold = 0.75) {
    detail::require(f.shape() == space.shape(), ErrorKind::contract,
                    "factor shape does not match design space");
    std::vector<std::filesystem::path> written;
    for (std::size_t m = 0; m < f.modes(); ++m) {
        auto path = dir / (mode_file_stem(space, m) + ".csv");
        write_csv(path, factor_table(normalized_components(f, m), space.axis(m)));
        written.push_back(std::move(path));
    }
    auto path = dir / "highlights.json";
    write_text(path, component_highlights(f, space, threshold).dump(2) + "\n");
    written.push_back(std::move(path));
    return written;
}

/// Raw (signed, unnormalized) factor CSVs, one per mode.
inline std::vector<std::filesystem::path> export_raw_factors(const FactorSet& f,
                                                             const DesignSpace& space,
                                                             const std::filesystem::path& dir) {
    detail::require(f.shape() == space.shape(), ErrorKind::contract,
                    "factor shape does not match design space");
    std::vector<std::filesystem::path> written;
    for (std::size_t m = 0; m < f.modes(); ++m) {
        auto path = dir / (mode_file_stem(space, m) + ".csv");
        write_csv(path, factor_table(f[m], space.axis(m)));
        written.push_back(std::move(path));
    }
    return written;
}

}  // namespace tsurr
