// SPDX-License-Identifier: MIT
//
// Sampling protocols and experiment orchestration: uniform and
// region-biased train/test splits, out-of-distribution sweeps, per-cell
// error grids and multi-iteration aggregation.
#pragma once

#include "tsurr/error.hpp"
#include "tsurr/io.hpp"
#include "tsurr/metrics.hpp"
#include "tsurr/tensor_core.hpp"
#include "tsurr/train.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace tsurr {

// ============================================================================
// Regions
// ============================================================================

/// Axis-aligned rectangle over the projection onto two axes; index
/// intervals are inclusive.
struct RegionSpec {
    std::string axis_a;
    std::string axis_b;
    std::size_t a_lo = 0, a_hi = 0;
    std::size_t b_lo = 0, b_hi = 0;

    /// Builds a region from value labels instead of indices.
    static RegionSpec from_labels(const DesignSpace& space, const std::string& axis_a,
                                  const std::string& a_lo, const std::string& a_hi,
                                  const std::string& axis_b, const std::string& b_lo,
                                  const std::string& b_hi) {
        auto pos = [&](const std::string& axis, const std::string& label) {
            auto p = space.axis(space.mode_of(axis)).find(label);
            detail::require(p.has_value(), ErrorKind::config,
                            "axis '" + axis + "' has no value '" + label + "'");
            return *p;
        };
        return {axis_a, axis_b, pos(axis_a, a_lo), pos(axis_a, a_hi), pos(axis_b, b_lo),
                pos(axis_b, b_hi)};
    }
};

struct ResolvedRegion {
    std::size_t mode_a = 0, mode_b = 0;
    std::size_t a_lo = 0, a_hi = 0, b_lo = 0, b_hi = 0;

    [[nodiscard]] bool contains(std::span<const std::size_t> index) const {
        const std::size_t a = index[mode_a];
        const std::size_t b = index[mode_b];
        return a >= a_lo && a <= a_hi && b >= b_lo && b <= b_hi;
    }
};

inline ResolvedRegion resolve(const RegionSpec& r, const DesignSpace& space) {
    ResolvedRegion out{space.mode_of(r.axis_a), space.mode_of(r.axis_b), r.a_lo, r.a_hi,
                       r.b_lo, r.b_hi};
    detail::require(out.mode_a != out.mode_b, ErrorKind::config, "region axes must be distinct");
    const Shape shape = space.shape();
    detail::require(r.a_lo <= r.a_hi && r.a_hi < shape[out.mode_a], ErrorKind::config,
                    "region interval on '" + r.axis_a + "' is empty or out of bounds");
    detail::require(r.b_lo <= r.b_hi && r.b_hi < shape[out.mode_b], ErrorKind::config,
                    "region interval on '" + r.axis_b + "' is empty or out of bounds");
    return out;
}

// ============================================================================
// Splits
// ============================================================================

struct Split {
    ObservationSet train;
    ObservationSet test;
};

namespace detail {

/// Observation positions ordered by flat offset, so splits do not depend on
/// input order.
inline std::vector<std::size_t> canonical_positions(const ObservationSet& obs) {
    const Shape shape = obs.shape();
    std::vector<std::size_t> pos(obs.size());
    std::iota(pos.begin(), pos.end(), 0);
    std::sort(pos.begin(), pos.end(), [&](std::size_t x, std::size_t y) {
        return flat_offset(shape, obs[x].index) < flat_offset(shape, obs[y].index);
    });
    return pos;
}

inline std::vector<std::size_t> sorted(std::vector<std::size_t> v, const ObservationSet& obs) {
    const Shape shape = obs.shape();
    std::sort(v.begin(), v.end(), [&](std::size_t x, std::size_t y) {
        return flat_offset(shape, obs[x].index) < flat_offset(shape, obs[y].index);
    });
    return v;
}

inline constexpr std::uint64_t kOutStratumSalt = 0x5bd1e9955bd1e995ULL;

}  // namespace detail

inline Split uniform_split(const ObservationSet& obs, double fraction, std::uint64_t seed) {
    detail::require(fraction > 0.0 && fraction < 1.0, ErrorKind::split,
                    "train fraction must lie in (0, 1)");
    detail::require(obs.size() >= 2, ErrorKind::split, "need at least two observations to split");
    auto pos = detail::canonical_positions(obs);
    std::mt19937_64 rng(seed);
    std::shuffle(pos.begin(), pos.end(), rng);
    const auto n_train =
        static_cast<std::size_t>(std::llround(fraction * static_cast<double>(obs.size())));
    detail::require(n_train >= 1 && n_train < obs.size(), ErrorKind::split,
                    "split of " + std::to_string(obs.size()) + " observations at fraction " +
                        detail::format_number(fraction) + " leaves one side empty");
    std::vector<std::size_t> train(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> test(pos.begin() + static_cast<std::ptrdiff_t>(n_train), pos.end());
    return {obs.subset(detail::sorted(std::move(train), obs)),
            obs.subset(detail::sorted(std::move(test), obs))};
}

/// Positions of observations inside / outside the region, in canonical order.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> region_strata(
    const ObservationSet& obs, const ResolvedRegion& region) {
    std::vector<std::size_t> in, out;
    for (std::size_t p : detail::canonical_positions(obs))
        (region.contains(obs[p].index) ? in : out).push_back(p);
    return {in, out};
}

/// n_in draws from inside the region plus n_out from outside, without
/// replacement; every other observation is test.
inline Split biased_split(const ObservationSet& obs, const RegionSpec& region, std::size_t n_in,
                          std::size_t n_out, std::uint64_t seed) {
    const ResolvedRegion rr = resolve(region, obs.space());
    auto [in, out] = region_strata(obs, rr);
    detail::require(n_in <= in.size(), ErrorKind::stratum_exhausted,
                    "in-region stratum has " + std::to_string(in.size()) +
                        " observations, " + std::to_string(n_in) + " requested");
    detail::require(n_out <= out.size(), ErrorKind::stratum_exhausted,
                    "out-of-region stratum has " + std::to_string(out.size()) +
                        " observations, " + std::to_string(n_out) + " requested");
    detail::require(n_in + n_out >= 1, ErrorKind::split, "biased split selects no training rows");
    detail::require(n_in + n_out < obs.size(), ErrorKind::split, "biased split leaves no test rows");

    std::mt19937_64 rng_in(seed);
    std::shuffle(in.begin(), in.end(), rng_in);
    std::mt19937_64 rng_out(seed ^ detail::kOutStratumSalt);
    std::shuffle(out.begin(), out.end(), rng_out);

    std::vector<std::size_t> train, test;
    train.insert(train.end(), in.begin(), in.begin() + static_cast<std::ptrdiff_t>(n_in));
    train.insert(train.end(), out.begin(), out.begin() + static_cast<std::ptrdiff_t>(n_out));
    test.insert(test.end(), in.begin() + static_cast<std::ptrdiff_t>(n_in), in.end());
    test.insert(test.end(), out.begin() + static_cast<std::ptrdiff_t>(n_out), out.end());
    return {obs.subset(detail::sorted(std::move(train), obs)),
            obs.subset(detail::sorted(std::move(test), obs))};
}

/// Re-expresses both sides under a normalizer fitted to the training raw
/// outcomes.
inline Split normalize_on_train(const Split& s) {
    const Normalizer n = Normalizer::fit(s.train.raw_values());
    return {s.train.renormalized(n), s.test.renormalized(n)};
}

// ============================================================================
// Aggregation
// ============================================================================

struct Aggregate {
    double mean = 0.0;
    double std = 0.0;  // population (divide by n)
};

/// Mean and population standard deviation; NaN entries are skipped.
inline Aggregate aggregate(std::span<const double> xs) {
    double sum = 0.0;
    std::size_t n = 0;
    for (double x : xs)
        if (std::isfinite(x)) sum += x, ++n;
    if (n == 0) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (double x : xs)
        if (std::isfinite(x)) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(n))};
}

struct MetricsAggregate {
    Aggregate r2, mae, rmse, mape;
    std::size_t count = 0;
};

inline MetricsAggregate aggregate_metrics(std::span<const MetricsReport> reports) {
    std::vector<double> r2, mae, rmse, mape;
    for (const auto& m : reports) {
        r2.push_back(m.r2);
        mae.push_back(m.mae);
        rmse.push_back(m.rmse);
        mape.push_back(m.mape);
    }
    return {aggregate(r2), aggregate(mae), aggregate(rmse), aggregate(mape), reports.size()};
}

inline json to_json(const Aggregate& a) {
    return {{"mean", number_or_null(a.mean)}, {"std", number_or_null(a.std)}};
}

inline json to_json(const MetricsAggregate& m) {
    return {{"r2", to_json(m.r2)},
            {"mae", to_json(m.mae)},
            {"rmse", to_json(m.rmse)},
            {"mape", to_json(m.mape)},
            {"count", m.count}};
}

// ============================================================================
// Per-cell error grids
// ============================================================================

/// MAE per (axis_a value, axis_b value) cell. Cells with no test rows are
/// absent. For a single evaluation `std` is the spread of |residual| within
/// the cell; after aggregate_grids it is the spread of the cell MAE across
/// iterations.
struct RegionErrorGrid {
    std::size_t mode_a = 0, mode_b = 0;
    std::size_t rows = 0, cols = 0;
    Matrix mean;
    Matrix std;
    Eigen::Matrix<std::size_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> count;
    std::optional<ResolvedRegion> region;

    [[nodiscard]] bool present(std::size_t i, std::size_t j) const {
        return count(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) > 0;
    }
};

inline RegionErrorGrid empty_grid(const Shape& shape, std::size_t mode_a, std::size_t mode_b) {
    RegionErrorGrid g;
    g.mode_a = mode_a;
    g.mode_b = mode_b;
    g.rows = shape.at(mode_a);
    g.cols = shape.at(mode_b);
    const auto R = static_cast<Eigen::Index>(g.rows);
    const auto C = static_cast<Eigen::Index>(g.cols);
    g.mean = Matrix::Zero(R, C);
    g.std = Matrix::Zero(R, C);
    g.count.setZero(R, C);
    return g;
}

inline RegionErrorGrid per_cell_errors(std::span<const double> predictions,
                                       const ObservationSet& obs_test, std::size_t mode_a,
                                       std::size_t mode_b,
                                       const std::optional<ResolvedRegion>& region = std::nullopt) {
    detail::require(predictions.size() == obs_test.size(), ErrorKind::contract,
                    "predictions are not aligned with test observations");
    const Shape shape = obs_test.shape();
    detail::require(mode_a < shape.size() && mode_b < shape.size() && mode_a != mode_b,
                    ErrorKind::contract, "grid axes must be two distinct valid modes");
    RegionErrorGrid g = empty_grid(shape, mode_a, mode_b);
    g.region = region;
    Matrix sq = Matrix::Zero(g.mean.rows(), g.mean.cols());
    for (std::size_t k = 0; k < obs_test.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(obs_test[k].index[mode_a]);
        const auto j = static_cast<Eigen::Index>(obs_test[k].index[mode_b]);
        const double e = std::abs(obs_test[k].value - predictions[k]);
        g.mean(i, j) += e;
        sq(i, j) += e * e;
        g.count(i, j) += 1;
    }
    for (Eigen::Index i = 0; i < g.mean.rows(); ++i)
        for (Eigen::Index j = 0; j < g.mean.cols(); ++j) {
            const auto n = static_cast<double>(g.count(i, j));
            if (n == 0) continue;
            g.mean(i, j) /= n;
            g.std(i, j) = std::sqrt(std::max(0.0, sq(i, j) / n - g.mean(i, j) * g.mean(i, j)));
        }
    return g;
}

/// Mean and population std of each cell's MAE over the grids in which the
/// cell is present; counts are summed.
inline RegionErrorGrid aggregate_grids(std::span<const RegionErrorGrid> grids) {
    detail::require(!grids.empty(), ErrorKind::contract, "no grids to aggregate");
    const RegionErrorGrid& first = grids.front();
    Shape shape(std::max(first.mode_a, first.mode_b) + 1, 1);
    shape[first.mode_a] = first.rows;
    shape[first.mode_b] = first.cols;
    RegionErrorGrid out = empty_grid(shape, first.mode_a, first.mode_b);
    out.region = first.region;
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < out.cols; ++j) {
            std::vector<double> vals;
            std::size_t total = 0;
            for (const auto& g : grids) {
                if (!g.present(i, j)) continue;
                vals.push_back(g.mean(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
                total += g.count(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            }
            const auto a = aggregate(vals);
            const auto ii = static_cast<Eigen::Index>(i);
            const auto jj = static_cast<Eigen::Index>(j);
            out.count(ii, jj) = total;
            out.mean(ii, jj) = vals.empty() ? 0.0 : a.mean;
            out.std(ii, jj) = vals.empty() ? 0.0 : a.std;
        }
    return out;
}

inline json to_json(const RegionErrorGrid& g, const DesignSpace& space) {
    json mean = json::array(), sd = json::array(), count = json::array();
    for (std::size_t i = 0; i < g.rows; ++i) {
        json mr = json::array(), sr = json::array(), cr = json::array();
        for (std::size_t j = 0; j < g.cols; ++j) {
            const auto ii = static_cast<Eigen::Index>(i);
            const auto jj = static_cast<Eigen::Index>(j);
            const bool p = g.present(i, j);
            mr.push_back(p ? json(g.mean(ii, jj)) : json(nullptr));
            sr.push_back(p ? json(g.std(ii, jj)) : json(nullptr));
            cr.push_back(g.count(ii, jj));
        }
        mean.push_back(std::move(mr));
        sd.push_back(std::move(sr));
        count.push_back(std::move(cr));
    }
    json j = {{"axis_a", space.axis(g.mode_a).name},
              {"axis_b", space.axis(g.mode_b).name},
              {"values_a", space.axis(g.mode_a).values},
              {"values_b", space.axis(g.mode_b).values},
              {"mae_mean", std::move(mean)},
              {"mae_std", std::move(sd)},
              {"count", std::move(count)}};
    if (g.region)
        j["region"] = {{"a", {g.region->a_lo, g.region->a_hi}}, {"b", {g.region->b_lo, g.region->b_hi}}};
    return j;
}

// ============================================================================
// Plans and model specs
// ============================================================================

enum class PlanKind { uniform, biased };

struct SamplingPlan {
    std::string name = "uniform";
    PlanKind kind = PlanKind::uniform;
    double fraction = 0.8;
    std::optional<RegionSpec> region;
    std::size_t n_in = 0;
    std::size_t n_out = 0;
    std::uint64_t seed = 0;
};

struct ModelSpec {
    std::string name;
    ModelKind kind = ModelKind::cpd;
    TrainConfig config;
};

enum class NormalizeScope { train, full };

/// Split seed of outer iteration k; depends only on (plan seed, k).
inline std::uint64_t iteration_seed(std::uint64_t base, std::size_t k) {
    return base + 1000003ULL * static_cast<std::uint64_t>(k);
}

inline Split make_split(const ObservationSet& obs, const SamplingPlan& plan, std::size_t k) {
    const auto seed = iteration_seed(plan.seed, k);
    if (plan.kind == PlanKind::uniform) return uniform_split(obs, plan.fraction, seed);
    detail::require(plan.region.has_value(), ErrorKind::config,
                    "biased plan '" + plan.name + "' has no region");
    return biased_split(obs, *plan.region, plan.n_in, plan.n_out, seed);
}

inline TrainConfig iteration_config(const TrainConfig& base, std::size_t k) {
    TrainConfig c = base;
    c.seed = iteration_seed(base.seed, k);
    return c;
}

/// Restricts (observations, predictions) to rows outside the region.
inline std::pair<std::vector<double>, std::vector<double>> ood_rows(
    const ObservationSet& test, std::span<const double> pred, const ResolvedRegion& region) {
    std::vector<double> y, yhat;
    for (std::size_t k = 0; k < test.size(); ++k)
        if (!region.contains(test[k].index)) {
            y.push_back(test[k].value);
            yhat.push_back(pred[k]);
        }
    return {y, yhat};
}

// ============================================================================
// JSON configuration
// ============================================================================

inline RegionSpec region_from_json(const json& j, const DesignSpace& space) {
    return with_json_context("region", [&] {
        RegionSpec r;
        r.axis_a = j.at("axis_a").get<std::string>();
        r.axis_b = j.at("axis_b").get<std::string>();
        if (j.contains("range_a")) {
            r.a_lo = j["range_a"].at(0).get<std::size_t>();
            r.a_hi = j["range_a"].at(1).get<std::size_t>();
            r.b_lo = j.at("range_b").at(0).get<std::size_t>();
            r.b_hi = j.at("range_b").at(1).get<std::size_t>();
        } else {
            auto label = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
            r = RegionSpec::from_labels(space, r.axis_a, label(j.at("labels_a").at(0)),
                                        label(j.at("labels_a").at(1)), r.axis_b,
                                        label(j.at("labels_b").at(0)), label(j.at("labels_b").at(1)));
        }
        resolve(r, space);
        return r;
    });
}

inline json region_to_json(const RegionSpec& r) {
    return {{"axis_a", r.axis_a},
            {"axis_b", r.axis_b},
            {"range_a", {r.a_lo, r.a_hi}},
            {"range_b", {r.b_lo, r.b_hi}}};
}

inline std::vector<ModelSpec> models_from_json(const json& j) {
    return with_json_context("models", [&] {
        std::vector<ModelSpec> out;
        for (const auto& m : j) {
            ModelSpec s;
            s.kind = model_kind_from_string(m.at("kind").get<std::string>());
            s.name = m.value("name", std::string(to_string(s.kind)));
            s.config = config_from_json(m);
            out.push_back(std::move(s));
        }
        detail::require(!out.empty(), ErrorKind::config, "no models configured");
        for (std::size_t i = 0; i < out.size(); ++i)
            for (std::size_t k = 0; k < i; ++k)
                detail::require(out[i].name != out[k].name, ErrorKind::config,
                                "duplicate model name '" + out[i].name + "'");
        return out;
    });
}

inline NormalizeScope scope_from_json(const json& j) {
    const std::string s = j.value("normalize", std::string("train"));
    if (s == "train") return NormalizeScope::train;
    if (s == "full") return NormalizeScope::full;
    detail::fail(ErrorKind::config, "normalize must be 'train' or 'full'");
}

struct ExperimentConfig {
    std::vector<SamplingPlan> plans;
    std::vector<ModelSpec> models;
    std::size_t iterations = 10;
    NormalizeScope normalize = NormalizeScope::train;
    /// Axes for per-cell grids of plans without a region.
    std::optional<std::pair<std::string, std::string>> grid_axes;
    bool export_factors = true;
    double highlight_threshold = 0.75;
};

inline ExperimentConfig experiment_config_from_json(const json& j, const DesignSpace& space) {
    return with_json_context("experiment config", [&] {
        ExperimentConfig c;
        c.iterations = j.value("iterations", c.iterations);
        detail::require(c.iterations >= 1, ErrorKind::config, "iterations must be at least 1");
        c.normalize = scope_from_json(j);
        c.models = models_from_json(j.at("models"));
        c.export_factors = j.value("export_factors", c.export_factors);
        c.highlight_threshold = j.value("highlight_threshold", c.highlight_threshold);
        if (j.contains("grid_axes"))
            c.grid_axes = std::make_pair(j["grid_axes"].at(0).get<std::string>(),
                                         j["grid_axes"].at(1).get<std::string>());
        const std::uint64_t seed = j.value("seed", std::uint64_t{0});
        for (const auto& p : j.at("plans")) {
            SamplingPlan plan;
            const std::string kind = p.at("kind").get<std::string>();
            plan.name = p.value("name", kind);
            plan.seed = p.value("seed", seed);
            if (kind == "uniform") {
                plan.kind = PlanKind::uniform;
                plan.fraction = p.value("fraction", plan.fraction);
                detail::require(plan.fraction > 0.0 && plan.fraction < 1.0, ErrorKind::config,
                                "plan '" + plan.name + "': fraction must lie in (0, 1)");
            } else if (kind == "biased") {
                plan.kind = PlanKind::biased;
                plan.region = region_from_json(p.at("region"), space);
                plan.n_in = p.at("n_in").get<std::size_t>();
                plan.n_out = p.at("n_out").get<std::size_t>();
            } else {
                detail::fail(ErrorKind::config, "unknown plan kind '" + kind + "'");
            }
            c.plans.push_back(std::move(plan));
        }
        detail::require(!c.plans.empty(), ErrorKind::config, "no sampling plans configured");
        return c;
    });
}

// ============================================================================
// Experiment
// ============================================================================

struct IterationResult {
    std::string plan, model;
    std::size_t iteration = 0;
    MetricsReport metrics;
    std::optional<MetricsReport> ood_metrics;
    double final_loss = 0.0;
    std::size_t restart = 0;
    std::size_t epochs_run = 0;
    double seconds = 0.0;
};

struct Failure {
    std::string plan, model;
    std::size_t iteration = 0;
    std::string kind;
    std::string message;
};

struct ExperimentSummary {
    std::vector<IterationResult> iterations;
    std::vector<Failure> failures;
    /// Keyed by "plan/model".
    std::map<std::string, MetricsAggregate> aggregates;
    std::map<std::string, MetricsAggregate> ood_aggregates;
    std::vector<double> fms_per_iteration;
    std::optional<Aggregate> fms;
};

inline json to_json(const IterationResult& r) {
    json j = {{"plan", r.plan},
              {"model", r.model},
              {"iteration", r.iteration},
              {"metrics", to_json(r.metrics)},
              {"final_loss", r.final_loss},
              {"restart", r.restart},
              {"epochs_run", r.epochs_run},
              {"seconds", r.seconds}};
    if (r.ood_metrics) j["ood_metrics"] = to_json(*r.ood_metrics);
    return j;
}

inline json to_json(const Failure& f) {
    return {{"plan", f.plan}, {"model", f.model}, {"iteration", f.iteration},
            {"error", f.kind}, {"message", f.message}};
}

namespace detail {

inline std::optional<std::pair<std::size_t, std::size_t>> grid_modes(const SamplingPlan& plan,
                                                                     const ExperimentConfig& cfg,
                                                                     const DesignSpace& space) {
    if (plan.region)
        return std::make_pair(space.mode_of(plan.region->axis_a), space.mode_of(plan.region->axis_b));
    if (cfg.grid_axes)
        return std::make_pair(space.mode_of(cfg.grid_axes->first), space.mode_of(cfg.grid_axes->second));
    return std::nullopt;
}

}  // namespace detail

/// Runs every (plan, model, iteration) cell, writing per-iteration JSON,
/// aggregated summaries, per-cell grids, factor exports for linear models,
/// and the uniform-vs-biased CPD factor match score when both plan kinds
/// are present. A failing cell is recorded and the run continues.
inline ExperimentSummary run_experiment(const ExperimentConfig& cfg, const ObservationSet& obs,
                                        const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    const DesignSpace& space = obs.space();
    ExperimentSummary summary;

    const SamplingPlan* uniform_plan = nullptr;
    const SamplingPlan* biased_plan = nullptr;
    for (const auto& p : cfg.plans) {
        if (p.kind == PlanKind::uniform && !uniform_plan) uniform_plan = &p;
        if (p.kind == PlanKind::biased && !biased_plan) biased_plan = &p;
    }
    const ModelSpec* fms_model = nullptr;
    for (const auto& m : cfg.models)
        if (m.kind == ModelKind::cpd) {
            fms_model = &m;
            break;
        }
    // (plan name, iteration) -> factors of fms_model
    std::map<std::pair<std::string, std::size_t>, FactorSet> fms_factors;

    for (const auto& plan : cfg.plans) {
        const auto modes = detail::grid_modes(plan, cfg, space);
        std::optional<ResolvedRegion> region;
        if (plan.region) region = resolve(*plan.region, space);

        for (const auto& spec : cfg.models) {
            const std::string key = plan.name + "/" + spec.name;
            std::vector<MetricsReport> reports, ood_reports;
            std::vector<RegionErrorGrid> grids;
            for (std::size_t k = 0; k < cfg.iterations; ++k) {
                try {
                    Split split = make_split(obs, plan, k);
                    if (cfg.normalize == NormalizeScope::train) split = normalize_on_train(split);
                    auto [model, report] = fit(split.train, iteration_config(spec.config, k), spec.kind);
                    const auto pred = predict_set(model, split.test.indices());
                    const auto y = split.test.values();

                    IterationResult r{plan.name, spec.name, k, regression_metrics(y, pred), {},
                                      report.final_loss, report.restart, report.epochs_run,
                                      report.seconds};
                    if (region) {
                        auto [oy, op] = ood_rows(split.test, pred, *region);
                        if (oy.size() >= 2) r.ood_metrics = regression_metrics(oy, op);
                    }
                    if (modes) grids.push_back(per_cell_errors(pred, split.test, modes->first,
                                                               modes->second, region));
                    if (&spec == fms_model) fms_factors.emplace(std::make_pair(plan.name, k), *model.factors());
                    if (k == 0 && cfg.export_factors && model.factors()) {
                        const fs::path fdir = out_dir / "factors" / (plan.name + "_" + spec.name);
                        export_raw_factors(*model.factors(), space, fdir / "raw");
                        component_expression_export(*model.factors(), space, fdir / "normalized",
                                                    cfg.highlight_threshold);
                    }
                    write_json(out_dir / "iterations" / plan.name / spec.name /
                                   ("iter_" + std::to_string(k) + ".json"),
                               to_json(r));
                    reports.push_back(r.metrics);
                    if (r.ood_metrics) ood_reports.push_back(*r.ood_metrics);
                    summary.iterations.push_back(std::move(r));
                } catch (const Error& e) {
                    summary.failures.push_back({plan.name, spec.name, k, to_string(e.kind()), e.what()});
                }
            }
            summary.aggregates[key] = aggregate_metrics(reports);
            if (!ood_reports.empty()) summary.ood_aggregates[key] = aggregate_metrics(ood_reports);
            if (!grids.empty())
                write_json(out_dir / "grids" / (plan.name + "_" + spec.name + ".json"),
                           to_json(aggregate_grids(grids), space));
        }
    }

    json fms_json;
    if (uniform_plan && biased_plan && fms_model) {
        json per = json::array();
        for (std::size_t k = 0; k < cfg.iterations; ++k) {
            auto u = fms_factors.find({uniform_plan->name, k});
            auto b = fms_factors.find({biased_plan->name, k});
            if (u == fms_factors.end() || b == fms_factors.end()) continue;
            try {
                const auto cmp = fms(u->second, b->second);
                summary.fms_per_iteration.push_back(cmp.fms);
                json it = to_json(cmp);
                it["iteration"] = k;
                per.push_back(std::move(it));
            } catch (const Error& e) {
                summary.failures.push_back({uniform_plan->name + "~" + biased_plan->name,
                                            fms_model->name, k, to_string(e.kind()), e.what()});
            }
        }
        if (!summary.fms_per_iteration.empty()) {
            summary.fms = aggregate(summary.fms_per_iteration);
            fms_json = {{"uniform_plan", uniform_plan->name},
                        {"biased_plan", biased_plan->name},
                        {"model", fms_model->name},
                        {"fms", to_json(*summary.fms)},
                        {"per_iteration", std::move(per)}};
            write_json(out_dir / "fms.json", fms_json);
        }
    }

    json results = json::array();
    for (const auto& plan : cfg.plans)
        for (const auto& spec : cfg.models) {
            const std::string key = plan.name + "/" + spec.name;
            json r = {{"plan", plan.name}, {"model", spec.name}, {"kind", to_string(spec.kind)},
                      {"metrics", to_json(summary.aggregates[key])}};
            if (summary.ood_aggregates.count(key)) r["ood_metrics"] = to_json(summary.ood_aggregates[key]);
            results.push_back(std::move(r));
        }
    json failures = json::array();
    for (const auto& f : summary.failures) failures.push_back(to_json(f));
    json s = {{"std_convention", "population"},
              {"iterations", cfg.iterations},
              {"normalize", cfg.normalize == NormalizeScope::train ? "train" : "full"},
              {"results", std::move(results)},
              {"failures", std::move(failures)}};
    if (!fms_json.is_null()) s["fms"] = fms_json["fms"];
    write_json(out_dir / "summary.json", s);
    return summary;
}

// ============================================================================
// OOD sweep
// ============================================================================

struct SweepConfig {
    RegionSpec region;
    std::size_t n_in = 0;
    std::vector<std::size_t> n_out;
    std::size_t iterations = 10;
    std::uint64_t seed = 0;
    std::vector<ModelSpec> models;
    NormalizeScope normalize = NormalizeScope::train;
};

inline SweepConfig sweep_config_from_json(const json& j, const DesignSpace& space) {
    return with_json_context("sweep config", [&] {
        SweepConfig c;
        c.region = region_from_json(j.at("region"), space);
        c.n_in = j.at("n_in").get<std::size_t>();
        c.n_out = j.at("n_out").get<std::vector<std::size_t>>();
        c.iterations = j.value("iterations", c.iterations);
        c.seed = j.value("seed", c.seed);
        c.models = models_from_json(j.at("models"));
        c.normalize = scope_from_json(j);
        return c;
    });
}

struct SweepPoint {
    std::string model;
    std::size_t n_out = 0;
    MetricsAggregate ood;
    std::vector<MetricsReport> per_iteration;
};

struct SweepTable {
    std::vector<SweepPoint> points;
    std::vector<Failure> failures;
};

/// For each n_out and model, `iterations` biased-split trials with a fixed
/// n_in; metrics are computed on out-of-region test rows only.
inline SweepTable ood_sweep(const ObservationSet& obs, const SweepConfig& cfg) {
    detail::require(!cfg.n_out.empty(), ErrorKind::config, "empty n_out list");
    for (std::size_t i = 1; i < cfg.n_out.size(); ++i)
        detail::require(cfg.n_out[i] > cfg.n_out[i - 1], ErrorKind::config,
                        "n_out list must be strictly increasing");
    detail::require(cfg.iterations >= 1, ErrorKind::config, "iterations must be at least 1");
    const ResolvedRegion region = resolve(cfg.region, obs.space());
    const auto [in, out] = region_strata(obs, region);
    detail::require(cfg.n_in <= in.size(), ErrorKind::stratum_exhausted,
                    "in-region stratum has " + std::to_string(in.size()) + " observations, " +
                        std::to_string(cfg.n_in) + " requested");
    detail::require(cfg.n_out.back() + 2 <= out.size(), ErrorKind::stratum_exhausted,
                    "out-of-region stratum has " + std::to_string(out.size()) +
                        " observations; n_out " + std::to_string(cfg.n_out.back()) +
                        " leaves fewer than two out-of-region test rows");

    SweepTable table;
    for (std::size_t n_out : cfg.n_out) {
        for (const auto& spec : cfg.models) {
            SweepPoint pt{spec.name, n_out, {}, {}};
            for (std::size_t k = 0; k < cfg.iterations; ++k) {
                try {
                    Split split = biased_split(obs, cfg.region, cfg.n_in, n_out,
                                               iteration_seed(cfg.seed, k));
                    if (cfg.normalize == NormalizeScope::train) split = normalize_on_train(split);
                    auto [model, report] = fit(split.train, iteration_config(spec.config, k), spec.kind);
                    const auto pred = predict_set(model, split.test.indices());
                    auto [y, yhat] = ood_rows(split.test, pred, region);
                    pt.per_iteration.push_back(regression_metrics(y, yhat));
                } catch (const Error& e) {
                    table.failures.push_back({"n_out=" + std::to_string(n_out), spec.name, k,
                                              to_string(e.kind()), e.what()});
                }
            }
            pt.ood = aggregate_metrics(pt.per_iteration);
            table.points.push_back(std::move(pt));
        }
    }
    return table;
}

inline json to_json(const SweepTable& t) {
    json pts = json::array();
    for (const auto& p : t.points) {
        json per = json::array();
        for (const auto& m : p.per_iteration) per.push_back(to_json(m));
        pts.push_back({{"model", p.model},
                       {"n_out", p.n_out},
                       {"ood_metrics", to_json(p.ood)},
                       {"per_iteration", std::move(per)}});
    }
    json failures = json::array();
    for (const auto& f : t.failures) failures.push_back(to_json(f));
    return {{"std_convention", "population"}, {"points", std::move(pts)}, {"failures", std::move(failures)}};
}

}  // namespace tsurr
