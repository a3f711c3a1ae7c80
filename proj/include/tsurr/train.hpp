// SPDX-License-Identifier: MIT
//
// Full-batch Adam training with seeded multi-restart selection for the
// CPD, smoothness-regularized CPD and neural completion models.
#pragma once

#include "tsurr/adam.hpp"
#include "tsurr/cpd.hpp"
#include "tsurr/error.hpp"
#include "tsurr/neural.hpp"
#include "tsurr/tensor_core.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace tsurr {

enum class ModelKind { cpd, cpd_s, costco };

inline const char* to_string(ModelKind k) {
    switch (k) {
        case ModelKind::cpd: return "cpd";
        case ModelKind::cpd_s: return "cpd_s";
        case ModelKind::costco: return "costco";
    }
    return "unknown";
}

inline ModelKind model_kind_from_string(const std::string& s) {
    if (s == "cpd") return ModelKind::cpd;
    if (s == "cpd_s" || s == "cpd-s") return ModelKind::cpd_s;
    if (s == "costco") return ModelKind::costco;
    detail::fail(ErrorKind::config, "unknown model kind '" + s + "'");
}

inline bool is_linear(ModelKind k) { return k != ModelKind::costco; }

struct TrainConfig {
    std::size_t rank = 3;
    std::size_t epochs = 3000;
    double lr = 0.01;
    double lambda_smooth = 0.1;
    /// Modes smoothed by cpd_s; unset means every ordinal axis.
    std::optional<std::vector<std::size_t>> smooth_modes;
    std::uint64_t seed = 0;
    std::size_t restarts = 1;
    /// Early stopping is active when set; the validation slice is carved
    /// from the training observations.
    std::optional<std::size_t> patience;
    double validation_fraction = 0.1;
    double init_stddev = kInitStddev;
    NeuralDims neural;
    AdamHyper adam_defaults;

    void validate() const {
        detail::require(rank >= 1, ErrorKind::config, "rank must be at least 1");
        detail::require(epochs >= 1, ErrorKind::config, "epochs must be at least 1");
        detail::require(lr > 0.0 && std::isfinite(lr), ErrorKind::config, "lr must be positive");
        detail::require(restarts >= 1, ErrorKind::config, "restarts must be at least 1");
        detail::require(lambda_smooth >= 0.0, ErrorKind::config,
                        "smoothness weight must be non-negative");
        detail::require(validation_fraction >= 0.0 && validation_fraction < 1.0,
                        ErrorKind::config, "validation fraction must lie in [0, 1)");
        detail::require(init_stddev > 0.0, ErrorKind::config, "init stddev must be positive");
    }

    [[nodiscard]] AdamHyper adam() const {
        AdamHyper h = adam_defaults;
        h.lr = lr;
        return h;
    }

    [[nodiscard]] SmoothnessConfig smoothness(ModelKind kind, const DesignSpace& space) const {
        if (kind != ModelKind::cpd_s) return {};
        return {lambda_smooth, smooth_modes ? *smooth_modes : space.ordinal_modes()};
    }
};

struct TrainReport {
    std::vector<double> losses;  // objective before each update of the chosen restart
    double final_loss = 0.0;
    std::size_t restart = 0;
    std::size_t epochs_run = 0;
    double seconds = 0.0;
    std::vector<double> restart_final_losses;
};

/// A fitted model together with what is needed to use it standalone.
struct TrainedModel {
    ModelKind kind = ModelKind::cpd;
    std::variant<FactorSet, NeuralModel> params;
    TrainConfig config;
    std::shared_ptr<const DesignSpace> space;
    Normalizer normalizer;

    [[nodiscard]] Shape shape() const { return space->shape(); }

    [[nodiscard]] const FactorSet* factors() const { return std::get_if<FactorSet>(&params); }
    [[nodiscard]] const NeuralModel* neural() const { return std::get_if<NeuralModel>(&params); }

    [[nodiscard]] double predict(std::span<const std::size_t> index) const {
        if (const auto* f = factors()) return predict_entry(*f, index);
        return neural_forward(*neural(), index);
    }
};

inline std::vector<double> predict_set(const TrainedModel& model, std::span<const Index> indices) {
    std::vector<double> out;
    out.reserve(indices.size());
    for (const auto& idx : indices) out.push_back(model.predict(idx));
    return out;
}

namespace detail {

/// Seeded split of the training set into fit / validation positions.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> validation_positions(
    std::size_t n, double fraction, std::uint64_t seed) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
    std::vector<std::size_t> val(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> fit(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
    std::sort(val.begin(), val.end());
    std::sort(fit.begin(), fit.end());
    return {fit, val};
}

struct RestartResult {
    std::vector<double> losses;
    double final_loss = 0.0;
    std::size_t epochs_run = 0;
};

/// Adam loop shared by all model kinds. `loss_grad(p, loss)` returns the
/// gradient in parameter layout; `val_loss(p)` is consulted only when
/// early stopping is active.
template <typename Params, typename LossGrad, typename Loss, typename ValLoss>
RestartResult run_adam(Params& params, const TrainConfig& cfg, std::size_t restart,
                       LossGrad&& loss_grad, Loss&& loss_only, ValLoss&& val_loss) {
    RestartResult res;
    res.losses.reserve(cfg.epochs);
    AdamState state = AdamState::for_blocks(params.blocks(), cfg.adam());

    const bool early = cfg.patience.has_value();
    std::optional<Params> best;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double loss = 0.0;
        const Params grad = loss_grad(params, loss);
        if (!std::isfinite(loss)) throw DivergenceError(epoch, restart);
        res.losses.push_back(loss);

        auto p_blocks = params.blocks();
        auto g_blocks = grad.blocks();
        state.step(p_blocks, g_blocks);
        res.epochs_run = epoch + 1;

        if (early) {
            const double v = val_loss(params);
            if (!std::isfinite(v)) throw DivergenceError(epoch, restart);
            if (v < best_val) {
                best_val = v;
                best = params;
                since_best = 0;
            } else if (++since_best > *cfg.patience) {
                break;
            }
        }
    }
    if (early && best) params = std::move(*best);
    res.final_loss = loss_only(params);
    if (!std::isfinite(res.final_loss)) throw DivergenceError(res.epochs_run, restart);
    return res;
}

}  // namespace detail

/// Train `cfg.restarts` seeded initializations (seed + restart index) and
/// keep the one with the smallest final training loss.
inline std::pair<TrainedModel, TrainReport> fit(const ObservationSet& obs_train,
                                                const TrainConfig& cfg, ModelKind kind) {
    cfg.validate();
    detail::require(!obs_train.empty(), ErrorKind::undefined_loss,
                    "cannot fit on zero observations");
    const auto start = std::chrono::steady_clock::now();
    const Shape shape = obs_train.shape();
    const SmoothnessConfig smooth = cfg.smoothness(kind, obs_train.space());
    smooth.validate(shape.size());

    ObservationSet fit_obs = obs_train;
    ObservationSet val_obs;
    if (cfg.patience) {
        detail::require(obs_train.size() >= 2, ErrorKind::config,
                        "early stopping needs at least two observations");
        auto [fit_pos, val_pos] =
            detail::validation_positions(obs_train.size(), cfg.validation_fraction, cfg.seed);
        fit_obs = obs_train.subset(fit_pos);
        val_obs = obs_train.subset(val_pos);
    }

    std::optional<std::variant<FactorSet, NeuralModel>> best_params;
    TrainReport report;
    for (std::size_t r = 0; r < cfg.restarts; ++r) {
        const std::uint64_t seed = cfg.seed + r;
        detail::RestartResult res;
        std::variant<FactorSet, NeuralModel> params;
        if (is_linear(kind)) {
            FactorSet f = init_factors(shape, cfg.rank, seed, cfg.init_stddev);
            res = detail::run_adam(
                f, cfg, r,
                [&](const FactorSet& p, double& loss) {
                    return grad_masked_loss(p, fit_obs, smooth, &loss);
                },
                [&](const FactorSet& p) { return objective(p, fit_obs, smooth); },
                [&](const FactorSet& p) { return masked_mse(p, val_obs); });
            params = std::move(f);
        } else {
            NeuralModel nm = init_neural(shape, cfg.rank, cfg.neural, seed, cfg.init_stddev);
            res = detail::run_adam(
                nm, cfg, r,
                [&](const NeuralModel& p, double& loss) { return neural_grad(p, fit_obs, &loss); },
                [&](const NeuralModel& p) { return neural_mse(p, fit_obs); },
                [&](const NeuralModel& p) { return neural_mse(p, val_obs); });
            params = std::move(nm);
        }
        report.restart_final_losses.push_back(res.final_loss);
        if (!best_params || res.final_loss < report.final_loss) {
            best_params = std::move(params);
            report.final_loss = res.final_loss;
            report.restart = r;
            report.losses = std::move(res.losses);
            report.epochs_run = res.epochs_run;
        }
    }
    report.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    TrainedModel model{kind, std::move(*best_params), cfg, obs_train.space_ptr(),
                       obs_train.normalizer()};
    return {std::move(model), std::move(report)};
}

}  // namespace tsurr
