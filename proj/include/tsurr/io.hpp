// SPDX-License-Identifier: MIT
//
// JSON/CSV persistence: schema, observations, trained models and reports.
#pragma once

#include "tsurr/csv.hpp"
#include "tsurr/error.hpp"
#include "tsurr/metrics.hpp"
#include "tsurr/neural.hpp"
#include "tsurr/tensor_core.hpp"
#include "tsurr/train.hpp"

#include "json.hpp"

#include <cmath>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace tsurr {

using json = nlohmann::json;

/// NaN and infinities become null.
inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline double number_from_json(const json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline json parse_json_file(const std::filesystem::path& path) {
    const std::string text = read_text(path);
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::io, path.string() + ": " + e.what());
    }
}

inline void write_json(const std::filesystem::path& path, const json& j) {
    write_text(path, j.dump(2) + "\n");
}

/// Wraps nlohmann access errors in config errors naming the context.
template <typename F>
auto with_json_context(const std::string& what, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw Error(ErrorKind::config, what + ": " + e.what());
    }
}

// ============================================================================
// Schema
// ============================================================================

inline json schema_to_json(const DesignSpace& space,
                           const std::optional<Normalizer>& normalizer = std::nullopt) {
    json axes = json::array();
    for (const auto& a : space.axes())
        axes.push_back({{"name", a.name}, {"kind", to_string(a.kind)}, {"values", a.values}});
    json j = {{"axes", std::move(axes)}, {"outcome", space.outcome_name()}};
    if (normalizer) j["normalizer"] = {{"y_min", normalizer->y_min}, {"y_max", normalizer->y_max}};
    return j;
}

inline DesignSpace schema_from_json(const json& j) {
    return with_json_context("schema", [&] {
        std::vector<Axis> axes;
        for (const auto& a : j.at("axes")) {
            Axis axis{a.at("name").get<std::string>(),
                      axis_kind_from_string(a.at("kind").get<std::string>()), {}};
            for (const auto& v : a.at("values"))
                axis.values.push_back(v.is_string() ? v.get<std::string>() : v.dump());
            axes.push_back(std::move(axis));
        }
        return DesignSpace(std::move(axes), j.at("outcome").get<std::string>());
    });
}

inline std::optional<Normalizer> normalizer_from_json(const json& j) {
    if (!j.contains("normalizer")) return std::nullopt;
    return with_json_context("normalizer", [&] {
        Normalizer n{j["normalizer"].at("y_min").get<double>(),
                     j["normalizer"].at("y_max").get<double>()};
        n.validate();
        return n;
    });
}

// ============================================================================
// Observations CSV: one 0-based index column per axis, then `value`.
// ============================================================================

inline CsvTable observations_table(const ObservationSet& obs) {
    CsvTable t;
    for (const auto& a : obs.space().axes()) t.header.push_back(a.name);
    t.header.push_back("value");
    for (const auto& e : obs.entries()) {
        std::vector<std::string> row;
        for (std::size_t i : e.index) row.push_back(std::to_string(i));
        row.push_back(detail::format_number(e.value));
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline std::vector<Index> indices_from_table(const CsvTable& t, const DesignSpace& space) {
    std::vector<std::size_t> cols;
    for (const auto& a : space.axes()) cols.push_back(t.column(a.name));
    std::vector<Index> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        Index idx;
        for (std::size_t c : cols) {
            auto v = detail::parse_number(t.rows[r][c]);
            detail::require(v && *v >= 0.0 && std::floor(*v) == *v, ErrorKind::type,
                            "row " + std::to_string(r) + ": index '" + t.rows[r][c] +
                                "' is not a non-negative integer");
            idx.push_back(static_cast<std::size_t>(*v));
        }
        check_index(space.shape(), idx);
        out.push_back(std::move(idx));
    }
    return out;
}

inline ObservationSet observations_from_table(const CsvTable& t,
                                              std::shared_ptr<const DesignSpace> space,
                                              const Normalizer& normalizer) {
    const auto indices = indices_from_table(t, *space);
    const std::size_t vc = t.column("value");
    std::vector<Observation> entries;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        auto v = detail::parse_number(t.rows[r][vc]);
        detail::require(v.has_value(), ErrorKind::type,
                        "row " + std::to_string(r) + ": non-numeric value '" + t.rows[r][vc] + "'");
        entries.push_back({indices[r], *v});
    }
    return ObservationSet(std::move(space), std::move(entries), normalizer);
}

/// Loads `obs_csv` against `schema_json`; the schema's normalizer (when
/// present) describes the value scale.
inline ObservationSet load_observations(const std::filesystem::path& schema_json,
                                        const std::filesystem::path& obs_csv) {
    const json sj = parse_json_file(schema_json);
    auto space = std::make_shared<const DesignSpace>(schema_from_json(sj));
    const Normalizer norm = normalizer_from_json(sj).value_or(Normalizer{});
    return observations_from_table(read_csv(obs_csv), std::move(space), norm);
}

// ============================================================================
// Reports
// ============================================================================

inline json to_json(const MetricsReport& m) {
    return {{"r2", number_or_null(m.r2)},     {"mae", number_or_null(m.mae)},
            {"rmse", number_or_null(m.rmse)}, {"mape", number_or_null(m.mape)},
            {"n", m.n},                       {"mape_excluded", m.mape_excluded}};
}

inline MetricsReport metrics_from_json(const json& j) {
    return with_json_context("metrics", [&] {
        return MetricsReport{number_from_json(j.at("r2")),   number_from_json(j.at("mae")),
                             number_from_json(j.at("rmse")), number_from_json(j.at("mape")),
                             j.at("n").get<std::size_t>(),   j.at("mape_excluded").get<std::size_t>()};
    });
}

inline json to_json(const FactorComparison& c) {
    return {{"fms", c.fms}, {"permutation", c.permutation}, {"per_component", c.per_component}};
}

inline json to_json(const TrainReport& r) {
    json losses = json::array();
    for (double l : r.losses) losses.push_back(number_or_null(l));
    return {{"losses", std::move(losses)},
            {"final_loss", number_or_null(r.final_loss)},
            {"restart", r.restart},
            {"epochs_run", r.epochs_run},
            {"seconds", r.seconds},
            {"restart_final_losses", r.restart_final_losses}};
}

// ============================================================================
// Models
// ============================================================================

inline json matrix_to_json(const Matrix& a) {
    return {{"rows", a.rows()},
            {"cols", a.cols()},
            {"data", std::vector<double>(a.data(), a.data() + a.size())}};
}

inline Matrix matrix_from_json(const json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    detail::require(static_cast<Eigen::Index>(data.size()) == rows * cols, ErrorKind::config,
                    "matrix data length does not match its shape");
    Matrix a(rows, cols);
    std::copy(data.begin(), data.end(), a.data());
    return a;
}

inline Eigen::VectorXd vector_from_json(const json& j) {
    const auto data = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(data.data(), static_cast<Eigen::Index>(data.size()));
}

inline json vector_to_json(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

inline json factors_to_json(const FactorSet& f) {
    json mats = json::array();
    for (const auto& m : f.matrices()) mats.push_back(matrix_to_json(m));
    return mats;
}

inline FactorSet factors_from_json(const json& j) {
    std::vector<Matrix> mats;
    for (const auto& m : j) mats.push_back(matrix_from_json(m));
    return FactorSet(std::move(mats));
}

inline json config_to_json(const TrainConfig& c) {
    json j = {{"rank", c.rank},
              {"epochs", c.epochs},
              {"lr", c.lr},
              {"lambda_smooth", c.lambda_smooth},
              {"seed", c.seed},
              {"restarts", c.restarts},
              {"validation_fraction", c.validation_fraction},
              {"init_stddev", c.init_stddev},
              {"groups", c.neural.groups},
              {"channels", c.neural.channels},
              {"hidden", c.neural.hidden}};
    j["smooth_modes"] = c.smooth_modes ? json(*c.smooth_modes) : json(nullptr);
    j["patience"] = c.patience ? json(*c.patience) : json(nullptr);
    return j;
}

/// Missing keys keep `base`'s values.
inline TrainConfig config_from_json(const json& j, TrainConfig base = {}) {
    return with_json_context("training config", [&] {
        TrainConfig c = base;
        c.rank = j.value("rank", c.rank);
        c.epochs = j.value("epochs", c.epochs);
        c.lr = j.value("lr", c.lr);
        c.lambda_smooth = j.value("lambda_smooth", c.lambda_smooth);
        c.seed = j.value("seed", c.seed);
        c.restarts = j.value("restarts", c.restarts);
        c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
        c.init_stddev = j.value("init_stddev", c.init_stddev);
        c.neural.groups = j.value("groups", c.neural.groups);
        c.neural.channels = j.value("channels", c.neural.channels);
        c.neural.hidden = j.value("hidden", c.neural.hidden);
        if (j.contains("smooth_modes") && !j["smooth_modes"].is_null())
            c.smooth_modes = j["smooth_modes"].get<std::vector<std::size_t>>();
        if (j.contains("patience") && !j["patience"].is_null())
            c.patience = j["patience"].get<std::size_t>();
        c.validate();
        return c;
    });
}

inline json model_to_json(const TrainedModel& m) {
    json j = {{"format", "tsurr-model"},
              {"version", 1},
              {"kind", to_string(m.kind)},
              {"shape", m.shape()},
              {"rank", m.config.rank},
              {"schema", schema_to_json(*m.space)},
              {"normalizer", {{"y_min", m.normalizer.y_min}, {"y_max", m.normalizer.y_max}}},
              {"config", config_to_json(m.config)}};
    if (const auto* f = m.factors()) {
        j["factors"] = factors_to_json(*f);
    } else {
        const NeuralModel& nm = *m.neural();
        json groups = json::array();
        for (std::size_t s = 0; s < nm.bank.groups(); ++s) groups.push_back(factors_to_json(nm.bank[s]));
        const ConvHead& h = nm.head;
        j["neural"] = {{"embeddings", std::move(groups)},
                       {"conv_a", matrix_to_json(h.conv_a)},
                       {"conv_a_bias", vector_to_json(h.conv_a_bias)},
                       {"conv_b", matrix_to_json(h.conv_b)},
                       {"conv_b_bias", vector_to_json(h.conv_b_bias)},
                       {"dense", matrix_to_json(h.dense)},
                       {"dense_bias", vector_to_json(h.dense_bias)},
                       {"out", matrix_to_json(h.out)},
                       {"out_bias", vector_to_json(h.out_bias)}};
    }
    return j;
}

inline TrainedModel model_from_json(const json& j) {
    return with_json_context("model", [&] {
        detail::require(j.value("format", "") == "tsurr-model", ErrorKind::config,
                        "not a model file");
        TrainedModel m;
        m.kind = model_kind_from_string(j.at("kind").get<std::string>());
        m.space = std::make_shared<const DesignSpace>(schema_from_json(j.at("schema")));
        m.normalizer = Normalizer{j.at("normalizer").at("y_min").get<double>(),
                                  j.at("normalizer").at("y_max").get<double>()};
        m.config = config_from_json(j.at("config"));
        if (is_linear(m.kind)) {
            m.params = factors_from_json(j.at("factors"));
        } else {
            const json& n = j.at("neural");
            std::vector<FactorSet> groups;
            for (const auto& g : n.at("embeddings")) groups.push_back(factors_from_json(g));
            NeuralModel nm{EmbeddingBank(std::move(groups)),
                           ConvHead{matrix_from_json(n.at("conv_a")),
                                    vector_from_json(n.at("conv_a_bias")),
                                    matrix_from_json(n.at("conv_b")),
                                    vector_from_json(n.at("conv_b_bias")),
                                    matrix_from_json(n.at("dense")),
                                    vector_from_json(n.at("dense_bias")),
                                    matrix_from_json(n.at("out")),
                                    vector_from_json(n.at("out_bias"))}};
            nm.head.check_chain(nm.bank.groups(), nm.bank.modes(), nm.bank.rank());
            m.params = std::move(nm);
        }
        const Shape shape = is_linear(m.kind) ? m.factors()->shape() : m.neural()->shape();
        detail::require(shape == m.space->shape(), ErrorKind::config,
                        "model parameters do not match the embedded schema");
        return m;
    });
}

inline void save_model(const std::filesystem::path& path, const TrainedModel& m) {
    write_json(path, model_to_json(m));
}

inline TrainedModel load_model(const std::filesystem::path& path) {
    return model_from_json(parse_json_file(path));
}

}  // namespace tsurr
