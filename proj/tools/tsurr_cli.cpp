// SPDX-License-Identifier: MIT
//
// tsurr: command-line front end for design-space tensor completion.
#include "tsurr/tsurr.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using tsurr::json;

namespace {

void emit_error(const std::string& kind, const std::string& message) {
    std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

fs::path default_schema(const fs::path& obs_csv, const std::string& schema) {
    if (!schema.empty()) return schema;
    return obs_csv.parent_path() / "schema.json";
}

fs::path resolve_relative(const fs::path& base_file, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base_file.parent_path() / path;
}

tsurr::ObservationSet load_dataset_from_config(const json& cfg, const fs::path& config_path) {
    return tsurr::with_json_context("dataset paths", [&] {
        return tsurr::load_observations(
            resolve_relative(config_path, cfg.at("schema").get<std::string>()),
            resolve_relative(config_path, cfg.at("observations").get<std::string>()));
    });
}

// ---------------------------------------------------------------------------

struct IngestArgs {
    std::string data, outcome, out;
    std::vector<std::string> ordinal, categorical;
    bool strict = false;
};

int run_ingest(const IngestArgs& a) {
    const tsurr::CsvTable table = tsurr::read_csv(a.data);
    const auto records = tsurr::records_from_table(table);
    (void)table.column(a.outcome);

    std::vector<std::string> names;
    std::vector<tsurr::AxisKind> kinds;
    auto listed = [](const std::vector<std::string>& v, const std::string& c) {
        return std::find(v.begin(), v.end(), c) != v.end();
    };
    const bool explicit_axes = !a.ordinal.empty() || !a.categorical.empty();
    for (const auto& c : a.ordinal) (void)table.column(c);
    for (const auto& c : a.categorical) (void)table.column(c);
    for (const auto& col : table.header) {
        if (col == a.outcome) continue;
        if (explicit_axes) {
            if (listed(a.ordinal, col)) {
                names.push_back(col);
                kinds.push_back(tsurr::AxisKind::ordinal);
            } else if (listed(a.categorical, col)) {
                names.push_back(col);
                kinds.push_back(tsurr::AxisKind::categorical);
            }
            continue;
        }
        // Inferred: numeric columns are ordinal.
        bool numeric = true;
        for (const auto& r : records)
            if (!tsurr::detail::parse_number(r.at(col))) numeric = false;
        names.push_back(col);
        kinds.push_back(numeric ? tsurr::AxisKind::ordinal : tsurr::AxisKind::categorical);
    }
    tsurr::detail::require(!names.empty(), tsurr::ErrorKind::schema, "no axis columns selected");

    auto space = std::make_shared<const tsurr::DesignSpace>(
        tsurr::build_design_space(records, names, a.outcome, kinds));
    const auto obs = tsurr::encode_observations(
        records, space, a.strict ? tsurr::DuplicatePolicy::reject : tsurr::DuplicatePolicy::average);

    const fs::path out(a.out);
    tsurr::write_json(out / "schema.json", tsurr::schema_to_json(*space, obs.normalizer()));
    tsurr::write_csv(out / "obs.csv", tsurr::observations_table(obs));
    std::cout << json{{"shape", space->shape()},
                      {"total", space->total()},
                      {"observed", obs.size()}}.dump() << std::endl;
    return 0;
}

// ---------------------------------------------------------------------------

struct FitArgs {
    std::string obs, schema, model = "cpd", out, report;
    tsurr::TrainConfig cfg;
    std::vector<std::size_t> smooth_modes;
    std::optional<std::size_t> patience;
};

int run_fit(FitArgs a) {
    const auto obs = tsurr::load_observations(default_schema(a.obs, a.schema), a.obs);
    if (!a.smooth_modes.empty()) a.cfg.smooth_modes = a.smooth_modes;
    a.cfg.patience = a.patience;
    const auto kind = tsurr::model_kind_from_string(a.model);
    auto [model, report] = tsurr::fit(obs, a.cfg, kind);
    tsurr::save_model(a.out, model);
    fs::path report_path = a.report.empty()
                               ? fs::path(a.out).replace_extension(".report.json")
                               : fs::path(a.report);
    tsurr::write_json(report_path, tsurr::to_json(report));
    std::cout << json{{"final_loss", report.final_loss},
                      {"restart", report.restart},
                      {"epochs_run", report.epochs_run}}.dump() << std::endl;
    return 0;
}

// ---------------------------------------------------------------------------

std::vector<tsurr::Index> read_indices(const fs::path& path, const tsurr::DesignSpace& space) {
    tsurr::CsvTable t = tsurr::read_csv(path);
    bool named = true;
    for (const auto& a : space.axes())
        if (std::find(t.header.begin(), t.header.end(), a.name) == t.header.end()) named = false;
    if (!named) {
        tsurr::detail::require(t.header.size() >= space.modes(), tsurr::ErrorKind::schema,
                               "index CSV needs one column per axis");
        for (std::size_t m = 0; m < space.modes(); ++m) t.header[m] = space.axis(m).name;
    }
    return tsurr::indices_from_table(t, space);
}

int run_predict(const std::string& model_path, const std::string& indices_path,
                const std::string& out, bool denormalize) {
    const auto model = tsurr::load_model(model_path);
    const auto indices = read_indices(indices_path, *model.space);
    const auto preds = tsurr::predict_set(model, indices);
    tsurr::CsvTable t;
    for (const auto& a : model.space->axes()) t.header.push_back(a.name);
    t.header.push_back("prediction");
    for (std::size_t k = 0; k < indices.size(); ++k) {
        std::vector<std::string> row;
        for (auto i : indices[k]) row.push_back(std::to_string(i));
        const double v = denormalize ? model.normalizer.invert(preds[k]) : preds[k];
        row.push_back(tsurr::detail::format_number(v));
        t.rows.push_back(std::move(row));
    }
    tsurr::write_csv(out, t);
    return 0;
}

int run_evaluate(const std::string& model_path, const std::string& test_path,
                 const std::string& schema, const std::string& out) {
    const auto model = tsurr::load_model(model_path);
    auto test = tsurr::load_observations(default_schema(test_path, schema), test_path);
    tsurr::detail::require(test.space() == *model.space, tsurr::ErrorKind::schema,
                           "test schema differs from the model's schema");
    if (!(test.normalizer() == model.normalizer)) test = test.renormalized(model.normalizer);
    const auto preds = tsurr::predict_set(model, test.indices());
    const auto m = tsurr::regression_metrics(test.values(), preds);
    tsurr::write_json(out, tsurr::to_json(m));
    std::cout << tsurr::to_json(m).dump() << std::endl;
    return 0;
}

int run_factors(const std::string& model_path, bool normalized, double threshold,
                const std::string& out) {
    const auto model = tsurr::load_model(model_path);
    const auto* f = model.factors();
    tsurr::detail::require(f != nullptr, tsurr::ErrorKind::contract,
                           "factor export needs a cpd or cpd_s model");
    const auto written = normalized
                             ? tsurr::component_expression_export(*f, *model.space, out, threshold)
                             : tsurr::export_raw_factors(*f, *model.space, out);
    json paths = json::array();
    for (const auto& p : written) paths.push_back(p.string());
    std::cout << json{{"written", paths}}.dump() << std::endl;
    return 0;
}

int run_fms(const std::string& a_path, const std::string& b_path, const std::string& out) {
    const auto a = tsurr::load_model(a_path);
    const auto b = tsurr::load_model(b_path);
    tsurr::detail::require(a.factors() && b.factors(), tsurr::ErrorKind::contract,
                           "FMS needs two cpd or cpd_s models");
    const auto cmp = tsurr::fms(*a.factors(), *b.factors());
    tsurr::write_json(out, tsurr::to_json(cmp));
    std::cout << tsurr::to_json(cmp).dump() << std::endl;
    return 0;
}

int run_experiment_cmd(const std::string& config, const std::string& out) {
    const json cfg = tsurr::parse_json_file(config);
    const auto obs = load_dataset_from_config(cfg, config);
    const auto exp = tsurr::experiment_config_from_json(cfg, obs.space());
    const auto summary = tsurr::run_experiment(exp, obs, out);
    std::cout << json{{"completed", summary.iterations.size()},
                      {"failures", summary.failures.size()}}.dump() << std::endl;
    return 0;
}

int run_sweep_cmd(const std::string& config, const std::string& out) {
    const json cfg = tsurr::parse_json_file(config);
    const auto obs = load_dataset_from_config(cfg, config);
    const auto sweep = tsurr::sweep_config_from_json(cfg, obs.space());
    const auto table = tsurr::ood_sweep(obs, sweep);
    tsurr::write_json(fs::path(out) / "sweep.json", tsurr::to_json(table));
    std::cout << json{{"points", table.points.size()},
                      {"failures", table.failures.size()}}.dump() << std::endl;
    return 0;
}

void add_train_options(CLI::App* cmd, FitArgs& a) {
    cmd->add_option("--rank", a.cfg.rank, "CP rank / embedding width")->check(CLI::PositiveNumber);
    cmd->add_option("--epochs", a.cfg.epochs, "full-batch Adam steps")->check(CLI::PositiveNumber);
    cmd->add_option("--lr", a.cfg.lr, "Adam learning rate")->check(CLI::PositiveNumber);
    cmd->add_option("--lambda-smooth", a.cfg.lambda_smooth, "cpd_s smoothness weight");
    cmd->add_option("--smooth-modes", a.smooth_modes, "cpd_s modes (default: ordinal axes)");
    cmd->add_option("--restarts", a.cfg.restarts, "seeded restarts; best training loss kept")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--seed", a.cfg.seed, "base seed");
    cmd->add_option("--patience", a.patience, "enable early stopping with this patience");
    cmd->add_option("--validation-fraction", a.cfg.validation_fraction,
                    "validation slice for early stopping");
    cmd->add_option("--groups", a.cfg.neural.groups, "costco initialization groups (S)");
    cmd->add_option("--channels", a.cfg.neural.channels, "costco conv channels (C)");
    cmd->add_option("--hidden", a.cfg.neural.hidden, "costco dense width (H)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tensor-completion surrogate models for discrete design spaces"};
    app.require_subcommand(1);

    IngestArgs ingest;
    auto* c_ingest = app.add_subcommand("ingest", "CSV dataset -> schema.json + obs.csv");
    c_ingest->add_option("--data", ingest.data, "dataset CSV")->required();
    c_ingest->add_option("--outcome", ingest.outcome, "outcome column")->required();
    c_ingest->add_option("--ordinal", ingest.ordinal, "ordinal axis columns");
    c_ingest->add_option("--categorical", ingest.categorical, "categorical axis columns");
    c_ingest->add_flag("--strict", ingest.strict, "reject duplicate index tuples");
    c_ingest->add_option("--out", ingest.out, "output directory")->required();

    FitArgs fit;
    auto* c_fit = app.add_subcommand("fit", "train a completion model");
    c_fit->add_option("--obs", fit.obs, "observations CSV")->required();
    c_fit->add_option("--schema", fit.schema, "schema JSON (default: next to --obs)");
    c_fit->add_option("--model", fit.model, "cpd | cpd_s | costco")
        ->check(CLI::IsMember({"cpd", "cpd_s", "costco"}));
    add_train_options(c_fit, fit);
    c_fit->add_option("--out", fit.out, "model JSON")->required();
    c_fit->add_option("--report", fit.report, "training report JSON");

    std::string model_path, indices_path, out, test_path, schema, a_path, b_path, config;
    bool denormalize = false, normalized = false;
    double threshold = 0.75;

    auto* c_predict = app.add_subcommand("predict", "predict entries");
    c_predict->add_option("--model", model_path)->required();
    c_predict->add_option("--indices", indices_path, "CSV of 0-based indices")->required();
    c_predict->add_option("--out", out)->required();
    c_predict->add_flag("--denormalize", denormalize, "report outcomes in original units");

    auto* c_eval = app.add_subcommand("evaluate", "metrics on held-out observations");
    c_eval->add_option("--model", model_path)->required();
    c_eval->add_option("--test", test_path, "observations CSV")->required();
    c_eval->add_option("--schema", schema, "schema JSON (default: next to --test)");
    c_eval->add_option("--out", out)->required();

    auto* c_factors = app.add_subcommand("factors", "export per-mode factor CSVs");
    c_factors->add_option("--model", model_path)->required();
    c_factors->add_flag("--normalized", normalized, "l2-normalized magnitudes + highlights");
    c_factors->add_option("--threshold", threshold, "highlight quantile")->check(CLI::Range(0.0, 1.0));
    c_factors->add_option("--out", out)->required();

    auto* c_fms = app.add_subcommand("fms", "factor match score of two linear models");
    c_fms->add_option("--a", a_path)->required();
    c_fms->add_option("--b", b_path)->required();
    c_fms->add_option("--out", out)->required();

    auto* c_exp = app.add_subcommand("experiment", "multi-iteration sampling experiment");
    c_exp->add_option("--config", config)->required();
    c_exp->add_option("--out", out)->required();

    auto* c_sweep = app.add_subcommand("sweep", "out-of-distribution sample-count sweep");
    c_sweep->add_option("--config", config)->required();
    c_sweep->add_option("--out", out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        emit_error("usage", e.what());
        return e.get_exit_code() ? e.get_exit_code() : 1;
    }

    try {
        if (*c_ingest) return run_ingest(ingest);
        if (*c_fit) return run_fit(fit);
        if (*c_predict) return run_predict(model_path, indices_path, out, denormalize);
        if (*c_eval) return run_evaluate(model_path, test_path, schema, out);
        if (*c_factors) return run_factors(model_path, normalized, threshold, out);
        if (*c_fms) return run_fms(a_path, b_path, out);
        if (*c_exp) return run_experiment_cmd(config, out);
        if (*c_sweep) return run_sweep_cmd(config, out);
    } catch (const tsurr::Error& e) {
        emit_error(tsurr::to_string(e.kind()), e.what());
        return 2;
    } catch (const std::exception& e) {
        emit_error("internal", e.what());
        return 3;
    }
    return 1;
}
