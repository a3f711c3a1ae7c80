// SPDX-License-Identifier: MIT
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <set>

using namespace tsurr;

namespace {

std::shared_ptr<const DesignSpace> crossed_barrel_space() {
    return std::make_shared<const DesignSpace>(build_design_space(
        oracle::crossed_barrel_records(), {"n_struts", "theta", "radius", "thickness"}, "toughness",
        std::vector<AxisKind>(4, AxisKind::ordinal)));
}

/// 600 of the 1188 crossed-barrel cells, drawn with a fixed seed.
ObservationSet crossed_barrel_600() {
    auto space = crossed_barrel_space();
    const auto full = encode_observations(oracle::crossed_barrel_records(), space);
    return oracle::holdout(full, 600.0 / 1188.0, 5).first;
}

std::set<std::size_t> offsets(const ObservationSet& s) {
    std::set<std::size_t> out;
    for (const auto& e : s.entries()) out.insert(flat_offset(s.shape(), e.index));
    return out;
}

void expect_partition(const ObservationSet& all, const Split& s) {
    const auto a = offsets(all), tr = offsets(s.train), te = offsets(s.test);
    EXPECT_EQ(tr.size() + te.size(), a.size());
    std::set<std::size_t> u = tr;
    u.insert(te.begin(), te.end());
    EXPECT_EQ(u, a);
}

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("tsurr_harness_" + name);
    std::filesystem::remove_all(p);
    return p;
}

ObservationSet synthetic_obs(const Shape& shape, std::size_t rank, std::uint64_t seed) {
    auto space = std::make_shared<const DesignSpace>(DesignSpace::synthetic(shape));
    const auto truth = oracle::uniform_factors(shape, rank, seed);
    const auto dense = oracle::outer_product_sum(truth);
    std::vector<Observation> obs;
    for (std::size_t k = 0; k < dense.size(); ++k) obs.push_back({unravel(shape, k), dense[k]});
    return ObservationSet(space, std::move(obs), Normalizer{0.0, 1.0});
}

}  // namespace

TEST(UniformSplit, SixHundredAtEightyPercent) {
    const auto obs = crossed_barrel_600();
    ASSERT_EQ(obs.size(), 600u);
    const auto s = uniform_split(obs, 0.8, 3);
    EXPECT_EQ(s.train.size(), 480u);
    EXPECT_EQ(s.test.size(), 120u);
    expect_partition(obs, s);
}

TEST(UniformSplit, DeterministicAndOrderIndependent) {
    const auto obs = synthetic_obs({5, 2}, 1, 1);
    const auto a = uniform_split(obs, 0.5, 9);
    const auto b = uniform_split(obs, 0.5, 9);
    EXPECT_EQ(offsets(a.train), offsets(b.train));
    // Same observations handed over in reverse order.
    std::vector<std::size_t> rev(obs.size());
    std::iota(rev.rbegin(), rev.rend(), 0);
    const auto c = uniform_split(obs.subset(rev), 0.5, 9);
    EXPECT_EQ(offsets(a.train), offsets(c.train));
    expect_partition(obs, a);
}

TEST(UniformSplit, DegenerateSizesAreSplitErrors) {
    const auto obs = synthetic_obs({3}, 1, 1);
    for (double f : {0.0, 1.0, 0.1}) {
        try {
            uniform_split(obs, f, 1);
            FAIL() << f;
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::split);
        }
    }
}

TEST(BiasedSplit, CrossedBarrelCountsWithIndependentFilter) {
    const auto obs = crossed_barrel_600();
    const RegionSpec region{"theta", "radius", 0, 5, 0, 6};
    const auto s = biased_split(obs, region, 150, 30, 21);
    EXPECT_EQ(s.train.size(), 180u);
    EXPECT_EQ(s.test.size(), 420u);
    expect_partition(obs, s);
    auto inside = [](const Index& i) { return i[1] <= 5 && i[2] <= 6; };
    std::size_t in_train = 0;
    for (const auto& e : s.train.entries()) in_train += inside(e.index);
    EXPECT_EQ(in_train, 150u);
}

TEST(BiasedSplit, ZeroOutOfRegionPutsAllOutsideInTest) {
    const auto obs = crossed_barrel_600();
    const RegionSpec region{"n_struts", "thickness", 0, 1, 0, 1};
    const auto s = biased_split(obs, region, 40, 0, 2);
    for (const auto& e : s.train.entries()) EXPECT_TRUE(e.index[0] <= 1 && e.index[3] <= 1);
    std::size_t outside = 0;
    for (const auto& e : obs.entries()) outside += !(e.index[0] <= 1 && e.index[3] <= 1);
    std::size_t outside_test = 0;
    for (const auto& e : s.test.entries()) outside_test += !(e.index[0] <= 1 && e.index[3] <= 1);
    EXPECT_EQ(outside_test, outside);
}

TEST(BiasedSplit, WholeProjectionMatchesUniformSize) {
    const auto obs = crossed_barrel_600();
    const RegionSpec region{"n_struts", "theta", 0, 3, 0, 8};
    const auto s = biased_split(obs, region, 480, 0, 4);
    EXPECT_EQ(s.train.size(), uniform_split(obs, 480.0 / 600.0, 4).train.size());
}

TEST(BiasedSplit, ExhaustedStratumNamesIt) {
    const auto obs = crossed_barrel_600();
    const RegionSpec region{"theta", "radius", 0, 0, 0, 0};
    try {
        biased_split(obs, region, 1000, 0, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::stratum_exhausted);
        EXPECT_NE(std::string(e.what()).find("in-region"), std::string::npos);
    }
    try {
        biased_split(obs, region, 0, 1000, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::stratum_exhausted);
        EXPECT_NE(std::string(e.what()).find("out-of-region"), std::string::npos);
    }
}

TEST(BiasedSplit, InvalidRegionIsConfigError) {
    const auto obs = crossed_barrel_600();
    for (const RegionSpec& r : {RegionSpec{"theta", "theta", 0, 1, 0, 1},
                                RegionSpec{"theta", "radius", 0, 9, 0, 1},
                                RegionSpec{"theta", "radius", 3, 2, 0, 1}}) {
        try {
            biased_split(obs, r, 1, 1, 1);
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::config);
        }
    }
    EXPECT_THROW(biased_split(obs, RegionSpec{"nope", "radius", 0, 1, 0, 1}, 1, 1, 1), Error);
}

TEST(BiasedSplit, RandomPlansProperty) {
    const auto obs = crossed_barrel_600();
    const std::vector<std::string> names{"n_struts", "theta", "radius", "thickness"};
    const Shape shape = obs.shape();
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t ma = rng() % 4, mb = rng() % 4;
        while (mb == ma) mb = rng() % 4;
        auto interval = [&](std::size_t n) {
            std::size_t lo = rng() % n, hi = rng() % n;
            return std::make_pair(std::min(lo, hi), std::max(lo, hi));
        };
        const auto [alo, ahi] = interval(shape[ma]);
        const auto [blo, bhi] = interval(shape[mb]);
        const RegionSpec region{names[ma], names[mb], alo, ahi, blo, bhi};
        auto inside = [&](const Index& i) {
            return i[ma] >= alo && i[ma] <= ahi && i[mb] >= blo && i[mb] <= bhi;
        };
        std::size_t n_in_avail = 0;
        for (const auto& e : obs.entries()) n_in_avail += inside(e.index);
        const std::size_t n_out_avail = obs.size() - n_in_avail;
        if (n_in_avail + n_out_avail < 3) continue;
        const std::size_t n_in = n_in_avail ? rng() % (n_in_avail + 1) : 0;
        std::size_t n_out = n_out_avail ? rng() % (n_out_avail + 1) : 0;
        if (n_in + n_out == 0) n_out = n_out_avail ? 1 : 0;
        if (n_in + n_out >= obs.size()) n_out = obs.size() - n_in - 1;
        const std::uint64_t seed = rng();
        const auto s = biased_split(obs, region, n_in, n_out, seed);
        expect_partition(obs, s);
        std::size_t tin = 0, tout = 0;
        for (const auto& e : s.train.entries()) (inside(e.index) ? tin : tout) += 1;
        EXPECT_EQ(tin, n_in);
        EXPECT_EQ(tout, n_out);
        const auto again = biased_split(obs, region, n_in, n_out, seed);
        EXPECT_EQ(offsets(again.train), offsets(s.train));
    }
}

TEST(NormalizeOnTrain, TrainSpansUnitInterval) {
    const auto obs = crossed_barrel_600();
    const auto s = normalize_on_train(uniform_split(obs, 0.8, 1));
    const auto v = s.train.values();
    EXPECT_EQ(*std::min_element(v.begin(), v.end()), 0.0);
    EXPECT_EQ(*std::max_element(v.begin(), v.end()), 1.0);
    EXPECT_EQ(s.train.normalizer(), s.test.normalizer());
    const auto raw = s.test.raw_values();
    const auto before = uniform_split(obs, 0.8, 1).test.raw_values();
    for (std::size_t i = 0; i < raw.size(); ++i) EXPECT_NEAR(raw[i], before[i], 1e-12);
}

TEST(Aggregate, IdenticalValuesHaveZeroSpread) {
    const std::vector<double> v(7, 0.42);
    const auto a = aggregate(v);
    EXPECT_DOUBLE_EQ(a.mean, 0.42);
    EXPECT_EQ(a.std, 0.0);
}

TEST(Aggregate, PopulationStd) {
    const std::vector<double> v{1.0, 3.0};
    EXPECT_EQ(aggregate(v).std, 1.0);
}

TEST(PerCellErrors, AllCorrectIsZero) {
    const auto obs = synthetic_obs({3, 2, 2}, 1, 2);
    const auto g = per_cell_errors(obs.values(), obs, 0, 2);
    EXPECT_EQ(g.rows, 3u);
    EXPECT_EQ(g.cols, 2u);
    EXPECT_EQ(g.mean.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(g.count.sum(), 12u);
}

TEST(PerCellErrors, SingleRowByHand) {
    const ObservationSet obs(Shape{3, 4}, {{{1, 2}, 0.5}});
    const std::vector<double> pred{0.3};
    const auto g = per_cell_errors(pred, obs, 0, 1);
    EXPECT_NEAR(g.mean(1, 2), 0.2, 1e-15);
    EXPECT_EQ(g.std(1, 2), 0.0);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(g.present(i, j), i == 1 && j == 2);
    const auto j = to_json(g, DesignSpace::synthetic({3, 4}));
    EXPECT_TRUE(j["mae_mean"][0][0].is_null());
    EXPECT_NEAR(j["mae_mean"][1][2].get<double>(), 0.2, 1e-15);
}

TEST(PerCellErrors, MisalignedIsContractError) {
    const ObservationSet obs(Shape{3, 4}, {{{1, 2}, 0.5}});
    try {
        per_cell_errors(std::vector<double>{}, obs, 0, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::contract);
    }
}

TEST(AggregateGrids, AcrossIterations) {
    const ObservationSet a(Shape{2, 2}, {{{0, 0}, 1.0}});
    const ObservationSet b(Shape{2, 2}, {{{0, 0}, 1.0}, {{1, 1}, 0.0}});
    std::vector<RegionErrorGrid> grids{per_cell_errors(std::vector<double>{0.8}, a, 0, 1),
                                       per_cell_errors(std::vector<double>{0.4, 0.1}, b, 0, 1)};
    const auto g = aggregate_grids(grids);
    EXPECT_NEAR(g.mean(0, 0), 0.4, 1e-15);
    EXPECT_NEAR(g.std(0, 0), 0.2, 1e-15);
    EXPECT_NEAR(g.mean(1, 1), 0.1, 1e-15);
    EXPECT_EQ(g.std(1, 1), 0.0);
    EXPECT_FALSE(g.present(0, 1));
    EXPECT_EQ(g.count(0, 0), 2u);
}

TEST(IterationSeed, DependsOnlyOnPlanAndIteration) {
    EXPECT_EQ(iteration_seed(5, 0), 5u);
    EXPECT_EQ(iteration_seed(5, 3), iteration_seed(5, 3));
    EXPECT_NE(iteration_seed(5, 3), iteration_seed(5, 4));
    const auto obs = synthetic_obs({4, 3}, 1, 1);
    SamplingPlan p;
    p.seed = 11;
    EXPECT_EQ(offsets(make_split(obs, p, 2).train), offsets(uniform_split(obs, 0.8, iteration_seed(11, 2)).train));
}

TEST(RegionJson, LabelsResolveToIndices) {
    const auto space = crossed_barrel_space();
    const auto r = region_from_json(
        nlohmann::json::parse(R"({"axis_a":"theta","axis_b":"radius","labels_a":[25,100],"labels_b":["1.6","2"]})"),
        *space);
    EXPECT_EQ(r.a_lo, 1u);
    EXPECT_EQ(r.a_hi, 4u);
    EXPECT_EQ(r.b_lo, 1u);
    EXPECT_EQ(r.b_hi, 5u);
    EXPECT_THROW(region_from_json(nlohmann::json::parse(R"({"axis_a":"theta","axis_b":"radius","range_a":[0,20],"range_b":[0,1]})"), *space), Error);
}

TEST(RunExperiment, PersistedIterationsReaggregate) {
    const auto obs = synthetic_obs({4, 3, 3}, 2, 8);
    const auto cfg = experiment_config_from_json(nlohmann::json::parse(R"({
        "iterations": 4, "seed": 3,
        "plans": [{"kind": "uniform", "fraction": 0.7},
                  {"kind": "biased", "region": {"axis_a": "mode_0", "axis_b": "mode_1", "range_a": [0, 1], "range_b": [0, 1]},
                   "n_in": 10, "n_out": 8}],
        "models": [{"kind": "cpd", "rank": 2, "epochs": 300, "lr": 0.05},
                   {"kind": "cpd_s", "rank": 2, "epochs": 300, "lr": 0.05, "lambda_smooth": 0.01}]})"),
                                                 obs.space());
    const auto dir = scratch("exp");
    const auto summary = run_experiment(cfg, obs, dir);
    EXPECT_TRUE(summary.failures.empty());
    EXPECT_EQ(summary.iterations.size(), 16u);

    const auto s = parse_json_file(dir / "summary.json");
    EXPECT_EQ(s["std_convention"], "population");
    for (const auto& r : s["results"]) {
        std::vector<double> r2, mae;
        for (std::size_t k = 0; k < 4; ++k) {
            const auto it = parse_json_file(dir / "iterations" / r["plan"].get<std::string>() /
                                            r["model"].get<std::string>() /
                                            ("iter_" + std::to_string(k) + ".json"));
            r2.push_back(it["metrics"]["r2"].get<double>());
            mae.push_back(it["metrics"]["mae"].get<double>());
        }
        auto mean = [](const std::vector<double>& v) {
            long double s = 0;
            for (double x : v) s += x;
            return double(s / v.size());
        };
        auto pstd = [&](const std::vector<double>& v) {
            const double m = mean(v);
            long double s = 0;
            for (double x : v) s += (x - m) * (x - m);
            return double(std::sqrt(s / v.size()));
        };
        EXPECT_NEAR(r["metrics"]["r2"]["mean"].get<double>(), mean(r2), 1e-12);
        EXPECT_NEAR(r["metrics"]["r2"]["std"].get<double>(), pstd(r2), 1e-12);
        EXPECT_NEAR(r["metrics"]["mae"]["mean"].get<double>(), mean(mae), 1e-12);
        EXPECT_NEAR(r["metrics"]["mae"]["std"].get<double>(), pstd(mae), 1e-12);
    }
    EXPECT_TRUE(std::filesystem::exists(dir / "fms.json"));
    EXPECT_TRUE(std::filesystem::exists(dir / "grids" / "biased_cpd.json"));
    EXPECT_TRUE(std::filesystem::exists(dir / "factors" / "uniform_cpd" / "normalized" / "highlights.json"));
    ASSERT_EQ(summary.fms_per_iteration.size(), 4u);
    std::filesystem::remove_all(dir);
}

TEST(RunExperiment, FailingCellIsRecordedNotFatal) {
    const auto obs = synthetic_obs({3, 3}, 1, 2);
    const auto cfg = experiment_config_from_json(nlohmann::json::parse(R"({
        "iterations": 2,
        "plans": [{"kind": "uniform"}],
        "models": [{"kind": "cpd", "name": "bad", "lr": 1e200, "epochs": 30, "rank": 1},
                   {"kind": "cpd", "name": "good", "epochs": 30, "rank": 1}]})"),
                                                 obs.space());
    const auto dir = scratch("fail");
    const auto summary = run_experiment(cfg, obs, dir);
    ASSERT_EQ(summary.failures.size(), 2u);
    EXPECT_EQ(summary.failures[0].kind, "divergence");
    EXPECT_EQ(summary.iterations.size(), 2u);
    EXPECT_EQ(parse_json_file(dir / "summary.json")["failures"].size(), 2u);
    std::filesystem::remove_all(dir);
}

TEST(OodSweep, ExhaustedStratumAndOrdering) {
    const auto obs = synthetic_obs({4, 4, 2}, 1, 3);
    SweepConfig cfg;
    cfg.region = {"mode_0", "mode_1", 0, 1, 0, 1};
    cfg.n_in = 4;
    cfg.n_out = {2, 100};
    cfg.models = {{"cpd", ModelKind::cpd, {}}};
    try {
        ood_sweep(obs, cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::stratum_exhausted);
    }
    cfg.n_out = {4, 2};
    EXPECT_THROW(ood_sweep(obs, cfg), Error);
}

TEST(OodSweep, MetricsUseOnlyOutOfRegionRowsAndAreDeterministic) {
    const auto obs = synthetic_obs({4, 4, 2}, 2, 3);
    SweepConfig cfg;
    cfg.region = {"mode_0", "mode_1", 0, 1, 0, 1};
    cfg.n_in = 6;
    cfg.n_out = {2, 6};
    cfg.iterations = 2;
    cfg.seed = 5;
    TrainConfig tc;
    tc.rank = 2;
    tc.epochs = 200;
    cfg.models = {{"cpd", ModelKind::cpd, tc}};
    const auto t = ood_sweep(obs, cfg);
    ASSERT_EQ(t.points.size(), 2u);
    const auto again = ood_sweep(obs, cfg);
    EXPECT_EQ(to_json(t).dump(), to_json(again).dump());

    // Recompute iteration 0 of the first point with an independent filter.
    Split split = normalize_on_train(biased_split(obs, cfg.region, 6, 2, iteration_seed(5, 0)));
    const auto [model, report] = fit(split.train, iteration_config(tc, 0), ModelKind::cpd);
    std::vector<double> y, yh;
    for (const auto& e : split.test.entries())
        if (!(e.index[0] <= 1 && e.index[1] <= 1)) {
            y.push_back(e.value);
            yh.push_back(model.predict(e.index));
        }
    EXPECT_EQ(t.points[0].per_iteration[0].n, y.size());
    EXPECT_EQ(y.size(), 32u - 8u - 2u);
    EXPECT_NEAR(t.points[0].per_iteration[0].mae, oracle::brute_metrics(y, yh).mae, 1e-12);
}
