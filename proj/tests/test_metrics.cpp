// SPDX-License-Identifier: MIT
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

using namespace tsurr;

namespace {

std::vector<double> seq(std::initializer_list<double> xs) { return xs; }

/// Factors with orthonormal columns in mode 0, so distinct components
/// never score against each other.
FactorSet orthogonal_factors(const Shape& shape, std::size_t rank, std::uint64_t seed) {
    FactorSet f = init_factors(shape, rank, seed);
    const Eigen::MatrixXd m0 = f[0];
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(m0);
    f[0] = Eigen::MatrixXd(qr.householderQ()).leftCols(static_cast<Eigen::Index>(rank));
    return f;
}

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("tsurr_metrics_" + name);
    std::filesystem::remove_all(p);
    return p;
}

}  // namespace

TEST(RegressionMetrics, PerfectPrediction) {
    const auto y = seq({0.1, 0.5, 0.9, 0.3});
    const auto m = regression_metrics(y, y);
    EXPECT_EQ(m.r2, 1.0);
    EXPECT_EQ(m.mae, 0.0);
    EXPECT_EQ(m.rmse, 0.0);
    EXPECT_EQ(m.mape, 0.0);
    EXPECT_EQ(m.n, 4u);
}

TEST(RegressionMetrics, MeanPredictorHasZeroR2) {
    const auto y = seq({1.0, 4.0, 2.0, 5.0});
    const std::vector<double> yh(4, 3.0);
    EXPECT_NEAR(regression_metrics(y, yh).r2, 0.0, 1e-15);
}

TEST(RegressionMetrics, HandArithmetic) {
    const auto m = regression_metrics(seq({1, 2, 3}), seq({2, 2, 2}));
    EXPECT_NEAR(m.mae, 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(m.rmse, std::sqrt(2.0 / 3.0), 1e-15);
    EXPECT_NEAR(m.r2, 0.0, 1e-15);
    EXPECT_NEAR(m.mape, 4.0 / 9.0, 1e-15);
}

TEST(RegressionMetrics, MapeExcludesZeroTargets) {
    const auto m = regression_metrics(seq({0.0, 2.0, 4.0}), seq({0.5, 1.0, 4.0}));
    EXPECT_EQ(m.mape_excluded, 1u);
    EXPECT_DOUBLE_EQ(m.mape, 0.25);
    const auto z = regression_metrics(seq({0.0, 1e-9}), seq({1.0, 1.0}));
    EXPECT_EQ(z.mape_excluded, 2u);
    EXPECT_TRUE(std::isnan(z.mape));
}

TEST(RegressionMetrics, Errors) {
    try {
        regression_metrics(seq({1, 2}), seq({1}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::contract);
    }
    try {
        regression_metrics(seq({2, 2, 2}), seq({1, 2, 3}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::undefined_metric);
    }
}

TEST(RegressionMetrics, MatchesBruteForceOracle) {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> d(-2.0, 2.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + rng() % 50;
        std::vector<double> y(n), yh(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = d(rng);
            yh[i] = y[i] + 0.3 * d(rng);
        }
        const auto m = regression_metrics(y, yh);
        const auto o = oracle::brute_metrics(y, yh);
        ASSERT_NEAR(m.r2, o.r2, 1e-12);
        ASSERT_NEAR(m.mae, o.mae, 1e-12);
        ASSERT_NEAR(m.rmse, o.rmse, 1e-12);
        ASSERT_NEAR(m.mape, o.mape, 1e-12 * std::max(1.0, o.mape));
    }
}

TEST(Fms, SelfMatch) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const auto a = init_factors({4, 5, 3}, 1 + rng() % 5, rng());
        EXPECT_NEAR(fms(a, a).fms, 1.0, 1e-9);
    }
}

TEST(Fms, RecoversColumnPermutation) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t R = 2 + rng() % 5;
        const auto a = init_factors({6, 5, 4}, R, rng());
        std::vector<std::size_t> perm(R);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        FactorSet b = a;
        for (std::size_t m = 0; m < 3; ++m)
            for (std::size_t r = 0; r < R; ++r)
                b[m].col(static_cast<Eigen::Index>(r)) = a[m].col(static_cast<Eigen::Index>(perm[r]));
        const auto c = fms(a, b);
        EXPECT_NEAR(c.fms, 1.0, 1e-12);
        for (std::size_t r = 0; r < R; ++r) EXPECT_EQ(perm[c.permutation[r]], r);
    }
}

TEST(Fms, SignFlips) {
    for (std::size_t R : {2u, 3u, 4u, 5u}) {
        const auto a = orthogonal_factors({6, 4, 3}, R, 40 + R);
        FactorSet two = a;
        two[0].col(0) *= -1.0;
        two[2].col(0) *= -1.0;
        EXPECT_NEAR(fms(a, two).fms, 1.0, 1e-12);
        FactorSet one = a;
        one[1].col(0) *= -1.0;
        EXPECT_NEAR(fms(a, one).fms, (static_cast<double>(R) - 2.0) / static_cast<double>(R), 1e-12);
    }
}

TEST(Fms, SymmetryRangeAndScaleInvariance) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> scale(0.01, 100.0);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t R = 1 + rng() % 4;
        const auto a = init_factors({3, 4, 5}, R, rng());
        const auto b = init_factors({3, 4, 5}, R, rng());
        const double ab = fms(a, b).fms;
        EXPECT_NEAR(ab, fms(b, a).fms, 1e-12);
        EXPECT_GE(ab, -1.0);
        EXPECT_LE(ab, 1.0);
        FactorSet bs = b;
        for (std::size_t m = 0; m < 3; ++m)
            for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(R); ++r) bs[m].col(r) *= scale(rng);
        EXPECT_NEAR(fms(a, bs).fms, ab, 1e-12);
    }
}

TEST(Fms, AssignmentAgreesWithExhaustive) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t R = 1 + rng() % 6;
        const auto a = init_factors({4, 3, 5}, R, rng());
        const auto b = init_factors({4, 3, 5}, R, rng());
        EXPECT_NEAR(fms(a, b, FmsSearch::exhaustive).fms, fms(a, b, FmsSearch::assignment).fms, 1e-12);
    }
}

TEST(Fms, LargeRankUsesAssignment) {
    const auto a = init_factors({12, 10, 9}, 10, 3);
    FactorSet b = a;
    for (std::size_t m = 0; m < 3; ++m) b[m].col(0).swap(b[m].col(9));
    const auto c = fms(a, b);
    EXPECT_NEAR(c.fms, 1.0, 1e-12);
    EXPECT_EQ(c.permutation[0], 9u);
}

TEST(Fms, Errors) {
    const auto a = init_factors({3, 3}, 2, 1);
    const auto b = init_factors({3, 3}, 3, 1);
    try {
        fms(a, b);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::contract);
    }
    FactorSet z = a;
    z[1].col(1).setZero();
    try {
        fms(a, z);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::degenerate_factor);
    }
}

TEST(NormalizedComponents, ThreeFourFive) {
    FactorSet f = FactorSet::zeros({2, 1}, 1);
    f[0] << 3.0, -4.0;
    f[1] << 1.0;
    const auto n = normalized_components(f, 0);
    EXPECT_DOUBLE_EQ(n(0, 0), 0.6);
    EXPECT_DOUBLE_EQ(n(1, 0), 0.8);
}

TEST(NormalizedComponents, UnitColumnsAndScaleInvariance) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        FactorSet f = init_factors({5, 4}, 3, rng());
        const auto n = normalized_components(f, 0);
        for (Eigen::Index r = 0; r < 3; ++r) EXPECT_NEAR(n.col(r).norm(), 1.0, 1e-12);
        FactorSet g = f;
        g[0].col(1) *= 7.0;
        EXPECT_TRUE(normalized_components(g, 0).isApprox(n, 1e-14));
        FactorSet u = f;
        u[0] = n;
        EXPECT_TRUE(normalized_components(u, 0).isApprox(n, 1e-14));
    }
}

TEST(NormalizedComponents, ZeroColumnIsDegenerate) {
    FactorSet f = FactorSet::zeros({3, 2}, 2);
    f[0].col(0).setOnes();
    try {
        normalized_components(f, 0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::degenerate_factor);
    }
}

TEST(ComponentExport, LatticeFilesAndColumns) {
    const auto space = build_design_space(
        oracle::lattice_records(), {"UC Geometry", "Thickness", "UC X", "UC Y", "UC Z"}, "E",
        {AxisKind::categorical, AxisKind::ordinal, AxisKind::ordinal, AxisKind::ordinal,
         AxisKind::ordinal});
    const auto f = init_factors(space.shape(), 3, 12);
    const auto dir = scratch("lattice");
    const auto files = component_expression_export(f, space, dir);
    ASSERT_EQ(files.size(), 6u);
    for (std::size_t m = 0; m < 5; ++m) {
        const auto t = read_csv(files[m]);
        EXPECT_EQ(t.header, (std::vector<std::string>{"value_label", "comp_1", "comp_2", "comp_3"}));
        EXPECT_EQ(t.rows.size(), space.shape()[m]);
    }
    EXPECT_EQ(files[0].filename(), "mode_0_UC_Geometry.csv");
    const auto h = nlohmann::json::parse(read_text(files[5]));
    EXPECT_EQ(h["components"].size(), 3u);
    std::filesystem::remove_all(dir);
}

TEST(ComponentExport, ThresholdOneIsEmpty) {
    const auto space = DesignSpace::synthetic({4, 3});
    const auto h = component_highlights(init_factors({4, 3}, 2, 1), space, 1.0);
    for (const auto& c : h["components"])
        for (const auto& [axis, labels] : c["highlights"].items()) EXPECT_TRUE(labels.empty());
}

TEST(ComponentExport, DominantEntryHighlighted) {
    const auto space = DesignSpace::synthetic({5, 2});
    FactorSet f = FactorSet::zeros({5, 2}, 1);
    f[0] << 0.1, 0.1, 5.0, 0.1, 0.1;
    f[1] << 1.0, 1.0;
    const auto h = component_highlights(f, space, 0.75);
    EXPECT_EQ(h["components"][0]["highlights"]["mode_0"], nlohmann::json::array({"2"}));
    EXPECT_TRUE(h["components"][0]["highlights"]["mode_1"].empty());
}

TEST(ComponentExport, RawFactorsRoundTrip) {
    const auto space = DesignSpace::synthetic({3, 2});
    const auto f = init_factors({3, 2}, 2, 6);
    const auto dir = scratch("raw");
    const auto files = export_raw_factors(f, space, dir);
    const auto t = read_csv(files[0]);
    EXPECT_EQ(*detail::parse_number(t.rows[2][2]), f[0](2, 1));
    std::filesystem::remove_all(dir);
}
