// SPDX-License-Identifier: MIT
//
// Convolutional neural tensor completion over several independently
// initialized embedding groups.
//
// For an index (i_1..i_M), each group s contributes an R x M matrix whose
// column m is row i_m of that group's mode-m embedding. The S matrices are
// stacked as channels and passed through
//
//   conv A  (kernel S x 1 x M, spans the modes)  -> C maps of R x 1, ReLU
//   conv B  (kernel C x R x 1, spans the rank)   -> C maps of 1 x 1, ReLU
//   dense   (C -> H), ReLU
//   output  (H -> 1)
#pragma once

#include "tsurr/cpd.hpp"
#include "tsurr/error.hpp"
#include "tsurr/tensor_core.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

namespace tsurr {

struct NeuralDims {
    std::size_t groups = 3;    // S
    std::size_t channels = 8;  // C
    std::size_t hidden = 16;   // H
};

/// S groups of per-mode embedding matrices (I_m x R each).
class EmbeddingBank {
public:
    EmbeddingBank() = default;

    explicit EmbeddingBank(std::vector<FactorSet> groups) : groups_(std::move(groups)) {
        detail::require(!groups_.empty(), ErrorKind::contract, "embedding bank needs a group");
        for (const auto& g : groups_) {
            detail::require(g.shape() == groups_.front().shape(), ErrorKind::contract,
                            "embedding groups must share a shape");
            detail::require(g.rank() == groups_.front().rank(), ErrorKind::contract,
                            "embedding groups must share a rank");
        }
    }

    static EmbeddingBank zeros(const Shape& shape, std::size_t rank, std::size_t groups) {
        return EmbeddingBank(std::vector<FactorSet>(groups, FactorSet::zeros(shape, rank)));
    }

    [[nodiscard]] std::size_t groups() const { return groups_.size(); }
    [[nodiscard]] std::size_t rank() const { return groups_.front().rank(); }
    [[nodiscard]] std::size_t modes() const { return groups_.front().modes(); }
    [[nodiscard]] Shape shape() const { return groups_.front().shape(); }
    [[nodiscard]] const FactorSet& operator[](std::size_t s) const { return groups_[s]; }
    [[nodiscard]] FactorSet& operator[](std::size_t s) { return groups_[s]; }

    void append_blocks(std::vector<std::span<double>>& out) {
        for (auto& g : groups_)
            for (auto b : g.blocks()) out.push_back(b);
    }

    void append_blocks(std::vector<std::span<const double>>& out) const {
        for (const auto& g : groups_)
            for (auto b : g.blocks()) out.push_back(b);
    }

private:
    std::vector<FactorSet> groups_;
};

/// Convolution and dense weights. Column layouts:
///   conv_a  : C x (S*M), column s*M + m
///   conv_b  : C x (C*R), column c*R + r
///   dense   : H x C
///   out     : 1 x H
struct ConvHead {
    Matrix conv_a;
    Eigen::VectorXd conv_a_bias;
    Matrix conv_b;
    Eigen::VectorXd conv_b_bias;
    Matrix dense;
    Eigen::VectorXd dense_bias;
    Matrix out;
    Eigen::VectorXd out_bias;

    static ConvHead zeros(std::size_t groups, std::size_t modes, std::size_t rank,
                          std::size_t channels, std::size_t hidden) {
        const auto S = static_cast<Eigen::Index>(groups);
        const auto M = static_cast<Eigen::Index>(modes);
        const auto R = static_cast<Eigen::Index>(rank);
        const auto C = static_cast<Eigen::Index>(channels);
        const auto H = static_cast<Eigen::Index>(hidden);
        return ConvHead{Matrix::Zero(C, S * M), Eigen::VectorXd::Zero(C),
                        Matrix::Zero(C, C * R), Eigen::VectorXd::Zero(C),
                        Matrix::Zero(H, C),     Eigen::VectorXd::Zero(H),
                        Matrix::Zero(1, H),     Eigen::VectorXd::Zero(1)};
    }

    [[nodiscard]] std::size_t channels() const { return static_cast<std::size_t>(conv_a.rows()); }
    [[nodiscard]] std::size_t hidden() const { return static_cast<std::size_t>(dense.rows()); }

    /// Throws unless every layer's input width matches the previous output.
    void check_chain(std::size_t groups, std::size_t modes, std::size_t rank) const {
        const auto C = conv_a.rows();
        const bool ok =
            conv_a.cols() == static_cast<Eigen::Index>(groups * modes) &&
            conv_a_bias.size() == C && conv_b.rows() == C &&
            conv_b.cols() == C * static_cast<Eigen::Index>(rank) && conv_b_bias.size() == C &&
            dense.cols() == C && dense_bias.size() == dense.rows() && out.rows() == 1 &&
            out.cols() == dense.rows() && out_bias.size() == 1;
        detail::require(ok, ErrorKind::contract, "convolutional head layer shapes do not chain");
    }

    template <typename Span, typename Self>
    static void collect(Self& self, std::vector<Span>& out) {
        auto add = [&](auto& x) { out.emplace_back(x.data(), static_cast<std::size_t>(x.size())); };
        add(self.conv_a);
        add(self.conv_a_bias);
        add(self.conv_b);
        add(self.conv_b_bias);
        add(self.dense);
        add(self.dense_bias);
        add(self.out);
        add(self.out_bias);
    }

    void append_blocks(std::vector<std::span<double>>& out_blocks) { collect(*this, out_blocks); }
    void append_blocks(std::vector<std::span<const double>>& out_blocks) const {
        collect(*this, out_blocks);
    }
};

/// Embeddings plus head; the full trainable parameter set.
struct NeuralModel {
    EmbeddingBank bank;
    ConvHead head;

    [[nodiscard]] Shape shape() const { return bank.shape(); }

    [[nodiscard]] std::vector<std::span<double>> blocks() {
        std::vector<std::span<double>> out;
        bank.append_blocks(out);
        head.append_blocks(out);
        return out;
    }

    [[nodiscard]] std::vector<std::span<const double>> blocks() const {
        std::vector<std::span<const double>> out;
        bank.append_blocks(out);
        head.append_blocks(out);
        return out;
    }

    static NeuralModel zeros(const Shape& shape, std::size_t rank, const NeuralDims& dims) {
        return {EmbeddingBank::zeros(shape, rank, dims.groups),
                ConvHead::zeros(dims.groups, shape.size(), rank, dims.channels, dims.hidden)};
    }
};

/// Intermediate values of one forward pass.
struct NeuralTrace {
    Matrix input;           // (S*M) x R, row s*M + m is group s's mode-m embedding row
    Matrix conv_a_pre;      // C x R
    Matrix conv_a_act;      // C x R
    Eigen::VectorXd conv_b_pre, conv_b_act;  // C
    Eigen::VectorXd dense_pre, dense_act;    // H
    double output = 0.0;

    /// Smallest |pre-activation| over all rectified units.
    [[nodiscard]] double min_abs_preactivation() const {
        double v = std::numeric_limits<double>::infinity();
        if (conv_a_pre.size()) v = std::min(v, conv_a_pre.cwiseAbs().minCoeff());
        if (conv_b_pre.size()) v = std::min(v, conv_b_pre.cwiseAbs().minCoeff());
        if (dense_pre.size()) v = std::min(v, dense_pre.cwiseAbs().minCoeff());
        return v;
    }
};

namespace detail {

inline void gather_input(const EmbeddingBank& bank, std::span<const std::size_t> index, Matrix& x) {
    const std::size_t S = bank.groups();
    const std::size_t M = bank.modes();
    x.resize(static_cast<Eigen::Index>(S * M), static_cast<Eigen::Index>(bank.rank()));
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t m = 0; m < M; ++m)
            x.row(static_cast<Eigen::Index>(s * M + m)) =
                bank[s][m].row(static_cast<Eigen::Index>(index[m]));
}

inline void forward_trace(const EmbeddingBank& bank, const ConvHead& head,
                          std::span<const std::size_t> index, NeuralTrace& t) {
    gather_input(bank, index, t.input);
    t.conv_a_pre = head.conv_a * t.input;
    t.conv_a_pre.colwise() += head.conv_a_bias;
    t.conv_a_act = t.conv_a_pre.cwiseMax(0.0);
    // Row-major C x R flattens to c*R + r, matching conv_b's column layout.
    const Eigen::Map<const Eigen::VectorXd> a_flat(t.conv_a_act.data(), t.conv_a_act.size());
    t.conv_b_pre = head.conv_b * a_flat + head.conv_b_bias;
    t.conv_b_act = t.conv_b_pre.cwiseMax(0.0);
    t.dense_pre = head.dense * t.conv_b_act + head.dense_bias;
    t.dense_act = t.dense_pre.cwiseMax(0.0);
    t.output = (head.out * t.dense_act)(0) + head.out_bias(0);
}

inline void check_neural_index(const EmbeddingBank& bank, const ConvHead& head,
                               std::span<const std::size_t> index) {
    check_index(bank.shape(), index);
    head.check_chain(bank.groups(), bank.modes(), bank.rank());
}

}  // namespace detail

inline NeuralTrace neural_trace(const EmbeddingBank& bank, const ConvHead& head,
                                std::span<const std::size_t> index) {
    detail::check_neural_index(bank, head, index);
    NeuralTrace t;
    detail::forward_trace(bank, head, index, t);
    return t;
}

inline double neural_forward(const EmbeddingBank& bank, const ConvHead& head,
                             std::span<const std::size_t> index) {
    return neural_trace(bank, head, index).output;
}

inline double neural_forward(const NeuralModel& model, std::span<const std::size_t> index) {
    return neural_forward(model.bank, model.head, index);
}

inline double neural_mse(const NeuralModel& model, const ObservationSet& obs) {
    detail::require(!obs.empty(), ErrorKind::undefined_loss, "masked MSE over zero observations");
    detail::require(obs.shape() == model.shape(), ErrorKind::contract,
                    "observation shape does not match model shape");
    model.head.check_chain(model.bank.groups(), model.bank.modes(), model.bank.rank());
    NeuralTrace t;
    double sse = 0.0;
    for (const auto& e : obs.entries()) {
        detail::forward_trace(model.bank, model.head, e.index, t);
        const double r = t.output - e.value;
        sse += r * r;
    }
    return sse / static_cast<double>(obs.size());
}

/// Backpropagated gradient of the masked MSE with respect to every
/// embedding and head parameter, returned in model layout.
inline NeuralModel neural_grad(const NeuralModel& model, const ObservationSet& obs,
                               double* loss = nullptr) {
    detail::require(!obs.empty(), ErrorKind::undefined_loss, "masked MSE over zero observations");
    detail::require(obs.shape() == model.shape(), ErrorKind::contract,
                    "observation shape does not match model shape");
    const EmbeddingBank& bank = model.bank;
    const ConvHead& head = model.head;
    head.check_chain(bank.groups(), bank.modes(), bank.rank());

    const std::size_t S = bank.groups();
    const std::size_t M = bank.modes();
    const auto R = static_cast<Eigen::Index>(bank.rank());
    const auto C = static_cast<Eigen::Index>(head.channels());
    const double n = static_cast<double>(obs.size());

    NeuralModel g = NeuralModel::zeros(bank.shape(), bank.rank(),
                                       {S, head.channels(), head.hidden()});
    NeuralTrace t;
    Matrix d_a(C, R);
    double sse = 0.0;
    for (const auto& e : obs.entries()) {
        detail::forward_trace(bank, head, e.index, t);
        const double resid = t.output - e.value;
        sse += resid * resid;
        const double dy = 2.0 * resid / n;

        g.head.out.row(0) += dy * t.dense_act.transpose();
        g.head.out_bias(0) += dy;

        const Eigen::VectorXd d_dense =
            (dy * head.out.row(0).transpose()).cwiseProduct(
                (t.dense_pre.array() > 0.0).cast<double>().matrix());
        g.head.dense += d_dense * t.conv_b_act.transpose();
        g.head.dense_bias += d_dense;

        const Eigen::VectorXd d_b = (head.dense.transpose() * d_dense)
                                        .cwiseProduct((t.conv_b_pre.array() > 0.0)
                                                          .cast<double>()
                                                          .matrix());
        const Eigen::Map<const Eigen::RowVectorXd> a_flat(t.conv_a_act.data(),
                                                          t.conv_a_act.size());
        g.head.conv_b += d_b * a_flat;
        g.head.conv_b_bias += d_b;

        const Eigen::VectorXd d_a_flat = head.conv_b.transpose() * d_b;
        for (Eigen::Index c = 0; c < C; ++c)
            for (Eigen::Index r = 0; r < R; ++r)
                d_a(c, r) = t.conv_a_pre(c, r) > 0.0 ? d_a_flat(c * R + r) : 0.0;
        g.head.conv_a += d_a * t.input.transpose();
        g.head.conv_a_bias += d_a.rowwise().sum();

        const Matrix d_input = head.conv_a.transpose() * d_a;  // (S*M) x R
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t m = 0; m < M; ++m)
                g.bank[s][m].row(static_cast<Eigen::Index>(e.index[m])) +=
                    d_input.row(static_cast<Eigen::Index>(s * M + m));
    }
    if (loss) *loss = sse / n;
    return g;
}

/// Embeddings ~ Gaussian(0, embed_stddev); head weights ~ He-normal
/// (stddev sqrt(2 / fan_in)); biases zero.
inline NeuralModel init_neural(const Shape& shape, std::size_t rank, const NeuralDims& dims,
                               std::uint64_t seed, double embed_stddev = kInitStddev) {
    detail::require(dims.groups >= 1 && dims.channels >= 1 && dims.hidden >= 1,
                    ErrorKind::contract, "neural widths must be at least 1");
    std::vector<FactorSet> groups;
    std::mt19937_64 seeder(seed);
    for (std::size_t s = 0; s < dims.groups; ++s)
        groups.push_back(init_factors(shape, rank, seeder(), embed_stddev));
    NeuralModel model{EmbeddingBank(std::move(groups)),
                      ConvHead::zeros(dims.groups, shape.size(), rank, dims.channels, dims.hidden)};

    std::mt19937_64 rng(seeder());
    auto he = [&](Matrix& w) {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(w.cols())));
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
    };
    he(model.head.conv_a);
    he(model.head.conv_b);
    he(model.head.dense);
    he(model.head.out);
    return model;
}

}  // namespace tsurr
