// SPDX-License-Identifier: MIT
#pragma once

#include "tsurr/error.hpp"

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace tsurr {

struct AdamHyper {
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment accumulators for a fixed list of parameter blocks.
class AdamState {
public:
    AdamState() = default;

    AdamState(std::vector<std::size_t> block_sizes, AdamHyper hyper)
        : hyper_(hyper), sizes_(std::move(block_sizes)) {
        std::size_t n = 0;
        for (auto s : sizes_) n += s;
        m_.assign(n, 0.0);
        v_.assign(n, 0.0);
    }

    template <typename Blocks>
    static AdamState for_blocks(const Blocks& blocks, AdamHyper hyper) {
        std::vector<std::size_t> sizes;
        for (const auto& b : blocks) sizes.push_back(b.size());
        return AdamState(std::move(sizes), hyper);
    }

    [[nodiscard]] const AdamHyper& hyper() const { return hyper_; }
    [[nodiscard]] std::size_t step_count() const { return t_; }
    [[nodiscard]] std::span<const double> first_moment() const { return m_; }
    [[nodiscard]] std::span<const double> second_moment() const { return v_; }
    [[nodiscard]] const std::vector<std::size_t>& block_sizes() const { return sizes_; }

    /// One bias-corrected Adam update over all blocks.
    void step(std::span<const std::span<double>> params,
              std::span<const std::span<const double>> grads) {
        detail::require(params.size() == sizes_.size() && grads.size() == sizes_.size(),
                        ErrorKind::contract, "Adam: parameter block count mismatch");
        for (std::size_t b = 0; b < sizes_.size(); ++b)
            detail::require(params[b].size() == sizes_[b] && grads[b].size() == sizes_[b],
                            ErrorKind::contract,
                            "Adam: block " + std::to_string(b) + " size mismatch");

        ++t_;
        const double b1 = hyper_.beta1;
        const double b2 = hyper_.beta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));

        std::size_t k = 0;
        for (std::size_t b = 0; b < sizes_.size(); ++b) {
            auto p = params[b];
            auto g = grads[b];
            for (std::size_t i = 0; i < p.size(); ++i, ++k) {
                m_[k] = b1 * m_[k] + (1.0 - b1) * g[i];
                v_[k] = b2 * v_[k] + (1.0 - b2) * g[i] * g[i];
                const double mhat = m_[k] / c1;
                const double vhat = v_[k] / c2;
                p[i] -= hyper_.lr * mhat / (std::sqrt(vhat) + hyper_.eps);
            }
        }
    }

private:
    AdamHyper hyper_;
    std::vector<std::size_t> sizes_;
    std::vector<double> m_;
    std::vector<double> v_;
    std::size_t t_ = 0;
};

inline void adam_step(std::span<const std::span<double>> params,
                      std::span<const std::span<const double>> grads, AdamState& state) {
    state.step(params, grads);
}

/// Single-block convenience overload.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
    const std::span<double> p[1] = {params};
    const std::span<const double> g[1] = {grads};
    state.step(p, g);
}

}  // namespace tsurr
