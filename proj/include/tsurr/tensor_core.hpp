// SPDX-License-Identifier: MIT
//
// Design-space schema, tensor index arithmetic, and sparse (COO)
// observation storage with min-max outcome normalization.
#pragma once

#include "tsurr/error.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace tsurr {

using Shape = std::vector<std::size_t>;
using Index = std::vector<std::size_t>;

/// One tabular row: column name -> textual cell value.
using Record = std::map<std::string, std::string>;

// ============================================================================
// Index arithmetic
// ============================================================================

inline std::size_t num_cells(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>{});
}

inline bool in_bounds(const Shape& shape, std::span<const std::size_t> index) {
    if (index.size() != shape.size()) return false;
    for (std::size_t m = 0; m < shape.size(); ++m)
        if (index[m] >= shape[m]) return false;
    return true;
}

inline void check_index(const Shape& shape, std::span<const std::size_t> index) {
    if (in_bounds(shape, index)) return;
    std::string s = "(";
    for (std::size_t m = 0; m < index.size(); ++m)
        s += (m ? "," : "") + std::to_string(index[m]);
    s += ")";
    detail::fail(ErrorKind::bounds, "index " + s + " outside tensor shape");
}

/// Row-major flat offset (last mode varies fastest).
inline std::size_t flat_offset(const Shape& shape, std::span<const std::size_t> index) {
    std::size_t off = 0;
    for (std::size_t m = 0; m < shape.size(); ++m) off = off * shape[m] + index[m];
    return off;
}

inline Index unravel(const Shape& shape, std::size_t offset) {
    Index index(shape.size());
    for (std::size_t m = shape.size(); m-- > 0;) {
        index[m] = offset % shape[m];
        offset /= shape[m];
    }
    return index;
}

/// Advance `index` to the next cell in row-major order. Returns false after
/// the last cell.
inline bool next_index(const Shape& shape, Index& index) {
    for (std::size_t m = shape.size(); m-- > 0;) {
        if (++index[m] < shape[m]) return true;
        index[m] = 0;
    }
    return false;
}

// ============================================================================
// DesignSpace
// ============================================================================

enum class AxisKind { ordinal, categorical };

inline const char* to_string(AxisKind k) {
    return k == AxisKind::ordinal ? "ordinal" : "categorical";
}

inline AxisKind axis_kind_from_string(const std::string& s) {
    if (s == "ordinal") return AxisKind::ordinal;
    if (s == "categorical") return AxisKind::categorical;
    detail::fail(ErrorKind::schema, "unknown axis kind '" + s + "'");
}

namespace detail {

inline std::optional<double> parse_number(std::string_view text) {
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front())))
        text.remove_prefix(1);
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back())))
        text.remove_suffix(1);
    if (text.empty()) return std::nullopt;
    if (text.front() == '+') text.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(v))
        return std::nullopt;
    return v;
}

/// Shortest round-trip decimal form; used as the canonical ordinal label.
inline std::string format_number(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace detail

struct Axis {
    std::string name;
    AxisKind kind = AxisKind::categorical;
    std::vector<std::string> values;

    [[nodiscard]] std::size_t size() const { return values.size(); }

    /// Position of `label` in the value list; ordinal axes match numerically.
    [[nodiscard]] std::optional<std::size_t> find(const std::string& label) const {
        if (kind == AxisKind::ordinal) {
            auto v = detail::parse_number(label);
            if (!v) return std::nullopt;
            for (std::size_t i = 0; i < values.size(); ++i)
                if (*detail::parse_number(values[i]) == *v) return i;
            return std::nullopt;
        }
        auto it = std::find(values.begin(), values.end(), label);
        if (it == values.end()) return std::nullopt;
        return static_cast<std::size_t>(it - values.begin());
    }
};

class DesignSpace {
public:
    DesignSpace() = default;

    DesignSpace(std::vector<Axis> axes, std::string outcome_name)
        : axes_(std::move(axes)), outcome_(std::move(outcome_name)) {
        validate();
    }

    /// Axes named mode_0..mode_{M-1} with labels "0".."I_m-1"; used for
    /// synthetic tensors that have no tabular origin.
    static DesignSpace synthetic(const Shape& shape, std::string outcome = "y") {
        std::vector<Axis> axes;
        for (std::size_t m = 0; m < shape.size(); ++m) {
            Axis a{"mode_" + std::to_string(m), AxisKind::ordinal, {}};
            for (std::size_t i = 0; i < shape[m]; ++i) a.values.push_back(std::to_string(i));
            axes.push_back(std::move(a));
        }
        return DesignSpace(std::move(axes), std::move(outcome));
    }

    [[nodiscard]] const std::vector<Axis>& axes() const { return axes_; }
    [[nodiscard]] const Axis& axis(std::size_t m) const { return axes_.at(m); }
    [[nodiscard]] const std::string& outcome_name() const { return outcome_; }
    [[nodiscard]] std::size_t modes() const { return axes_.size(); }

    [[nodiscard]] Shape shape() const {
        Shape s;
        for (const auto& a : axes_) s.push_back(a.size());
        return s;
    }

    [[nodiscard]] std::size_t total() const { return num_cells(shape()); }

    [[nodiscard]] std::size_t mode_of(const std::string& axis_name) const {
        for (std::size_t m = 0; m < axes_.size(); ++m)
            if (axes_[m].name == axis_name) return m;
        detail::fail(ErrorKind::schema, "unknown axis '" + axis_name + "'");
    }

    [[nodiscard]] std::vector<std::size_t> ordinal_modes() const {
        std::vector<std::size_t> out;
        for (std::size_t m = 0; m < axes_.size(); ++m)
            if (axes_[m].kind == AxisKind::ordinal) out.push_back(m);
        return out;
    }

    friend bool operator==(const DesignSpace& a, const DesignSpace& b) {
        if (a.outcome_ != b.outcome_ || a.axes_.size() != b.axes_.size()) return false;
        for (std::size_t m = 0; m < a.axes_.size(); ++m) {
            const auto& x = a.axes_[m];
            const auto& y = b.axes_[m];
            if (x.name != y.name || x.kind != y.kind || x.values != y.values) return false;
        }
        return true;
    }

private:
    void validate() const {
        for (std::size_t m = 0; m < axes_.size(); ++m) {
            const Axis& a = axes_[m];
            detail::require(!a.values.empty(), ErrorKind::schema,
                            "axis '" + a.name + "' has no values");
            for (std::size_t j = 0; j < m; ++j)
                detail::require(axes_[j].name != a.name, ErrorKind::schema,
                                "duplicate axis name '" + a.name + "'");
            if (a.kind == AxisKind::ordinal) {
                std::optional<double> prev;
                for (const auto& label : a.values) {
                    auto v = detail::parse_number(label);
                    detail::require(v.has_value(), ErrorKind::type,
                                    "ordinal axis '" + a.name + "' has non-numeric value '" +
                                        label + "'");
                    detail::require(!prev || *v > *prev, ErrorKind::schema,
                                    "ordinal axis '" + a.name +
                                        "' values must be strictly increasing");
                    prev = v;
                }
            } else {
                auto sorted = a.values;
                std::sort(sorted.begin(), sorted.end());
                detail::require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(),
                                ErrorKind::schema,
                                "categorical axis '" + a.name + "' has duplicate values");
            }
        }
    }

    std::vector<Axis> axes_;
    std::string outcome_;
};

/// Derive a design space from raw records.
///
/// Ordinal axes list their distinct numeric values ascending. Categorical
/// axes follow `declared_order` when supplied for that axis, otherwise
/// lexicographic order, so the result does not depend on record order.
inline DesignSpace build_design_space(
    std::span<const Record> records, const std::vector<std::string>& axis_names,
    const std::string& outcome_name, const std::vector<AxisKind>& kinds,
    const std::map<std::string, std::vector<std::string>>& declared_order = {}) {
    detail::require(!records.empty(), ErrorKind::schema, "no records");
    detail::require(kinds.size() == axis_names.size(), ErrorKind::contract,
                    "one axis kind is required per axis name");

    for (std::size_t r = 0; r < records.size(); ++r) {
        for (const auto& field : axis_names)
            detail::require(records[r].count(field) > 0, ErrorKind::schema,
                            "record " + std::to_string(r) + " is missing field '" + field + "'");
        detail::require(records[r].count(outcome_name) > 0, ErrorKind::schema,
                        "record " + std::to_string(r) + " is missing field '" + outcome_name + "'");
        detail::require(detail::parse_number(records[r].at(outcome_name)).has_value(),
                        ErrorKind::type,
                        "record " + std::to_string(r) + " has non-numeric outcome '" +
                            records[r].at(outcome_name) + "'");
    }

    std::vector<Axis> axes;
    for (std::size_t m = 0; m < axis_names.size(); ++m) {
        const std::string& name = axis_names[m];
        Axis axis{name, kinds[m], {}};
        if (kinds[m] == AxisKind::ordinal) {
            std::vector<double> nums;
            for (std::size_t r = 0; r < records.size(); ++r) {
                auto v = detail::parse_number(records[r].at(name));
                detail::require(v.has_value(), ErrorKind::type,
                                "record " + std::to_string(r) + ": ordinal axis '" + name +
                                    "' has non-numeric value '" + records[r].at(name) + "'");
                nums.push_back(*v);
            }
            std::sort(nums.begin(), nums.end());
            nums.erase(std::unique(nums.begin(), nums.end()), nums.end());
            for (double v : nums) axis.values.push_back(detail::format_number(v));
        } else {
            std::vector<std::string> seen;
            for (const auto& rec : records) seen.push_back(rec.at(name));
            std::sort(seen.begin(), seen.end());
            seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
            auto it = declared_order.find(name);
            if (it != declared_order.end()) {
                for (const auto& v : seen)
                    detail::require(std::find(it->second.begin(), it->second.end(), v) !=
                                        it->second.end(),
                                    ErrorKind::encoding,
                                    "axis '" + name + "' value '" + v +
                                        "' is absent from the declared order");
                axis.values = it->second;
            } else {
                axis.values = std::move(seen);
            }
        }
        axes.push_back(std::move(axis));
    }
    return DesignSpace(std::move(axes), outcome_name);
}

// ============================================================================
// Normalization
// ============================================================================

/// Min-max map between outcome units and [0, 1].
struct Normalizer {
    double y_min = 0.0;
    double y_max = 1.0;

    [[nodiscard]] double span() const { return y_max - y_min; }

    [[nodiscard]] double normalize(double y) const {
        return span() > 0.0 ? (y - y_min) / span() : 0.0;
    }

    /// Inverse map. A constant-outcome normalizer (y_max == y_min) maps
    /// everything back to y_min.
    [[nodiscard]] double invert(double v) const { return v * span() + y_min; }

    static Normalizer fit(std::span<const double> raw) {
        detail::require(!raw.empty(), ErrorKind::degenerate_range,
                        "cannot fit a normalizer on zero outcomes");
        auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
        Normalizer n{*lo, *hi};
        n.validate();
        return n;
    }

    void validate() const {
        detail::require(std::isfinite(y_min) && std::isfinite(y_max) && y_max >= y_min,
                        ErrorKind::degenerate_range,
                        "normalizer range [" + detail::format_number(y_min) + ", " +
                            detail::format_number(y_max) + "] is invalid");
    }

    friend bool operator==(const Normalizer&, const Normalizer&) = default;
};

inline double invert_normalization(double v, const Normalizer& n) { return n.invert(v); }

// ============================================================================
// Observations
// ============================================================================

struct Observation {
    Index index;
    double value = 0.0;
};

enum class DuplicatePolicy { average, reject };

/// Sparse COO observations over a design space. Values are on the scale of
/// `normalizer()`; sets produced by encoding lie in [0, 1], while sets
/// re-expressed under another split's normalizer may fall outside it.
class ObservationSet {
public:
    ObservationSet() = default;

    ObservationSet(std::shared_ptr<const DesignSpace> space, std::vector<Observation> entries,
                   Normalizer normalizer = {})
        : space_(std::move(space)), entries_(std::move(entries)), normalizer_(normalizer) {
        detail::require(space_ != nullptr, ErrorKind::contract, "observation set without space");
        const Shape shape = space_->shape();
        detail::require(entries_.size() <= num_cells(shape), ErrorKind::contract,
                        "more observations than tensor cells");
        for (const auto& e : entries_) check_index(shape, e.index);
    }

    /// Convenience for synthetic tensors.
    ObservationSet(const Shape& shape, std::vector<Observation> entries, Normalizer normalizer = {})
        : ObservationSet(std::make_shared<const DesignSpace>(DesignSpace::synthetic(shape)),
                         std::move(entries), normalizer) {}

    [[nodiscard]] const DesignSpace& space() const { return *space_; }
    [[nodiscard]] const std::shared_ptr<const DesignSpace>& space_ptr() const { return space_; }
    [[nodiscard]] Shape shape() const { return space_->shape(); }
    [[nodiscard]] const std::vector<Observation>& entries() const { return entries_; }
    [[nodiscard]] std::size_t size() const { return entries_.size(); }
    [[nodiscard]] bool empty() const { return entries_.empty(); }
    [[nodiscard]] const Observation& operator[](std::size_t i) const { return entries_[i]; }
    [[nodiscard]] const Normalizer& normalizer() const { return normalizer_; }

    [[nodiscard]] std::vector<double> values() const {
        std::vector<double> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(e.value);
        return out;
    }

    [[nodiscard]] std::vector<double> raw_values() const {
        std::vector<double> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(normalizer_.invert(e.value));
        return out;
    }

    [[nodiscard]] std::vector<Index> indices() const {
        std::vector<Index> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(e.index);
        return out;
    }

    /// Entries at the given positions, same space and normalizer.
    [[nodiscard]] ObservationSet subset(std::span<const std::size_t> positions) const {
        std::vector<Observation> out;
        out.reserve(positions.size());
        for (std::size_t p : positions) out.push_back(entries_.at(p));
        return ObservationSet(space_, std::move(out), normalizer_);
    }

    /// Same observations expressed under a different normalizer.
    [[nodiscard]] ObservationSet renormalized(const Normalizer& target) const {
        target.validate();
        std::vector<Observation> out = entries_;
        for (auto& e : out) e.value = target.normalize(normalizer_.invert(e.value));
        return ObservationSet(space_, std::move(out), target);
    }

private:
    std::shared_ptr<const DesignSpace> space_;
    std::vector<Observation> entries_;
    Normalizer normalizer_;
};

/// Map records to COO entries and min-max normalize outcomes over the
/// supplied records. With DuplicatePolicy::average, repeated index tuples
/// are merged by averaging their raw outcomes; entries are ordered by flat
/// offset.
inline ObservationSet encode_observations(std::span<const Record> records,
                                          std::shared_ptr<const DesignSpace> space,
                                          DuplicatePolicy duplicates = DuplicatePolicy::average) {
    detail::require(space != nullptr, ErrorKind::contract, "null design space");
    detail::require(!records.empty(), ErrorKind::encoding, "no records to encode");
    const Shape shape = space->shape();
    const std::size_t modes = space->modes();

    std::map<std::size_t, std::pair<double, std::size_t>> sums;  // offset -> (sum, count)
    for (std::size_t r = 0; r < records.size(); ++r) {
        const Record& rec = records[r];
        Index idx(modes);
        for (std::size_t m = 0; m < modes; ++m) {
            const Axis& axis = space->axis(m);
            auto it = rec.find(axis.name);
            detail::require(it != rec.end(), ErrorKind::schema,
                            "record " + std::to_string(r) + " is missing field '" + axis.name + "'");
            auto pos = axis.find(it->second);
            detail::require(pos.has_value(), ErrorKind::encoding,
                            "axis '" + axis.name + "' has no value '" + it->second + "'");
            idx[m] = *pos;
        }
        auto out_it = rec.find(space->outcome_name());
        detail::require(out_it != rec.end(), ErrorKind::schema,
                        "record " + std::to_string(r) + " is missing field '" +
                            space->outcome_name() + "'");
        auto y = detail::parse_number(out_it->second);
        detail::require(y.has_value(), ErrorKind::type,
                        "record " + std::to_string(r) + " has non-numeric outcome '" +
                            out_it->second + "'");
        auto& slot = sums[flat_offset(shape, idx)];
        detail::require(duplicates == DuplicatePolicy::average || slot.second == 0,
                        ErrorKind::encoding,
                        "duplicate index tuple at record " + std::to_string(r));
        slot.first += *y;
        slot.second += 1;
    }

    std::vector<double> raw;
    raw.reserve(sums.size());
    for (const auto& [off, sc] : sums) raw.push_back(sc.first / static_cast<double>(sc.second));
    const Normalizer norm = Normalizer::fit(raw);

    std::vector<Observation> entries;
    entries.reserve(sums.size());
    std::size_t k = 0;
    for (const auto& [off, sc] : sums)
        entries.push_back({unravel(shape, off), norm.normalize(raw[k++])});
    return ObservationSet(std::move(space), std::move(entries), norm);
}

// ============================================================================
// DenseTensor
// ============================================================================

class DenseTensor {
public:
    DenseTensor() = default;

    explicit DenseTensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(num_cells(shape_), fill) {}

    DenseTensor(Shape shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        detail::require(data_.size() == num_cells(shape_), ErrorKind::contract,
                        "dense tensor data length does not match shape");
    }

    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] std::span<const double> data() const { return data_; }
    [[nodiscard]] std::span<double> data() { return data_; }

    [[nodiscard]] double at(std::span<const std::size_t> index) const {
        check_index(shape_, index);
        return data_[flat_offset(shape_, index)];
    }

    double& at(std::span<const std::size_t> index) {
        check_index(shape_, index);
        return data_[flat_offset(shape_, index)];
    }

private:
    Shape shape_;
    std::vector<double> data_;
};

}  // namespace tsurr
