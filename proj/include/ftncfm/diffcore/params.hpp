#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ftncfm/common/errors.hpp"
#include "ftncfm/diffcore/tape.hpp"

namespace ftncfm::diff {

struct ParamEntry {
    std::string name;
    Index rows = 0;
    Index cols = 0;
    Index offset = 0;

    Index size() const noexcept { return rows * cols; }
    bool operator==(const ParamEntry&) const = default;
};

// Maps a flat parameter vector onto named matrix blocks. Immutable once built;
// models share it through shared_ptr<const ParamLayout>.
class ParamLayout {
public:
    const std::vector<ParamEntry>& entries() const noexcept { return entries_; }
    Index size() const noexcept { return size_; }
    std::size_t count() const noexcept { return entries_.size(); }
    const ParamEntry& entry(std::size_t i) const { return entries_.at(i); }

    std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < entries_.size(); ++i)
            if (entries_[i].name == name) return i;
        throw ContractViolation("no parameter named '" + name + "'");
    }

    bool operator==(const ParamLayout& other) const { return entries_ == other.entries_; }

    class Builder {
    public:
        std::size_t add(std::string name, Index rows, Index cols) {
            require(rows > 0 && cols > 0, "parameter '" + name + "' must have a positive shape");
            for (const auto& e : entries_)
                require(e.name != name, "duplicate parameter name '" + name + "'");
            entries_.push_back({std::move(name), rows, cols, size_});
            size_ += rows * cols;
            return entries_.size() - 1;
        }

        std::size_t next_index() const noexcept { return entries_.size(); }

        std::shared_ptr<const ParamLayout> build() const {
            auto layout = std::make_shared<ParamLayout>();
            layout->entries_ = entries_;
            layout->size_ = size_;
            return layout;
        }

    private:
        std::vector<ParamEntry> entries_;
        Index size_ = 0;
    };

private:
    std::vector<ParamEntry> entries_;
    Index size_ = 0;
};

using LayoutPtr = std::shared_ptr<const ParamLayout>;

// Flat parameter values paired with their layout. Also used for gradients,
// Hessian-vector products and any other vector living in parameter space.
class ParamVector {
public:
    ParamVector() = default;
    explicit ParamVector(LayoutPtr layout)
        : layout_(std::move(layout)), values_(Eigen::VectorXd::Zero(layout_->size())) {}
    ParamVector(LayoutPtr layout, Eigen::VectorXd values) : layout_(std::move(layout)), values_(std::move(values)) {
        require(values_.size() == layout_->size(), "ParamVector: value count does not match layout");
    }

    const LayoutPtr& layout() const noexcept { return layout_; }
    const Eigen::VectorXd& values() const noexcept { return values_; }
    Eigen::VectorXd& values() noexcept { return values_; }
    Index size() const noexcept { return values_.size(); }

    double operator[](Index i) const { return values_[i]; }
    double& operator[](Index i) { return values_[i]; }

    // Row-major view of one named block.
    Eigen::Map<const Matrix> block(std::size_t entry) const {
        const auto& e = layout_->entry(entry);
        return {values_.data() + e.offset, e.rows, e.cols};
    }
    Eigen::Map<Matrix> block(std::size_t entry) {
        const auto& e = layout_->entry(entry);
        return {values_.data() + e.offset, e.rows, e.cols};
    }
    Eigen::Map<const Matrix> block(const std::string& name) const { return block(layout_->index_of(name)); }
    Eigen::Map<Matrix> block(const std::string& name) { return block(layout_->index_of(name)); }

    bool same_layout(const ParamVector& other) const {
        return layout_ == other.layout_ || (layout_ && other.layout_ && *layout_ == *other.layout_);
    }

    bool all_finite() const { return values_.allFinite(); }

    double dot(const ParamVector& other) const {
        require(same_layout(other), "dot: layouts differ");
        return values_.dot(other.values_);
    }
    double norm() const { return values_.norm(); }

    ParamVector& operator+=(const ParamVector& o) {
        require(same_layout(o), "+=: layouts differ");
        values_ += o.values_;
        return *this;
    }
    ParamVector& operator-=(const ParamVector& o) {
        require(same_layout(o), "-=: layouts differ");
        values_ -= o.values_;
        return *this;
    }
    ParamVector& operator*=(double c) {
        values_ *= c;
        return *this;
    }
    // this += c * o
    ParamVector& axpy(double c, const ParamVector& o) {
        require(same_layout(o), "axpy: layouts differ");
        values_.noalias() += c * o.values_;
        return *this;
    }

    friend ParamVector operator+(ParamVector a, const ParamVector& b) { return a += b; }
    friend ParamVector operator-(ParamVector a, const ParamVector& b) { return a -= b; }
    friend ParamVector operator*(double c, ParamVector a) { return a *= c; }

    ParamVector zeros_like() const { return ParamVector(layout_); }

    bool operator==(const ParamVector& o) const { return same_layout(o) && values_ == o.values_; }

private:
    LayoutPtr layout_;
    Eigen::VectorXd values_;
};

// One tape leaf per layout entry.
inline std::vector<Var> bind(Tape& tape, const ParamVector& params, bool requires_grad) {
    std::vector<Var> out;
    out.reserve(params.layout()->count());
    for (std::size_t i = 0; i < params.layout()->count(); ++i) {
        Matrix m = params.block(i);
        out.push_back(requires_grad ? tape.variable(std::move(m)) : tape.constant(std::move(m)));
    }
    return out;
}

// Flattens per-entry tape values back into a ParamVector with `layout`.
inline ParamVector flatten(const LayoutPtr& layout, std::span<const Var> blocks) {
    require(blocks.size() == layout->count(), "flatten: block count does not match layout");
    ParamVector out(layout);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& e = layout->entry(i);
        require(blocks[i].rows() == e.rows && blocks[i].cols() == e.cols,
                "flatten: block '" + e.name + "' has the wrong shape");
        out.block(i) = blocks[i].value();
    }
    return out;
}

} // namespace ftncfm::diff
