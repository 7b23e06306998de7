#pragma once

// Loss, gradient, Hessian-vector product and SGD training for any model that
// can write its scalar loss onto a tape.

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "ftncfm/diffcore/mlp.hpp"
#include "ftncfm/diffcore/params.hpp"
#include "ftncfm/diffcore/tape.hpp"

namespace ftncfm::diff {

template <class M>
concept DifferentiableModel = requires(const M& m, Tape& tape, std::span<const Var> params,
                                       const typename M::Batch& batch, std::span<const typename M::Example> data,
                                       std::span<const std::size_t> indices) {
    typename M::Example;
    typename M::Batch;
    { m.layout() } -> std::convertible_to<LayoutPtr>;
    { m.loss(tape, params, batch) } -> std::same_as<Var>;
    { m.collate(data, indices) } -> std::same_as<typename M::Batch>;
};

struct Schedule {
    std::size_t steps = 0;
    double step_size = 0.05;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
};

namespace detail {
template <DifferentiableModel M>
void check_layout(const M& model, const ParamVector& params, const char* what) {
    require(params.layout() != nullptr && *params.layout() == *model.layout(),
            std::string(what) + ": parameter layout does not match the model");
}
} // namespace detail

template <DifferentiableModel M>
typename M::Batch full_batch(const M& model, std::span<const typename M::Example> data) {
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return model.collate(data, idx);
}

template <DifferentiableModel M>
double loss(const M& model, const ParamVector& params, const typename M::Batch& batch) {
    detail::check_layout(model, params, "loss");
    Tape tape;
    auto p = bind(tape, params, false);
    return model.loss(tape, p, batch).scalar();
}

struct ValueAndGradient {
    double value = 0.0;
    ParamVector gradient;
};

template <DifferentiableModel M>
ValueAndGradient value_and_gradient(const M& model, const ParamVector& params, const typename M::Batch& batch) {
    detail::check_layout(model, params, "gradient");
    Tape tape;
    auto p = bind(tape, params, true);
    Var l = model.loss(tape, p, batch);
    auto g = tape.grad(l, p);
    return {l.scalar(), flatten(params.layout(), g)};
}

template <DifferentiableModel M>
ParamVector gradient(const M& model, const ParamVector& params, const typename M::Batch& batch) {
    return value_and_gradient(model, params, batch).gradient;
}

// H v by differentiating <grad L, v> a second time on the same tape.
template <DifferentiableModel M>
ParamVector hvp(const M& model, const ParamVector& params, const typename M::Batch& batch, const ParamVector& v) {
    detail::check_layout(model, params, "hvp");
    require(v.same_layout(params), "hvp: direction has a different layout");
    Tape tape;
    auto p = bind(tape, params, true);
    Var l = model.loss(tape, p, batch);
    auto g = tape.grad(l, p);
    Var inner;
    for (std::size_t k = 0; k < g.size(); ++k) {
        Var term = dot(g[k], tape.constant(Matrix(v.block(k))));
        inner = inner.valid() ? add(inner, term) : term;
    }
    auto hv = tape.grad(inner, p);
    return flatten(params.layout(), hv);
}

// Plain minibatch SGD. Minibatches walk a fresh seeded permutation each epoch;
// when batch_size >= |data| every step is full-batch.
template <DifferentiableModel M>
ParamVector train(const M& model, ParamVector params, std::span<const typename M::Example> data,
                  const Schedule& schedule) {
    detail::check_layout(model, params, "train");
    if (schedule.steps == 0) return params;
    require(!data.empty(), "train: dataset is empty");
    require(schedule.batch_size > 0, "train: batch size must be positive");

    std::mt19937_64 rng(schedule.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t bs = std::min(schedule.batch_size, data.size());
    std::size_t cursor = data.size(); // forces a shuffle on the first step

    for (std::size_t step = 0; step < schedule.steps; ++step) {
        std::span<const std::size_t> idx;
        if (bs == data.size()) {
            idx = order;
        } else {
            if (cursor + bs > order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            idx = std::span<const std::size_t>(order).subspan(cursor, bs);
            cursor += bs;
        }
        ValueAndGradient vg;
        try {
            vg = value_and_gradient(model, params, model.collate(data, idx));
        } catch (const NumericError& e) {
            throw TrainingError(std::string("training diverged: ") + e.what(), step);
        }
        if (!std::isfinite(vg.value) || !vg.gradient.all_finite()) throw TrainingError("loss became non-finite", step);
        params.axpy(-schedule.step_size, vg.gradient);
        if (!params.all_finite()) throw TrainingError("parameters became non-finite", step);
    }
    return params;
}

// ---- a plain MLP regressor ---------------------------------------------------

struct LabeledExample {
    Eigen::RowVectorXd input;
    Eigen::RowVectorXd target;
};

struct LabeledBatch {
    Matrix inputs;
    Matrix targets;
};

// Mlp + mean squared error.
class MlpRegressor {
public:
    using Example = LabeledExample;
    using Batch = LabeledBatch;

    MlpRegressor(Index input_dim, std::vector<LayerSpec> layers, std::string name = "mlp") {
        ParamLayout::Builder builder;
        net_ = Mlp(std::move(name), input_dim, std::move(layers), builder);
        layout_ = builder.build();
    }

    const LayoutPtr& layout() const noexcept { return layout_; }
    const Mlp& net() const noexcept { return net_; }

    Var predict(Tape& tape, std::span<const Var> params, const Matrix& inputs) const {
        return net_.forward(params, tape.constant(inputs));
    }

    Var loss(Tape& tape, std::span<const Var> params, const Batch& batch) const {
        require(batch.inputs.rows() > 0, "loss: batch is empty");
        return mse(predict(tape, params, batch.inputs), batch.targets);
    }

    Batch collate(std::span<const Example> data, std::span<const std::size_t> indices) const {
        require(!indices.empty(), "collate: no examples selected");
        const auto& first = data[indices.front()];
        Batch b{Matrix(indices.size(), first.input.size()), Matrix(indices.size(), first.target.size())};
        for (std::size_t r = 0; r < indices.size(); ++r) {
            const auto& ex = data[indices[r]];
            require(ex.input.size() == first.input.size() && ex.target.size() == first.target.size(),
                    "collate: ragged examples");
            b.inputs.row(static_cast<Index>(r)) = ex.input;
            b.targets.row(static_cast<Index>(r)) = ex.target;
        }
        return b;
    }

    template <class Rng>
    ParamVector initial_params(Rng& rng) const {
        ParamVector p(layout_);
        net_.initialize(p, rng);
        return p;
    }

private:
    Mlp net_;
    LayoutPtr layout_;
};

} // namespace ftncfm::diff
