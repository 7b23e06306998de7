#pragma once

// Encoders plus a trajectory head, trained by mean squared error on the
// flattened trajectory. The head reads Phi(V, L, 0): the action code is
// computed from an all-zero trajectory so the target never leaks into the
// prediction.

#include <random>
#include <span>
#include <vector>

#include "ftncfm/diffcore/objective.hpp"
#include "ftncfm/representation/encoder.hpp"

namespace ftncfm::rep {

class VlaPolicy {
public:
    using Example = ModelInput;
    using Batch = InputBatch;

    explicit VlaPolicy(std::size_t horizon = toy::kDefaultHorizon, Index hidden = 32) : horizon_(horizon) {
        diff::ParamLayout::Builder b;
        encoders_ = EncoderStack(b, horizon);
        head_ = diff::Mlp("policy", kDModel, {diff::linear(hidden), diff::tanh_layer(), diff::linear(action_dim(horizon))},
                          b);
        layout_ = b.build();
    }

    const diff::LayoutPtr& layout() const noexcept { return layout_; }
    const EncoderStack& encoders() const noexcept { return encoders_; }
    std::size_t horizon() const noexcept { return horizon_; }

    Var predict(Tape& tape, std::span<const Var> params, const Matrix& slots, const Matrix& instr) const {
        Var zero_action = tape.constant(Matrix::Zero(instr.rows(), action_dim(horizon_)));
        Var h = encoders_.forward(params, tape.constant(slots), tape.constant(instr), zero_action);
        return head_.forward(params, h);
    }

    Var loss(Tape& tape, std::span<const Var> params, const Batch& batch) const {
        require(batch.size() > 0, "loss: batch is empty");
        return diff::mse(predict(tape, params, batch.slots, batch.instr), batch.action);
    }

    Batch collate(std::span<const Example> data, std::span<const std::size_t> idx) const { return stack(data, idx); }

    Matrix predict(const ParamVector& params, const InputBatch& batch) const {
        Tape tape;
        auto p = diff::bind(tape, params, false);
        return predict(tape, p, batch.slots, batch.instr).value();
    }

    template <class Rng>
    ParamVector initial_params(Rng& rng) const {
        ParamVector p(layout_);
        encoders_.initialize(p, rng);
        head_.initialize(p, rng);
        return p;
    }

    Encoders extract_encoders(const ParamVector& params) const {
        Encoders e(horizon_);
        e.adopt(params);
        return e;
    }

private:
    std::size_t horizon_;
    EncoderStack encoders_;
    diff::Mlp head_;
    diff::LayoutPtr layout_;
};

} // namespace ftncfm::rep
