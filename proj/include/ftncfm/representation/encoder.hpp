#pragma once

// h = Phi(V, L, A): per-object embeddings mean-pooled over four slots, an
// instruction code and an action code, fused by one linear + tanh layer.

#include <algorithm>
#include <random>
#include <span>
#include <tuple>
#include <vector>

#include "ftncfm/diffcore/mlp.hpp"
#include "ftncfm/diffcore/params.hpp"
#include "ftncfm/toyworld/world.hpp"

namespace ftncfm::rep {

using diff::Index;
using diff::Matrix;
using diff::ParamVector;
using diff::Tape;
using diff::Var;

inline constexpr Index kSlots = static_cast<Index>(toy::kMaxObjects);
inline constexpr Index kCategoryCols = toy::kNumCategories;
inline constexpr Index kSizeCol = 8; // size / 4
inline constexpr Index kXCol = 9;
inline constexpr Index kYCol = 10;
inline constexpr Index kKeyCol = 11;
inline constexpr Index kPresentCol = 12;
inline constexpr Index kKeyXCol = 13; // key * x
inline constexpr Index kKeyYCol = 14; // key * y
inline constexpr Index kObjectDim = 15;

inline constexpr Index kVerbOffset = 0;
inline constexpr Index kTargetOffset = toy::kNumVerbs;                   // 5
inline constexpr Index kQualifierOffset = kTargetOffset + toy::kNumCategories; // 13, slot 0 means "none"
inline constexpr Index kInstrDim = kQualifierOffset + toy::kNumQualifiers + 1; // 18

inline constexpr Index kObjectCode = 16;
inline constexpr Index kInstrCode = 8;
inline constexpr Index kActionCode = 8;
inline constexpr Index kDModel = 32;

inline Index action_dim(std::size_t horizon) { return static_cast<Index>(2 * horizon); }

// Network inputs for one sample: a 4 x 15 slot matrix (empty slots are zero
// rows), an 18-wide instruction row and the flattened trajectory.
struct ModelInput {
    Matrix slots;
    Matrix instr;
    Matrix action;
};

struct InputBatch {
    Matrix slots;  // 4B x 15
    Matrix instr;  // B x 18
    Matrix action; // B x 2T
    Index size() const { return instr.rows(); }
};

inline Matrix slot_matrix(std::vector<toy::SceneObject> scene) {
    require(scene.size() <= toy::kMaxObjects, "scene has more objects than slots");
    // Canonical order so that reordering the scene cannot change a single bit of h.
    std::sort(scene.begin(), scene.end(), [](const toy::SceneObject& a, const toy::SceneObject& b) {
        return std::tie(a.category, a.position.x, a.position.y, a.size, a.key) <
               std::tie(b.category, b.position.x, b.position.y, b.size, b.key);
    });
    Matrix m = Matrix::Zero(kSlots, kObjectDim);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const auto& o = scene[i];
        const auto r = static_cast<Index>(i);
        m(r, static_cast<Index>(o.category)) = 1.0;
        m(r, kSizeCol) = o.size / 4.0;
        m(r, kXCol) = o.position.x;
        m(r, kYCol) = o.position.y;
        m(r, kKeyCol) = o.key ? 1.0 : 0.0;
        m(r, kPresentCol) = 1.0;
        m(r, kKeyXCol) = m(r, kKeyCol) * o.position.x;
        m(r, kKeyYCol) = m(r, kKeyCol) * o.position.y;
    }
    return m;
}

inline Matrix instruction_row(const toy::Instruction& ins) {
    Matrix m = Matrix::Zero(1, kInstrDim);
    m(0, kVerbOffset + static_cast<Index>(ins.verb)) = 1.0;
    m(0, kTargetOffset + static_cast<Index>(ins.target)) = 1.0;
    m(0, kQualifierOffset + (ins.qualifier ? 1 + static_cast<Index>(*ins.qualifier) : 0)) = 1.0;
    return m;
}

inline Matrix action_row(const toy::Trajectory& t) {
    Matrix m(1, static_cast<Index>(2 * t.size()));
    for (std::size_t k = 0; k < t.size(); ++k) {
        m(0, static_cast<Index>(2 * k)) = t[k].x;
        m(0, static_cast<Index>(2 * k + 1)) = t[k].y;
    }
    return m;
}

inline toy::Trajectory trajectory_from_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
    require(row.size() % 2 == 0, "action row has odd width");
    toy::Trajectory t(static_cast<std::size_t>(row.size() / 2));
    for (std::size_t k = 0; k < t.size(); ++k)
        t[k] = {toy::clamp_unit(row[static_cast<Index>(2 * k)]), toy::clamp_unit(row[static_cast<Index>(2 * k + 1)])};
    return t;
}

inline ModelInput model_input(const toy::Sample& s) {
    return {slot_matrix(s.scene), instruction_row(s.instruction), action_row(s.trajectory)};
}

inline std::vector<ModelInput> model_inputs(std::span<const toy::Sample> data) {
    std::vector<ModelInput> out;
    out.reserve(data.size());
    for (const auto& s : data) out.push_back(model_input(s));
    return out;
}

inline InputBatch stack(std::span<const ModelInput> data, std::span<const std::size_t> idx) {
    require(!idx.empty(), "stack: no samples selected");
    const ModelInput& first = data[idx.front()];
    const auto b = static_cast<Index>(idx.size());
    InputBatch out{Matrix(kSlots * b, kObjectDim), Matrix(b, kInstrDim), Matrix(b, first.action.cols())};
    for (Index r = 0; r < b; ++r) {
        const ModelInput& in = data[idx[static_cast<std::size_t>(r)]];
        require(in.action.cols() == first.action.cols(), "stack: trajectories have different lengths");
        out.slots.middleRows(r * kSlots, kSlots) = in.slots;
        out.instr.row(r) = in.instr;
        out.action.row(r) = in.action;
    }
    return out;
}

inline InputBatch stack_all(std::span<const ModelInput> data) {
    std::vector<std::size_t> idx(data.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return stack(data, idx);
}

// B x 4B matrix averaging each run of four slot rows.
inline Matrix pooling_matrix(Index batch) {
    Matrix p = Matrix::Zero(batch, kSlots * batch);
    for (Index b = 0; b < batch; ++b) p.block(b, b * kSlots, 1, kSlots).setConstant(1.0 / static_cast<double>(kSlots));
    return p;
}

class EncoderStack {
public:
    EncoderStack() = default;

    // Registers "enc.*" parameters; call first so they lead the layout.
    EncoderStack(diff::ParamLayout::Builder& builder, std::size_t horizon = toy::kDefaultHorizon)
        : first_entry_(builder.next_index()), action_width_(action_dim(horizon)),
          object_("enc.obj", kObjectDim,
                  {diff::linear(24), diff::tanh_layer(), diff::linear(kObjectCode), diff::tanh_layer()}, builder),
          instr_("enc.instr", kInstrDim, {diff::linear(kInstrCode), diff::tanh_layer()}, builder),
          action_("enc.act", action_width_, {diff::linear(kActionCode), diff::tanh_layer()}, builder),
          fuse_("enc.fuse", kObjectCode + kInstrCode + kActionCode, {diff::linear(kDModel), diff::tanh_layer()},
                builder),
          entry_count_(builder.next_index() - first_entry_) {}

    std::size_t first_entry() const noexcept { return first_entry_; }
    std::size_t entry_count() const noexcept { return entry_count_; }
    Index action_width() const noexcept { return action_width_; }

    Var scene_code(std::span<const Var> params, const Var& slots) const {
        require(slots.rows() % kSlots == 0, "slot rows must come in groups of four");
        Var per_object = object_.forward(params, slots);
        const Index b = slots.rows() / kSlots;
        return diff::matmul(slots.tape().constant(pooling_matrix(b)), per_object);
    }

    // slots: 4B x 15, instr: B x 18, action: B x 2T  ->  B x d_model
    Var forward(std::span<const Var> params, const Var& slots, const Var& instr, const Var& action) const {
        Var s = scene_code(params, slots);
        Var l = instr_.forward(params, instr);
        Var a = action_.forward(params, action);
        return fuse_.forward(params, diff::concat_cols(diff::concat_cols(s, l), a));
    }

    template <class Rng>
    void initialize(ParamVector& params, Rng& rng) const {
        object_.initialize(params, rng);
        instr_.initialize(params, rng);
        action_.initialize(params, rng);
        fuse_.initialize(params, rng);
    }

private:
    std::size_t first_entry_ = 0;
    Index action_width_ = 0;
    diff::Mlp object_, instr_, action_, fuse_;
    std::size_t entry_count_ = 0;
};

// Frozen encoder parameters together with the stack that reads them.
struct Encoders {
    EncoderStack stack;
    diff::LayoutPtr layout;
    ParamVector params;

    explicit Encoders(std::size_t horizon = toy::kDefaultHorizon) {
        diff::ParamLayout::Builder b;
        stack = EncoderStack(b, horizon);
        layout = b.build();
        params = ParamVector(layout);
    }

    template <class Rng>
    void initialize(Rng& rng) {
        stack.initialize(params, rng);
    }

    // Copies the leading encoder entries out of a larger parameter vector.
    void adopt(const ParamVector& full) {
        const auto& entries = full.layout()->entries();
        require(entries.size() >= layout->count(), "adopt: parameter vector is too short");
        for (std::size_t i = 0; i < layout->count(); ++i)
            require(entries[i] == layout->entry(i), "adopt: encoder entries do not lead the layout");
        params.values() = full.values().head(layout->size());
    }
};

inline Matrix featurize_batch(const Encoders& enc, const InputBatch& batch) {
    Tape tape;
    auto p = diff::bind(tape, enc.params, false);
    return enc.stack.forward(p, tape.constant(batch.slots), tape.constant(batch.instr), tape.constant(batch.action))
        .value();
}

inline Eigen::RowVectorXd featurize(const Encoders& enc, const toy::Sample& sample) {
    ModelInput in = model_input(sample);
    InputBatch b{in.slots, in.instr, in.action};
    return featurize_batch(enc, b).row(0);
}

inline Matrix featurize_all(const Encoders& enc, std::span<const ModelInput> inputs, std::size_t chunk = 256) {
    Matrix out(static_cast<Index>(inputs.size()), kDModel);
    for (std::size_t start = 0; start < inputs.size(); start += chunk) {
        const std::size_t n = std::min(chunk, inputs.size() - start);
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = start + i;
        out.middleRows(static_cast<Index>(start), static_cast<Index>(n)) = featurize_batch(enc, stack(inputs, idx));
    }
    return out;
}

} // namespace ftncfm::rep
