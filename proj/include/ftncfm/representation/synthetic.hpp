#pragma once

// Continuous stand-ins for samples. Every field is an unconstrained logit;
// relax() maps them onto the same input space real samples occupy:
//   category    softmax over the 8 category columns of each slot
//   size, x, y  sigmoid
//   key         softmax of the key column over the 4 slots of a sample
//   present     sigmoid, multiplying the whole slot row
//   key * x/y   products of the relaxed key weight and position
//   instruction softmax within each of the verb / target / qualifier groups
//   action      tanh, so waypoints stay inside [-1, 1]^2

#include <cmath>
#include <vector>

#include "ftncfm/representation/encoder.hpp"

namespace ftncfm::rep {

// Learnable fields per slot: everything but the two key-position products.
inline constexpr Index kSceneFields = 13;

struct SyntheticSample {
    Matrix scene;  // 4 x 13 logits
    Matrix instr;  // 1 x 18 logits
    Matrix action; // 1 x 2T logits
    bool operator==(const SyntheticSample&) const = default;
};

struct SyntheticBatch {
    Matrix scene;  // 4M x 13
    Matrix instr;  // M x 18
    Matrix action; // M x 2T logits
    Index size() const { return instr.rows(); }
};

inline SyntheticBatch stack(std::span<const SyntheticSample> syn) {
    require(!syn.empty(), "stack: no synthetic samples");
    const auto m = static_cast<Index>(syn.size());
    SyntheticBatch b{Matrix(kSlots * m, kSceneFields), Matrix(m, kInstrDim), Matrix(m, syn[0].action.cols())};
    for (Index i = 0; i < m; ++i) {
        const auto& s = syn[static_cast<std::size_t>(i)];
        require(s.scene.rows() == kSlots && s.scene.cols() == kSceneFields && s.instr.cols() == kInstrDim &&
                    s.action.cols() == b.action.cols(),
                "synthetic sample has the wrong shape");
        b.scene.middleRows(i * kSlots, kSlots) = s.scene;
        b.instr.row(i) = s.instr;
        b.action.row(i) = s.action;
    }
    return b;
}

inline std::vector<SyntheticSample> unstack(const SyntheticBatch& b) {
    std::vector<SyntheticSample> out;
    for (Index i = 0; i < b.size(); ++i)
        out.push_back({b.scene.middleRows(i * kSlots, kSlots), b.instr.row(i), b.action.row(i)});
    return out;
}

inline constexpr double kSaturatedLogit = 40.0;

inline double action_logit(double a) {
    if (a <= -1.0) return -kSaturatedLogit;
    if (a >= 1.0) return kSaturatedLogit;
    return std::clamp(std::atanh(a), -kSaturatedLogit, kSaturatedLogit);
}

inline double logit(double p) {
    if (p <= 0.0) return -kSaturatedLogit;
    if (p >= 1.0) return kSaturatedLogit;
    return std::clamp(std::log(p / (1.0 - p)), -kSaturatedLogit, kSaturatedLogit);
}

// Logits whose relaxation reproduces the sample's inputs.
inline SyntheticSample from_sample(const toy::Sample& sample) {
    const ModelInput in = model_input(sample);
    SyntheticSample s{Matrix::Constant(kSlots, kSceneFields, -kSaturatedLogit),
                      Matrix::Constant(1, kInstrDim, -kSaturatedLogit), in.action.unaryExpr(&action_logit)};
    for (Index r = 0; r < kSlots; ++r) {
        if (in.slots(r, kPresentCol) == 0.0) continue;
        for (Index c = 0; c < kCategoryCols; ++c)
            s.scene(r, c) = in.slots(r, c) > 0.5 ? kSaturatedLogit : -kSaturatedLogit;
        s.scene(r, kSizeCol) = logit(in.slots(r, kSizeCol));
        s.scene(r, kXCol) = logit(in.slots(r, kXCol));
        s.scene(r, kYCol) = logit(in.slots(r, kYCol));
        s.scene(r, kKeyCol) = in.slots(r, kKeyCol) > 0.5 ? kSaturatedLogit : -kSaturatedLogit;
        s.scene(r, kPresentCol) = kSaturatedLogit;
    }
    for (Index c = 0; c < kInstrDim; ++c)
        if (in.instr(0, c) > 0.5) s.instr(0, c) = kSaturatedLogit;
    return s;
}

struct Relaxed {
    Var slots;  // 4M x 15
    Var instr;  // M x 18
    Var action; // M x 2T
};

// Sums each run of four rows (4M x k -> M x k) when left-multiplied.
inline Matrix group_sum_matrix(Index m) {
    Matrix p = Matrix::Zero(m, kSlots * m);
    for (Index b = 0; b < m; ++b) p.block(b, b * kSlots, 1, kSlots).setOnes();
    return p;
}

inline Relaxed relax(const Var& scene, const Var& instr, const Var& action) {
    using namespace diff;
    Tape& tape = scene.tape();
    const Index rows = scene.rows();
    require(rows % kSlots == 0 && scene.cols() == kSceneFields, "relax: scene logits must be 4M x 13");
    const Index m = rows / kSlots;

    Var cats = softmax_rows(slice_cols(scene, 0, kCategoryCols));
    Var geom = sigmoid(slice_cols(scene, kSizeCol, 3));

    Var key_logits = slice_cols(scene, kKeyCol, 1);
    Matrix shift(rows, 1);
    for (Index b = 0; b < m; ++b)
        shift.middleRows(b * kSlots, kSlots).setConstant(key_logits.value().middleRows(b * kSlots, kSlots).maxCoeff());
    Var e = exp(sub(key_logits, tape.constant(shift)));
    const Matrix g = group_sum_matrix(m);
    Var denom = matmul(tape.constant(g.transpose()), matmul(tape.constant(g), e));
    Var key = mul(e, pow(denom, -1.0));

    Var present = sigmoid(slice_cols(scene, kPresentCol, 1));
    Var key_pos = mul_col(slice_cols(geom, 1, 2), key);
    Var row = concat_cols(concat_cols(concat_cols(concat_cols(cats, geom), key), tape.constant(Matrix::Ones(rows, 1))),
                          key_pos);
    Var slots = mul_col(row, present);

    Var verb = softmax_rows(slice_cols(instr, kVerbOffset, toy::kNumVerbs));
    Var target = softmax_rows(slice_cols(instr, kTargetOffset, toy::kNumCategories));
    Var qual = softmax_rows(slice_cols(instr, kQualifierOffset, toy::kNumQualifiers + 1));
    return {slots, concat_cols(concat_cols(verb, target), qual), tanh(action)};
}

// Same path as featurize, on relaxed inputs. `params` holds the encoder
// leaves; scene / instr / action may be tape variables.
inline Var featurize_synthetic(const EncoderStack& stack, std::span<const Var> params, const Var& scene,
                               const Var& instr, const Var& action) {
    Relaxed r = relax(scene, instr, action);
    return stack.forward(params, r.slots, r.instr, r.action);
}

inline Matrix featurize_synthetic(const Encoders& enc, const SyntheticBatch& b) {
    Tape tape;
    auto p = diff::bind(tape, enc.params, false);
    return featurize_synthetic(enc.stack, p, tape.constant(b.scene), tape.constant(b.instr), tape.constant(b.action))
        .value();
}

// The relaxed inputs as plain matrices, for training on synthetic data.
inline InputBatch relaxed_inputs(const SyntheticBatch& b) {
    Tape tape;
    Relaxed r = relax(tape.constant(b.scene), tape.constant(b.instr), tape.constant(b.action));
    return {r.slots.value(), r.instr.value(), r.action.value()};
}

inline std::vector<ModelInput> relaxed_inputs(std::span<const SyntheticSample> syn) {
    std::vector<ModelInput> out;
    if (syn.empty()) return out;
    const InputBatch b = relaxed_inputs(stack(syn));
    for (Index i = 0; i < b.size(); ++i)
        out.push_back({b.slots.middleRows(i * kSlots, kSlots), b.instr.row(i), b.action.row(i)});
    return out;
}

namespace detail {
inline Index argmax(const Eigen::Ref<const Eigen::RowVectorXd>& v) {
    Index best = 0;
    for (Index i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}
inline double sigmoid(double z) { return 0.5 + 0.5 * std::tanh(0.5 * z); }
} // namespace detail

// Nearest symbolic sample: argmax per vocabulary group, present slots kept,
// continuous size and position, exactly one key object.
inline toy::Sample decode(const SyntheticSample& s, std::uint64_t id) {
    toy::Sample out;
    out.id = id;
    std::vector<Index> rows;
    for (Index r = 0; r < kSlots; ++r)
        if (detail::sigmoid(s.scene(r, kPresentCol)) > 0.5) rows.push_back(r);
    if (rows.empty()) rows.push_back(detail::argmax(s.scene.col(kPresentCol).transpose()));
    Index key_row = rows.front();
    for (Index r : rows)
        if (s.scene(r, kKeyCol) > s.scene(key_row, kKeyCol)) key_row = r;
    for (Index r : rows) {
        toy::SceneObject o;
        o.category = static_cast<toy::Category>(detail::argmax(s.scene.row(r).head(kCategoryCols)));
        o.size = std::clamp(4.0 * detail::sigmoid(s.scene(r, kSizeCol)), 1e-6, 4.0);
        o.position = {detail::sigmoid(s.scene(r, kXCol)), detail::sigmoid(s.scene(r, kYCol))};
        o.key = (r == key_row);
        out.scene.push_back(o);
    }
    out.instruction.verb = static_cast<toy::Verb>(detail::argmax(s.instr.row(0).segment(kVerbOffset, toy::kNumVerbs)));
    out.instruction.target =
        static_cast<toy::Category>(detail::argmax(s.instr.row(0).segment(kTargetOffset, toy::kNumCategories)));
    const Index q = detail::argmax(s.instr.row(0).segment(kQualifierOffset, toy::kNumQualifiers + 1));
    if (q > 0) out.instruction.qualifier = static_cast<toy::Qualifier>(q - 1);
    out.trajectory = trajectory_from_row(s.action.row(0).array().tanh().matrix());
    return out;
}

} // namespace ftncfm::rep
