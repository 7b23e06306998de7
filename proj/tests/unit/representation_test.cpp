#include <catch_amalgamated.hpp>

#include <algorithm>

#include "ftncfm/representation/policy.hpp"
#include "ftncfm/representation/synthetic.hpp"
#include "support.hpp"

using namespace ftncfm;
using namespace ftncfm::rep;

namespace {

Encoders random_encoders(std::uint64_t seed) {
    Encoders e;
    std::mt19937_64 rng(seed);
    e.initialize(rng);
    return e;
}

const std::vector<toy::Sample>& samples() {
    static const auto data = toy::generate_dataset({40, 0.2, 0.3, 17});
    return data;
}

// sum(c * h) for a fixed random c, as a function of one input block.
struct Projection {
    const Encoders& enc;
    Matrix c;

    double value(const InputBatch& b) const { return (featurize_batch(enc, b).array() * c.array()).sum(); }

    // Tape gradient with respect to block `which` (0 slots, 1 instr, 2 action).
    Matrix gradient(const InputBatch& b, int which) const {
        Tape tape;
        auto p = diff::bind(tape, enc.params, false);
        Var s = which == 0 ? tape.variable(b.slots) : tape.constant(b.slots);
        Var l = which == 1 ? tape.variable(b.instr) : tape.constant(b.instr);
        Var a = which == 2 ? tape.variable(b.action) : tape.constant(b.action);
        Var y = diff::sum(diff::mul(enc.stack.forward(p, s, l, a), tape.constant(c)));
        const Var wrt[] = {which == 0 ? s : which == 1 ? l : a};
        return tape.grad(y, wrt)[0].value();
    }
};

Matrix& block_of(InputBatch& b, int which) { return which == 0 ? b.slots : which == 1 ? b.instr : b.action; }

Matrix central_difference(const std::function<double(const Matrix&)>& f, Matrix x, double h = 1e-6) {
    Matrix g(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i)
        for (Index j = 0; j < x.cols(); ++j) {
            const double orig = x(i, j);
            x(i, j) = orig + h;
            const double fp = f(x);
            x(i, j) = orig - h;
            const double fm = f(x);
            x(i, j) = orig;
            g(i, j) = (fp - fm) / (2 * h);
        }
    return g;
}

double rel_error(const Matrix& a, const Matrix& b) {
    return testing::max_rel_error(a.reshaped(), b.reshaped());
}

} // namespace

TEST_CASE("slot layout of a sample", "[encode]") {
    toy::Sample s;
    s.scene = {{toy::Category::Box, 2.0, {0.25, 0.75}, true}};
    s.instruction = {toy::Verb::Push, toy::Category::Box, toy::Qualifier::Far};
    s.trajectory = toy::expert_trajectory(s.scene, s.instruction);
    const ModelInput in = model_input(s);
    REQUIRE(in.slots.rows() == kSlots);
    REQUIRE(in.slots.cols() == kObjectDim);
    CHECK(in.slots(0, static_cast<Index>(toy::Category::Box)) == 1.0);
    CHECK(in.slots(0, kSizeCol) == 0.5);
    CHECK(in.slots(0, kXCol) == 0.25);
    CHECK(in.slots(0, kYCol) == 0.75);
    CHECK(in.slots(0, kKeyCol) == 1.0);
    CHECK(in.slots(0, kPresentCol) == 1.0);
    CHECK(in.slots(0, kKeyXCol) == 0.25);
    CHECK(in.slots(0, kKeyYCol) == 0.75);
    CHECK(in.slots.bottomRows(3).isZero(0.0));
    CHECK(in.instr.sum() == 3.0);
    CHECK(in.instr(0, kVerbOffset + 1) == 1.0);
    CHECK(in.instr(0, kQualifierOffset + 1 + static_cast<Index>(toy::Qualifier::Far)) == 1.0);
    CHECK(in.action.cols() == 16);
    CHECK(trajectory_from_row(in.action.row(0)) == s.trajectory);
}

TEST_CASE("scene order cannot change h", "[encode]") {
    const Encoders enc = random_encoders(1);
    std::mt19937_64 rng(2);
    for (const auto& s : samples()) {
        toy::Sample shuffled = s;
        std::shuffle(shuffled.scene.begin(), shuffled.scene.end(), rng);
        const auto a = featurize(enc, s), b = featurize(enc, shuffled);
        CHECK((a.array() == b.array()).all());
    }
}

TEST_CASE("zero encoders give a zero feature", "[encode]") {
    const Encoders enc;
    for (const auto& s : samples()) CHECK(featurize(enc, s).isZero(0.0));
}

TEST_CASE("featurize is deterministic and batch independent", "[encode]") {
    const Encoders enc = random_encoders(3);
    const auto inputs = model_inputs(samples());
    const Matrix all = featurize_all(enc, inputs, 7);
    REQUIRE(all.rows() == 40);
    REQUIRE(all.cols() == kDModel);
    for (std::size_t i = 0; i < inputs.size(); ++i)
        CHECK((all.row(static_cast<Index>(i)) - featurize(enc, samples()[i])).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("input Jacobians match central differences", "[encode]") {
    const Encoders enc = random_encoders(4);
    std::mt19937_64 rng(5);
    const auto inputs = model_inputs(samples());
    const std::size_t idx[] = {0, 1, 2};
    const InputBatch base = stack(inputs, idx);
    const Projection proj{enc, testing::random_matrix(rng, 3, kDModel)};
    for (int which = 0; which < 3; ++which) {
        const Matrix tape_grad = proj.gradient(base, which);
        const Matrix fd = central_difference(
            [&](const Matrix& x) {
                InputBatch b = base;
                block_of(b, which) = x;
                return proj.value(b);
            },
            which == 0 ? base.slots : which == 1 ? base.instr : base.action);
        INFO("block " << which);
        CHECK(rel_error(tape_grad, fd) < 1e-4);
    }
}

TEST_CASE("a small waypoint change moves h proportionally", "[encode]") {
    const Encoders enc = random_encoders(6);
    const auto& s = samples()[3];
    const auto h0 = featurize(enc, s);
    double previous = 0.0;
    for (double eps : {1e-2, 1e-3, 1e-4}) {
        toy::Sample t = s;
        t.trajectory[2].x += eps;
        const double ratio = (featurize(enc, t) - h0).norm() / eps;
        CHECK(std::isfinite(ratio));
        if (previous > 0.0) CHECK(std::abs(ratio - previous) < 0.05 * previous + 1e-9);
        previous = ratio;
    }
}

TEST_CASE("empirical Lipschitz constant is finite", "[encode]") {
    const Encoders enc = random_encoders(7);
    const auto data = toy::generate_dataset({200, 0.2, 0.3, 8});
    const auto inputs = model_inputs(data);
    const Matrix h = featurize_all(enc, inputs);
    double c = 0.0;
    for (std::size_t k = 0; k < 100; ++k) {
        const std::size_t i = 2 * k, j = 2 * k + 1;
        const double dx = std::sqrt((inputs[i].slots - inputs[j].slots).squaredNorm() +
                                    (inputs[i].instr - inputs[j].instr).squaredNorm() +
                                    (inputs[i].action - inputs[j].action).squaredNorm());
        if (dx == 0.0) continue;
        c = std::max(c, (h.row(static_cast<Index>(i)) - h.row(static_cast<Index>(j))).norm() / dx);
    }
    INFO("C = " << c);
    CHECK(std::isfinite(c));
    CHECK(c > 0.0);
    CHECK(c < 100.0);
}

TEST_CASE("a synthetic copy of a sample has the same feature", "[synthetic]") {
    const Encoders enc = random_encoders(9);
    std::vector<SyntheticSample> syn;
    for (const auto& s : samples()) syn.push_back(from_sample(s));
    const Matrix hs = featurize_synthetic(enc, stack(syn));
    for (std::size_t i = 0; i < syn.size(); ++i)
        CHECK((hs.row(static_cast<Index>(i)) - featurize(enc, samples()[i])).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("decoding a synthetic copy gives the sample back", "[synthetic]") {
    for (const auto& s : samples()) {
        const toy::Sample d = decode(from_sample(s), s.id);
        REQUIRE(d.scene.size() == s.scene.size());
        CHECK(d.instruction == s.instruction);
        // Slot order is canonical, so compare through the slot matrix.
        CHECK((model_input(d).slots - model_input(s).slots).cwiseAbs().maxCoeff() < 1e-12);
        for (std::size_t k = 0; k < s.trajectory.size(); ++k) {
            CHECK(std::abs(d.trajectory[k].x - s.trajectory[k].x) < 1e-12);
            CHECK(std::abs(d.trajectory[k].y - s.trajectory[k].y) < 1e-12);
        }
    }
}

TEST_CASE("gradients through the relaxation match central differences", "[synthetic]") {
    const Encoders enc = random_encoders(10);
    std::mt19937_64 rng(11);
    SyntheticBatch b{testing::random_matrix(rng, 2 * kSlots, kSceneFields),
                     testing::random_matrix(rng, 2, kInstrDim), testing::random_matrix(rng, 2, 16)};
    const Matrix c = testing::random_matrix(rng, 2, kDModel);
    auto value = [&](const SyntheticBatch& x) { return (featurize_synthetic(enc, x).array() * c.array()).sum(); };

    Tape tape;
    auto p = diff::bind(tape, enc.params, false);
    const Var leaves[] = {tape.variable(b.scene), tape.variable(b.instr), tape.variable(b.action)};
    Var y = diff::sum(diff::mul(featurize_synthetic(enc.stack, p, leaves[0], leaves[1], leaves[2]), tape.constant(c)));
    const auto grads = tape.grad(y, leaves);

    Matrix SyntheticBatch::*members[] = {&SyntheticBatch::scene, &SyntheticBatch::instr, &SyntheticBatch::action};
    for (int k = 0; k < 3; ++k) {
        const Matrix fd = central_difference(
            [&](const Matrix& x) {
                SyntheticBatch t = b;
                t.*members[k] = x;
                return value(t);
            },
            b.*members[k]);
        INFO("field " << k);
        CHECK(rel_error(grads[static_cast<std::size_t>(k)].value(), fd) < 1e-4);
    }
}

TEST_CASE("all-zero synthetic sample has a finite feature", "[synthetic]") {
    const Encoders enc = random_encoders(12);
    const SyntheticSample z{Matrix::Zero(kSlots, kSceneFields), Matrix::Zero(1, kInstrDim), Matrix::Zero(1, 16)};
    const std::vector<SyntheticSample> one{z};
    CHECK(featurize_synthetic(enc, stack(one)).allFinite());
}

TEST_CASE("relaxed inputs live where real inputs do", "[synthetic]") {
    std::mt19937_64 rng(13);
    const SyntheticBatch b{testing::random_matrix(rng, 3 * kSlots, kSceneFields, 3.0),
                           testing::random_matrix(rng, 3, kInstrDim, 3.0), testing::random_matrix(rng, 3, 16, 3.0)};
    const InputBatch r = relaxed_inputs(b);
    CHECK(r.action.cwiseAbs().maxCoeff() <= 1.0);
    for (Index i = 0; i < 3; ++i) {
        CHECK(r.instr.row(i).sum() == Catch::Approx(3.0).epsilon(1e-12));
        double key = 0.0;
        for (Index s = 0; s < kSlots; ++s) {
            const auto row = r.slots.row(i * kSlots + s);
            const double present = row(kPresentCol);
            CHECK(row.head(kCategoryCols).sum() == Catch::Approx(present).epsilon(1e-12));
            CHECK(row(kKeyXCol) == Catch::Approx(row(kKeyCol) * row(kXCol) / present).epsilon(1e-12));
            key += row(kKeyCol) / present;
        }
        CHECK(key == Catch::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("the policy never reads the trajectory", "[policy]") {
    const VlaPolicy model;
    std::mt19937_64 rng(14);
    const ParamVector p = model.initial_params(rng);
    const auto inputs = model_inputs(samples());
    InputBatch b = stack_all(inputs);
    const Matrix before = model.predict(p, b);
    b.action.setRandom();
    CHECK((model.predict(p, b).array() == before.array()).all());
    CHECK(before.cols() == 16);
}

TEST_CASE("extracted encoders are the leading policy parameters", "[policy]") {
    const VlaPolicy model;
    std::mt19937_64 rng(15);
    const ParamVector p = model.initial_params(rng);
    const Encoders enc = model.extract_encoders(p);
    CHECK(enc.params.values() == p.values().head(enc.params.size()));
    CHECK_FALSE(featurize(enc, samples()[0]).isZero(0.0));
}
