#include <catch_amalgamated.hpp>

#include <sstream>

#include "ftncfm/diffcore/checkpoint.hpp"
#include "ftncfm/diffcore/objective.hpp"
#include "support.hpp"

using namespace ftncfm;
using namespace ftncfm::diff;
using testing::max_rel_error;

namespace {

MlpRegressor two_layer(Index in, Index hidden, Index out) {
    return MlpRegressor(in, {linear(hidden), tanh_layer(), linear(out)});
}

std::vector<LabeledExample> random_examples(std::mt19937_64& rng, std::size_t n, Index in, Index out) {
    std::vector<LabeledExample> data;
    for (std::size_t i = 0; i < n; ++i)
        data.push_back({testing::random_matrix(rng, 1, in), testing::random_matrix(rng, 1, out)});
    return data;
}

// Forward pass written directly against Eigen for the loss oracle.
double reference_loss(const ParamVector& p, const LabeledBatch& b) {
    Matrix w0 = p.block("mlp.0.w"), b0 = p.block("mlp.0.b");
    Matrix w2 = p.block("mlp.2.w"), b2 = p.block("mlp.2.b");
    double total = 0.0;
    for (Index r = 0; r < b.inputs.rows(); ++r) {
        Eigen::RowVectorXd h = b.inputs.row(r) * w0 + b0;
        for (Index j = 0; j < h.size(); ++j) h[j] = std::tanh(h[j]);
        Eigen::RowVectorXd y = h * w2 + b2;
        total += (y - b.targets.row(r)).squaredNorm();
    }
    return total / static_cast<double>(b.inputs.rows());
}

// A model whose loss is 1/2 p^T diag(d) p, independent of the batch.
struct Quadratic {
    using Example = int;
    using Batch = int;
    LayoutPtr layout_;
    Eigen::VectorXd diag;

    explicit Quadratic(Eigen::VectorXd d) : diag(std::move(d)) {
        ParamLayout::Builder b;
        b.add("p", 1, diag.size());
        layout_ = b.build();
    }
    const LayoutPtr& layout() const { return layout_; }
    Var loss(Tape& tape, std::span<const Var> params, const Batch&) const {
        Matrix d = diag.transpose();
        return scale(sum(mul(mul(params[0], params[0]), tape.constant(d))), 0.5);
    }
    Batch collate(std::span<const Example>, std::span<const std::size_t>) const { return 0; }
};

} // namespace

TEST_CASE("mse of a one-weight linear model", "[loss]") {
    MlpRegressor m(1, {linear(1)});
    ParamVector p(m.layout());
    p.block("mlp.0.w")(0, 0) = 1.0;
    std::vector<LabeledExample> fit{{Eigen::RowVectorXd::Constant(1, 2.0), Eigen::RowVectorXd::Constant(1, 2.0)}};
    CHECK(loss(m, p, full_batch<MlpRegressor>(m, fit)) == 0.0);

    p.block("mlp.0.w")(0, 0) = 0.0;
    std::vector<LabeledExample> miss{{Eigen::RowVectorXd::Constant(1, 1.0), Eigen::RowVectorXd::Constant(1, 2.0)}};
    CHECK(loss(m, p, full_batch<MlpRegressor>(m, miss)) == 4.0);
}

TEST_CASE("loss agrees with a direct forward pass", "[loss]") {
    std::mt19937_64 rng(7);
    auto m = two_layer(5, 6, 3);
    for (int trial = 0; trial < 5; ++trial) {
        ParamVector p = m.initial_params(rng);
        p.values() += testing::random_like(rng, p, 0.1).values();
        auto data = random_examples(rng, 8, 5, 3);
        auto batch = full_batch<MlpRegressor>(m, data);
        CHECK(std::abs(loss(m, p, batch) - reference_loss(p, batch)) < 1e-10);
    }
}

TEST_CASE("loss rejects mismatched input width", "[loss]") {
    std::mt19937_64 rng(1);
    auto m = two_layer(5, 6, 3);
    ParamVector p = m.initial_params(rng);
    auto data = random_examples(rng, 4, 4, 3);
    CHECK_THROWS_AS(loss(m, p, full_batch<MlpRegressor>(m, data)), ContractViolation);
}

TEST_CASE("non-finite activations name the layer", "[loss]") {
    std::mt19937_64 rng(1);
    auto m = two_layer(2, 3, 1);
    ParamVector p = m.initial_params(rng);
    p.block("mlp.0.b")(0, 1) = std::numeric_limits<double>::infinity();
    auto data = random_examples(rng, 2, 2, 1);
    try {
        (void)loss(m, p, full_batch<MlpRegressor>(m, data));
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(e.where() == "mlp.0");
    }
}

TEST_CASE("gradient of w squared", "[gradient]") {
    Eigen::VectorXd d(1);
    d << 2.0;
    Quadratic q(d); // loss = w^2
    ParamVector p(q.layout());
    p[0] = 3.0;
    CHECK(gradient(q, p, 0)[0] == Catch::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("zero residual gives zero gradient", "[gradient]") {
    std::mt19937_64 rng(3);
    auto m = two_layer(3, 4, 2);
    ParamVector p = m.initial_params(rng);
    auto data = random_examples(rng, 5, 3, 2);
    Tape tape;
    auto bound = bind(tape, p, false);
    auto batch = full_batch<MlpRegressor>(m, data);
    Matrix pred = m.predict(tape, bound, batch.inputs).value();
    for (Index r = 0; r < pred.rows(); ++r) data[r].target = pred.row(r);
    CHECK(gradient(m, p, full_batch<MlpRegressor>(m, data)).norm() < 1e-14);
}

TEST_CASE("gradients match central differences on every layer kind", "[gradient]") {
    std::mt19937_64 rng(11);
    std::vector<MlpRegressor> models{
        two_layer(4, 5, 2),
        MlpRegressor(4, {linear(6), layer_norm(), leaky_relu_layer(), linear(5), layer_norm(), tanh_layer(),
                         linear(2)}),
    };
    for (const auto& m : models) {
        for (int trial = 0; trial < 10; ++trial) {
            ParamVector p = m.initial_params(rng);
            p.values() += testing::random_like(rng, p, 0.2).values();
            auto batch = full_batch<MlpRegressor>(m, random_examples(rng, 8, 4, 2));
            auto g = gradient(m, p, batch);
            auto fd = testing::central_difference([&](const ParamVector& q) { return loss(m, q, batch); }, p);
            CHECK(max_rel_error(g.values(), fd.values()) < 1e-4);
        }
    }
}

TEST_CASE("hvp on a diagonal quadratic", "[hvp]") {
    Eigen::VectorXd d(2);
    d << 2.0, 4.0;
    Quadratic q(d);
    ParamVector p(q.layout());
    p[0] = 0.3;
    p[1] = -1.2;
    ParamVector v(q.layout());
    v[0] = 1.0;
    v[1] = 1.0;
    auto hv = hvp(q, p, 0, v);
    CHECK(hv[0] == Catch::Approx(2.0).epsilon(1e-14));
    CHECK(hv[1] == Catch::Approx(4.0).epsilon(1e-14));
    CHECK(hvp(q, p, 0, v.zeros_like()).norm() == 0.0);
}

TEST_CASE("hvp matches differences of gradients", "[hvp]") {
    std::mt19937_64 rng(5);
    std::vector<MlpRegressor> models{
        two_layer(3, 5, 2),
        MlpRegressor(3, {linear(5), layer_norm(), leaky_relu_layer(), linear(4), tanh_layer(), linear(2)}),
    };
    const double eps = 1e-4;
    for (const auto& m : models) {
        for (int trial = 0; trial < 10; ++trial) {
            ParamVector p = m.initial_params(rng);
            auto batch = full_batch<MlpRegressor>(m, random_examples(rng, 8, 3, 2));
            ParamVector v = testing::random_like(rng, p);
            auto hv = hvp(m, p, batch, v);
            ParamVector fd = (1.0 / (2.0 * eps)) *
                             (gradient(m, p + eps * v, batch) - gradient(m, p - eps * v, batch));
            CHECK(max_rel_error(hv.values(), fd.values()) < 1e-3);
        }
    }
}

TEST_CASE("hvp is linear and symmetric", "[hvp]") {
    std::mt19937_64 rng(9);
    auto m = MlpRegressor(3, {linear(5), layer_norm(), leaky_relu_layer(), linear(4), tanh_layer(), linear(2)});
    for (int trial = 0; trial < 5; ++trial) {
        ParamVector p = m.initial_params(rng);
        auto batch = full_batch<MlpRegressor>(m, random_examples(rng, 6, 3, 2));
        ParamVector u = testing::random_like(rng, p), v = testing::random_like(rng, p);
        const double alpha = -1.7;
        auto lhs = hvp(m, p, batch, alpha * u + v);
        auto rhs = alpha * hvp(m, p, batch, u) + hvp(m, p, batch, v);
        CHECK((lhs - rhs).values().cwiseAbs().maxCoeff() < 1e-8);
        CHECK(std::abs(u.dot(hvp(m, p, batch, v)) - v.dot(hvp(m, p, batch, u))) < 1e-8);
    }
}

TEST_CASE("train with zero steps is the identity", "[train]") {
    std::mt19937_64 rng(2);
    auto m = two_layer(2, 3, 1);
    ParamVector p = m.initial_params(rng);
    auto data = random_examples(rng, 4, 2, 1);
    CHECK(train(m, p, std::span<const LabeledExample>(data), Schedule{0, 0.1, 2, 1}) == p);
}

TEST_CASE("train reaches the least-squares minimum", "[train]") {
    // y = a x + b with noise; closed-form fit from the normal equations.
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<LabeledExample> data;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const int count = 20;
    for (int i = 0; i < count; ++i) {
        const double x = n(rng), y = 1.5 * x - 0.5 + 0.3 * n(rng);
        data.push_back({Eigen::RowVectorXd::Constant(1, x), Eigen::RowVectorXd::Constant(1, y)});
        sx += x, sy += y, sxx += x * x, sxy += x * y;
    }
    const double a = (count * sxy - sx * sy) / (count * sxx - sx * sx);
    const double b = (sy - a * sx) / count;
    double best = 0.0;
    for (const auto& e : data) best += std::pow(a * e.input[0] + b - e.target[0], 2);
    best /= count;

    MlpRegressor m(1, {linear(1)});
    ParamVector p(m.layout());
    p = train(m, p, std::span<const LabeledExample>(data), Schedule{2000, 0.1, 100, 0});
    CHECK(loss(m, p, full_batch<MlpRegressor>(m, data)) - best < 1e-6);
}

TEST_CASE("train is deterministic for a fixed seed", "[train]") {
    std::mt19937_64 rng(8);
    auto m = two_layer(3, 4, 2);
    ParamVector p = m.initial_params(rng);
    auto data = random_examples(rng, 30, 3, 2);
    Schedule s{50, 0.05, 7, 99};
    auto a = train(m, p, std::span<const LabeledExample>(data), s);
    auto b = train(m, p, std::span<const LabeledExample>(data), s);
    CHECK(a == b);
    CHECK_FALSE(a == p);
}

TEST_CASE("divergence reports the step", "[train]") {
    std::mt19937_64 rng(8);
    MlpRegressor m(1, {linear(1)});
    ParamVector p(m.layout());
    std::vector<LabeledExample> data{{Eigen::RowVectorXd::Constant(1, 10.0), Eigen::RowVectorXd::Constant(1, 1.0)}};
    try {
        (void)train(m, p, std::span<const LabeledExample>(data), Schedule{5000, 10.0, 1, 0});
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        CHECK(e.step() > 0);
        CHECK(e.step() < 5000);
    }
}

TEST_CASE("checkpoint round trip", "[checkpoint]") {
    std::mt19937_64 rng(6);
    auto m = MlpRegressor(3, {linear(4), layer_norm(), linear(2)});
    ParamVector p = m.initial_params(rng);
    std::stringstream ss;
    write_checkpoint(ss, p);
    const std::string bytes = ss.str();
    CHECK(bytes.substr(0, 12) == std::string("FTNC-PARAMS\0", 12));
    CHECK(bytes[12] == 1);
    ParamVector q = adopt_layout(m.layout(), read_checkpoint(ss));
    CHECK(q == p);

    std::stringstream bad("NOT-A-CHECKPOINT");
    CHECK_THROWS_AS(read_checkpoint(bad), IoError);
    std::stringstream cut(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(read_checkpoint(cut), IoError);
}
