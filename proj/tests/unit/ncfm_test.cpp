#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "ftncfm/ncfm/distill.hpp"
#include "ftncfm/ncfm/export.hpp"
#include "ftncfm/representation/policy.hpp"
#include "support.hpp"

using namespace ftncfm;
using namespace ftncfm::ncfm;
using testing::random_matrix;

namespace {

std::vector<double> uniform(Index n) { return std::vector<double>(static_cast<std::size_t>(n), 1.0 / static_cast<double>(n)); }

double differentiable_value(const Matrix& real, const std::vector<double>& w, const Matrix& syn, const Matrix& freqs) {
    double total = 0.0;
    for (double x : w) total += x;
    Matrix wm(1, real.rows());
    for (Index i = 0; i < real.rows(); ++i) wm(0, i) = w[static_cast<std::size_t>(i)] / total;
    Tape tape;
    return cf_discrepancy(tape.constant(real), wm, tape.constant(syn), tape.constant(freqs)).scalar();
}

// Two well separated clusters in the plane.
Matrix mixture(std::mt19937_64& rng, Index n) {
    std::normal_distribution<double> noise(0.0, 0.3);
    std::bernoulli_distribution coin(0.5);
    Matrix m(n, 2);
    for (Index i = 0; i < n; ++i) {
        const double c = coin(rng) ? 2.0 : -2.0;
        m(i, 0) = c + noise(rng);
        m(i, 1) = 0.5 * c + noise(rng);
    }
    return m;
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("ftncfm_ncfm_" + name);
}

} // namespace

TEST_CASE("identical sets have zero discrepancy", "[cf]") {
    std::mt19937_64 rng(1);
    const Matrix real = random_matrix(rng, 7, 4);
    Matrix shuffled = real;
    shuffled.row(0).swap(shuffled.row(6));
    const Matrix freqs = random_matrix(rng, 16, 4, 2.0);
    CHECK(cf_discrepancy(real, uniform(7), shuffled, freqs).value < 1e-12);
}

TEST_CASE("one point against a shifted point", "[cf]") {
    const Matrix h = (Matrix(1, 3) << 0.3, -1.0, 2.0).finished();
    const Matrix delta = (Matrix(1, 3) << 0.1, 0.4, -0.2).finished();
    const Matrix t = (Matrix(1, 3) << 1.5, -0.5, 2.0).finished();
    const double td = t.row(0).dot(delta.row(0));
    const auto d = cf_discrepancy(h, std::vector<double>{1.0}, h + delta, t);
    CHECK(d.value == Catch::Approx(2.0 - 2.0 * std::cos(td)).epsilon(1e-12));
    REQUIRE(d.per_frequency.size() == 1);
}

TEST_CASE("uniform weights reproduce the unweighted objective byte for byte", "[cf]") {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<Index> n(1, 40), d(1, 8), f(1, 32);
    for (int trial = 0; trial < 100; ++trial) {
        const Index rows = n(rng), dim = d(rng);
        const Matrix real = random_matrix(rng, rows, dim);
        const Matrix syn = random_matrix(rng, n(rng), dim);
        const Matrix freqs = random_matrix(rng, f(rng), dim, 3.0);
        const auto a = cf_discrepancy(real, uniform(rows), syn, freqs);
        const auto b = cf_discrepancy_unweighted(real, syn, freqs);
        CHECK(a.value == b.value);
        CHECK(a.per_frequency == b.per_frequency);
    }
}

TEST_CASE("discrepancy is nonnegative and matches the differentiable form", "[cf]") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix real = random_matrix(rng, 12, 5);
        const Matrix syn = random_matrix(rng, 4, 5);
        const Matrix freqs = random_matrix(rng, 8, 5);
        std::vector<double> w(12);
        for (auto& x : w) x = u(rng);
        const double v = cf_discrepancy(real, w, syn, freqs).value;
        CHECK(v >= 0.0);
        CHECK(std::abs(v - differentiable_value(real, w, syn, freqs)) < 1e-12);
    }
}

TEST_CASE("bad weights are contract violations", "[cf]") {
    const Matrix real = Matrix::Ones(2, 2), freqs = Matrix::Ones(1, 2);
    CHECK_THROWS_AS(cf_discrepancy(real, std::vector<double>{0.0, 0.0}, real, freqs), ContractViolation);
    CHECK_THROWS_AS(cf_discrepancy(real, std::vector<double>{1.0, -1.0}, real, freqs), ContractViolation);
    CHECK_THROWS_AS(cf_discrepancy(real, std::vector<double>{1.0}, real, freqs), ContractViolation);
}

TEST_CASE("frequency sampler", "[sampler]") {
    const SamplerNet net(6, 16, 5.0);
    std::mt19937_64 rng(4);
    const auto p = net.initial_params(rng);
    const Matrix a = net.sample_frequencies(p, 64, 9);
    CHECK(a.rows() == 64);
    CHECK(a.cols() == 6);
    CHECK(a == net.sample_frequencies(p, 64, 9));
    CHECK(a != net.sample_frequencies(p, 64, 10));
    CHECK(a.cwiseAbs().maxCoeff() < 5.0);

    const Matrix zero = net.sample_frequencies(p.zeros_like(), 8, 1);
    CHECK(zero.isZero(0.0));
    const Matrix real = random_matrix(rng, 5, 6), syn = random_matrix(rng, 3, 6);
    CHECK(cf_discrepancy(real, uniform(5), syn, zero).value == 0.0);
    CHECK_THROWS_AS(net.sample_frequencies(p, 0, 1), ContractViolation);
}

TEST_CASE("weighted sampler matches the weights", "[sampler]") {
    const std::vector<double> w{0.05, 0.4, 0.15, 0.0, 0.4};
    WeightedSampler s(w);
    std::mt19937_64 rng(5);
    const std::size_t draws = 100000;
    std::vector<double> count(w.size(), 0.0);
    for (auto i : s.draw(rng, draws)) count[i] += 1.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double se = std::sqrt(w[i] * (1.0 - w[i]) / static_cast<double>(draws));
        CHECK(std::abs(count[i] / static_cast<double>(draws) - w[i]) <= 3.0 * se);
    }
    CHECK_THROWS_AS(WeightedSampler(std::vector<double>{0.0, 0.0}), ContractViolation);
}

TEST_CASE("each player moves the objective its own way", "[minimax]") {
    std::mt19937_64 rng(6);
    const SamplerNet net(3);
    for (int trial = 0; trial < 20; ++trial) {
        const auto sp0 = net.initial_params(rng);
        const Matrix real = random_matrix(rng, 20, 3), z = net.noise(16, rng());
        const Matrix bw = Matrix::Constant(1, 20, 1.0 / 20.0);
        Matrix syn = random_matrix(rng, 4, 3);

        Tape tape;
        auto sp = diff::bind(tape, sp0, true);
        Var loss = cf_discrepancy(tape.constant(real), bw, tape.constant(syn), net.frequencies(sp, tape.constant(z)));
        const double before = loss.scalar();
        auto sp1 = sp0;
        sp1.axpy(1e-3, diff::flatten(sp0.layout(), tape.grad(loss, sp)));
        const Matrix t1 = net.frequencies(sp1, z);
        CHECK(cf_discrepancy(real, uniform(20), syn, t1).value >= before - 1e-8);

        Tape gen;
        Var leaf = gen.variable(syn);
        Var gl = cf_discrepancy(gen.constant(real), bw, leaf, gen.constant(t1));
        const double mid = gl.scalar();
        const Var leaves[1] = {leaf};
        syn -= 1e-3 * gen.grad(gl, leaves)[0].value();
        CHECK(cf_discrepancy(real, uniform(20), syn, t1).value <= mid + 1e-8);
    }
}

TEST_CASE("three real points are recovered in feature space", "[distill]") {
    std::mt19937_64 rng(7);
    const Matrix real = random_matrix(rng, 3, 4);
    DistillConfig cfg;
    cfg.steps = 5000;
    cfg.generator_step = 1.0;
    cfg.exact = true;
    cfg.seed = 3;
    const auto r = distill_features(real, std::vector<double>{1.0, 1.0, 1.0}, 3, cfg);
    REQUIRE(r.curve.size() == 5000);
    const SamplerNet net(4, cfg.noise_dim, cfg.freq_scale);
    const Matrix freqs = net.sample_frequencies(r.sampler, 256, 99);
    CHECK(cf_discrepancy(real, uniform(3), r.features, freqs).value < 1e-3);
}

TEST_CASE("a distilled mixture beats random noise tenfold", "[distill]") {
    std::mt19937_64 rng(8);
    const Matrix real = mixture(rng, 400), held_out = mixture(rng, 400);
    DistillConfig cfg;
    cfg.steps = 1500;
    cfg.generator_step = 1.0;
    cfg.real_batch = 128;
    cfg.seed = 5;
    const std::size_t m = 20;
    const auto r = distill_features(real, uniform(400), m, cfg);
    const Matrix noise = random_matrix(rng, static_cast<Index>(m), 2);
    const SamplerNet net(2, cfg.noise_dim, cfg.freq_scale);
    const Matrix freqs = net.sample_frequencies(r.sampler, 256, 99);
    const double distilled = cf_discrepancy(held_out, uniform(400), r.features, freqs).value;
    const double baseline = cf_discrepancy(held_out, uniform(400), noise, freqs).value;
    CHECK(distilled * 10.0 <= baseline);
}

TEST_CASE("coreset sizing", "[distill]") {
    CHECK(coreset_size(0.05, 1000) == 50);
    CHECK(coreset_size(0.1, 1000) == 100);
    CHECK(coreset_size(0.05, 30) == 2);
    CHECK(coreset_size(1.0, 7) == 7);
    CHECK_THROWS_AS(coreset_size(0.05, 10), ContractViolation);
    CHECK_THROWS_AS(coreset_size(0.0, 10), ContractViolation);
}

TEST_CASE("raw-sample distillation", "[distill]") {
    const rep::VlaPolicy model;
    std::mt19937_64 rng(9);
    const auto enc = model.extract_encoders(model.initial_params(rng));
    const Matrix real = random_matrix(rng, 1000, rep::kDModel);
    const std::vector<double> w = uniform(1000);
    DistillConfig cfg;
    cfg.seed = 11;
    cfg.steps = 0;
    const auto init = distill(real, w, enc, cfg);
    CHECK(init.samples.size() == 50);
    const auto expected = gaussian_coreset(50, enc.stack.action_width(), 11);
    for (std::size_t i = 0; i < 50; ++i) {
        CHECK(init.samples[i].scene == expected[i].scene);
        CHECK(init.samples[i].instr == expected[i].instr);
        CHECK(init.samples[i].action == expected[i].action);
    }

    cfg.steps = 3;
    cfg.real_batch = 64;
    const auto a = distill(real, w, enc, cfg), b = distill(real, w, enc, cfg);
    CHECK(a.curve == b.curve);
    CHECK(sidecar_params(a.samples).values() == sidecar_params(b.samples).values());
    for (const auto& s : a.samples) CHECK((s.scene.allFinite() && s.instr.allFinite() && s.action.allFinite()));

    cfg.eta = 0.0005;
    CHECK_THROWS_AS(distill(real, w, enc, cfg), ContractViolation);
}

TEST_CASE("coreset export round trips", "[export]") {
    const auto samples = toy::generate_dataset({6, 0.0, 0.0, 12});
    std::vector<rep::SyntheticSample> syn;
    for (const auto& s : samples) syn.push_back(rep::from_sample(s));
    std::mt19937_64 rng(13);
    syn[0].action = random_matrix(rng, 1, syn[0].action.cols());

    const auto jsonl = temp_file("coreset.jsonl"), sidecar = temp_file("coreset.sidecar");
    export_coreset(syn, jsonl, sidecar, 500);
    const auto loaded = toy::load_dataset(jsonl);
    REQUIRE(loaded.size() == syn.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].id == 500 + i);
        CHECK(loaded[i].instruction == samples[i].instruction);
    }
    const auto back = load_sidecar(sidecar);
    REQUIRE(back.size() == syn.size());
    for (std::size_t i = 0; i < syn.size(); ++i) {
        CHECK(back[i].scene == syn[i].scene);
        CHECK(back[i].instr == syn[i].instr);
        CHECK(back[i].action == syn[i].action);
    }

    syn[1].instr(0, 0) = std::nan("");
    CHECK_THROWS_AS(export_coreset(syn, jsonl, sidecar), ContractViolation);
    std::filesystem::remove(jsonl);
    std::filesystem::remove(sidecar);
}
