#include <catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include "ftncfm/toyworld/dataset_io.hpp"

using namespace ftncfm;
using namespace ftncfm::toy;

namespace {

Sample pick_cup() {
    Sample s;
    s.id = 7;
    s.scene = {{Category::Cup, 0.5, {0.6, 0.4}, true}, {Category::Bowl, 1.0, {0.2, 0.8}, false}};
    s.instruction = {Verb::Pick, Category::Cup, std::nullopt};
    s.trajectory = expert_trajectory(s.scene, s.instruction);
    return s;
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("ftncfm_toyworld_" + name);
}

} // namespace

TEST_CASE("quality counts are exact", "[generate]") {
    const auto data = generate_dataset({100, 0.2, 0.3, 42});
    REQUIRE(data.size() == 100);
    std::size_t clean = 0, noisy = 0, redundant = 0;
    for (const auto& s : data) {
        clean += s.quality == Quality::Clean;
        noisy += s.quality == Quality::Noisy;
        redundant += s.quality == Quality::Redundant;
    }
    CHECK(clean == 50);
    CHECK(redundant == 30);
    CHECK(noisy == 20);
}

TEST_CASE("generation is deterministic to the byte", "[generate]") {
    const auto a = generate_dataset({100, 0.2, 0.3, 42});
    const auto b = generate_dataset({100, 0.2, 0.3, 42});
    CHECK(to_jsonl(a, true) == to_jsonl(b, true));
    CHECK(dataset_hash(a) == dataset_hash(b));
    CHECK(dataset_hash(a) != dataset_hash(generate_dataset({100, 0.2, 0.3, 43})));
}

TEST_CASE("generated samples satisfy the scene contracts", "[generate]") {
    const auto data = generate_dataset({500, 0.2, 0.3, 5, 8, 1000});
    std::set<std::uint64_t> ids;
    for (const auto& s : data) {
        ids.insert(s.id);
        int keys = 0;
        for (const auto& o : s.scene) {
            keys += o.key;
            CHECK(o.size > 0.0);
            CHECK(o.size <= 4.0);
            CHECK(o.position.x >= 0.0);
            CHECK(o.position.x <= 1.0);
            CHECK(o.position.y >= 0.0);
            CHECK(o.position.y <= 1.0);
        }
        CHECK(keys == 1);
        CHECK(s.trajectory.size() == 8);
        for (const auto& w : s.trajectory) {
            CHECK(std::abs(w.x) <= 1.0);
            CHECK(std::abs(w.y) <= 1.0);
        }
        if (s.quality == Quality::Clean) {
            bool present = false;
            for (const auto& o : s.scene) present |= o.category == s.instruction.target;
            CHECK(present);
        }
    }
    CHECK(ids.size() == data.size());
    CHECK(*ids.begin() == 1000);
}

TEST_CASE("clean pick ends on the key object", "[generate]") {
    for (const auto& s : generate_dataset({300, 0.2, 0.3, 9})) {
        if (s.quality != Quality::Clean || s.instruction.verb != Verb::Pick) continue;
        CHECK(distance(s.trajectory.back(), key_object(s.scene).position) < 0.05);
    }
}

TEST_CASE("expert trajectories succeed on every clean sample", "[generate]") {
    for (const auto& s : generate_dataset({400, 0.2, 0.3, 11})) {
        if (s.quality != Quality::Clean) continue;
        const auto o = evaluate_success(s, s.trajectory);
        CHECK(o.success);
        CHECK(o.error == 0.0);
    }
}

TEST_CASE("noisy samples mostly fail against the expert", "[generate]") {
    std::size_t noisy = 0, failed = 0;
    for (const auto& s : generate_dataset({400, 0.2, 0.3, 13})) {
        if (s.quality != Quality::Noisy) continue;
        ++noisy;
        failed += !evaluate_success(s, s.trajectory).success;
    }
    CHECK(failed * 10 >= noisy * 9);
}

TEST_CASE("semantic parse mirrors the instruction", "[parse]") {
    const auto a = semantic_parse({Verb::Pick, Category::Cup, std::nullopt});
    CHECK(a.verb == Verb::Pick);
    CHECK(a.target == Category::Cup);
    CHECK_FALSE(a.qualifier.has_value());
    const auto b = semantic_parse({Verb::PlaceLeftOf, Category::Bowl, Qualifier::Left});
    CHECK(b.qualifier == Qualifier::Left);

    for (int v = 0; v < kNumVerbs; ++v)
        for (int c = 0; c < kNumCategories; ++c)
            for (int q = -1; q < kNumQualifiers; ++q) {
                Instruction ins{static_cast<Verb>(v), static_cast<Category>(c), std::nullopt};
                if (q >= 0) ins.qualifier = static_cast<Qualifier>(q);
                const auto p = semantic_parse(ins);
                CHECK(p.verb == ins.verb);
                CHECK(p.target == ins.target);
                CHECK(p.qualifier == ins.qualifier);
            }
}

TEST_CASE("template rules", "[template]") {
    CHECK(select_template({Verb::Pick, Category::Cup, Qualifier::Left}, 1).kind == TemplateKind::PositionChange);
    CHECK(select_template({Verb::PlaceRightOf, Category::Cup, std::nullopt}, 1).kind == TemplateKind::PositionChange);

    const ParseRecord plain{Verb::Pick, Category::Cup, std::nullopt};
    const auto first = select_template(plain, 77);
    CHECK(first.kind != TemplateKind::PositionChange);
    const auto again = select_template(plain, 77);
    CHECK(first.kind == again.kind);
    CHECK(first.substitute == again.substitute);
    CHECK(first.scale_factor == again.scale_factor);

    std::size_t subst = 0, scale = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const auto t = select_template(plain, seed);
        REQUIRE(t.kind != TemplateKind::PositionChange);
        if (t.kind == TemplateKind::ObjectSubstitution) {
            ++subst;
            CHECK(t.substitute != Category::Cup);
        } else {
            ++scale;
            CHECK((t.scale_factor == 0.25 || t.scale_factor == 3.0));
        }
    }
    CHECK(subst > 0);
    CHECK(scale > 0);
}

TEST_CASE("object substitution edits only the key category", "[counterexample]") {
    const Sample s = pick_cup();
    PerturbationTemplate t;
    t.kind = TemplateKind::ObjectSubstitution;
    t.substitute = Category::Box;
    Sample c = instantiate_counterexample(s, t);
    CHECK(key_object(c.scene).category == Category::Box);
    key_object(c.scene).category = Category::Cup;
    CHECK(c == s);
    t.substitute = Category::Cup;
    CHECK_THROWS_AS(instantiate_counterexample(s, t), ContractViolation);
}

TEST_CASE("size scaling multiplies the key size", "[counterexample]") {
    const Sample s = pick_cup();
    PerturbationTemplate t;
    t.kind = TemplateKind::SizeScaling;
    t.scale_factor = 3.0;
    Sample c = instantiate_counterexample(s, t);
    CHECK(key_object(c.scene).size == Catch::Approx(1.5).epsilon(1e-15));
    key_object(c.scene).size = 0.5;
    CHECK(c == s);
}

TEST_CASE("position change moves the key far from the final waypoint", "[counterexample]") {
    PerturbationTemplate t;
    t.kind = TemplateKind::PositionChange;
    for (const auto& s : generate_dataset({300, 0.0, 0.0, 21})) {
        if (s.instruction.verb != Verb::Pick) continue;
        const Sample c = instantiate_counterexample(s, t);
        CHECK(distance(c.trajectory.back(), key_object(c.scene).position) > 0.35);
        CHECK(c.instruction == s.instruction);
        CHECK(c.trajectory == s.trajectory);
    }
}

TEST_CASE("success threshold is strict", "[evaluate]") {
    const Sample s = pick_cup();
    Trajectory shifted = s.trajectory;
    for (auto& w : shifted) w.x += 0.5;
    const auto o = evaluate_success(s, shifted);
    CHECK_FALSE(o.success);
    CHECK(o.error == Catch::Approx(0.5).epsilon(1e-12));

    CHECK(outcome_from_error(0.1 - 1e-9).success);
    CHECK_FALSE(outcome_from_error(0.1).success);
    CHECK_THROWS_AS(evaluate_success(s, Trajectory(3)), ContractViolation);
}

TEST_CASE("dataset files round trip, gzip included", "[io]") {
    const auto data = generate_dataset({60, 0.2, 0.3, 3});
    for (const std::string name : {"plain.jsonl", "packed.jsonl.gz"}) {
        const auto path = temp_file(name);
        save_dataset(path, data, true);
        CHECK(load_dataset(path) == data);
        std::filesystem::remove(path);
    }
}

TEST_CASE("pipeline-facing export hides quality", "[io]") {
    const auto data = generate_dataset({20, 0.2, 0.3, 3});
    const std::string text = to_jsonl(data, false);
    CHECK(text.find("quality") == std::string::npos);
    const auto first = Json::parse(text.substr(0, text.find('\n')));
    std::vector<std::string> keys;
    for (const auto& [k, v] : first.items()) keys.push_back(k);
    CHECK(keys == std::vector<std::string>{"id", "scene", "instruction", "trajectory"});
}

TEST_CASE("malformed dataset lines are rejected", "[io]") {
    CHECK_THROWS(from_jsonl("{\"id\": 1}\n"));
    CHECK_THROWS(from_jsonl("not json\n"));
    CHECK_THROWS_AS(load_dataset(temp_file("missing.jsonl")), IoError);
}
