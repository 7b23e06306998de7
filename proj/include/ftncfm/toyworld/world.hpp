#pragma once

// A 2-D symbolic tabletop: scenes of labelled objects, structured
// instructions, and a scripted expert that writes the action trajectory.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "ftncfm/common/errors.hpp"

namespace ftncfm::toy {

enum class Category : std::uint8_t { Cup, Bowl, Box, Block, Plate, Can, Bottle, Sponge };
enum class Verb : std::uint8_t { Pick, Push, PlaceLeftOf, PlaceRightOf, StackOn };
enum class Qualifier : std::uint8_t { Left, Right, Near, Far };
enum class Quality : std::uint8_t { Clean, Noisy, Redundant };

inline constexpr std::array<std::string_view, 8> kCategoryNames = {"cup",   "bowl", "box",    "block",
                                                                   "plate", "can",  "bottle", "sponge"};
inline constexpr std::array<std::string_view, 5> kVerbNames = {"pick", "push", "place-left-of", "place-right-of",
                                                               "stack-on"};
inline constexpr std::array<std::string_view, 4> kQualifierNames = {"left", "right", "near", "far"};
inline constexpr std::array<std::string_view, 3> kQualityNames = {"clean", "noisy", "redundant"};

inline constexpr int kNumCategories = 8;
inline constexpr int kNumVerbs = 5;
inline constexpr int kNumQualifiers = 4;

inline constexpr std::size_t kDefaultHorizon = 8;
inline constexpr std::size_t kMaxObjects = 4;
inline constexpr double kSuccessThreshold = 0.1;
inline constexpr double kNoiseSigma = 0.3;
inline constexpr double kJitterSigma = 0.01;
inline constexpr double kNearRadius = 0.75;

namespace detail {
template <class E, std::size_t N>
E lookup(const std::array<std::string_view, N>& names, std::string_view s, const char* what) {
    for (std::size_t i = 0; i < N; ++i)
        if (names[i] == s) return static_cast<E>(i);
    throw ContractViolation(std::string("unknown ") + what + " '" + std::string(s) + "'");
}
} // namespace detail

inline std::string_view name(Category c) { return kCategoryNames.at(static_cast<std::size_t>(c)); }
inline std::string_view name(Verb v) { return kVerbNames.at(static_cast<std::size_t>(v)); }
inline std::string_view name(Qualifier q) { return kQualifierNames.at(static_cast<std::size_t>(q)); }
inline std::string_view name(Quality q) { return kQualityNames.at(static_cast<std::size_t>(q)); }

inline Category parse_category(std::string_view s) { return detail::lookup<Category>(kCategoryNames, s, "category"); }
inline Verb parse_verb(std::string_view s) { return detail::lookup<Verb>(kVerbNames, s, "verb"); }
inline Qualifier parse_qualifier(std::string_view s) {
    return detail::lookup<Qualifier>(kQualifierNames, s, "qualifier");
}
inline Quality parse_quality(std::string_view s) { return detail::lookup<Quality>(kQualityNames, s, "quality"); }

struct Point {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Point&) const = default;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct SceneObject {
    Category category = Category::Cup;
    double size = 1.0;
    Point position;
    bool key = false;
    bool operator==(const SceneObject&) const = default;
};

struct Instruction {
    Verb verb = Verb::Pick;
    Category target = Category::Cup;
    std::optional<Qualifier> qualifier;
    bool operator==(const Instruction&) const = default;
};

using Trajectory = std::vector<Point>;

struct Sample {
    std::uint64_t id = 0;
    std::vector<SceneObject> scene;
    Instruction instruction;
    Trajectory trajectory;
    Quality quality = Quality::Clean; // ground truth for tests; the pipeline never reads it
    bool operator==(const Sample&) const = default;
};

inline const SceneObject& key_object(const std::vector<SceneObject>& scene) {
    const SceneObject* found = nullptr;
    for (const auto& o : scene) {
        if (!o.key) continue;
        require(found == nullptr, "scene has more than one key object");
        found = &o;
    }
    require(found != nullptr, "scene has no key object");
    return *found;
}

inline SceneObject& key_object(std::vector<SceneObject>& scene) {
    const auto& c = key_object(std::as_const(scene));
    return scene[static_cast<std::size_t>(&c - scene.data())];
}

inline double clamp_unit(double v) { return std::clamp(v, -1.0, 1.0); }

// Straight reach from the origin to the key object over the first T-2
// waypoints, then a two-waypoint suffix that depends on the verb.
inline Trajectory expert_trajectory(const std::vector<SceneObject>& scene, const Instruction& instruction,
                                    std::size_t horizon = kDefaultHorizon) {
    require(horizon >= 3, "trajectory horizon must be at least 3");
    const Point p = key_object(scene).position;
    const std::size_t reach = horizon - 2;
    Trajectory t;
    t.reserve(horizon);
    for (std::size_t k = 1; k <= reach; ++k) {
        const double a = static_cast<double>(k) / static_cast<double>(reach);
        t.push_back({a * p.x, a * p.y});
    }
    const double len = std::hypot(p.x, p.y);
    const Point dir = len > 0.0 ? Point{p.x / len, p.y / len} : Point{1.0, 0.0};
    for (int s = 1; s <= 2; ++s) {
        const double d = 0.1 * s;
        Point q = p;
        switch (instruction.verb) {
        case Verb::Pick:
            break;
        case Verb::Push:
            q = {p.x + d * dir.x, p.y + d * dir.y};
            break;
        case Verb::PlaceLeftOf:
            q.x -= d;
            break;
        case Verb::PlaceRightOf:
            q.x += d;
            break;
        case Verb::StackOn:
            q.y += 0.15 * s;
            break;
        }
        t.push_back({clamp_unit(q.x), clamp_unit(q.y)});
    }
    for (auto& w : t) w = {clamp_unit(w.x), clamp_unit(w.y)};
    return t;
}

// ---- dataset generation -----------------------------------------------------

struct DatasetConfig {
    std::size_t n_samples = 1000;
    double fraction_noisy = 0.2;
    double fraction_redundant = 0.3;
    std::uint64_t seed = 42;
    std::size_t horizon = kDefaultHorizon;
    std::uint64_t first_id = 0;
};

struct QualityCounts {
    std::size_t clean = 0;
    std::size_t noisy = 0;
    std::size_t redundant = 0;
};

inline QualityCounts quality_counts(const DatasetConfig& cfg) {
    const double fn = cfg.fraction_noisy, fr = cfg.fraction_redundant;
    require(fn >= 0.0 && fn <= 1.0 && fr >= 0.0 && fr <= 1.0 && fn + fr <= 1.0 + 1e-12,
            "dataset fractions must lie in [0,1] and sum to at most 1");
    const auto n = static_cast<double>(cfg.n_samples);
    QualityCounts c;
    c.noisy = static_cast<std::size_t>(std::llround(n * fn));
    c.redundant = static_cast<std::size_t>(std::llround(n * fr));
    require(c.noisy + c.redundant <= cfg.n_samples, "dataset fractions round to more than n-samples");
    c.clean = cfg.n_samples - c.noisy - c.redundant;
    require(c.redundant == 0 || c.clean > 0, "redundant samples need at least one clean sample to copy");
    return c;
}

template <class Rng>
std::vector<SceneObject> random_scene(Rng& rng) {
    std::uniform_int_distribution<int> count(2, static_cast<int>(kMaxObjects));
    std::uniform_int_distribution<int> category(0, kNumCategories - 1);
    std::uniform_real_distribution<double> size(0.3, 1.3);
    std::uniform_real_distribution<double> coord(0.05, 0.95);
    const int n = count(rng);
    std::uniform_int_distribution<int> pick_key(0, n - 1);
    const int key = pick_key(rng);
    std::vector<SceneObject> scene;
    for (int i = 0; i < n; ++i) {
        SceneObject o;
        o.category = static_cast<Category>(category(rng));
        o.size = size(rng);
        o.position.x = coord(rng);
        o.position.y = coord(rng);
        o.key = (i == key);
        scene.push_back(o);
    }
    return scene;
}

template <class Rng>
Instruction random_instruction(Rng& rng, const std::vector<SceneObject>& scene) {
    std::uniform_int_distribution<int> verb(0, kNumVerbs - 1);
    std::bernoulli_distribution qualified(0.5), horizontal(0.5);
    const SceneObject& key = key_object(scene);
    Instruction ins;
    ins.verb = static_cast<Verb>(verb(rng));
    ins.target = key.category;
    if (qualified(rng)) {
        if (horizontal(rng))
            ins.qualifier = key.position.x < 0.5 ? Qualifier::Left : Qualifier::Right;
        else
            ins.qualifier = std::hypot(key.position.x, key.position.y) < kNearRadius ? Qualifier::Near : Qualifier::Far;
    }
    return ins;
}

// Clean scripted samples, noisy copies of the expert (sigma 0.3 per
// coordinate) and jittered near-duplicates of clean samples (sigma 0.01),
// shuffled together. Ids run from cfg.first_id.
inline std::vector<Sample> generate_dataset(const DatasetConfig& cfg) {
    const QualityCounts counts = quality_counts(cfg);
    std::vector<Sample> out;
    if (cfg.n_samples == 0) return out;

    std::mt19937_64 rng(cfg.seed);
    std::vector<Quality> tags;
    tags.insert(tags.end(), counts.clean, Quality::Clean);
    tags.insert(tags.end(), counts.noisy, Quality::Noisy);
    tags.insert(tags.end(), counts.redundant, Quality::Redundant);
    std::shuffle(tags.begin(), tags.end(), rng);

    out.resize(cfg.n_samples);
    std::vector<std::size_t> clean_slots;
    for (std::size_t i = 0; i < cfg.n_samples; ++i) {
        Sample& s = out[i];
        s.id = cfg.first_id + i;
        s.quality = tags[i];
        if (tags[i] == Quality::Redundant) continue;
        s.scene = random_scene(rng);
        s.instruction = random_instruction(rng, s.scene);
        s.trajectory = expert_trajectory(s.scene, s.instruction, cfg.horizon);
        if (tags[i] == Quality::Noisy) {
            std::normal_distribution<double> noise(0.0, kNoiseSigma);
            for (auto& w : s.trajectory) w = {clamp_unit(w.x + noise(rng)), clamp_unit(w.y + noise(rng))};
        } else {
            clean_slots.push_back(i);
        }
    }

    std::uniform_int_distribution<std::size_t> source(0, clean_slots.empty() ? 0 : clean_slots.size() - 1);
    std::normal_distribution<double> jitter(0.0, kJitterSigma);
    for (std::size_t i = 0; i < cfg.n_samples; ++i) {
        if (tags[i] != Quality::Redundant) continue;
        const Sample& src = out[clean_slots[source(rng)]];
        Sample& s = out[i];
        s.scene = src.scene;
        s.instruction = src.instruction;
        s.trajectory = src.trajectory;
        for (auto& o : s.scene)
            o.position = {std::clamp(o.position.x + jitter(rng), 0.0, 1.0),
                          std::clamp(o.position.y + jitter(rng), 0.0, 1.0)};
        for (auto& w : s.trajectory) w = {clamp_unit(w.x + jitter(rng)), clamp_unit(w.y + jitter(rng))};
    }
    return out;
}

// ---- parsing, templates, counterexamples ------------------------------------

struct ParseRecord {
    Verb verb = Verb::Pick;
    Category target = Category::Cup;
    std::optional<Qualifier> qualifier;
    bool operator==(const ParseRecord&) const = default;
};

inline ParseRecord semantic_parse(const Instruction& ins) { return {ins.verb, ins.target, ins.qualifier}; }

enum class TemplateKind : std::uint8_t { ObjectSubstitution, SizeScaling, PositionChange };
inline constexpr std::array<std::string_view, 3> kTemplateNames = {"object-substitution", "size-scaling",
                                                                   "position-change"};
inline std::string_view name(TemplateKind k) { return kTemplateNames.at(static_cast<std::size_t>(k)); }

inline constexpr std::array<double, 2> kScaleFactors = {0.25, 3.0};
inline constexpr double kCornerLow = 0.1;
inline constexpr double kCornerHigh = 0.9;

struct PerturbationTemplate {
    TemplateKind kind = TemplateKind::ObjectSubstitution;
    Category substitute = Category::Cup; // ObjectSubstitution
    double scale_factor = 1.0;           // SizeScaling
    // PositionChange always moves the key object to the farthest of the four
    // corners (0.1|0.9, 0.1|0.9).
};

inline bool is_spatial(const ParseRecord& p) {
    return p.qualifier.has_value() || p.verb == Verb::PlaceLeftOf || p.verb == Verb::PlaceRightOf;
}

inline PerturbationTemplate select_template(const ParseRecord& parse, std::uint64_t seed) {
    PerturbationTemplate t;
    if (is_spatial(parse)) {
        t.kind = TemplateKind::PositionChange;
        return t;
    }
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    if (coin(rng)) {
        t.kind = TemplateKind::ObjectSubstitution;
        std::uniform_int_distribution<int> other(1, kNumCategories - 1);
        t.substitute = static_cast<Category>((static_cast<int>(parse.target) + other(rng)) % kNumCategories);
    } else {
        t.kind = TemplateKind::SizeScaling;
        t.scale_factor = kScaleFactors[coin(rng) ? 1 : 0];
    }
    return t;
}

inline Point farthest_corner(Point p) {
    Point best{kCornerLow, kCornerLow};
    double best_d = -1.0;
    for (double x : {kCornerLow, kCornerHigh})
        for (double y : {kCornerLow, kCornerHigh}) {
            const double d = distance(p, {x, y});
            if (d > best_d) best_d = d, best = {x, y};
        }
    return best;
}

// Edits one attribute of the key object; instruction and trajectory are
// copied untouched.
inline Sample instantiate_counterexample(const Sample& sample, const PerturbationTemplate& tmpl) {
    Sample out = sample;
    SceneObject& key = key_object(out.scene);
    switch (tmpl.kind) {
    case TemplateKind::ObjectSubstitution:
        require(tmpl.substitute != key.category, "substitute category equals the original category");
        key.category = tmpl.substitute;
        break;
    case TemplateKind::SizeScaling:
        require(tmpl.scale_factor > 0.0, "scale factor must be positive");
        key.size *= tmpl.scale_factor;
        break;
    case TemplateKind::PositionChange:
        key.position = farthest_corner(key.position);
        break;
    }
    return out;
}

// ---- evaluation --------------------------------------------------------------

struct Outcome {
    bool success = false;
    double error = 0.0;
};

inline double trajectory_error(const Trajectory& a, const Trajectory& b) {
    require(a.size() == b.size(), "trajectory lengths differ");
    require(!a.empty(), "empty trajectory");
    double total = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) total += distance(a[k], b[k]);
    return total / static_cast<double>(a.size());
}

inline Outcome outcome_from_error(double error) { return {error < kSuccessThreshold, error}; }

inline Outcome evaluate_success(const Sample& sample, const Trajectory& predicted) {
    require(predicted.size() == sample.trajectory.size(), "predicted trajectory length does not match the sample");
    const Trajectory expert = expert_trajectory(sample.scene, sample.instruction, predicted.size());
    return outcome_from_error(trajectory_error(predicted, expert));
}

} // namespace ftncfm::toy
