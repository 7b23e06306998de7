#pragma once

// Phases 1-3 per seed, the baselines, downstream evaluation, ablations and the
// beta sweep, all in memory. artifacts.hpp runs the same steps through files.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "ftncfm/ft/assess.hpp"
#include "ftncfm/harness/config.hpp"
#include "ftncfm/harness/stats.hpp"
#include "ftncfm/ncfm/distill.hpp"
#include "ftncfm/ncfm/export.hpp"
#include "ftncfm/representation/policy.hpp"
#include "ftncfm/toyworld/dataset_io.hpp"

namespace ftncfm::harness {

using diff::Index;
using diff::Matrix;
using toy::Sample;

// Independent streams per stage, all derived from one run seed.
enum class Stream : std::uint64_t {
    TestSplit = 1,
    EvalSplit,
    Guide,
    Assess,
    Distill,
    Downstream,
    RandomCoreset,
    RandomWeights,
};

inline std::uint64_t derive_seed(std::uint64_t seed, Stream s) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(s) + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline const std::vector<std::string>& method_names() {
    static const std::vector<std::string> names = {"ft-ncfm", "influence-coreset", "random-coreset", "full-data"};
    return names;
}

inline const std::vector<std::string>& ablation_names() {
    static const std::vector<std::string> names = {"full", "no-contrastive", "random-weights"};
    return names;
}

// ---- splits -----------------------------------------------------------------

struct Splits {
    std::vector<Sample> train;
    std::vector<Sample> test; // clean, ids after train
    std::vector<Sample> eval; // clean, ids after test
};

inline std::size_t test_size(const PipelineConfig& cfg) {
    return static_cast<std::size_t>(std::ceil(cfg.test_fraction * static_cast<double>(cfg.dataset.n_samples) - 1e-9));
}

inline Splits make_splits(const PipelineConfig& cfg, std::uint64_t seed) {
    Splits s;
    toy::DatasetConfig d = cfg.dataset;
    d.seed = seed;
    d.first_id = 0;
    s.train = toy::generate_dataset(d);
    const std::size_t n_test = test_size(cfg);
    s.test = toy::generate_dataset(
        {n_test, 0.0, 0.0, derive_seed(seed, Stream::TestSplit), cfg.dataset.horizon, cfg.dataset.n_samples});
    s.eval = toy::generate_dataset({cfg.eval_samples, 0.0, 0.0, derive_seed(seed, Stream::EvalSplit),
                                    cfg.dataset.horizon, cfg.dataset.n_samples + n_test});
    return s;
}

// ---- phases 1 and 2 ---------------------------------------------------------

inline ft::GuideSchedule guide_schedule(const PipelineConfig& cfg, std::uint64_t seed) {
    ft::GuideSchedule g = cfg.guide;
    g.seed = derive_seed(seed, Stream::Guide);
    return g;
}

inline ft::AssessConfig assess_config(const PipelineConfig& cfg, std::uint64_t seed) {
    ft::AssessConfig a;
    a.lissa = cfg.lissa;
    a.modulation = cfg.modulation;
    a.elite_percent = cfg.elite_percent;
    a.counterexamples = cfg.counterexamples;
    a.uniform_fallback = cfg.uniform_fallback;
    a.seed = derive_seed(seed, Stream::Assess);
    a.threads = cfg.threads;
    return a;
}

// Records as they read back from the influence CSV, so in-memory and
// file-based runs see the same weights.
inline std::vector<ft::InfluenceRecord> persisted(const std::vector<ft::InfluenceRecord>& records) {
    return ft::parse_influence_csv(ft::influence_csv(records), "<memory>");
}

inline std::vector<double> weights_of(const std::vector<ft::InfluenceRecord>& records) {
    std::vector<double> w;
    w.reserve(records.size());
    for (const auto& r : records) w.push_back(r.weight);
    return w;
}

struct SeedContext {
    std::uint64_t seed = 0;
    Splits splits;
    std::vector<rep::ModelInput> train_inputs;
    diff::ParamVector guide;
    std::vector<ft::InfluenceRecord> records;
    rep::Encoders encoders;
    Matrix features; // Phi of every training sample under the frozen guide encoders
    std::map<std::string, double> seconds;
};

// Runs one stage, prefixing any failure with the stage name while keeping its kind.
template <class F>
auto in_phase(const std::string& phase, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const NumericError& e) {
        throw NumericError(e.what(), "phase " + phase);
    } catch (const ConfigError& e) {
        throw ConfigError(phase + ": " + e.what());
    } catch (const IoError& e) {
        throw IoError(phase + ": " + e.what());
    } catch (const ContractViolation& e) {
        throw ContractViolation(phase + ": " + e.what());
    }
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline rep::Encoders frozen_encoders(const rep::VlaPolicy& model, const diff::ParamVector& guide) {
    return model.extract_encoders(guide);
}

inline void attach_features(const PipelineConfig& cfg, SeedContext& ctx) {
    const rep::VlaPolicy model(cfg.dataset.horizon);
    ctx.train_inputs = rep::model_inputs(ctx.splits.train);
    ctx.encoders = frozen_encoders(model, ctx.guide);
    ctx.features = rep::featurize_all(ctx.encoders, ctx.train_inputs);
}

inline SeedContext prepare_seed(const PipelineConfig& cfg, std::uint64_t seed) {
    const rep::VlaPolicy model(cfg.dataset.horizon);
    SeedContext ctx{seed, {}, {}, {}, {}, rep::Encoders(cfg.dataset.horizon), {}, {}};
    auto t0 = std::chrono::steady_clock::now();
    ctx.splits = in_phase("generate", [&] { return make_splits(cfg, seed); });
    ctx.train_inputs = rep::model_inputs(ctx.splits.train);
    ctx.seconds["generate"] = seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    ctx.guide = in_phase("guide", [&] { return ft::train_guide(model, ctx.train_inputs, guide_schedule(cfg, seed)).params; });
    ctx.seconds["guide"] = seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    ctx.records = in_phase("assess", [&] {
        return persisted(ft::assess(model, ctx.guide, ctx.splits.train, ctx.splits.test, assess_config(cfg, seed)).records);
    });
    ctx.seconds["assess"] = seconds_since(t0);

    attach_features(cfg, ctx);
    return ctx;
}

// ---- phase 3 ----------------------------------------------------------------

inline ncfm::DistillConfig distill_config(const PipelineConfig& cfg, std::uint64_t seed) {
    ncfm::DistillConfig d = cfg.distill;
    d.seed = derive_seed(seed, Stream::Distill);
    return d;
}

inline ncfm::SyntheticCoreset distill_coreset(const PipelineConfig& cfg, const SeedContext& ctx,
                                              const std::vector<double>& weights) {
    return in_phase("distill", [&] { return ncfm::distill(ctx.features, weights, ctx.encoders, distill_config(cfg, ctx.seed)); });
}

// Synthetic samples get ids after every real split.
inline std::uint64_t coreset_first_id(const PipelineConfig& cfg) {
    return cfg.dataset.n_samples + test_size(cfg) + cfg.eval_samples;
}

// ---- baselines and ablation weights ------------------------------------------

inline std::size_t coreset_count(const PipelineConfig& cfg) {
    return ncfm::coreset_size(cfg.distill.eta, cfg.dataset.n_samples);
}

inline std::vector<Sample> random_coreset(const std::vector<Sample>& train, std::size_t m, std::uint64_t seed) {
    require(m <= train.size(), "random coreset larger than the dataset");
    std::vector<std::size_t> idx(train.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(seed, Stream::RandomCoreset));
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
    std::vector<Sample> out;
    for (auto i : idx) out.push_back(train[i]);
    return out;
}

// The m highest Score_base samples, best first.
inline std::vector<Sample> influence_coreset(const std::vector<Sample>& train,
                                             const std::vector<ft::InfluenceRecord>& records, std::size_t m) {
    require(records.size() == train.size(), "influence coreset: one record per sample");
    std::vector<double> scores;
    std::vector<std::uint64_t> ids;
    for (std::size_t i = 0; i < train.size(); ++i) {
        require(records[i].sample_id == train[i].id, "influence coreset: records are not aligned with the dataset");
        scores.push_back(records[i].score_base);
        ids.push_back(train[i].id);
    }
    std::vector<Sample> out;
    for (auto i : ft::select_elites(scores, ids, m)) out.push_back(train[i]);
    return out;
}

inline std::vector<double> normalized(std::vector<double> w) {
    double total = 0.0;
    for (double v : w) total += v;
    if (!(total > 0.0) || !std::isfinite(total)) throw NumericError("weights do not sum to a positive number", "weights");
    for (double& v : w) v /= total;
    return w;
}

inline std::vector<double> ablation_weights(const PipelineConfig& cfg, const SeedContext& ctx,
                                            const std::string& variant) {
    if (variant == "full") return weights_of(ctx.records);
    if (variant == "no-contrastive") {
        const bool refined = std::any_of(ctx.records.begin(), ctx.records.end(), [](const auto& r) { return r.is_elite; });
        if (!refined) return weights_of(ctx.records);
        std::vector<ft::InfluenceRecord> recs = ctx.records;
        for (auto& r : recs) r.raw_weight = std::max(r.score_base, cfg.modulation.weight_floor);
        ft::normalize_weights(recs, cfg.modulation.weight_floor, cfg.uniform_fallback);
        return weights_of(persisted(recs));
    }
    if (variant == "random-weights") {
        std::mt19937_64 rng(derive_seed(ctx.seed, Stream::RandomWeights));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::vector<double> w(ctx.records.size());
        for (auto& v : w) {
            do v = u(rng);
            while (v == 0.0);
        }
        return normalized(std::move(w));
    }
    throw ConfigError("unknown ablation variant '" + variant + "'");
}

// ---- downstream ---------------------------------------------------------------

struct Metrics {
    double success = 0.0;
    double mean_error = 0.0;
    std::size_t train_size = 0;
};

inline diff::ParamVector train_downstream(const PipelineConfig& cfg, const std::vector<Sample>& data,
                                          std::uint64_t seed) {
    require(!data.empty(), "downstream training set is empty");
    const rep::VlaPolicy model(cfg.dataset.horizon);
    const std::uint64_t s = derive_seed(seed, Stream::Downstream);
    std::mt19937_64 init(s);
    diff::Schedule sched = cfg.downstream;
    sched.seed = s + 1;
    const auto inputs = rep::model_inputs(data);
    return diff::train(model, model.initial_params(init), std::span<const rep::ModelInput>(inputs), sched);
}

inline Metrics evaluate_policy(const PipelineConfig& cfg, const diff::ParamVector& params,
                               const std::vector<Sample>& eval) {
    require(!eval.empty(), "evaluation set is empty");
    const rep::VlaPolicy model(cfg.dataset.horizon);
    const auto inputs = rep::model_inputs(eval);
    const Matrix pred = model.predict(params, rep::stack_all(inputs));
    Metrics m;
    for (std::size_t i = 0; i < eval.size(); ++i) {
        const auto o = toy::evaluate_success(eval[i], rep::trajectory_from_row(pred.row(static_cast<Index>(i))));
        m.success += o.success ? 1.0 : 0.0;
        m.mean_error += o.error;
    }
    m.success /= static_cast<double>(eval.size());
    m.mean_error /= static_cast<double>(eval.size());
    return m;
}

inline Metrics downstream_metrics(const PipelineConfig& cfg, const SeedContext& ctx, const std::vector<Sample>& data) {
    Metrics m = in_phase("downstream", [&] { return evaluate_policy(cfg, train_downstream(cfg, data, ctx.seed), ctx.splits.eval); });
    m.train_size = data.size();
    return m;
}

// ---- reports ------------------------------------------------------------------

struct MethodRow {
    std::string method;
    std::vector<Metrics> per_seed;

    std::vector<double> success() const {
        std::vector<double> v;
        for (const auto& m : per_seed) v.push_back(m.success);
        return v;
    }
    double mean_success() const {
        const auto v = success();
        return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    }
    double std_success() const {
        const auto v = success();
        if (v.size() < 2) return 0.0;
        const double mu = mean_success();
        double ss = 0.0;
        for (double x : v) ss += (x - mu) * (x - mu);
        return std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
};

struct WeightStats {
    double sum = 0.0, min = 0.0, max = 0.0, entropy = 0.0;
    std::size_t elites = 0;
};

inline WeightStats weight_stats(const std::vector<ft::InfluenceRecord>& records) {
    WeightStats s;
    s.min = records.empty() ? 0.0 : records.front().weight;
    s.max = s.min;
    for (const auto& r : records) {
        s.sum += r.weight;
        s.min = std::min(s.min, r.weight);
        s.max = std::max(s.max, r.weight);
        if (r.weight > 0.0) s.entropy -= r.weight * std::log(r.weight);
        s.elites += r.is_elite ? 1 : 0;
    }
    return s;
}

struct Comparison {
    std::string a, b;
    PairedResult result;
};

struct RunReport {
    std::string config_hash;
    std::vector<std::uint64_t> seeds;
    std::size_t coreset_size = 0;
    std::vector<MethodRow> methods;
    std::vector<WeightStats> weights;              // per seed
    std::vector<std::vector<double>> discrepancy;  // per seed, one value per distillation step
    std::vector<Comparison> comparisons;
    std::vector<std::map<std::string, double>> seconds; // per seed; not part of the content

    const MethodRow& row(const std::string& name) const {
        for (const auto& r : methods)
            if (r.method == name) return r;
        throw ContractViolation("no method '" + name + "' in the report");
    }
};

inline std::vector<Comparison> compare_all(const std::vector<MethodRow>& rows,
                                           const std::vector<std::pair<std::string, std::string>>& pairs) {
    std::vector<Comparison> out;
    if (rows.empty() || rows.front().per_seed.size() < 2) return out;
    auto find = [&](const std::string& n) -> const MethodRow& {
        for (const auto& r : rows)
            if (r.method == n) return r;
        throw ContractViolation("no method '" + n + "'");
    };
    for (const auto& [a, b] : pairs) {
        const auto va = find(a).success(), vb = find(b).success();
        out.push_back({a, b, paired_compare(va, vb)});
    }
    return out;
}

struct SeedOutcome {
    std::map<std::string, Metrics> metrics;
    std::vector<double> curve;
    WeightStats weights;
    std::map<std::string, double> seconds;
};

inline SeedOutcome run_seed(const PipelineConfig& cfg, std::uint64_t seed) {
    SeedContext ctx = prepare_seed(cfg, seed);
    SeedOutcome out;
    out.weights = weight_stats(ctx.records);

    auto t0 = std::chrono::steady_clock::now();
    const auto cs = distill_coreset(cfg, ctx, weights_of(ctx.records));
    ctx.seconds["distill"] = seconds_since(t0);
    out.curve = cs.curve;

    t0 = std::chrono::steady_clock::now();
    const std::size_t m = coreset_count(cfg);
    out.metrics["ft-ncfm"] = downstream_metrics(cfg, ctx, ncfm::decode_coreset(cs.samples, coreset_first_id(cfg)));
    out.metrics["influence-coreset"] = downstream_metrics(cfg, ctx, influence_coreset(ctx.splits.train, ctx.records, m));
    out.metrics["random-coreset"] = downstream_metrics(cfg, ctx, random_coreset(ctx.splits.train, m, seed));
    out.metrics["full-data"] = downstream_metrics(cfg, ctx, ctx.splits.train);
    ctx.seconds["downstream"] = seconds_since(t0);
    out.seconds = ctx.seconds;
    return out;
}

inline RunReport run_pipeline(const PipelineConfig& cfg) {
    cfg.validate();
    RunReport rep;
    rep.config_hash = config_hash(cfg);
    rep.seeds = cfg.seeds;
    rep.coreset_size = coreset_count(cfg);
    for (const auto& name : method_names()) rep.methods.push_back({name, {}});
    for (auto seed : cfg.seeds) {
        SeedOutcome o = run_seed(cfg, seed);
        for (auto& row : rep.methods) row.per_seed.push_back(o.metrics.at(row.method));
        rep.weights.push_back(o.weights);
        rep.discrepancy.push_back(std::move(o.curve));
        rep.seconds.push_back(std::move(o.seconds));
    }
    rep.comparisons = compare_all(rep.methods, {{"ft-ncfm", "random-coreset"},
                                                {"ft-ncfm", "influence-coreset"},
                                                {"influence-coreset", "random-coreset"}});
    return rep;
}

struct AblationReport {
    std::string config_hash;
    std::vector<std::uint64_t> seeds;
    std::vector<MethodRow> variants;
    std::vector<Comparison> comparisons;
};

inline AblationReport run_ablation(const PipelineConfig& cfg, const std::vector<std::string>& variants = ablation_names()) {
    cfg.validate();
    AblationReport rep{config_hash(cfg), cfg.seeds, {}, {}};
    for (const auto& v : variants) rep.variants.push_back({v, {}});
    for (auto seed : cfg.seeds) {
        const SeedContext ctx = prepare_seed(cfg, seed);
        for (auto& row : rep.variants) {
            const auto cs = distill_coreset(cfg, ctx, ablation_weights(cfg, ctx, row.method));
            row.per_seed.push_back(
                downstream_metrics(cfg, ctx, ncfm::decode_coreset(cs.samples, coreset_first_id(cfg))));
        }
    }
    std::vector<std::pair<std::string, std::string>> pairs;
    for (std::size_t i = 0; i + 1 < variants.size(); ++i) pairs.emplace_back(variants[i], variants[i + 1]);
    rep.comparisons = compare_all(rep.variants, pairs);
    return rep;
}

struct BetaRow {
    double beta = 0.0;
    MethodRow result;
};

// The full pipeline per beta; only FT-NCFM is retrained.
inline std::vector<BetaRow> beta_sweep(const PipelineConfig& cfg, const std::vector<double>& betas) {
    require(!betas.empty(), "beta sweep needs at least one beta");
    std::vector<BetaRow> rows;
    for (double beta : betas) {
        PipelineConfig c = cfg;
        c.modulation.beta = beta;
        c.validate();
        BetaRow row{beta, {"ft-ncfm", {}}};
        for (auto seed : c.seeds) {
            const SeedContext ctx = prepare_seed(c, seed);
            const auto cs = distill_coreset(c, ctx, weights_of(ctx.records));
            row.result.per_seed.push_back(
                downstream_metrics(c, ctx, ncfm::decode_coreset(cs.samples, coreset_first_id(c))));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline const std::vector<double>& default_betas() {
    static const std::vector<double> b = {0.1, 0.5, 1.0, 1.5, 2.0};
    return b;
}

} // namespace ftncfm::harness
