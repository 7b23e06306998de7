#pragma once

// The pipeline as file-producing stages. Each stage reads what the previous
// ones wrote and builds any missing prerequisite first.
//
//   <out>/config.ini                     canonical config the directory belongs to, minus [run]
//   <out>/seed-<s>/dataset.jsonl         training set (no quality tags)
//   <out>/seed-<s>/test.jsonl            clean split used for the test gradient
//   <out>/seed-<s>/eval.jsonl            clean held-out tasks for downstream evaluation
//   <out>/seed-<s>/guide.ckpt            guide policy
//   <out>/seed-<s>/influence.csv         scores and normalized weights
//   <out>/seed-<s>/coreset.jsonl         decoded synthetic coreset
//   <out>/seed-<s>/coreset.sidecar       its continuous tensors
//   <out>/seed-<s>/discrepancy.csv       CF discrepancy per distillation step
//   <out>/seed-<s>/coreset-<method>.jsonl   selected baseline coresets
//   <out>/seed-<s>/policy-<method>.ckpt  downstream policies
//   <out>/seed-<s>/metrics-<method>.json downstream metrics
//   <out>/seed-<s>/ablation/<variant>/   coreset.jsonl, coreset.sidecar, policy.ckpt, metrics.json
//   <out>/seed-<s>/beta-<b>/             influence.csv, coreset.jsonl, coreset.sidecar, policy.ckpt, metrics.json
//   <out>/seed-<s>/projection.csv        2-D PCA of real and synthetic features
//   <out>/report.json, report.csv, ablation.json, ablation.csv, beta_sweep.csv
//   <out>/timings.json                   wall-times, kept out of every other file

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ftncfm/diffcore/checkpoint.hpp"
#include "ftncfm/harness/projection.hpp"
#include "ftncfm/harness/report.hpp"

namespace ftncfm::harness {

namespace fs = std::filesystem;

class Workspace {
public:
    Workspace(PipelineConfig cfg, fs::path out) : cfg_(std::move(cfg)), out_(std::move(out)) {
        cfg_.validate();
        claim();
    }

    const PipelineConfig& config() const noexcept { return cfg_; }
    const fs::path& out() const noexcept { return out_; }
    fs::path seed_dir(std::uint64_t seed) const { return out_ / ("seed-" + std::to_string(seed)); }

    std::map<std::uint64_t, std::map<std::string, double>>& timings() noexcept { return timings_; }

    // ---- stages ---------------------------------------------------------------

    void generate(std::uint64_t seed) {
        timed(seed, "generate", [&] {
            const Splits s = in_phase("generate", [&] { return make_splits(cfg_, seed); });
            const fs::path d = seed_dir(seed);
            toy::save_dataset(d / "dataset.jsonl", s.train, false);
            toy::save_dataset(d / "test.jsonl", s.test, false);
            toy::save_dataset(d / "eval.jsonl", s.eval, false);
        });
    }

    void assess(std::uint64_t seed) {
        ensure(seed_dir(seed) / "eval.jsonl", [&] { generate(seed); });
        timed(seed, "assess", [&] {
            const fs::path d = seed_dir(seed);
            const auto train = toy::load_dataset(d / "dataset.jsonl");
            const auto test = toy::load_dataset(d / "test.jsonl");
            const rep::VlaPolicy model(cfg_.dataset.horizon);
            const auto inputs = rep::model_inputs(train);
            const auto guide = in_phase("guide", [&] {
                return ft::train_guide(model, std::span<const rep::ModelInput>(inputs), guide_schedule(cfg_, seed)).params;
            });
            diff::save_checkpoint(d / "guide.ckpt", guide);
            const auto a = in_phase("assess", [&] { return ft::assess(model, guide, train, test, assess_config(cfg_, seed)); });
            ft::save_influence(d / "influence.csv", a.records);
        });
    }

    void distill(std::uint64_t seed) {
        ensure_assessed(seed);
        timed(seed, "distill", [&] {
            const SeedContext ctx = load_context(seed);
            const auto cs = distill_coreset(cfg_, ctx, weights_of(ctx.records));
            const fs::path d = seed_dir(seed);
            ncfm::export_coreset(cs.samples, d / "coreset.jsonl", d / "coreset.sidecar", coreset_first_id(cfg_));
            write_text(d / "discrepancy.csv", curve_csv(cs.curve));
        });
    }

    void train(std::uint64_t seed, const std::string& method) {
        check_method(method);
        if (method == "ft-ncfm") ensure(seed_dir(seed) / "coreset.sidecar", [&] { distill(seed); });
        else if (method == "influence-coreset") ensure_assessed(seed);
        else ensure(seed_dir(seed) / "eval.jsonl", [&] { generate(seed); });
        timed(seed, "train-" + method, [&] {
            const fs::path d = seed_dir(seed);
            const auto data = training_set(seed, method);
            const auto params = in_phase("downstream", [&] { return train_downstream(cfg_, data, seed); });
            diff::save_checkpoint(d / ("policy-" + method + ".ckpt"), params);
        });
    }

    Metrics evaluate(std::uint64_t seed, const std::string& method) {
        check_method(method);
        const fs::path d = seed_dir(seed);
        ensure(d / ("policy-" + method + ".ckpt"), [&] { train(seed, method); });
        Metrics m;
        timed(seed, "evaluate-" + method, [&] {
            m = evaluate_file(d / ("policy-" + method + ".ckpt"), seed);
            m.train_size = training_size(seed, method);
            write_metrics(d / ("metrics-" + method + ".json"), method, seed, m);
        });
        return m;
    }

    Metrics ablate(std::uint64_t seed, const std::string& variant) {
        check_variant(variant);
        const fs::path d = seed_dir(seed) / "ablation" / variant;
        Metrics m;
        if (variant == "full") {
            m = metrics_of(seed, "ft-ncfm");
            write_metrics(d / "metrics.json", variant, seed, m);
            return m;
        }
        ensure_assessed(seed);
        timed(seed, "ablate-" + variant, [&] {
            const SeedContext ctx = load_context(seed);
            const auto cs = distill_coreset(cfg_, ctx, ablation_weights(cfg_, ctx, variant));
            m = train_on_coreset(seed, d, cs.samples, ctx.splits.eval);
            write_metrics(d / "metrics.json", variant, seed, m);
        });
        return m;
    }

    Metrics beta_run(std::uint64_t seed, double beta) {
        PipelineConfig c = cfg_;
        c.modulation.beta = beta;
        c.validate();
        ensure_assessed(seed);
        const fs::path d = seed_dir(seed) / ("beta-" + exact(beta));
        Metrics m;
        timed(seed, "beta-" + exact(beta), [&] {
            SeedContext ctx = load_context(seed);
            const rep::VlaPolicy model(cfg_.dataset.horizon);
            ctx.records = in_phase("assess", [&] {
                return persisted(ft::assess(model, ctx.guide, ctx.splits.train, load_split(seed, "test"),
                                            assess_config(c, seed)).records);
            });
            ft::save_influence(d / "influence.csv", ctx.records);
            const auto cs = distill_coreset(c, ctx, weights_of(ctx.records));
            m = train_on_coreset(seed, d, cs.samples, ctx.splits.eval);
            write_metrics(d / "metrics.json", "ft-ncfm", seed, m);
        });
        return m;
    }

    void project(std::uint64_t seed) {
        ensure(seed_dir(seed) / "coreset.sidecar", [&] { distill(seed); });
        timed(seed, "project", [&] {
            const SeedContext ctx = load_context(seed);
            const auto syn = ncfm::load_sidecar(seed_dir(seed) / "coreset.sidecar");
            const Matrix syn_features = rep::featurize_synthetic(ctx.encoders, rep::stack(syn));
            Matrix all(ctx.features.rows() + syn_features.rows(), ctx.features.cols());
            all << ctx.features, syn_features;
            std::vector<double> weights = weights_of(ctx.records);
            std::vector<std::string> sources(ctx.records.size(), "real");
            for (Index i = 0; i < syn_features.rows(); ++i) {
                weights.push_back(1.0 / static_cast<double>(syn_features.rows()));
                sources.push_back("synthetic");
            }
            export_projection(all, weights, sources, seed_dir(seed) / "projection.csv");
        });
    }

    // ---- aggregates -------------------------------------------------------------

    RunReport report() {
        RunReport r;
        r.config_hash = config_hash(cfg_);
        r.seeds = cfg_.seeds;
        r.coreset_size = coreset_count(cfg_);
        for (const auto& name : method_names()) r.methods.push_back({name, {}});
        for (auto seed : cfg_.seeds) {
            for (auto& row : r.methods) row.per_seed.push_back(metrics_of(seed, row.method));
            r.weights.push_back(weight_stats(ft::load_influence(seed_dir(seed) / "influence.csv")));
            const fs::path curve = seed_dir(seed) / "discrepancy.csv";
            r.discrepancy.push_back(parse_curve_csv(read_text(curve), curve.string()));
        }
        r.comparisons = compare_all(r.methods, {{"ft-ncfm", "random-coreset"},
                                                {"ft-ncfm", "influence-coreset"},
                                                {"influence-coreset", "random-coreset"}});
        write_report(r, out_);
        return r;
    }

    AblationReport ablation(const std::vector<std::string>& variants = ablation_names()) {
        AblationReport r{config_hash(cfg_), cfg_.seeds, {}, {}};
        for (const auto& v : variants) r.variants.push_back({v, {}});
        for (auto seed : cfg_.seeds)
            for (auto& row : r.variants) row.per_seed.push_back(ablate(seed, row.method));
        std::vector<std::pair<std::string, std::string>> pairs;
        for (std::size_t i = 0; i + 1 < variants.size(); ++i) pairs.emplace_back(variants[i], variants[i + 1]);
        r.comparisons = compare_all(r.variants, pairs);
        write_ablation(r, out_);
        return r;
    }

    std::vector<BetaRow> sweep(const std::vector<double>& betas) {
        require(!betas.empty(), "beta sweep needs at least one beta");
        std::vector<BetaRow> rows;
        for (double beta : betas) {
            BetaRow row{beta, {"ft-ncfm", {}}};
            for (auto seed : cfg_.seeds) row.result.per_seed.push_back(beta_run(seed, beta));
            rows.push_back(std::move(row));
        }
        write_text(out_ / "beta_sweep.csv", beta_csv(rows));
        return rows;
    }

    // Merges this run's wall-times into timings.json.
    void write_timings() const {
        const fs::path p = out_ / "timings.json";
        Json j = Json::object();
        if (fs::exists(p)) {
            try {
                j = Json::parse(read_text(p));
            } catch (const Json::exception&) {
                j = Json::object();
            }
        }
        for (const auto& [seed, stages] : timings_)
            for (const auto& [stage, t] : stages) j[std::to_string(seed)][stage] = t;
        write_text(p, j.dump(2) + "\n");
    }

    // Phases 1-2 outputs of one seed, read back from disk.
    SeedContext load_context(std::uint64_t seed) const {
        const fs::path d = seed_dir(seed);
        const rep::VlaPolicy model(cfg_.dataset.horizon);
        SeedContext ctx{seed, {}, {}, {}, {}, rep::Encoders(cfg_.dataset.horizon), {}, {}};
        ctx.splits.train = toy::load_dataset(d / "dataset.jsonl");
        ctx.splits.eval = toy::load_dataset(d / "eval.jsonl");
        ctx.guide = diff::adopt_layout(model.layout(), diff::load_checkpoint(d / "guide.ckpt"));
        ctx.records = ft::load_influence(d / "influence.csv");
        if (ctx.records.size() != ctx.splits.train.size())
            throw IoError((d / "influence.csv").string() + ": record count does not match the dataset");
        attach_features(cfg_, ctx);
        return ctx;
    }

private:
    PipelineConfig cfg_;
    fs::path out_;
    std::map<std::uint64_t, std::map<std::string, double>> timings_;

    // An output directory belongs to one config; reusing it for another would
    // mix artifacts.
    void claim() {
        const std::string text = config_text(cfg_, false);
        const fs::path p = out_ / "config.ini";
        if (fs::exists(p)) {
            if (read_text(p) != text)
                throw ConfigError("'" + out_.string() + "' holds artifacts of a different config; use another --out");
            return;
        }
        write_text(p, text);
    }

    template <class F>
    void timed(std::uint64_t seed, const std::string& stage, F&& f) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        timings_[seed][stage] = seconds_since(t0);
    }

    template <class F>
    static void ensure(const fs::path& product, F&& make) {
        if (!fs::exists(product)) make();
    }

    void ensure_assessed(std::uint64_t seed) {
        ensure(seed_dir(seed) / "influence.csv", [&] { assess(seed); });
    }

    static void check_method(const std::string& method) {
        const auto& names = method_names();
        if (std::find(names.begin(), names.end(), method) == names.end())
            throw ConfigError("unknown method '" + method + "'");
    }

    static void check_variant(const std::string& variant) {
        const auto& names = ablation_names();
        if (std::find(names.begin(), names.end(), variant) == names.end())
            throw ConfigError("unknown ablation variant '" + variant + "'");
    }

    std::vector<Sample> load_split(std::uint64_t seed, const std::string& name) const {
        return toy::load_dataset(seed_dir(seed) / (name + ".jsonl"));
    }

    std::vector<Sample> training_set(std::uint64_t seed, const std::string& method) const {
        const fs::path d = seed_dir(seed);
        if (method == "ft-ncfm") return toy::load_dataset(d / "coreset.jsonl");
        const auto train = load_split(seed, "dataset");
        if (method == "full-data") return train;
        const std::size_t m = coreset_count(cfg_);
        const auto selected = method == "random-coreset"
                                  ? random_coreset(train, m, seed)
                                  : influence_coreset(train, ft::load_influence(d / "influence.csv"), m);
        toy::save_dataset(d / ("coreset-" + method + ".jsonl"), selected, false);
        return selected;
    }

    std::size_t training_size(std::uint64_t seed, const std::string& method) const {
        if (method == "full-data") return cfg_.dataset.n_samples;
        if (method == "ft-ncfm") return toy::load_dataset(seed_dir(seed) / "coreset.jsonl").size();
        return coreset_count(cfg_);
    }

    Metrics evaluate_file(const fs::path& policy, std::uint64_t seed) const {
        const rep::VlaPolicy model(cfg_.dataset.horizon);
        const auto params = diff::adopt_layout(model.layout(), diff::load_checkpoint(policy));
        return in_phase("evaluate", [&] { return evaluate_policy(cfg_, params, load_split(seed, "eval")); });
    }

    Metrics train_on_coreset(std::uint64_t seed, const fs::path& d, const std::vector<rep::SyntheticSample>& syn,
                             const std::vector<Sample>& eval) const {
        ncfm::export_coreset(syn, d / "coreset.jsonl", d / "coreset.sidecar", coreset_first_id(cfg_));
        const auto data = toy::load_dataset(d / "coreset.jsonl");
        const auto params = in_phase("downstream", [&] { return train_downstream(cfg_, data, seed); });
        diff::save_checkpoint(d / "policy.ckpt", params);
        Metrics m = in_phase("evaluate", [&] { return evaluate_policy(cfg_, params, eval); });
        m.train_size = data.size();
        return m;
    }

    void write_metrics(const fs::path& path, const std::string& method, std::uint64_t seed, const Metrics& m) const {
        Json j = {{"method", method}, {"seed", seed}, {"config_hash", config_hash(cfg_)}};
        j.update(metrics_json(m));
        write_text(path, j.dump(2) + "\n");
    }

    Metrics metrics_of(std::uint64_t seed, const std::string& method) {
        const fs::path p = seed_dir(seed) / ("metrics-" + method + ".json");
        if (!fs::exists(p)) return evaluate(seed, method);
        try {
            return metrics_from(Json::parse(read_text(p)));
        } catch (const Json::exception& e) {
            throw IoError(p.string() + ": " + e.what());
        }
    }
};

} // namespace ftncfm::harness
