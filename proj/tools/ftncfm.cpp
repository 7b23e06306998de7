// ftncfm: run the pipeline stage by stage from the command line.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ftncfm/harness/artifacts.hpp"

using namespace ftncfm;
using harness::Workspace;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kNumeric = 3, kIo = 4 };

struct Globals {
    std::string config;
    std::uint64_t seed = 0;
    bool has_seed = false;
    std::string out = "out";
    std::size_t threads = 0;
};

harness::PipelineConfig resolve(const Globals& g) {
    harness::PipelineConfig cfg = g.config.empty() ? harness::PipelineConfig{} : harness::load_config(g.config);
    if (g.has_seed) cfg.seeds = {g.seed};
    if (g.threads > 0) cfg.threads = g.threads;
    cfg.validate();
    return cfg;
}

std::vector<std::string> pick(const std::string& choice, const std::vector<std::string>& all) {
    if (choice == "all") return all;
    return {choice};
}

void print_rows(const std::vector<harness::MethodRow>& rows) {
    for (const auto& r : rows)
        std::printf("%-18s mean success %.3f  std %.3f\n", r.method.c_str(), r.mean_success(), r.std_success());
}

void print_paired(const std::vector<harness::Comparison>& cs) {
    for (const auto& c : cs)
        std::printf("%s vs %s: diff %+.4f  p %s%s\n", c.a.c_str(), c.b.c_str(), c.result.mean_diff,
                    c.result.p < 1e-12 ? "< 1e-12" : harness::exact(c.result.p).c_str(),
                    c.result.degenerate ? "  (zero variance)" : "");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Influence-weighted coreset distillation on a toy manipulation world"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--config", g.config, "Config file");
    auto* seed_opt = app.add_option("--seed", g.seed, "Run this seed only");
    app.add_option("--out", g.out, "Output directory")->capture_default_str();
    app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);

    std::string method = "all", variant = "all";
    std::vector<double> betas = harness::default_betas();

    auto* generate = app.add_subcommand("generate", "Write the training, test and evaluation splits");
    auto* assess = app.add_subcommand("assess", "Train the guide and write influence.csv");
    auto* distill = app.add_subcommand("distill", "Distill the synthetic coreset");
    auto* train = app.add_subcommand("train", "Train downstream policies");
    train->add_option("--method", method, "ft-ncfm, influence-coreset, random-coreset, full-data or all")
        ->capture_default_str();
    auto* evaluate = app.add_subcommand("evaluate", "Evaluate downstream policies");
    evaluate->add_option("--method", method, "ft-ncfm, influence-coreset, random-coreset, full-data or all")
        ->capture_default_str();
    auto* ablate = app.add_subcommand("ablate", "Run the weighting ablations");
    ablate->add_option("--variant", variant, "full, no-contrastive, random-weights or all")->capture_default_str();
    auto* sweep = app.add_subcommand("sweep-beta", "Rerun the pipeline for several beta values");
    sweep->add_option("--betas", betas, "Beta values")->delimiter(',');
    auto* report = app.add_subcommand("report", "Build missing stages and write report.json / report.csv");
    auto* project = app.add_subcommand("project", "Write a 2-D projection of real and synthetic features");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfig;
    }
    g.has_seed = seed_opt->count() > 0;

    try {
        Workspace ws(resolve(g), g.out);
        const auto& seeds = ws.config().seeds;
        auto each_seed = [&](auto&& f) {
            for (auto s : seeds) f(s);
        };

        if (generate->parsed()) each_seed([&](auto s) { ws.generate(s); });
        if (assess->parsed()) each_seed([&](auto s) { ws.assess(s); });
        if (distill->parsed()) each_seed([&](auto s) { ws.distill(s); });
        if (train->parsed())
            each_seed([&](auto s) {
                for (const auto& m : pick(method, harness::method_names())) ws.train(s, m);
            });
        if (evaluate->parsed())
            each_seed([&](auto s) {
                for (const auto& m : pick(method, harness::method_names())) {
                    const auto r = ws.evaluate(s, m);
                    std::printf("seed %llu %-18s success %.3f  mean error %.4f\n", static_cast<unsigned long long>(s),
                                m.c_str(), r.success, r.mean_error);
                }
            });
        if (ablate->parsed()) {
            const auto r = ws.ablation(pick(variant, harness::ablation_names()));
            print_rows(r.variants);
            print_paired(r.comparisons);
        }
        if (sweep->parsed()) {
            for (const auto& row : ws.sweep(betas))
                std::printf("beta %-5s mean success %.3f  std %.3f\n", harness::exact(row.beta).c_str(),
                            row.result.mean_success(), row.result.std_success());
        }
        if (report->parsed()) {
            const auto r = ws.report();
            print_rows(r.methods);
            print_paired(r.comparisons);
        }
        if (project->parsed()) each_seed([&](auto s) { ws.project(s); });
        ws.write_timings();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kNumeric;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kIo;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kOk;
}
