#pragma once

// Guide training and the two-stage assessment on toyworld samples.

#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "ftncfm/common/files.hpp"
#include "ftncfm/ft/influence.hpp"
#include "ftncfm/representation/policy.hpp"
#include "ftncfm/toyworld/world.hpp"

namespace ftncfm::ft {

struct GuideSchedule {
    std::size_t full_steps = 2000; // length of the standard training run
    double fraction = 0.15;
    double step_size = 0.05;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;

    std::size_t steps() const {
        require(fraction > 0.0 && fraction <= 1.0, "guide training fraction must lie in (0, 1]");
        return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(full_steps) - 1e-9));
    }
};

struct GuideModel {
    diff::ParamVector params;
    std::size_t steps = 0;
};

inline GuideModel train_guide(const rep::VlaPolicy& model, std::span<const rep::ModelInput> data,
                              const GuideSchedule& schedule) {
    require(!data.empty(), "guide training needs a nonempty dataset");
    std::mt19937_64 init(schedule.seed);
    GuideModel g;
    g.steps = schedule.steps();
    g.params = diff::train(model, model.initial_params(init), data,
                           diff::Schedule{g.steps, schedule.step_size, schedule.batch_size, schedule.seed + 1});
    return g;
}

struct AssessConfig {
    LissaConfig lissa;
    ModulationConfig modulation;
    double elite_percent = 5.0;
    std::size_t counterexamples = 1;
    bool uniform_fallback = false;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
};

struct Assessment {
    std::vector<InfluenceRecord> records;
    BaseScores base;
};

// Score_base for every sample, contrastive refinement for the top K%, then
// floored and normalized weights. The quality tags of `dataset` are not read.
inline Assessment assess(const rep::VlaPolicy& model, const diff::ParamVector& guide,
                         std::span<const toy::Sample> dataset, std::span<const toy::Sample> test_set,
                         const AssessConfig& cfg) {
    cfg.modulation.validate();
    require(!dataset.empty(), "assess: dataset is empty");
    require(cfg.counterexamples >= 1, "assess: need at least one counterexample per elite");
    const std::size_t n_elite = elite_count(cfg.elite_percent, dataset.size());

    const auto train_inputs = rep::model_inputs(dataset);
    const auto test_inputs = rep::model_inputs(test_set);
    Assessment out;
    out.base = score_base(model, guide, std::span<const rep::ModelInput>(train_inputs),
                          std::span<const rep::ModelInput>(test_inputs), cfg.lissa, cfg.seed, cfg.threads);

    std::vector<std::uint64_t> ids;
    for (const auto& s : dataset) ids.push_back(s.id);
    const auto elites = select_elites(out.base.scores, ids, n_elite);

    out.records.resize(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        auto& r = out.records[i];
        r.sample_id = dataset[i].id;
        r.score_base = out.base.scores[i];
        r.raw_weight = std::max(r.score_base, cfg.modulation.weight_floor);
    }

    parallel_for(elites.size(), cfg.threads, [&](std::size_t e) {
        const std::size_t i = elites[e];
        const toy::Sample& elite = dataset[i];
        const rep::ModelInput elite_in = train_inputs[i];
        double si = 0.0, sc = 0.0;
        for (std::size_t k = 0; k < cfg.counterexamples; ++k) {
            const auto tmpl = toy::select_template(toy::semantic_parse(elite.instruction),
                                                   cfg.seed ^ (elite.id * 0x9E3779B97F4A7C15ull + k));
            const auto contrast = rep::model_input(toy::instantiate_counterexample(elite, tmpl));
            const auto c = contrastive_scores(model, guide, out.base.test_gradient, elite_in, contrast);
            si += c.score_i;
            sc += c.score_contrast;
        }
        auto& r = out.records[i];
        r.is_elite = true;
        r.score_i = si / static_cast<double>(cfg.counterexamples);
        r.score_contrast = sc / static_cast<double>(cfg.counterexamples);
        r.raw_weight = modulate_weight(r.score_base, *r.score_i, *r.score_contrast, cfg.modulation);
    });

    normalize_weights(out.records, cfg.modulation.weight_floor, cfg.uniform_fallback);
    return out;
}

// ---- influence report ---------------------------------------------------------

inline std::string influence_csv(const std::vector<InfluenceRecord>& records) {
    std::ostringstream os;
    os << "sample_id,score_base,is_elite,score_i,score_contrast,weight\n";
    for (const auto& r : records) {
        os << r.sample_id << ',' << format_sig(r.score_base) << ',' << (r.is_elite ? 1 : 0) << ','
           << (r.score_i ? format_sig(*r.score_i) : "") << ',' << (r.score_contrast ? format_sig(*r.score_contrast) : "")
           << ',' << format_sig(r.weight) << '\n';
    }
    return os.str();
}

inline std::vector<InfluenceRecord> parse_influence_csv(const std::string& text, const std::string& origin) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != "sample_id,score_base,is_elite,score_i,score_contrast,weight")
        throw IoError(origin + ": unexpected influence CSV header");
    std::vector<InfluenceRecord> out;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (line.back() == ',') f.emplace_back();
        if (f.size() != 6) throw IoError(origin + ":" + std::to_string(line_no) + ": expected 6 fields");
        try {
            InfluenceRecord r;
            r.sample_id = std::stoull(f[0]);
            r.score_base = std::stod(f[1]);
            r.is_elite = f[2] == "1";
            if (!f[3].empty()) r.score_i = std::stod(f[3]);
            if (!f[4].empty()) r.score_contrast = std::stod(f[4]);
            r.weight = std::stod(f[5]);
            r.raw_weight = r.weight;
            out.push_back(r);
        } catch (const std::logic_error& e) {
            throw IoError(origin + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

inline void save_influence(const std::filesystem::path& path, const std::vector<InfluenceRecord>& records) {
    write_text(path, influence_csv(records));
}

inline std::vector<InfluenceRecord> load_influence(const std::filesystem::path& path) {
    return parse_influence_csv(read_text(path), path.string());
}

} // namespace ftncfm::ft
