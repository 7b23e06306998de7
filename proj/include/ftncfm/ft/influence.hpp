#pragma once

// Base influence scores, contrastive refinement of the elite set and the
// final sampling weights.
//
// Sign convention: the stored score is +g_test^T (H + damping I)^-1 g_train,
// the negated influence on test loss, so helpful samples score positive.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ftncfm/common/parallel.hpp"
#include "ftncfm/diffcore/objective.hpp"
#include "ftncfm/ft/lissa.hpp"

namespace ftncfm::ft {

struct ModulationConfig {
    double beta = 1.0;
    double weight_floor = 1e-6;

    void validate() const {
        require(beta >= 0.0, "beta must be nonnegative");
        require(weight_floor > 0.0, "weight floor must be positive");
    }
};

// w = base * (1 + tanh(beta * (score_i - score_contrast))), at least the floor.
inline double modulate_weight(double score_base, double score_i, double score_contrast, const ModulationConfig& cfg) {
    const double w = score_base * (1.0 + std::tanh(cfg.beta * (score_i - score_contrast)));
    return std::max(w, cfg.weight_floor);
}

// Mean per-sample loss gradient over `data`.
template <diff::DifferentiableModel M>
ParamVector mean_gradient(const M& model, const ParamVector& params, std::span<const typename M::Example> data) {
    require(!data.empty(), "mean_gradient: empty set");
    return diff::gradient(model, params, diff::full_batch<M>(model, data));
}

template <diff::DifferentiableModel M>
std::vector<ParamVector> per_sample_gradients(const M& model, const ParamVector& params,
                                              std::span<const typename M::Example> data, std::size_t threads = 1) {
    std::vector<ParamVector> out(data.size());
    parallel_for(data.size(), threads, [&](std::size_t i) {
        const std::size_t idx[1] = {i};
        out[i] = diff::gradient(model, params, model.collate(data, idx));
    });
    return out;
}

// Score of each train gradient against the shared test-side vector s.
inline std::vector<double> scores_from_gradients(const ParamVector& s, std::span<const ParamVector> train_gradients) {
    std::vector<double> out;
    out.reserve(train_gradients.size());
    for (const auto& g : train_gradients) out.push_back(s.dot(g));
    return out;
}

struct BaseScores {
    ParamVector test_gradient;  // mean over the test set
    ParamVector test_ihvp;      // (H + damping I)^-1 applied to it
    std::vector<double> scores; // one per training sample
};

// The mean over test samples of g_test^T H^-1 g_i equals (H^-1 mean g_test)^T g_i,
// so one LiSSA run on the mean test gradient serves every train sample.
template <diff::DifferentiableModel M>
BaseScores score_base(const M& model, const ParamVector& params, std::span<const typename M::Example> train_set,
                      std::span<const typename M::Example> test_set, const LissaConfig& cfg, std::uint64_t seed,
                      std::size_t threads = 1) {
    require(!test_set.empty(), "score_base: test set is empty");
    BaseScores out;
    out.test_gradient = mean_gradient(model, params, test_set);
    out.test_ihvp = lissa_ihvp(model, params, train_set, out.test_gradient, cfg, seed);
    out.scores.resize(train_set.size());
    parallel_for(train_set.size(), threads, [&](std::size_t i) {
        const std::size_t idx[1] = {i};
        out.scores[i] = out.test_ihvp.dot(diff::gradient(model, params, model.collate(train_set, idx)));
    });
    return out;
}

struct ContrastScores {
    double score_i = 0.0;
    double score_contrast = 0.0;
};

// Gradient dot products against the mean test gradient.
template <diff::DifferentiableModel M>
ContrastScores contrastive_scores(const M& model, const ParamVector& params, const ParamVector& test_gradient,
                                  const typename M::Example& elite, const typename M::Example& contrast) {
    const typename M::Example one[1] = {elite};
    const typename M::Example other[1] = {contrast};
    const std::size_t idx[1] = {0};
    return {test_gradient.dot(diff::gradient(model, params, model.collate(one, idx))),
            test_gradient.dot(diff::gradient(model, params, model.collate(other, idx)))};
}

// ---- elites and records ----------------------------------------------------

inline std::size_t elite_count(double k_percent, std::size_t n) {
    require(k_percent >= 0.0 && k_percent <= 100.0, "elite percentage must lie in [0, 100]");
    const auto count = static_cast<std::size_t>(std::floor(k_percent * static_cast<double>(n) / 100.0 + 1e-9));
    require(k_percent == 0.0 || count >= 1, "elite percentage selects less than one sample");
    return count;
}

// Indices of the `count` highest scores; ties go to the smaller id.
inline std::vector<std::size_t> select_elites(std::span<const double> scores, std::span<const std::uint64_t> ids,
                                              std::size_t count) {
    require(scores.size() == ids.size(), "select_elites: scores and ids differ in length");
    require(count <= scores.size(), "select_elites: more elites than samples");
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return ids[a] < ids[b];
    });
    order.resize(count);
    return order;
}

struct InfluenceRecord {
    std::uint64_t sample_id = 0;
    double score_base = 0.0;
    bool is_elite = false;
    std::optional<double> score_i;
    std::optional<double> score_contrast;
    double raw_weight = 0.0; // before normalization
    double weight = 0.0;     // normalized, sums to 1 over the dataset
    bool operator==(const InfluenceRecord&) const = default;
};

class DegenerateWeights : public NumericError {
public:
    DegenerateWeights() : NumericError("every influence weight sits at the floor", "weight normalization") {}
};

// Fills `weight` from `raw_weight`. Throws DegenerateWeights when nothing rises
// above the floor unless `uniform_fallback` is set.
inline void normalize_weights(std::vector<InfluenceRecord>& records, double floor, bool uniform_fallback) {
    require(!records.empty(), "no records to normalize");
    double total = 0.0;
    bool any_above = false;
    for (const auto& r : records) {
        total += r.raw_weight;
        any_above = any_above || r.raw_weight > floor;
    }
    if (!any_above) {
        if (!uniform_fallback) throw DegenerateWeights();
        for (auto& r : records) r.weight = 1.0 / static_cast<double>(records.size());
        return;
    }
    for (auto& r : records) r.weight = r.raw_weight / total;
}

} // namespace ftncfm::ft
