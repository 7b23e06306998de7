#pragma once

// Pipeline configuration and its INI-style file format:
//
//   [dataset]    n_samples fraction_noisy fraction_redundant horizon test_fraction eval_samples
//   [guide]      full_steps fraction step_size batch_size
//   [lissa]      depth damping batch_size scale
//   [assess]     beta weight_floor elite_percent counterexamples uniform_fallback
//   [distill]    eta n_frequencies steps generator_step sampler_step sampler_updates
//                real_batch noise_dim freq_scale
//   [downstream] steps step_size batch_size
//   [run]        seeds threads
//
// Every key is optional; unknown sections or keys are errors.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <boost/algorithm/string.hpp>
#include <boost/lexical_cast.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "ftncfm/common/files.hpp"
#include "ftncfm/diffcore/objective.hpp"
#include "ftncfm/ft/assess.hpp"
#include "ftncfm/ncfm/distill.hpp"
#include "ftncfm/toyworld/world.hpp"

namespace ftncfm::harness {

struct PipelineConfig {
    toy::DatasetConfig dataset;
    double test_fraction = 0.1;
    std::size_t eval_samples = 200;
    ft::GuideSchedule guide{3000, 0.15, 0.05, 32, 0};
    ft::LissaConfig lissa{50, 0.01, 32, 50.0};
    ft::ModulationConfig modulation;
    double elite_percent = 5.0;
    std::size_t counterexamples = 1;
    bool uniform_fallback = false;
    ncfm::DistillConfig distill;
    diff::Schedule downstream{3000, 0.05, 32, 0};
    std::vector<std::uint64_t> seeds{42, 123, 1024};
    std::size_t threads = 1;

    void validate() const;
};

namespace detail {

inline std::string to_text(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}
inline std::string to_text(std::size_t v) { return std::to_string(v); }
inline std::string to_text(diff::Index v) { return std::to_string(v); }
inline std::string to_text(bool v) { return v ? "true" : "false"; }
inline std::string to_text(const std::vector<std::uint64_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

inline void from_text(const std::string& s, double& v) { v = boost::lexical_cast<double>(s); }
inline void from_text(const std::string& s, std::size_t& v) {
    if (s.empty() || s.front() == '-') throw boost::bad_lexical_cast();
    v = boost::lexical_cast<std::size_t>(s);
}
inline void from_text(const std::string& s, diff::Index& v) { v = boost::lexical_cast<diff::Index>(s); }
inline void from_text(const std::string& s, bool& v) {
    if (s == "true" || s == "1") v = true;
    else if (s == "false" || s == "0") v = false;
    else throw boost::bad_lexical_cast();
}
inline void from_text(const std::string& s, std::vector<std::uint64_t>& v) {
    std::vector<std::string> parts;
    boost::split(parts, s, boost::is_any_of(","));
    v.clear();
    for (auto p : parts) {
        boost::trim(p);
        if (p.empty() || p.front() == '-') throw boost::bad_lexical_cast();
        v.push_back(boost::lexical_cast<std::uint64_t>(p));
    }
}

struct Field {
    std::function<std::string()> get;
    std::function<void(const std::string&)> set;
};

template <class T>
Field field(T& ref) {
    return {[&ref] { return to_text(ref); }, [&ref](const std::string& s) { from_text(s, ref); }};
}

// "section.key" -> accessor, in file order.
inline std::vector<std::pair<std::string, Field>> fields(PipelineConfig& c) {
    return {
        {"dataset.n_samples", field(c.dataset.n_samples)},
        {"dataset.fraction_noisy", field(c.dataset.fraction_noisy)},
        {"dataset.fraction_redundant", field(c.dataset.fraction_redundant)},
        {"dataset.horizon", field(c.dataset.horizon)},
        {"dataset.test_fraction", field(c.test_fraction)},
        {"dataset.eval_samples", field(c.eval_samples)},
        {"guide.full_steps", field(c.guide.full_steps)},
        {"guide.fraction", field(c.guide.fraction)},
        {"guide.step_size", field(c.guide.step_size)},
        {"guide.batch_size", field(c.guide.batch_size)},
        {"lissa.depth", field(c.lissa.depth)},
        {"lissa.damping", field(c.lissa.damping)},
        {"lissa.batch_size", field(c.lissa.batch_size)},
        {"lissa.scale", field(c.lissa.scale)},
        {"assess.beta", field(c.modulation.beta)},
        {"assess.weight_floor", field(c.modulation.weight_floor)},
        {"assess.elite_percent", field(c.elite_percent)},
        {"assess.counterexamples", field(c.counterexamples)},
        {"assess.uniform_fallback", field(c.uniform_fallback)},
        {"distill.eta", field(c.distill.eta)},
        {"distill.n_frequencies", field(c.distill.n_frequencies)},
        {"distill.steps", field(c.distill.steps)},
        {"distill.generator_step", field(c.distill.generator_step)},
        {"distill.sampler_step", field(c.distill.sampler_step)},
        {"distill.sampler_updates", field(c.distill.sampler_updates)},
        {"distill.real_batch", field(c.distill.real_batch)},
        {"distill.noise_dim", field(c.distill.noise_dim)},
        {"distill.freq_scale", field(c.distill.freq_scale)},
        {"downstream.steps", field(c.downstream.steps)},
        {"downstream.step_size", field(c.downstream.step_size)},
        {"downstream.batch_size", field(c.downstream.batch_size)},
        {"run.seeds", field(c.seeds)},
        {"run.threads", field(c.threads)},
    };
}

} // namespace detail

inline void PipelineConfig::validate() const {
    auto check = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError(msg);
    };
    const double fsum = dataset.fraction_noisy + dataset.fraction_redundant;
    check(dataset.n_samples >= 1, "dataset.n_samples must be positive");
    check(dataset.fraction_noisy >= 0.0 && dataset.fraction_redundant >= 0.0 && fsum <= 1.0,
          "dataset fractions must be nonnegative and sum to at most 1");
    check(dataset.horizon >= 3, "dataset.horizon must be at least 3");
    check(test_fraction > 0.0 && test_fraction <= 1.0, "dataset.test_fraction must lie in (0, 1]");
    check(eval_samples >= 1, "dataset.eval_samples must be positive");
    check(guide.full_steps >= 1, "guide.full_steps must be positive");
    check(guide.fraction > 0.0 && guide.fraction <= 1.0, "guide.fraction must lie in (0, 1]");
    check(guide.step_size > 0.0 && guide.batch_size >= 1, "guide step size and batch size must be positive");
    check(lissa.depth >= 1 && lissa.damping > 0.0 && lissa.scale > 0.0 && lissa.batch_size >= 1,
          "lissa needs depth >= 1, damping > 0, scale > 0 and a positive batch size");
    check(modulation.beta >= 0.0, "assess.beta must be nonnegative");
    check(modulation.weight_floor > 0.0, "assess.weight_floor must be positive");
    check(elite_percent >= 0.0 && elite_percent <= 100.0, "assess.elite_percent must lie in [0, 100]");
    check(elite_percent == 0.0 ||
              std::floor(elite_percent * static_cast<double>(dataset.n_samples) / 100.0 + 1e-9) >= 1.0,
          "assess.elite_percent selects less than one sample");
    check(counterexamples >= 1, "assess.counterexamples must be positive");
    check(distill.eta > 0.0 && distill.eta <= 1.0, "distill.eta must lie in (0, 1]");
    check(distill.eta * static_cast<double>(dataset.n_samples) >= 1.0 - 1e-12, "distill.eta * N is below one sample");
    check(distill.n_frequencies >= 1 && distill.sampler_updates >= 1 && distill.real_batch >= 1 &&
              distill.noise_dim >= 1,
          "distill counts must be positive");
    check(distill.generator_step >= 0.0 && distill.sampler_step >= 0.0, "distill step sizes must be nonnegative");
    check(distill.freq_scale > 0.0, "distill.freq_scale must be positive");
    check(downstream.step_size > 0.0 && downstream.batch_size >= 1, "downstream step size and batch size must be positive");
    check(!seeds.empty(), "run.seeds must list at least one seed");
    check(threads >= 1, "run.threads must be positive");
}

inline PipelineConfig parse_config(const std::string& text, const std::string& origin = "<config>") {
    PipelineConfig cfg;
    boost::property_tree::ptree tree;
    try {
        std::istringstream is(text);
        boost::property_tree::ini_parser::read_ini(is, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    auto table = detail::fields(cfg);
    std::map<std::string, detail::Field*> by_name;
    for (auto& [name, f] : table) by_name[name] = &f;

    for (const auto& [section, body] : tree) {
        if (body.empty()) throw ConfigError(origin + ": key '" + section + "' is outside any section");
        for (const auto& [key, value] : body) {
            const std::string name = section + "." + key;
            auto it = by_name.find(name);
            if (it == by_name.end()) throw ConfigError(origin + ": unknown key '" + name + "'");
            const std::string raw = boost::trim_copy(value.data());
            try {
                it->second->set(raw);
            } catch (const boost::bad_lexical_cast&) {
                throw ConfigError(origin + ": bad value '" + raw + "' for '" + name + "'");
            }
        }
    }
    cfg.validate();
    return cfg;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_text(path);
    } catch (const IoError& e) {
        throw ConfigError(e.what());
    }
    return parse_config(text, path.string());
}

// Canonical form: every key, in a fixed order. Parsing it gives the same config.
// Without the run section it describes what one seed computes.
inline std::string config_text(const PipelineConfig& cfg, bool with_run = true) {
    PipelineConfig copy = cfg;
    std::string out, section;
    for (auto& [name, f] : detail::fields(copy)) {
        const auto dot = name.find('.');
        const std::string sec = name.substr(0, dot);
        if (sec == "run" && !with_run) continue;
        if (sec != section) {
            out += (section.empty() ? "[" : "\n[") + sec + "]\n";
            section = sec;
        }
        out += name.substr(dot + 1) + " = " + f.get() + "\n";
    }
    return out;
}

// Hash of everything that can change a seed's results. Seeds are reported
// next to it; threads only change speed.
inline std::string config_hash(const PipelineConfig& cfg) { return sha256_hex(config_text(cfg, false)); }

} // namespace ftncfm::harness
