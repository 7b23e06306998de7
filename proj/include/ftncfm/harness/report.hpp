#pragma once

// Report files. Content files carry no timings, so their hashes depend only on
// config and seeds; wall-times go to timings.json.

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ftncfm/harness/pipeline.hpp"

namespace ftncfm::harness {

using Json = nlohmann::ordered_json;

// Shortest text that parses back to the same double.
inline std::string exact(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline double parse_exact(const std::string& s, const std::string& origin) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw IoError(origin + ": bad number '" + s + "'");
    return v;
}

inline Json metrics_json(const Metrics& m) {
    return {{"success", m.success}, {"mean_error", m.mean_error}, {"train_size", m.train_size}};
}

inline Metrics metrics_from(const Json& j) {
    return {j.at("success").get<double>(), j.at("mean_error").get<double>(), j.at("train_size").get<std::size_t>()};
}

inline Json paired_json(const Comparison& c) {
    Json j = {{"a", c.a}, {"b", c.b}, {"mean_diff", c.result.mean_diff}, {"degenerate", c.result.degenerate}};
    // JSON has no infinities; the degenerate flag already says the variance was zero.
    j["t"] = std::isfinite(c.result.t) ? Json(c.result.t) : Json(nullptr);
    j["p"] = c.result.p;
    j["p_below_1e-12"] = c.result.p < 1e-12;
    return j;
}

inline Json rows_json(const std::vector<MethodRow>& rows, const std::vector<std::uint64_t>& seeds) {
    Json out = Json::object();
    for (const auto& r : rows) {
        Json per = Json::object();
        for (std::size_t i = 0; i < seeds.size(); ++i) per[std::to_string(seeds[i])] = metrics_json(r.per_seed[i]);
        out[r.method] = {{"per_seed", per}, {"mean_success", r.mean_success()}, {"std_success", r.std_success()}};
    }
    return out;
}

inline Json report_json(const RunReport& r) {
    Json j;
    j["config_hash"] = r.config_hash;
    j["seeds"] = r.seeds;
    j["coreset_size"] = r.coreset_size;
    j["methods"] = rows_json(r.methods, r.seeds);
    Json w = Json::object(), d = Json::object();
    for (std::size_t i = 0; i < r.seeds.size(); ++i) {
        const auto& s = r.weights[i];
        w[std::to_string(r.seeds[i])] = {
            {"sum", s.sum}, {"min", s.min}, {"max", s.max}, {"entropy", s.entropy}, {"elites", s.elites}};
        const auto& c = r.discrepancy[i];
        Json cj = {{"steps", c.size()}};
        if (!c.empty()) {
            cj["first"] = c.front();
            cj["last"] = c.back();
            cj["min"] = *std::min_element(c.begin(), c.end());
        }
        d[std::to_string(r.seeds[i])] = cj;
    }
    j["weights"] = w;
    j["discrepancy"] = d;
    Json p = Json::array();
    for (const auto& c : r.comparisons) p.push_back(paired_json(c));
    j["paired"] = p;
    return j;
}

inline std::string rows_csv(const std::vector<MethodRow>& rows, const std::vector<std::uint64_t>& seeds,
                            const std::string& config_hash, const std::string& label = "method") {
    std::ostringstream os;
    os << label << ",seed,config_hash,success,mean_error,train_size\n";
    for (const auto& r : rows)
        for (std::size_t i = 0; i < seeds.size(); ++i)
            os << r.method << ',' << seeds[i] << ',' << config_hash << ',' << exact(r.per_seed[i].success) << ','
               << exact(r.per_seed[i].mean_error) << ',' << r.per_seed[i].train_size << '\n';
    return os.str();
}

inline std::string curve_csv(const std::vector<double>& curve) {
    std::ostringstream os;
    os << "step,discrepancy\n";
    for (std::size_t i = 0; i < curve.size(); ++i) os << i << ',' << exact(curve[i]) << '\n';
    return os.str();
}

inline std::vector<double> parse_curve_csv(const std::string& text, const std::string& origin) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != "step,discrepancy") throw IoError(origin + ": unexpected curve header");
    std::vector<double> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw IoError(origin + ": malformed curve line");
        out.push_back(parse_exact(line.substr(comma + 1), origin));
    }
    return out;
}

inline void write_report(const RunReport& r, const std::filesystem::path& out) {
    write_text(out / "report.json", report_json(r).dump(2) + "\n");
    write_text(out / "report.csv", rows_csv(r.methods, r.seeds, r.config_hash));
}

inline Json ablation_json(const AblationReport& r) {
    Json j;
    j["config_hash"] = r.config_hash;
    j["seeds"] = r.seeds;
    j["variants"] = rows_json(r.variants, r.seeds);
    Json p = Json::array();
    for (const auto& c : r.comparisons) p.push_back(paired_json(c));
    j["paired"] = p;
    return j;
}

inline void write_ablation(const AblationReport& r, const std::filesystem::path& out) {
    write_text(out / "ablation.json", ablation_json(r).dump(2) + "\n");
    write_text(out / "ablation.csv", rows_csv(r.variants, r.seeds, r.config_hash, "variant"));
}

inline std::string beta_csv(const std::vector<BetaRow>& rows) {
    std::ostringstream os;
    os << "beta,mean_success,std_success,seeds\n";
    for (const auto& r : rows)
        os << exact(r.beta) << ',' << exact(r.result.mean_success()) << ',' << exact(r.result.std_success()) << ','
           << r.result.per_seed.size() << '\n';
    return os.str();
}

inline Json timings_json(const std::vector<std::uint64_t>& seeds,
                         const std::vector<std::map<std::string, double>>& seconds) {
    Json j = Json::object();
    for (std::size_t i = 0; i < seeds.size() && i < seconds.size(); ++i) {
        Json s = Json::object();
        for (const auto& [stage, t] : seconds[i]) s[stage] = t;
        j[std::to_string(seeds[i])] = s;
    }
    return j;
}

} // namespace ftncfm::harness
