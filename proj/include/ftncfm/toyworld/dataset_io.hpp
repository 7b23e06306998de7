#pragma once

// JSON-lines dataset files, one sample per line. ".jsonl.gz" files are
// gzip-compressed.

#include <filesystem>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "ftncfm/common/files.hpp"
#include "ftncfm/toyworld/world.hpp"

namespace ftncfm::toy {

using Json = nlohmann::ordered_json;

inline Json to_json(const Sample& s, bool with_quality) {
    Json scene = Json::array();
    for (const auto& o : s.scene) {
        scene.push_back({{"category", std::string(name(o.category))},
                         {"size", o.size},
                         {"position", {o.position.x, o.position.y}},
                         {"key", o.key}});
    }
    Json instruction = {{"verb", std::string(name(s.instruction.verb))},
                        {"target", std::string(name(s.instruction.target))},
                        {"qualifier", nullptr}};
    if (s.instruction.qualifier) instruction["qualifier"] = std::string(name(*s.instruction.qualifier));
    Json traj = Json::array();
    for (const auto& w : s.trajectory) traj.push_back({w.x, w.y});

    Json j = {{"id", s.id}, {"scene", scene}, {"instruction", instruction}, {"trajectory", traj}};
    if (with_quality) j["quality"] = std::string(name(s.quality));
    return j;
}

namespace detail {
inline Point point_from(const Json& j) {
    if (!j.is_array() || j.size() != 2) throw ContractViolation("expected an [x, y] pair");
    return {j.at(0).get<double>(), j.at(1).get<double>()};
}
} // namespace detail

// Parses one record and checks the scene contracts. Quality defaults to clean
// when absent.
inline Sample from_json(const Json& j) {
    Sample s;
    s.id = j.at("id").get<std::uint64_t>();
    for (const auto& o : j.at("scene")) {
        SceneObject obj;
        obj.category = parse_category(o.at("category").get<std::string>());
        obj.size = o.at("size").get<double>();
        obj.position = detail::point_from(o.at("position"));
        obj.key = o.at("key").get<bool>();
        require(obj.size > 0.0 && obj.size <= 4.0, "object size outside (0, 4]");
        require(obj.position.x >= 0.0 && obj.position.x <= 1.0 && obj.position.y >= 0.0 && obj.position.y <= 1.0,
                "object position outside the unit square");
        s.scene.push_back(obj);
    }
    require(!s.scene.empty() && s.scene.size() <= kMaxObjects, "scene must hold 1 to 4 objects");
    (void)key_object(s.scene);
    const Json& ins = j.at("instruction");
    s.instruction.verb = parse_verb(ins.at("verb").get<std::string>());
    s.instruction.target = parse_category(ins.at("target").get<std::string>());
    if (ins.contains("qualifier") && !ins.at("qualifier").is_null())
        s.instruction.qualifier = parse_qualifier(ins.at("qualifier").get<std::string>());
    for (const auto& w : j.at("trajectory")) {
        Point p = detail::point_from(w);
        require(p.x >= -1.0 && p.x <= 1.0 && p.y >= -1.0 && p.y <= 1.0, "waypoint outside [-1, 1]^2");
        s.trajectory.push_back(p);
    }
    require(!s.trajectory.empty(), "trajectory is empty");
    if (j.contains("quality")) s.quality = parse_quality(j.at("quality").get<std::string>());
    return s;
}

inline std::string to_jsonl(const std::vector<Sample>& data, bool with_quality) {
    std::string out;
    for (const auto& s : data) {
        out += to_json(s, with_quality).dump();
        out += '\n';
    }
    return out;
}

inline std::vector<Sample> from_jsonl(std::string_view text, const std::string& origin = "<memory>") {
    std::vector<Sample> out;
    std::size_t line_no = 0, start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        ++line_no;
        const std::string_view line = text.substr(start, end - start);
        start = end + 1;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        try {
            out.push_back(from_json(Json::parse(line)));
        } catch (const std::exception& e) {
            throw IoError(origin + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    std::unordered_set<std::uint64_t> seen;
    for (const auto& s : out)
        if (!seen.insert(s.id).second) throw IoError(origin + ": duplicate sample id " + std::to_string(s.id));
    return out;
}

inline void save_dataset(const std::filesystem::path& path, const std::vector<Sample>& data, bool with_quality) {
    write_text(path, to_jsonl(data, with_quality));
}

inline std::vector<Sample> load_dataset(const std::filesystem::path& path) {
    return from_jsonl(read_text(path), path.string());
}

inline std::string dataset_hash(const std::vector<Sample>& data) { return sha256_hex(to_jsonl(data, true)); }

} // namespace ftncfm::toy
