#include "agd/util/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "agd/types.hpp"
#include "agd/util/hashing.hpp"
#include "agd/version.hpp"

namespace agd {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

ojson ExperimentManifest::to_json() const {
    ojson j;
    j["command"] = command;
    j["tool_version"] = tool_version;
    j["config"] = config;
    j["input_hashes"] = input_hashes;
    j["artifact_hashes"] = artifact_hashes;
    j["unhashed"] = unhashed;
    j["wall_s"] = wall_s;
    return j;
}

ExperimentManifest ExperimentManifest::from_json(const nlohmann::json& j) {
    ExperimentManifest m;
    m.command = j.at("command");
    m.tool_version = j.at("tool_version");
    m.config = j.at("config");
    m.input_hashes = j.at("input_hashes");
    m.artifact_hashes = j.at("artifact_hashes");
    m.unhashed = j.at("unhashed").get<std::vector<std::string>>();
    m.wall_s = j.at("wall_s");
    return m;
}

ojson hash_dir_files(const fs::path& dir, const std::vector<std::string>& exclude) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    // exclusions match the full relative path or the bare filename, so
    // "train_log.csv" skips every nested train log; manifests themselves
    // (metadata, carry wall time) are never part of the artifact set
    std::set<std::string> skip(exclude.begin(), exclude.end());
    skip.insert("manifest.json");
    std::vector<std::string> rels;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) {
            std::string rel = fs::relative(e.path(), dir).generic_string();
            if (skip.count(rel) || skip.count(e.path().filename().string())) continue;
            rels.push_back(std::move(rel));
        }
    std::sort(rels.begin(), rels.end());
    ojson out = ojson::object();
    for (const std::string& r : rels) out[r] = sha256_file(dir / r);
    return out;
}

void write_manifest(const fs::path& dir, ExperimentManifest m) {
    if (m.tool_version.empty()) m.tool_version = version();
    m.artifact_hashes = hash_dir_files(dir, m.unhashed);
    std::ofstream f(dir / "manifest.json", std::ios::binary);
    if (!f) throw IoError("cannot write " + (dir / "manifest.json").string());
    f << m.to_json().dump(2) << "\n";
}

ExperimentManifest load_manifest(const fs::path& dir) {
    std::ifstream f(dir / "manifest.json", std::ios::binary);
    if (!f) throw IoError("no manifest in " + dir.string());
    nlohmann::json j;
    try {
        f >> j;
        return ExperimentManifest::from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed manifest in " + dir.string() + ": " + e.what());
    }
}

std::vector<std::string> verify_manifest(const fs::path& dir) {
    const ExperimentManifest m = load_manifest(dir);
    const ojson now = hash_dir_files(dir, m.unhashed);
    std::vector<std::string> bad;
    for (const auto& [rel, h] : m.artifact_hashes.items()) {
        auto it = now.find(rel);
        if (it == now.end())
            bad.push_back(rel + " (missing)");
        else if (it.value() != h)
            bad.push_back(rel + " (hash mismatch)");
    }
    for (const auto& [rel, h] : now.items())
        if (!m.artifact_hashes.contains(rel)) bad.push_back(rel + " (not in manifest)");
    return bad;
}

}  // namespace agd
