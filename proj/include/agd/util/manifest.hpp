#pragma once

// Per-run provenance record: every command that produces an artifact
// directory drops exactly one manifest.json there, listing the resolved
// configuration, SHA-256 of every input, and SHA-256 of every produced
// file. Wall-clock time is recorded but kept out of the hash set so
// identically-seeded runs verify as identical.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace agd {

struct ExperimentManifest {
    std::string command;                    // subcommand that produced the directory
    std::string tool_version;
    nlohmann::ordered_json config;          // full resolved key=value configuration
    nlohmann::ordered_json input_hashes;    // label -> sha256 of each input
    nlohmann::ordered_json artifact_hashes; // relative path -> sha256 of each output
    std::vector<std::string> unhashed;      // outputs carrying wall-clock data
    double wall_s = 0.0;

    nlohmann::ordered_json to_json() const;
    static ExperimentManifest from_json(const nlohmann::json& j);
};

// Relative-path -> sha256 map over every regular file under dir, sorted by
// path. `exclude` entries match either a full relative path or a bare
// filename at any depth; files named manifest.json are always skipped.
nlohmann::ordered_json hash_dir_files(const std::filesystem::path& dir,
                                      const std::vector<std::string>& exclude = {});

// Fills artifact_hashes from the directory contents (honoring `unhashed`)
// and writes dir/manifest.json.
void write_manifest(const std::filesystem::path& dir, ExperimentManifest m);

ExperimentManifest load_manifest(const std::filesystem::path& dir);

// Recomputes artifact hashes and compares against the stored manifest.
// Returns the list of mismatched or missing paths (empty = verified).
// Unknown extra files are reported too: the directory must be exactly
// reconstructible.
std::vector<std::string> verify_manifest(const std::filesystem::path& dir);

}  // namespace agd
