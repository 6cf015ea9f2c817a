#pragma once

// Episode container format and dataset catalog.
//
// On-disk layout: one directory per episode holding
//   meta.json                        episode metadata
//   frames.jsonl                     one JSON object per frame (scalars)
//   f<t>_c<k>.ppm                    RGB, 8-bit
//   f<t>_c<k>_sem.pgm                semantic class ids, 8-bit
//   f<t>_c<k>_depth.pgm              depth, 16-bit, centimetres
//   f<t>_c<k>_mask.pgm               clean saliency mask, 0/255
//   f<t>_c<k>_maskc.pgm              corrupted mask (optional, added later)
//
// All images are quantized on write (RGB/masks to 1/255 steps, depth to
// 0.01 m); scalars in JSON round-trip bit-exactly. The quantized form is the
// canonical one: write(read(write(x))) is byte-identical to write(x).
//
// A catalog (catalog.json at the dataset root) indexes episode directories
// with their metadata and content hashes; subset sampling is a seeded,
// episode-level draw over the catalog.

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "agd/types.hpp"

namespace agd {

// ---------------------------------------------------------------------------
// In-memory episode

struct Frame {
    int t = 0;  // timestep index; wall time is t * meta.dt
    std::vector<RgbImage> rgb;
    std::vector<SemanticImage> sem;
    std::vector<DepthImage> depth;
    std::vector<AttentionMask> mask;            // clean, one per camera
    std::vector<AttentionMask> mask_corrupted;  // empty unless corruption was run
    double speed = 0.0;                         // m/s
    std::vector<double> command;                // one-hot, length kCommandCount
    Action action;                              // expert action actually applied
};

struct EpisodeMeta {
    int version = 1;
    std::string town;       // town name from the fixture
    std::string density;    // "busy" | "empty"
    std::string condition;  // environment condition name
    uint64_t seed = 0;      // requested seed (names the episode)
    uint64_t scenario_seed = 0;  // seed actually used after resampling
    int resamples = 0;      // scenarios discarded for expert collisions
    int steps = 0;
    double dt = 0.1;
    int width = 0, height = 0;
    int cameras = 0;
    double mask_d_max = 0.0;  // depth threshold the masks were built with
};

struct Episode {
    EpisodeMeta meta;
    std::vector<Frame> frames;
};

// Canonical directory name: <town>_<density>_<condition>_seed<6 digits>.
std::string episode_dir_name(const EpisodeMeta& meta);

void write_episode(const Episode& ep, const std::filesystem::path& dir);
// Reads a full episode; picks up corrupted masks when present. Truncated or
// malformed files raise IoError.
Episode read_episode(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Collection

struct CollectConfig {
    std::string town_fixture;  // path to the town JSON
    std::string density = "busy";
    std::string condition = "clear-day";
    uint64_t seed = 0;
    int steps = 4000;  // one desk-hour analog
    int width = 64, height = 64;
    int max_resamples = 20;
};

// Closed-loop expert rollout with rendering and clean-mask generation per
// frame. A scenario in which the expert collides is discarded and resampled
// with a derived seed (recorded in meta.resamples); exhausting
// max_resamples raises ConfigError.
Episode collect(const CollectConfig& cfg);

// collect() + write_episode() into root/<episode_dir_name>; returns the
// directory name.
std::string collect_to_dir(const CollectConfig& cfg, const std::filesystem::path& root);

// ---------------------------------------------------------------------------
// Catalog + subset sampling

struct CatalogEntry {
    std::string dir;  // directory name relative to the dataset root
    std::string town;
    std::string density;
    std::string condition;
    uint64_t seed = 0;
    int steps = 0;
    bool has_corrupted = false;  // corrupted masks present
    std::string hash;            // content hash of the episode directory
};

struct Catalog {
    int version = 1;
    std::filesystem::path root;  // runtime only, never serialized
    std::vector<CatalogEntry> episodes;

    long total_steps() const;
    std::set<std::string> conditions() const;
};

// SHA-256 over the episode directory: per-file digests in filename order.
std::string hash_episode_dir(const std::filesystem::path& dir);

// Scan root for episode directories (those holding meta.json), hash them,
// and return entries sorted by directory name.
Catalog build_catalog(const std::filesystem::path& root);

// Canonical JSON text of a catalog (what save_catalog writes); its SHA-256
// is the provenance hash recorded on dataset views.
std::string catalog_canonical_text(const Catalog& cat);
void save_catalog(const Catalog& cat, const std::filesystem::path& file);
Catalog load_catalog(const std::filesystem::path& file);

// A reproducible selection of episodes out of a catalog.
struct DatasetView {
    std::filesystem::path root;
    std::vector<CatalogEntry> episodes;  // sorted by directory name
    long total_steps = 0;
    std::string catalog_hash;
    uint64_t seed = 0;

    std::filesystem::path episode_path(size_t i) const { return root / episodes[i].dir; }
};

// Seeded episode-level sampling restricted to `conditions` (empty = all),
// accumulating whole episodes until the step budget is met (so the total
// overshoots by less than one episode). The selected set is returned in
// directory-name order. Errors: no episode matches the condition filter, or
// the budget exceeds what the filtered catalog holds.
DatasetView sample_subset(const Catalog& cat, long budget_steps,
                          const std::vector<std::string>& conditions, uint64_t seed);

// ---------------------------------------------------------------------------
// Compact training loader

// The byte-level episode content a trainer needs, without the float images
// or the sem/depth channels (those only matter for mask generation, which
// happens at collection/corruption time).
struct PackedEpisode {
    int frames = 0, cameras = 0, width = 0, height = 0;
    std::vector<uint8_t> rgb;      // frames * K * H * W * 3, interleaved
    std::vector<uint8_t> masks;    // frames * K * H * W in {0,255}; empty if not loaded
    std::vector<float> speed;      // m/s, per frame
    std::vector<uint8_t> command;  // command index per frame
    std::vector<float> action;     // frames * 2 (steer, accel)

    size_t rgb_stride() const { return size_t(cameras) * width * height * 3; }
    size_t mask_stride() const { return size_t(cameras) * width * height; }
};

// want_masks loads the per-camera masks; corrupted selects the corrupted set
// (IoError when requested but absent).
PackedEpisode load_packed_episode(const std::filesystem::path& dir, bool want_masks,
                                  bool corrupted);

// ---------------------------------------------------------------------------
// Mask corruption pass

// Adds f<t>_c<k>_maskc.pgm next to every clean mask of an episode using the
// stored semantics/depth and the episode's mask_d_max. Deterministic per
// seed; re-running overwrites. Returns the number of masks written.
int corrupt_episode_masks(const std::filesystem::path& dir, uint64_t seed);

}  // namespace agd
