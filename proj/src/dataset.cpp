#include "agd/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "agd/mask/pipeline.hpp"
#include "agd/sim/render.hpp"
#include "agd/sim/world.hpp"
#include "agd/util/hashing.hpp"
#include "agd/util/pnm.hpp"

namespace agd {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

uint64_t mix_seed(uint64_t seed, uint64_t salt) {
    return splitmix64(seed ^ (0x517CC1B727220A95ULL * (salt + 1)));
}

// ---- quantization (the on-disk canonical form) ----

uint8_t q8(float v) {
    const float c = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
    return uint8_t(std::lround(c * 255.f));
}
float dq8(uint8_t b) { return float(b) / 255.f; }

uint16_t q_depth(float metres) {
    const float c = metres < 0.f ? 0.f : (metres > 655.35f ? 655.35f : metres);
    return uint16_t(std::lround(c * 100.f));
}
float dq_depth(uint16_t cm) { return float(cm) / 100.f; }

pnm::Image8 rgb_to_pnm(const RgbImage& img) {
    pnm::Image8 out;
    out.width = img.width;
    out.height = img.height;
    out.channels = 3;
    out.data.resize(img.rgb.size());
    for (size_t i = 0; i < img.rgb.size(); ++i) out.data[i] = q8(img.rgb[i]);
    return out;
}
RgbImage rgb_from_pnm(const pnm::Image8& img, const fs::path& src) {
    if (img.channels != 3) throw IoError("expected RGB PPM: " + src.string());
    RgbImage out;
    out.width = img.width;
    out.height = img.height;
    out.rgb.resize(img.data.size());
    for (size_t i = 0; i < img.data.size(); ++i) out.rgb[i] = dq8(img.data[i]);
    return out;
}

pnm::Image8 sem_to_pnm(const SemanticImage& img) {
    pnm::Image8 out;
    out.width = img.width;
    out.height = img.height;
    out.channels = 1;
    out.data = img.ids;
    return out;
}
SemanticImage sem_from_pnm(const pnm::Image8& img, const fs::path& src) {
    if (img.channels != 1) throw IoError("expected grayscale PGM: " + src.string());
    SemanticImage out;
    out.width = img.width;
    out.height = img.height;
    out.ids = img.data;
    return out;
}

pnm::Image16 depth_to_pnm(const DepthImage& img) {
    pnm::Image16 out;
    out.width = img.width;
    out.height = img.height;
    out.data.resize(img.meters.size());
    for (size_t i = 0; i < img.meters.size(); ++i) out.data[i] = q_depth(img.meters[i]);
    return out;
}
DepthImage depth_from_pnm(const pnm::Image16& img) {
    DepthImage out;
    out.width = img.width;
    out.height = img.height;
    out.meters.resize(img.data.size());
    for (size_t i = 0; i < img.data.size(); ++i) out.meters[i] = dq_depth(img.data[i]);
    return out;
}

pnm::Image8 mask_to_pnm(const AttentionMask& img) {
    pnm::Image8 out;
    out.width = img.width;
    out.height = img.height;
    out.channels = 1;
    out.data.resize(img.v.size());
    for (size_t i = 0; i < img.v.size(); ++i) out.data[i] = q8(img.v[i]);
    return out;
}
AttentionMask mask_from_pnm(const pnm::Image8& img, const fs::path& src) {
    if (img.channels != 1) throw IoError("expected grayscale PGM: " + src.string());
    AttentionMask out;
    out.width = img.width;
    out.height = img.height;
    out.v.resize(img.data.size());
    for (size_t i = 0; i < img.data.size(); ++i) out.v[i] = dq8(img.data[i]);
    return out;
}

// ---- file naming ----

std::string frame_stem(int t, int cam) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "f%06d_c%d", t, cam);
    return buf;
}
fs::path rgb_path(const fs::path& dir, int t, int c) { return dir / (frame_stem(t, c) + ".ppm"); }
fs::path sem_path(const fs::path& dir, int t, int c) {
    return dir / (frame_stem(t, c) + "_sem.pgm");
}
fs::path depth_path(const fs::path& dir, int t, int c) {
    return dir / (frame_stem(t, c) + "_depth.pgm");
}
fs::path mask_path(const fs::path& dir, int t, int c) {
    return dir / (frame_stem(t, c) + "_mask.pgm");
}
fs::path maskc_path(const fs::path& dir, int t, int c) {
    return dir / (frame_stem(t, c) + "_maskc.pgm");
}

ojson meta_to_json(const EpisodeMeta& m) {
    ojson j;
    j["version"] = m.version;
    j["town"] = m.town;
    j["density"] = m.density;
    j["condition"] = m.condition;
    j["seed"] = m.seed;
    j["scenario_seed"] = m.scenario_seed;
    j["resamples"] = m.resamples;
    j["steps"] = m.steps;
    j["dt"] = m.dt;
    j["width"] = m.width;
    j["height"] = m.height;
    j["cameras"] = m.cameras;
    j["mask_d_max"] = m.mask_d_max;
    return j;
}

EpisodeMeta meta_from_json(const nlohmann::json& j, const fs::path& src) {
    EpisodeMeta m;
    try {
        m.version = j.at("version");
        if (m.version != 1)
            throw IoError("unsupported episode version " + std::to_string(m.version) + ": " +
                          src.string());
        m.town = j.at("town");
        m.density = j.at("density");
        m.condition = j.at("condition");
        m.seed = j.at("seed");
        m.scenario_seed = j.at("scenario_seed");
        m.resamples = j.at("resamples");
        m.steps = j.at("steps");
        m.dt = j.at("dt");
        m.width = j.at("width");
        m.height = j.at("height");
        m.cameras = j.at("cameras");
        m.mask_d_max = j.at("mask_d_max");
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed episode metadata " + src.string() + ": " + e.what());
    }
    return m;
}

EpisodeMeta read_meta(const fs::path& dir) {
    const fs::path p = dir / "meta.json";
    std::ifstream f(p);
    if (!f) throw IoError("cannot read " + p.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed JSON in " + p.string() + ": " + e.what());
    }
    return meta_from_json(j, p);
}

struct FrameScalars {
    int t = 0;
    double speed = 0.0;
    int command = 0;
    Action action;
};

std::vector<FrameScalars> read_frame_lines(const fs::path& dir, int expected) {
    const fs::path p = dir / "frames.jsonl";
    std::ifstream f(p);
    if (!f) throw IoError("cannot read " + p.string());
    std::vector<FrameScalars> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IoError("malformed frame record in " + p.string() + ": " + e.what());
        }
        FrameScalars s;
        try {
            s.t = j.at("t");
            s.speed = j.at("speed");
            const auto& cmd = j.at("command");
            int ones = 0;
            for (size_t i = 0; i < cmd.size(); ++i)
                if (int(cmd[i]) == 1) {
                    s.command = int(i);
                    ++ones;
                }
            if (int(cmd.size()) != kCommandCount || ones != 1)
                throw IoError("frame command is not one-hot in " + p.string());
            s.action.steer = j.at("action").at(0);
            s.action.accel = j.at("action").at(1);
        } catch (const nlohmann::json::exception& e) {
            throw IoError("malformed frame record in " + p.string() + ": " + e.what());
        }
        out.push_back(s);
    }
    if (int(out.size()) != expected)
        throw IoError("frame count mismatch in " + p.string() + ": have " +
                      std::to_string(out.size()) + ", metadata says " + std::to_string(expected));
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string episode_dir_name(const EpisodeMeta& meta) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "seed%06llu", static_cast<unsigned long long>(meta.seed));
    return meta.town + "_" + meta.density + "_" + meta.condition + "_" + buf;
}

void write_episode(const Episode& ep, const fs::path& dir) {
    const auto& m = ep.meta;
    if (int(ep.frames.size()) != m.steps)
        throw ConfigError("write_episode: frame count does not match metadata");
    fs::create_directories(dir);

    {
        std::ofstream f(dir / "meta.json", std::ios::trunc);
        if (!f) throw IoError("cannot write " + (dir / "meta.json").string());
        f << meta_to_json(m).dump(2) << "\n";
    }
    std::ofstream fl(dir / "frames.jsonl", std::ios::trunc);
    if (!fl) throw IoError("cannot write " + (dir / "frames.jsonl").string());

    for (const Frame& fr : ep.frames) {
        ojson j;
        j["t"] = fr.t;
        j["speed"] = fr.speed;
        j["command"] = fr.command;
        j["action"] = {fr.action.steer, fr.action.accel};
        fl << j.dump() << "\n";
        if (int(fr.rgb.size()) != m.cameras || int(fr.sem.size()) != m.cameras ||
            int(fr.depth.size()) != m.cameras || int(fr.mask.size()) != m.cameras)
            throw ConfigError("write_episode: camera count mismatch at frame " +
                              std::to_string(fr.t));
        for (int c = 0; c < m.cameras; ++c) {
            pnm::write(rgb_path(dir, fr.t, c), rgb_to_pnm(fr.rgb[size_t(c)]));
            pnm::write(sem_path(dir, fr.t, c), sem_to_pnm(fr.sem[size_t(c)]));
            pnm::write(depth_path(dir, fr.t, c), depth_to_pnm(fr.depth[size_t(c)]));
            pnm::write(mask_path(dir, fr.t, c), mask_to_pnm(fr.mask[size_t(c)]));
            if (!fr.mask_corrupted.empty())
                pnm::write(maskc_path(dir, fr.t, c), mask_to_pnm(fr.mask_corrupted[size_t(c)]));
        }
    }
}

Episode read_episode(const fs::path& dir) {
    Episode ep;
    ep.meta = read_meta(dir);
    const auto scalars = read_frame_lines(dir, ep.meta.steps);
    const bool corrupted = fs::exists(maskc_path(dir, 0, 0));
    ep.frames.resize(scalars.size());
    for (size_t i = 0; i < scalars.size(); ++i) {
        Frame& fr = ep.frames[i];
        fr.t = scalars[i].t;
        fr.speed = scalars[i].speed;
        fr.command.assign(kCommandCount, 0.0);
        fr.command[size_t(scalars[i].command)] = 1.0;
        fr.action = scalars[i].action;
        for (int c = 0; c < ep.meta.cameras; ++c) {
            fr.rgb.push_back(rgb_from_pnm(pnm::read8(rgb_path(dir, fr.t, c)),
                                          rgb_path(dir, fr.t, c)));
            fr.sem.push_back(sem_from_pnm(pnm::read8(sem_path(dir, fr.t, c)),
                                          sem_path(dir, fr.t, c)));
            fr.depth.push_back(depth_from_pnm(pnm::read16(depth_path(dir, fr.t, c))));
            fr.mask.push_back(mask_from_pnm(pnm::read8(mask_path(dir, fr.t, c)),
                                            mask_path(dir, fr.t, c)));
            if (corrupted)
                fr.mask_corrupted.push_back(mask_from_pnm(pnm::read8(maskc_path(dir, fr.t, c)),
                                                          maskc_path(dir, fr.t, c)));
        }
    }
    return ep;
}

// ---------------------------------------------------------------------------

Episode collect(const CollectConfig& cfg) {
    if (cfg.steps < 1) throw ConfigError("collect: steps must be >= 1");
    for (int attempt = 0; attempt <= cfg.max_resamples; ++attempt) {
        ScenarioConfig sc;
        sc.town_fixture = cfg.town_fixture;
        sc.condition = cfg.condition;
        sc.density = cfg.density;
        sc.seed = attempt == 0 ? cfg.seed : mix_seed(cfg.seed, uint64_t(attempt));
        Scenario s = spawn_scenario(sc);
        s.world.auto_extend_ego_route = true;

        Episode ep;
        ep.meta.town = s.world.town.name;
        ep.meta.density = cfg.density;
        ep.meta.condition = cfg.condition;
        ep.meta.seed = cfg.seed;
        ep.meta.scenario_seed = sc.seed;
        ep.meta.resamples = attempt;
        ep.meta.steps = cfg.steps;
        ep.meta.dt = Dynamics::dt;
        ep.meta.width = cfg.width;
        ep.meta.height = cfg.height;
        ep.meta.cameras = kNumCameras;
        ep.meta.mask_d_max = s.world.town.d_max;
        ep.frames.reserve(size_t(cfg.steps));

        bool collided = false;
        for (int t = 0; t < cfg.steps; ++t) {
            RenderOutput r =
                render(s.world, s.ego, cfg.width, cfg.height, mix_seed(sc.seed, uint64_t(t)));
            Frame fr;
            fr.t = t;
            fr.speed = s.ego.speed;
            fr.command.assign(kCommandCount, 0.0);
            fr.command[size_t(int(s.ego.current_command()))] = 1.0;
            for (int c = 0; c < kNumCameras; ++c)
                fr.mask.push_back(build_mask(r.sem[size_t(c)], r.depth[size_t(c)],
                                             default_salient_classes(), s.world.town.d_max));
            fr.rgb = std::move(r.rgb);
            fr.sem = std::move(r.sem);
            fr.depth = std::move(r.depth);
            fr.action = clip_action(expert_policy(s.world, s.ego));
            ep.frames.push_back(std::move(fr));

            StepEvents ev = s.world.step(s.ego, ep.frames.back().action);
            if (!ev.collisions.empty()) {
                collided = true;
                break;
            }
        }
        if (!collided) return ep;
    }
    throw ConfigError("collect: expert collided in every scenario after " +
                      std::to_string(cfg.max_resamples + 1) + " attempts (seed " +
                      std::to_string(cfg.seed) + ")");
}

std::string collect_to_dir(const CollectConfig& cfg, const fs::path& root) {
    Episode ep = collect(cfg);
    const std::string name = episode_dir_name(ep.meta);
    write_episode(ep, root / name);
    return name;
}

// ---------------------------------------------------------------------------

long Catalog::total_steps() const {
    long n = 0;
    for (const auto& e : episodes) n += e.steps;
    return n;
}

std::set<std::string> Catalog::conditions() const {
    std::set<std::string> s;
    for (const auto& e : episodes) s.insert(e.condition);
    return s;
}

std::string hash_episode_dir(const fs::path& dir) {
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file()) names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());
    Sha256 h;
    for (const auto& n : names) {
        h.update(n);
        h.update("\n", 1);
        h.update(sha256_file(dir / n));
        h.update("\n", 1);
    }
    return h.hex();
}

Catalog build_catalog(const fs::path& root) {
    if (!fs::is_directory(root)) throw IoError("dataset root is not a directory: " + root.string());
    Catalog cat;
    cat.root = root;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (!entry.is_directory() || !fs::exists(entry.path() / "meta.json")) continue;
        const EpisodeMeta m = read_meta(entry.path());
        CatalogEntry e;
        e.dir = entry.path().filename().string();
        e.town = m.town;
        e.density = m.density;
        e.condition = m.condition;
        e.seed = m.seed;
        e.steps = m.steps;
        e.has_corrupted = fs::exists(maskc_path(entry.path(), 0, 0));
        e.hash = hash_episode_dir(entry.path());
        cat.episodes.push_back(std::move(e));
    }
    std::sort(cat.episodes.begin(), cat.episodes.end(),
              [](const CatalogEntry& a, const CatalogEntry& b) { return a.dir < b.dir; });
    return cat;
}

std::string catalog_canonical_text(const Catalog& cat) {
    ojson j;
    j["version"] = cat.version;
    j["episodes"] = ojson::array();
    for (const auto& e : cat.episodes) {
        ojson je;
        je["dir"] = e.dir;
        je["town"] = e.town;
        je["density"] = e.density;
        je["condition"] = e.condition;
        je["seed"] = e.seed;
        je["steps"] = e.steps;
        je["has_corrupted"] = e.has_corrupted;
        je["hash"] = e.hash;
        j["episodes"].push_back(std::move(je));
    }
    return j.dump(2) + "\n";
}

void save_catalog(const Catalog& cat, const fs::path& file) {
    std::ofstream f(file, std::ios::trunc);
    if (!f) throw IoError("cannot write " + file.string());
    f << catalog_canonical_text(cat);
}

Catalog load_catalog(const fs::path& file) {
    std::ifstream f(file);
    if (!f) throw IoError("cannot read catalog: " + file.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed catalog " + file.string() + ": " + e.what());
    }
    Catalog cat;
    try {
        cat.version = j.at("version");
        if (cat.version != 1)
            throw IoError("unsupported catalog version: " + file.string());
        for (const auto& je : j.at("episodes")) {
            CatalogEntry e;
            e.dir = je.at("dir");
            e.town = je.at("town");
            e.density = je.at("density");
            e.condition = je.at("condition");
            e.seed = je.at("seed");
            e.steps = je.at("steps");
            e.has_corrupted = je.at("has_corrupted");
            e.hash = je.at("hash");
            cat.episodes.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed catalog " + file.string() + ": " + e.what());
    }
    cat.root = file.parent_path();
    return cat;
}

DatasetView sample_subset(const Catalog& cat, long budget_steps,
                          const std::vector<std::string>& conditions, uint64_t seed) {
    if (budget_steps < 1) throw ConfigError("sample_subset: budget must be >= 1");
    const std::set<std::string> want(conditions.begin(), conditions.end());
    std::vector<CatalogEntry> pool;
    for (const auto& e : cat.episodes)
        if (want.empty() || want.count(e.condition)) pool.push_back(e);
    if (pool.empty()) throw ConfigError("sample_subset: no episode matches the condition filter");
    long avail = 0;
    for (const auto& e : pool) avail += e.steps;
    if (budget_steps > avail)
        throw ConfigError("sample_subset: budget " + std::to_string(budget_steps) +
                          " exceeds available " + std::to_string(avail) + " steps");

    std::sort(pool.begin(), pool.end(),
              [](const CatalogEntry& a, const CatalogEntry& b) { return a.dir < b.dir; });
    std::mt19937_64 rng(seed);
    std::shuffle(pool.begin(), pool.end(), rng);

    DatasetView view;
    view.root = cat.root;
    view.seed = seed;
    view.catalog_hash = sha256_hex(catalog_canonical_text(cat));
    for (const auto& e : pool) {
        if (view.total_steps >= budget_steps) break;
        view.total_steps += e.steps;
        view.episodes.push_back(e);
    }
    std::sort(view.episodes.begin(), view.episodes.end(),
              [](const CatalogEntry& a, const CatalogEntry& b) { return a.dir < b.dir; });
    return view;
}

// ---------------------------------------------------------------------------

PackedEpisode load_packed_episode(const fs::path& dir, bool want_masks, bool corrupted) {
    const EpisodeMeta m = read_meta(dir);
    const auto scalars = read_frame_lines(dir, m.steps);
    PackedEpisode p;
    p.frames = m.steps;
    p.cameras = m.cameras;
    p.width = m.width;
    p.height = m.height;
    p.rgb.resize(size_t(p.frames) * p.rgb_stride());
    if (want_masks) p.masks.resize(size_t(p.frames) * p.mask_stride());
    p.speed.resize(size_t(p.frames));
    p.command.resize(size_t(p.frames));
    p.action.resize(size_t(p.frames) * 2);

    const size_t cam_px = size_t(m.width) * m.height;
    for (int t = 0; t < p.frames; ++t) {
        p.speed[size_t(t)] = float(scalars[size_t(t)].speed);
        p.command[size_t(t)] = uint8_t(scalars[size_t(t)].command);
        p.action[size_t(t) * 2] = float(scalars[size_t(t)].action.steer);
        p.action[size_t(t) * 2 + 1] = float(scalars[size_t(t)].action.accel);
        for (int c = 0; c < m.cameras; ++c) {
            const pnm::Image8 img = pnm::read8(rgb_path(dir, t, c));
            if (img.width != m.width || img.height != m.height || img.channels != 3)
                throw IoError("unexpected image geometry: " + rgb_path(dir, t, c).string());
            std::copy(img.data.begin(), img.data.end(),
                      p.rgb.begin() + ptrdiff_t(size_t(t) * p.rgb_stride() + size_t(c) * cam_px * 3));
            if (want_masks) {
                const fs::path mp = corrupted ? maskc_path(dir, t, c) : mask_path(dir, t, c);
                if (corrupted && !fs::exists(mp))
                    throw IoError("corrupted masks requested but missing: " + mp.string());
                const pnm::Image8 mk = pnm::read8(mp);
                if (mk.width != m.width || mk.height != m.height || mk.channels != 1)
                    throw IoError("unexpected mask geometry: " + mp.string());
                std::copy(mk.data.begin(), mk.data.end(),
                          p.masks.begin() + ptrdiff_t(size_t(t) * p.mask_stride() + size_t(c) * cam_px));
            }
        }
    }
    return p;
}

// ---------------------------------------------------------------------------

int corrupt_episode_masks(const fs::path& dir, uint64_t seed) {
    const EpisodeMeta m = read_meta(dir);
    NoiseParams p;
    p.d_max = m.mask_d_max;
    int written = 0;
    for (int t = 0; t < m.steps; ++t) {
        for (int c = 0; c < m.cameras; ++c) {
            const SemanticImage sem =
                sem_from_pnm(pnm::read8(sem_path(dir, t, c)), sem_path(dir, t, c));
            const DepthImage depth = depth_from_pnm(pnm::read16(depth_path(dir, t, c)));
            const AttentionMask mask =
                mask_from_pnm(pnm::read8(mask_path(dir, t, c)), mask_path(dir, t, c));
            p.seed = mix_seed(seed, uint64_t(t) * uint64_t(m.cameras) + uint64_t(c));
            pnm::write(maskc_path(dir, t, c), mask_to_pnm(corrupt_mask(mask, sem, depth, p)));
            ++written;
        }
    }
    return written;
}

}  // namespace agd
