#include "agd/sim/render.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace agd {

namespace {

struct Color {
    float r, g, b;
};

Color vehicle_color(int id) {
    static const Color palette[] = {
        {0.72f, 0.16f, 0.14f}, {0.16f, 0.28f, 0.68f}, {0.14f, 0.55f, 0.52f},
        {0.80f, 0.45f, 0.10f}, {0.45f, 0.20f, 0.60f}, {0.25f, 0.25f, 0.28f},
    };
    return palette[static_cast<size_t>(id) % 6];
}

constexpr Color kRoad{0.33f, 0.33f, 0.35f};
constexpr Color kMarking{0.93f, 0.93f, 0.86f};
constexpr Color kBorder{0.56f, 0.50f, 0.38f};
constexpr Color kGrass{0.22f, 0.43f, 0.22f};
constexpr Color kSky{0.56f, 0.70f, 0.92f};
constexpr Color kPole{0.35f, 0.35f, 0.37f};
constexpr Color kRed{0.92f, 0.10f, 0.10f};
constexpr Color kGreen{0.10f, 0.85f, 0.22f};
constexpr Color kPed{0.85f, 0.58f, 0.30f};
constexpr Color kSignPlate{0.18f, 0.38f, 0.82f};
constexpr Color kFog{0.66f, 0.70f, 0.76f};

// A vertical billboard slab: world-anchored centre, half-width, height span.
struct Sprite {
    Vec2 center;
    double half_w;
    double z0, z1;
    SemClass cls;
    Color color;
};

struct ColumnHit {
    double t;      // range along the ray
    int sprite;
    double v0, v1;  // covered screen rows (pixel-centre coordinates)
};

uint64_t mix_seed(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::vector<Sprite> gather_sprites(const World& world) {
    std::vector<Sprite> out;
    for (const VehicleAgent& v : world.vehicles)
        out.push_back({v.pos, 0.95, 0.0, 1.5, SemClass::Vehicle, vehicle_color(v.id)});
    for (const PedestrianAgent& p : world.pedestrians)
        out.push_back({p.pos(), 0.28, 0.0, 1.8, SemClass::Pedestrian, kPed});
    for (size_t i = 0; i < world.town.lights.size(); ++i) {
        const LightSpec& l = world.town.lights[i];
        out.push_back({l.head_pos, 0.09, 0.0, 2.2, SemClass::TrafficLight, kPole});
        out.push_back({l.head_pos, 0.32, 2.2, 2.9, SemClass::TrafficLight,
                       world.light_is_red(i) ? kRed : kGreen});
    }
    for (const SignSpec& s : world.town.signs) {
        out.push_back({s.pos, 0.07, 0.0, 1.2, SemClass::TrafficSign, kPole});
        out.push_back({s.pos, 0.32, 1.2, 2.0, SemClass::TrafficSign, kSignPlate});
    }
    return out;
}

}  // namespace

SemClass classify_ground(const TownMap& town, const Vec2& p) {
    int edge = -1;
    double t = 0.0;
    const double d = town.nearest_edge_distance(p, &edge, &t);
    const double hw = town.half_width();
    if (d > hw) return SemClass::Background;
    if (d <= 0.18) {
        // dashed centre line: 1.9 m painted, 1.1 m gap
        const double s = t * town.edges[static_cast<size_t>(edge)].length;
        if (std::fmod(s, 3.0) < 1.9) return SemClass::LaneMarking;
        return SemClass::Road;
    }
    if (d <= hw - 0.35) return SemClass::Road;
    return SemClass::RoadBorder;
}

RenderOutput render(const World& world, const EgoState& ego, int width, int height,
                    uint64_t frame_seed) {
    if (width <= 0 || height <= 0) throw ConfigError("render: non-positive image size");
    RenderOutput out;
    const std::vector<Sprite> sprites = gather_sprites(world);
    const double fx = (width / 2.0) / std::tan(kCameraFovRad / 2.0);
    const double fy = fx;
    const double cx = width / 2.0;
    const double cy = height / 2.0;

    std::mt19937_64 noise_rng(mix_seed(frame_seed));
    std::normal_distribution<double> gauss(0.0, 1.0);
    const Condition& cond = world.condition;

    for (int cam = 0; cam < kNumCameras; ++cam) {
        RgbImage rgb;
        rgb.width = width;
        rgb.height = height;
        rgb.rgb.assign(static_cast<size_t>(width) * height * 3, 0.f);
        SemanticImage sem;
        sem.width = width;
        sem.height = height;
        sem.ids.assign(static_cast<size_t>(width) * height, 0);
        DepthImage dep;
        dep.width = width;
        dep.height = height;
        dep.meters.assign(static_cast<size_t>(width) * height, kFarDepth);

        const double cam_heading = ego.heading + camera_yaws()[static_cast<size_t>(cam)];

        for (int u = 0; u < width; ++u) {
            const double delta = std::atan((u + 0.5 - cx) / fx);
            const double cos_d = std::cos(delta);
            const Vec2 ray = from_angle(cam_heading + delta);

            // sprite intersections for this column, nearest first
            std::vector<ColumnHit> hits;
            for (size_t si = 0; si < sprites.size(); ++si) {
                const Sprite& sp = sprites[si];
                const Vec2 d = sp.center - ego.pos;
                const double t = d.dot(ray);
                if (t < 0.3) continue;
                if (std::abs(d.cross(ray)) > sp.half_w) continue;
                const double tp = t * cos_d;  // perpendicular distance for projection
                const double v0 = cy + fy * (kCameraHeight - sp.z1) / tp;
                const double v1 = cy + fy * (kCameraHeight - sp.z0) / tp;
                hits.push_back({t, static_cast<int>(si), v0, v1});
            }
            std::sort(hits.begin(), hits.end(), [](const ColumnHit& a, const ColumnHit& b) {
                return a.t != b.t ? a.t < b.t : a.sprite < b.sprite;
            });

            for (int v = 0; v < height; ++v) {
                const double vc = v + 0.5;
                SemClass cls = SemClass::Background;
                float depth = kFarDepth;
                Color base = kSky;
                bool is_sky = true;

                const ColumnHit* hit = nullptr;
                for (const ColumnHit& h : hits)
                    if (vc >= h.v0 && vc <= h.v1) {
                        hit = &h;
                        break;
                    }
                if (hit) {
                    const Sprite& sp = sprites[static_cast<size_t>(hit->sprite)];
                    cls = sp.cls;
                    depth = static_cast<float>(hit->t);
                    base = sp.color;
                    is_sky = false;
                } else if (vc > cy) {
                    const double tp = fy * kCameraHeight / (vc - cy);
                    const double along = tp / cos_d;
                    if (along <= 140.0) {
                        const Vec2 p = ego.pos + ray * along;
                        cls = classify_ground(world.town, p);
                        depth = static_cast<float>(along);
                        is_sky = false;
                        switch (cls) {
                            case SemClass::Road: base = kRoad; break;
                            case SemClass::LaneMarking: base = kMarking; break;
                            case SemClass::RoadBorder: base = kBorder; break;
                            default: base = kGrass; break;
                        }
                    }
                }

                float r = base.r, g = base.g, b = base.b;
                if (!is_sky) {
                    const float f = std::min(depth / 150.f, 0.75f);
                    r += (kFog.r - r) * f;
                    g += (kFog.g - g) * f;
                    b += (kFog.b - b) * f;
                }
                r = static_cast<float>(r * cond.light * cond.tint_r);
                g = static_cast<float>(g * cond.light * cond.tint_g);
                b = static_cast<float>(b * cond.light * cond.tint_b);
                if (cond.noise_sigma > 0.0) {
                    r += static_cast<float>(gauss(noise_rng) * cond.noise_sigma);
                    g += static_cast<float>(gauss(noise_rng) * cond.noise_sigma);
                    b += static_cast<float>(gauss(noise_rng) * cond.noise_sigma);
                }
                float* px = rgb.px(u, v);
                px[0] = std::clamp(r, 0.f, 1.f);
                px[1] = std::clamp(g, 0.f, 1.f);
                px[2] = std::clamp(b, 0.f, 1.f);
                sem.ids[static_cast<size_t>(v) * width + u] = static_cast<uint8_t>(cls);
                dep.meters[static_cast<size_t>(v) * width + u] = depth;
            }
        }
        out.rgb.push_back(std::move(rgb));
        out.sem.push_back(std::move(sem));
        out.depth.push_back(std::move(dep));
    }
    return out;
}

Observation make_observation(const RenderOutput& r, double speed_norm, Command cmd) {
    if (r.rgb.empty()) throw ShapeError("make_observation: no cameras");
    Observation obs;
    obs.cameras = static_cast<int>(r.rgb.size());
    obs.channels = 3;
    obs.width = r.rgb[0].width;
    obs.height = r.rgb[0].height;
    obs.images.resize(static_cast<size_t>(obs.cameras) * obs.image_stride());
    for (int k = 0; k < obs.cameras; ++k) {
        const RgbImage& im = r.rgb[static_cast<size_t>(k)];
        float* dst = obs.camera(k);
        const size_t plane = static_cast<size_t>(obs.width) * obs.height;
        for (int y = 0; y < obs.height; ++y)
            for (int x = 0; x < obs.width; ++x) {
                const float* px = im.px(x, y);
                const size_t idx = static_cast<size_t>(y) * obs.width + x;
                dst[0 * plane + idx] = px[0];
                dst[1 * plane + idx] = px[1];
                dst[2 * plane + idx] = px[2];
            }
    }
    obs.speed_norm = speed_norm;
    obs.command.assign(kCommandCount, 0.0);
    obs.command[static_cast<size_t>(cmd)] = 1.0;
    return obs;
}

}  // namespace agd
