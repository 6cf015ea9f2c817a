#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace agd {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Steering and acceleration, each nominally in [-1,1]. Raw network outputs
// may fall outside; clip_action() is applied before actuation.
struct Action {
    double steer = 0.0;
    double accel = 0.0;
};

inline Action clip_action(const Action& a) {
    auto c = [](double v) { return v < -1.0 ? -1.0 : (v > 1.0 ? 1.0 : v); };
    return {c(a.steer), c(a.accel)};
}

// Per-pixel semantic classes produced by the renderer and consumed by the
// mask pipeline. Values are the on-disk ids (8-bit PGM).
enum class SemClass : uint8_t {
    Background = 0,
    Road = 1,
    LaneMarking = 2,
    RoadBorder = 3,
    Vehicle = 4,
    Pedestrian = 5,
    TrafficLight = 6,
    TrafficSign = 7,
};
constexpr int kSemClassCount = 8;

inline const char* sem_class_name(SemClass c) {
    switch (c) {
        case SemClass::Background: return "background";
        case SemClass::Road: return "road";
        case SemClass::LaneMarking: return "lane-marking";
        case SemClass::RoadBorder: return "road-border";
        case SemClass::Vehicle: return "vehicle";
        case SemClass::Pedestrian: return "pedestrian";
        case SemClass::TrafficLight: return "traffic-light";
        case SemClass::TrafficSign: return "traffic-sign";
    }
    return "?";
}

struct SemanticImage {
    int width = 0, height = 0;
    std::vector<uint8_t> ids;  // row-major, one class id per pixel

    uint8_t at(int x, int y) const { return ids[size_t(y) * width + x]; }
};

struct DepthImage {
    int width = 0, height = 0;
    std::vector<float> meters;  // row-major, strictly positive

    float at(int x, int y) const { return meters[size_t(y) * width + x]; }
};

struct RgbImage {
    int width = 0, height = 0;
    std::vector<float> rgb;  // row-major, 3 floats per pixel, [0,1]

    float* px(int x, int y) { return &rgb[(size_t(y) * width + x) * 3]; }
    const float* px(int x, int y) const { return &rgb[(size_t(y) * width + x) * 3]; }
};

// Single-channel saliency mask. Binary when freshly built; stays in [0,1]
// after pooling or corruption.
struct AttentionMask {
    int width = 0, height = 0;
    std::vector<float> v;  // row-major

    float at(int x, int y) const { return v[size_t(y) * width + x]; }
    float& at(int x, int y) { return v[size_t(y) * width + x]; }
};

// Network input for one timestep: K camera images (3 or 4 channels,
// planar CHW per camera), normalized forward speed, one-hot command.
struct Observation {
    int cameras = 0;
    int channels = 3;
    int width = 0, height = 0;
    std::vector<float> images;  // cameras * channels * height * width
    double speed_norm = 0.0;
    std::vector<double> command;  // one-hot, length M

    size_t image_stride() const { return size_t(channels) * height * width; }
    float* camera(int k) { return &images[k * image_stride()]; }
    const float* camera(int k) const { return &images[k * image_stride()]; }

    void validate() const {
        if (images.size() != size_t(cameras) * image_stride())
            throw ShapeError("Observation: image buffer size mismatch");
        int ones = 0;
        for (double c : command) {
            if (c != 0.0 && c != 1.0) throw ConfigError("Observation: command must be one-hot");
            if (c == 1.0) ++ones;
        }
        if (ones != 1) throw ConfigError("Observation: command must have exactly one 1");
        for (float p : images)
            if (p < 0.f || p > 1.f) throw ConfigError("Observation: pixel outside [0,1]");
    }
};

// High-level navigation commands (single-lane set, M=4).
enum class Command : int { Follow = 0, Left = 1, Right = 2, Straight = 3 };
constexpr int kCommandCount = 4;

inline const char* command_name(Command c) {
    switch (c) {
        case Command::Follow: return "follow";
        case Command::Left: return "left";
        case Command::Right: return "right";
        case Command::Straight: return "straight";
    }
    return "?";
}

}  // namespace agd
