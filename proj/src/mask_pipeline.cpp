#include "agd/mask/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "agd/mask/perlin.hpp"

namespace agd {

std::atomic<uint64_t>& mask_pipeline_invocations() {
    static std::atomic<uint64_t> n{0};
    return n;
}

void reset_mask_pipeline_invocations() { mask_pipeline_invocations() = 0; }

const std::set<SemClass>& default_salient_classes() {
    static const std::set<SemClass> s = {SemClass::Vehicle,      SemClass::Pedestrian,
                                         SemClass::TrafficLight, SemClass::TrafficSign,
                                         SemClass::LaneMarking,  SemClass::RoadBorder};
    return s;
}

AttentionMask build_mask(const SemanticImage& sem, const DepthImage& depth,
                         const std::set<SemClass>& salient, double d_max) {
    ++mask_pipeline_invocations();
    if (sem.width != depth.width || sem.height != depth.height)
        throw ShapeError("build_mask: semantic and depth dimensions differ");
    AttentionMask m;
    m.width = sem.width;
    m.height = sem.height;
    m.v.resize(size_t(m.width) * m.height, 0.0f);
    for (size_t i = 0; i < m.v.size(); ++i) {
        const uint8_t id = sem.ids[i];
        if (id >= kSemClassCount)
            throw ConfigError("build_mask: unknown class id " + std::to_string(int(id)));
        if (salient.count(SemClass(id)) && double(depth.meters[i]) <= d_max) m.v[i] = 1.0f;
    }
    return m;
}

std::vector<double> to_distribution(const std::vector<AttentionMask>& masks, int w, int h) {
    ++mask_pipeline_invocations();
    if (masks.empty()) throw ShapeError("to_distribution: no masks");
    const size_t N = masks.size() * size_t(w) * h;
    std::vector<double> out;
    out.reserve(N);
    for (const auto& m : masks) {
        if (m.width % w != 0 || m.height % h != 0)
            throw ShapeError("to_distribution: " + std::to_string(m.width) + "x" +
                             std::to_string(m.height) + " not divisible by " + std::to_string(w) +
                             "x" + std::to_string(h));
        const int bx = m.width / w, by = m.height / h;
        const double inv_cell = 1.0 / (double(bx) * by);
        for (int ty = 0; ty < h; ++ty)
            for (int tx = 0; tx < w; ++tx) {
                double acc = 0.0;
                for (int py = ty * by; py < (ty + 1) * by; ++py)
                    for (int px = tx * bx; px < (tx + 1) * bx; ++px)
                        acc += double(m.v[size_t(py) * m.width + px]);
                out.push_back(acc * inv_cell);
            }
    }
    double total = 0.0;
    for (double v : out) total += v;
    if (total <= 0.0) {
        std::fill(out.begin(), out.end(), 1.0 / double(N));
    } else {
        const double inv = 1.0 / total;
        for (double& v : out) v *= inv;
    }
    return out;
}

double blob_threshold(double depth, const NoiseParams& p) {
    const double tau = p.tau_max * (1.0 - depth / (2.0 * p.d_max));
    return std::clamp(tau, p.tau_min, p.tau_max);
}

namespace {

// 8-connected component labelling over the positive mask pixels.
struct Components {
    std::vector<int> label;  // -1 for empty pixels
    std::vector<int> area;
    std::vector<int> min_side;  // min(bbox width, bbox height) per component
};

Components label_components(const AttentionMask& m) {
    const int w = m.width, h = m.height;
    Components c;
    c.label.assign(size_t(w) * h, -1);
    std::vector<size_t> stack;
    for (size_t start = 0; start < c.label.size(); ++start) {
        if (m.v[start] <= 0.0f || c.label[start] != -1) continue;
        const int id = int(c.area.size());
        int area = 0, x0 = w, x1 = -1, y0 = h, y1 = -1;
        stack.push_back(start);
        c.label[start] = id;
        while (!stack.empty()) {
            const size_t i = stack.back();
            stack.pop_back();
            const int x = int(i % size_t(w)), y = int(i / size_t(w));
            ++area;
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    const int nx = x + dx, ny = y + dy;
                    if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
                    const size_t ni = size_t(ny) * w + nx;
                    if (m.v[ni] > 0.0f && c.label[ni] == -1) {
                        c.label[ni] = id;
                        stack.push_back(ni);
                    }
                }
        }
        c.area.push_back(area);
        c.min_side.push_back(std::min(x1 - x0 + 1, y1 - y0 + 1));
    }
    return c;
}

}  // namespace

AttentionMask corrupt_mask(const AttentionMask& mask, const SemanticImage& sem,
                           const DepthImage& depth, const NoiseParams& p) {
    ++mask_pipeline_invocations();
    if (mask.width != sem.width || mask.height != sem.height || mask.width != depth.width ||
        mask.height != depth.height)
        throw ShapeError("corrupt_mask: dimensions disagree");

    const Components comp = label_components(mask);
    const PerlinNoise base(p.seed);
    const PerlinNoise granular(p.seed ^ 0x9e3779b97f4a7c15ull);

    AttentionMask out = mask;
    const int w = mask.width, h = mask.height;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const size_t i = size_t(y) * w + x;
            if (out.v[i] <= 0.0f) continue;
            if (p.excluded.count(SemClass(sem.ids[i]))) continue;
            const int id = comp.label[i];
            if (id >= 0 && comp.min_side[size_t(id)] < p.thin_side) continue;

            const double n1 = base.at(double(x) / p.base_wavelength, double(y) / p.base_wavelength);
            if (n1 > blob_threshold(double(depth.meters[i]), p)) {
                out.v[i] = 0.0f;
                continue;
            }
            if (id >= 0 && comp.area[size_t(id)] > p.area_big) {
                const double n2 = granular.at(double(x) / p.granular_wavelength,
                                              double(y) / p.granular_wavelength);
                if (n2 > p.granular_tau) out.v[i] = 0.0f;
            }
        }
    }
    return out;
}

}  // namespace agd
