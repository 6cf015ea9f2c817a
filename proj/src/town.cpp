#include "agd/sim/town.hpp"

#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

namespace agd {

using ojson = nlohmann::ordered_json;

static void finalize(TownMap& t) {
    t.out_edges.assign(t.nodes.size(), {});
    t.in_edges.assign(t.nodes.size(), {});
    for (size_t e = 0; e < t.edges.size(); ++e) {
        TownEdge& ed = t.edges[e];
        const Vec2 a = t.nodes[static_cast<size_t>(ed.from)].pos;
        const Vec2 b = t.nodes[static_cast<size_t>(ed.to)].pos;
        ed.length = (b - a).norm();
        if (ed.length <= 0)
            throw ConfigError("town '" + t.name + "': zero-length edge");
        ed.dir = (b - a).normalized();
        t.out_edges[static_cast<size_t>(ed.from)].push_back(static_cast<int>(e));
        t.in_edges[static_cast<size_t>(ed.to)].push_back(static_cast<int>(e));
    }
    for (LightSpec& l : t.lights) {
        const TownEdge& e = t.edges[static_cast<size_t>(l.approach_edge)];
        const Vec2 node = t.nodes[static_cast<size_t>(l.node)].pos;
        l.stop_pos = node - e.dir * l.stop_offset;
        // Fixture stands on the right-hand verge at the stop line.
        const Vec2 right{e.dir.y, -e.dir.x};
        l.head_pos = l.stop_pos + right * (t.half_width() + 0.6);
    }
}

TownMap TownMap::from_json_text(const std::string& text) {
    ojson j;
    try {
        j = ojson::parse(text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("town fixture: bad JSON: ") + e.what());
    }
    TownMap t;
    t.version = j.value("version", 0);
    if (t.version != 1) throw ConfigError("town fixture: unsupported version");
    t.name = j.at("name").get<std::string>();
    t.lane_width = j.at("lane_width").get<double>();
    t.d_max = j.at("d_max").get<double>();
    t.target_speed = j.value("target_speed", 6.0);
    for (const auto& n : j.at("nodes"))
        t.nodes.push_back({n.at("id").get<std::string>(),
                           {n.at("x").get<double>(), n.at("y").get<double>()}});
    // resolve ids now that all nodes exist
    t.out_edges.assign(t.nodes.size(), {});
    for (const auto& e : j.at("edges")) {
        TownEdge ed;
        ed.from = t.node_index(e.at("from").get<std::string>());
        ed.to = t.node_index(e.at("to").get<std::string>());
        t.edges.push_back(ed);
    }
    if (j.contains("lights")) {
        for (const auto& l : j.at("lights")) {
            LightSpec ls;
            ls.node = t.node_index(l.at("node").get<std::string>());
            const int approach_from = t.node_index(l.at("approach").get<std::string>());
            ls.approach_edge = -1;
            for (size_t e = 0; e < t.edges.size(); ++e)
                if (t.edges[e].from == approach_from && t.edges[e].to == ls.node)
                    ls.approach_edge = static_cast<int>(e);
            if (ls.approach_edge < 0)
                throw ConfigError("town fixture: light approach edge not found");
            ls.red_s = l.value("red", 8.0);
            ls.green_s = l.value("green", 8.0);
            ls.offset_s = l.value("offset", 0.0);
            t.lights.push_back(ls);
        }
    }
    if (j.contains("signs"))
        for (const auto& s : j.at("signs"))
            t.signs.push_back({{s.at("x").get<double>(), s.at("y").get<double>()}});
    finalize(t);
    return t;
}

TownMap TownMap::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open town fixture: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

std::string TownMap::to_json_text() const {
    ojson j;
    j["version"] = version;
    j["name"] = name;
    j["lane_width"] = lane_width;
    j["d_max"] = d_max;
    j["target_speed"] = target_speed;
    j["nodes"] = ojson::array();
    for (const TownNode& n : nodes)
        j["nodes"].push_back({{"id", n.id}, {"x", n.pos.x}, {"y", n.pos.y}});
    j["edges"] = ojson::array();
    for (const TownEdge& e : edges)
        j["edges"].push_back({{"from", nodes[static_cast<size_t>(e.from)].id},
                              {"to", nodes[static_cast<size_t>(e.to)].id}});
    j["lights"] = ojson::array();
    for (const LightSpec& l : lights)
        j["lights"].push_back(
            {{"node", nodes[static_cast<size_t>(l.node)].id},
             {"approach", nodes[static_cast<size_t>(edges[static_cast<size_t>(l.approach_edge)].from)].id},
             {"red", l.red_s},
             {"green", l.green_s},
             {"offset", l.offset_s}});
    j["signs"] = ojson::array();
    for (const SignSpec& s : signs) j["signs"].push_back({{"x", s.pos.x}, {"y", s.pos.y}});
    return j.dump(2) + "\n";
}

RoutePlan build_route(const TownMap& town, const std::vector<int>& node_seq,
                      double spacing, double command_radius) {
    if (node_seq.size() < 2) throw ConfigError("route needs at least two nodes");
    RoutePlan plan;
    plan.node_seq = node_seq;
    for (size_t i = 0; i + 1 < node_seq.size(); ++i)
        plan.edge_seq.push_back(town.edge_between(node_seq[i], node_seq[i + 1]));

    // Junction arclengths and the command chosen there (by the route's own
    // next edge).
    struct Branch {
        double s;
        Command cmd;
    };
    std::vector<Branch> branches;
    double s_acc = 0.0;
    for (size_t i = 0; i < plan.edge_seq.size(); ++i) {
        const TownEdge& e = town.edges[static_cast<size_t>(plan.edge_seq[i])];
        s_acc += e.length;
        if (i + 1 < plan.edge_seq.size() && town.is_junction(e.to))
            branches.push_back({s_acc, town.branch_command(plan.edge_seq[i], plan.edge_seq[i + 1])});
    }
    plan.total_length = s_acc;

    auto command_at = [&](double s) {
        for (const Branch& b : branches)
            if (s >= b.s - command_radius && s < b.s) return b.cmd;
        return Command::Follow;
    };

    double s0 = 0.0;
    for (size_t i = 0; i < plan.edge_seq.size(); ++i) {
        const int ei = plan.edge_seq[i];
        const TownEdge& e = town.edges[static_cast<size_t>(ei)];
        const Vec2 a = town.nodes[static_cast<size_t>(e.from)].pos;
        const int steps = std::max(1, static_cast<int>(std::ceil(e.length / spacing)));
        for (int k = 0; k < steps; ++k) {
            const double d = e.length * k / steps;
            plan.wps.push_back({a + e.dir * d, s0 + d, ei, command_at(s0 + d)});
        }
        s0 += e.length;
    }
    const TownEdge& last = town.edges[static_cast<size_t>(plan.edge_seq.back())];
    plan.wps.push_back({town.nodes[static_cast<size_t>(last.to)].pos, plan.total_length,
                        plan.edge_seq.back(), Command::Follow});
    return plan;
}

void extend_route(const TownMap& town, RoutePlan& plan, uint64_t pick) {
    const int tail = plan.node_seq.back();
    const auto& outs = town.out_edges[static_cast<size_t>(tail)];
    if (outs.empty()) throw ConfigError("route extension: dead-end node");
    std::vector<int> choices;
    const int prev = plan.node_seq[plan.node_seq.size() - 2];
    for (int e : outs)
        if (town.edges[static_cast<size_t>(e)].to != prev) choices.push_back(e);
    if (choices.empty()) choices.assign(outs.begin(), outs.end());
    const int chosen = choices[pick % choices.size()];
    std::vector<int> seq = plan.node_seq;
    seq.push_back(town.edges[static_cast<size_t>(chosen)].to);
    plan = build_route(town, seq);
}

std::vector<RouteSpec> load_routes(const std::string& path, std::string* town_name) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open route fixture: " + path);
    ojson j;
    try {
        j = ojson::parse(in);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("route fixture: bad JSON: ") + e.what());
    }
    if (j.value("version", 0) != 1) throw ConfigError("route fixture: unsupported version");
    if (town_name) *town_name = j.at("town").get<std::string>();
    std::vector<RouteSpec> out;
    for (const auto& r : j.at("routes")) {
        RouteSpec spec;
        spec.id = r.at("id").get<std::string>();
        for (const auto& n : r.at("nodes")) spec.node_ids.push_back(n.get<std::string>());
        out.push_back(std::move(spec));
    }
    return out;
}

}  // namespace agd
