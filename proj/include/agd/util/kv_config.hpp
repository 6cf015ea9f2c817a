#pragma once

// Flat key=value config files: one pair per line, '#' starts a comment,
// blank lines ignored, later keys override earlier ones. Values stay
// strings until queried with a typed getter.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "agd/types.hpp"

namespace agd {

class KvConfig {
public:
    KvConfig() = default;

    static KvConfig from_file(const std::filesystem::path& path) {
        std::ifstream f(path);
        if (!f) throw IoError("cannot read config: " + path.string());
        KvConfig cfg;
        std::string line;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                                  ": expected key=value, got '" + trimmed + "'");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string val = trim(trimmed.substr(eq + 1));
            if (key.empty())
                throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": empty key");
            cfg.values_[key] = val;
        }
        return cfg;
    }

    void set(const std::string& key, const std::string& val) { values_[key] = val; }
    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_str(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }
    std::string require_str(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing config key: " + key);
        return it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : parse_double(key, it->second);
    }
    long get_long(const std::string& key, long fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : parse_long(key, it->second);
    }
    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        const std::string& v = it->second;
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError("config key " + key + ": expected bool, got '" + v + "'");
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

    // Merge other on top of this (other wins).
    void overlay(const KvConfig& other) {
        for (auto& [k, v] : other.values_) values_[k] = v;
    }

private:
    static std::string trim(const std::string& s) {
        size_t a = s.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) return "";
        size_t b = s.find_last_not_of(" \t\r\n");
        return s.substr(a, b - a + 1);
    }
    static double parse_double(const std::string& key, const std::string& v) {
        char* end = nullptr;
        double d = std::strtod(v.c_str(), &end);
        if (end == v.c_str() || *end != '\0')
            throw ConfigError("config key " + key + ": expected number, got '" + v + "'");
        return d;
    }
    static long parse_long(const std::string& key, const std::string& v) {
        char* end = nullptr;
        long l = std::strtol(v.c_str(), &end, 10);
        if (end == v.c_str() || *end != '\0')
            throw ConfigError("config key " + key + ": expected integer, got '" + v + "'");
        return l;
    }

    std::map<std::string, std::string> values_;
};

}  // namespace agd
