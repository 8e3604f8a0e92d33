#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "crib/errors.hpp"

namespace crib {

// Flat key=value run configuration. '#' starts a comment; blank lines are
// ignored. Unknown keys are rejected so typos fail fast (exit 1).
class KeyValueConfig {
public:
    static constexpr std::array kKnownKeys = {
        "seed", "jobs", "out_dir",
        "synth.n_train", "synth.n_internal", "synth.n_external",
        "synth.positive_rate", "synth.borderline_rate",
        "synth.width", "synth.height",
        "synth.rescan_profiles", "synth.rescan_train_fraction", "synth.rescan_internal",
        "synth.rescan_max_shift",
        "synth.borderline_hole_count", "synth.borderline_hole_radius",
        "tile.patch_size", "tile.stride", "tile.target_spacing",
        "tile.min_tissue_fraction", "tile.patch_positive_fraction",
        "train.patch_epochs", "train.slide_epochs", "train.patch_batch",
        "train.max_bag_size", "train.folds",
        "train.aug_geometric", "train.aug_photometric", "train.aug_noise", "train.aug_jpeg",
        "train.withhold_pixel_cohorts",
        "infer.n_views", "infer.calibrate", "infer.threshold_raw",
        "infer.scan_set", "infer.dump_matrix",
        "eval.n_bootstrap", "eval.bins", "eval.role",
    };

    KeyValueConfig() = default;

    static KeyValueConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw MissingInputError("config file not found: " + path);
        KeyValueConfig cfg;
        cfg.source_ = path;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
            cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)),
                    path + ":" + std::to_string(lineno));
        }
        return cfg;
    }

    void set(const std::string& key, const std::string& value, const std::string& ctx = "override") {
        if (std::find(kKnownKeys.begin(), kKnownKeys.end(), key) == kKnownKeys.end())
            throw ConfigError(ctx + ": unknown config key '" + key + "'");
        values_[key] = value;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    const std::string& source() const { return source_; }
    const std::map<std::string, std::string>& values() const { return values_; }

    std::string get_str(const std::string& key, const std::string& dflt) const {
        auto it = values_.find(key);
        return it == values_.end() ? dflt : it->second;
    }

    long get_int(const std::string& key, long dflt) const {
        auto it = values_.find(key);
        if (it == values_.end()) return dflt;
        try {
            std::size_t pos = 0;
            long v = std::stol(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument(it->second);
            return v;
        } catch (const std::exception&) {
            throw ConfigError(source_ + ": key '" + key + "': not an integer: '" + it->second + "'");
        }
    }

    double get_double(const std::string& key, double dflt) const {
        auto it = values_.find(key);
        if (it == values_.end()) return dflt;
        try {
            std::size_t pos = 0;
            double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument(it->second);
            return v;
        } catch (const std::exception&) {
            throw ConfigError(source_ + ": key '" + key + "': not a number: '" + it->second + "'");
        }
    }

    bool get_bool(const std::string& key, bool dflt) const {
        auto it = values_.find(key);
        if (it == values_.end()) return dflt;
        const std::string& v = it->second;
        if (v == "1" || v == "true" || v == "yes") return true;
        if (v == "0" || v == "false" || v == "no") return false;
        throw ConfigError(source_ + ": key '" + key + "': not a boolean: '" + v + "'");
    }

    // Stable digest of the effective configuration, recorded in provenance
    // headers. Depends only on key/value content.
    std::string digest() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        auto feed = [&h](std::string_view s) {
            for (char c : s) {
                h ^= static_cast<std::uint8_t>(c);
                h *= 0x100000001b3ULL;
            }
            h ^= 0x1f;
            h *= 0x100000001b3ULL;
        };
        for (const auto& [k, v] : values_) {
            feed(k);
            feed(v);
        }
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }

private:
    static std::string trim(const std::string& s) {
        std::size_t a = s.find_first_not_of(" \t");
        if (a == std::string::npos) return "";
        std::size_t b = s.find_last_not_of(" \t");
        return s.substr(a, b - a + 1);
    }

    std::map<std::string, std::string> values_;
    std::string source_ = "config";
};

} // namespace crib
