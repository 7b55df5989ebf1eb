#pragma once

#include <cctype>
#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "octflow/errors.hpp"
#include "octflow/rng.hpp"

namespace octflow {

// %.17g round-trips a double exactly; used everywhere a double becomes text
// that feeds a hash or a byte-compared file.
inline std::string format_g17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

// One parsed key=value configuration. Every read marks its key consumed so
// that reject_unknown() can list typos instead of silently defaulting them.
class KeyValues {
public:
    KeyValues() = default;
    KeyValues(std::map<std::string, std::string> values, std::string source)
        : values_(std::move(values)), source_(std::move(source)) {}

    const std::string& source() const { return source_; }
    const std::map<std::string, std::string>& values() const { return values_; }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        consumed_.insert(key);
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    std::string require_string(const std::string& key) const {
        consumed_.insert(key);
        const auto it = values_.find(key);
        if (it == values_.end()) {
            throw ConfigError(source_ + ": missing required key '" + key + "'");
        }
        return it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        const auto it = find_consume(key);
        return it == values_.end() ? fallback : parse_double(key, it->second);
    }

    std::int64_t get_i64(const std::string& key, std::int64_t fallback) const {
        const auto it = find_consume(key);
        return it == values_.end() ? fallback : parse_i64(key, it->second);
    }

    std::size_t get_size(const std::string& key, std::size_t fallback) const {
        const auto it = find_consume(key);
        if (it == values_.end()) return fallback;
        const std::int64_t v = parse_i64(key, it->second);
        if (v < 0) {
            throw ConfigError(source_ + ": key '" + key + "' must be non-negative, got " +
                              it->second);
        }
        return std::size_t(v);
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
        const auto it = find_consume(key);
        if (it == values_.end()) return fallback;
        const std::string& text = it->second;
        errno = 0;
        char* end = nullptr;
        const unsigned long long v = std::strtoull(text.c_str(), &end, 10);
        if (errno != 0 || end == text.c_str() || *end != '\0' || text[0] == '-') {
            throw ConfigError(source_ + ": key '" + key + "' has invalid unsigned value '" +
                              text + "'");
        }
        return std::uint64_t(v);
    }

    bool get_bool(const std::string& key, bool fallback) const {
        const auto it = find_consume(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw ConfigError(source_ + ": key '" + key + "' must be true/false/1/0, got '" +
                          it->second + "'");
    }

    // Call after all reads: any key never consumed is a typo or an option the
    // subcommand does not understand.
    void reject_unknown() const {
        std::string bad;
        for (const auto& [key, value] : values_) {
            if (consumed_.count(key) == 0) bad += (bad.empty() ? "" : ", ") + key;
        }
        if (!bad.empty()) throw ConfigError(source_ + ": unknown key(s): " + bad);
    }

private:
    std::map<std::string, std::string>::const_iterator find_consume(const std::string& key) const {
        consumed_.insert(key);
        return values_.find(key);
    }

    double parse_double(const std::string& key, const std::string& text) const {
        errno = 0;
        char* end = nullptr;
        const double v = std::strtod(text.c_str(), &end);
        if (errno != 0 || end == text.c_str() || *end != '\0') {
            throw ConfigError(source_ + ": key '" + key + "' has invalid numeric value '" +
                              text + "'");
        }
        return v;
    }

    std::int64_t parse_i64(const std::string& key, const std::string& text) const {
        errno = 0;
        char* end = nullptr;
        const long long v = std::strtoll(text.c_str(), &end, 10);
        if (errno != 0 || end == text.c_str() || *end != '\0') {
            throw ConfigError(source_ + ": key '" + key + "' has invalid integer value '" +
                              text + "'");
        }
        return std::int64_t(v);
    }

    std::map<std::string, std::string> values_;
    std::string source_ = "<inline>";
    mutable std::set<std::string> consumed_;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline bool valid_key(const std::string& k) {
    if (k.empty()) return false;
    for (const char c : k) {
        const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' ||
                        c == '-';
        if (!ok) return false;
    }
    return true;
}

} // namespace detail

// Parses `key = value` lines; '#' starts a comment, blank lines are skipped.
// Duplicate keys are rejected so a config cannot silently shadow itself.
inline KeyValues parse_config_text(const std::string& text, const std::string& source) {
    std::map<std::string, std::string> values;
    std::istringstream is(text);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(is, raw)) {
        ++line_no;
        const std::size_t hash = raw.find('#');
        const std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(source + ":" + std::to_string(line_no) + ": expected key=value, got '" +
                              line + "'");
        }
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (!detail::valid_key(key)) {
            throw ConfigError(source + ":" + std::to_string(line_no) + ": invalid key '" + key +
                              "'");
        }
        if (values.count(key) != 0) {
            throw ConfigError(source + ":" + std::to_string(line_no) + ": duplicate key '" + key +
                              "'");
        }
        values[key] = value;
    }
    return KeyValues(std::move(values), source);
}

inline KeyValues parse_config_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open config '" + path + "' for reading");
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_config_text(buf.str(), path);
}

// Sorted `key=value` lines; the exact bytes the run hash covers.
inline std::string canonical_config(const std::map<std::string, std::string>& resolved) {
    std::string out;
    for (const auto& [key, value] : resolved) out += key + "=" + value + "\n";
    return out;
}

inline std::string hash_hex(std::uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Content fingerprint of one input file; folds into the run hash so an equal
// hash certifies equal inputs, not just equal settings.
inline std::string file_fingerprint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "' for fingerprinting");
    std::ostringstream buf;
    buf << is.rdbuf();
    const std::string bytes = buf.str();
    return hash_hex(fnv1a64(bytes));
}

// The reproducibility stamp of one run: canonical resolved settings plus
// the hash over them.
struct RunStamp {
    std::string canonical;
    std::string hash;
};

// Creates (or re-enters) a run directory. A directory already stamped with a
// different hash is refused: runs are write-once, and only a byte-identical
// rerun of the same configuration may touch an existing one.
inline RunStamp begin_run(const std::string& dir,
                          const std::map<std::string, std::string>& resolved) {
    namespace fs = std::filesystem;
    RunStamp stamp;
    stamp.canonical = canonical_config(resolved);
    stamp.hash = hash_hex(fnv1a64(stamp.canonical));

    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create run directory '" + dir + "': " + ec.message());

    const std::string hash_path = (fs::path(dir) / "run.hash").string();
    if (fs::exists(hash_path)) {
        std::ifstream is(hash_path, std::ios::binary);
        std::string existing;
        std::getline(is, existing);
        if (existing != stamp.hash) {
            throw StateError("run directory '" + dir + "' holds a different run (hash " +
                             existing + ", this config hashes to " + stamp.hash + ")");
        }
    }

    const std::string cfg_path = (fs::path(dir) / "run.config").string();
    std::ofstream cfg(cfg_path, std::ios::binary | std::ios::trunc);
    if (!cfg) throw IoError("cannot open '" + cfg_path + "' for writing");
    cfg << stamp.canonical;
    if (!cfg.flush()) throw IoError("short write to '" + cfg_path + "'");

    std::ofstream hs(hash_path, std::ios::binary | std::ios::trunc);
    if (!hs) throw IoError("cannot open '" + hash_path + "' for writing");
    hs << stamp.hash << "\n";
    if (!hs.flush()) throw IoError("short write to '" + hash_path + "'");
    return stamp;
}

} // namespace octflow
