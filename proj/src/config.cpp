#include "pgcn/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pgcn {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

KVConfig KVConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_string(ss.str(), path);
}

KVConfig KVConfig::from_string(const std::string& text, const std::string& origin) {
    KVConfig cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error(origin + ": line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty()) {
            throw std::runtime_error(origin + ": line " + std::to_string(line_no) + ": empty key");
        }
        if (cfg.values_.count(key)) {
            throw std::runtime_error(origin + ": line " + std::to_string(line_no) + ": duplicate key " + key);
        }
        cfg.values_[key] = value;
    }
    return cfg;
}

bool KVConfig::has(const std::string& key) const { return values_.count(key) != 0; }

std::string KVConfig::get_string(const std::string& key, const std::string& fallback) {
    consumed_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double KVConfig::get_double(const std::string& key, double fallback) {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        std::size_t pos = 0;
        double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw std::runtime_error(origin_ + ": key " + key + ": not a real number: " + it->second);
    }
}

std::int64_t KVConfig::get_int(const std::string& key, std::int64_t fallback) {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        std::size_t pos = 0;
        long long v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw std::runtime_error(origin_ + ": key " + key + ": not an integer: " + it->second);
    }
}

bool KVConfig::get_bool(const std::string& key, bool fallback) {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw std::runtime_error(origin_ + ": key " + key + ": not a boolean: " + it->second);
}

void KVConfig::reject_unknown() const {
    for (const auto& [key, value] : values_) {
        (void)value;
        if (!consumed_.count(key)) {
            throw std::runtime_error(origin_ + ": unknown config key: " + key);
        }
    }
}

}  // namespace pgcn
