#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

namespace pgcn {

// Flat "key = value" config file. Consumers declare the accepted keys;
// anything else is rejected.
class KVConfig {
public:
    KVConfig() = default;
    static KVConfig from_file(const std::string& path);
    static KVConfig from_string(const std::string& text, const std::string& origin = "<string>");

    bool has(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback);
    double get_double(const std::string& key, double fallback);
    std::int64_t get_int(const std::string& key, std::int64_t fallback);
    bool get_bool(const std::string& key, bool fallback);

    // Throws if any key was never requested via a getter.
    void reject_unknown() const;

private:
    std::string origin_;
    std::map<std::string, std::string> values_;
    mutable std::set<std::string> consumed_;
};

}  // namespace pgcn
