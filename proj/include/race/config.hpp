#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace race {

// Flat key/value configuration: one "key = value" per line, '#' comments.
// CLI flags land here as overrides; every pipeline knob has a documented key.
class Config {
  public:
    Config() = default;

    static Config load(const std::string& path);
    static Config parse(const std::string& text, const std::string& origin = "<config>");

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_str(const std::string& key, const std::string& fallback) const;
    std::string require_str(const std::string& key) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    const std::map<std::string, std::string>& entries() const { return values_; }

  private:
    std::map<std::string, std::string> values_;
};

}  // namespace race
