#pragma once

// Flat key = value configuration with dotted keys, '#' comments and
// comma-separated lists.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace qiva {

class Config {
public:
    [[nodiscard]] static Config parse(std::istream& in, const std::string& origin = "<input>");
    [[nodiscard]] static Config from_file(const std::string& path);

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    /// "key=value"; throws PreconditionError when '=' is missing.
    void apply_override(const std::string& assignment);
    void merge(const Config& other);

    [[nodiscard]] bool has(const std::string& key) const { return values_.count(key) != 0; }
    [[nodiscard]] std::string get(const std::string& key) const;

    [[nodiscard]] double get_double(const std::string& key) const;
    [[nodiscard]] long long get_int(const std::string& key) const;
    [[nodiscard]] std::uint64_t get_uint64(const std::string& key) const;
    [[nodiscard]] std::vector<double> get_doubles(const std::string& key) const;
    [[nodiscard]] std::vector<long long> get_ints(const std::string& key) const;
    [[nodiscard]] std::vector<std::string> get_strings(const std::string& key) const;

    [[nodiscard]] const std::map<std::string, std::string>& values() const noexcept { return values_; }

    /// One "key = value" line per entry, sorted by key, each line prefixed.
    [[nodiscard]] std::string dump(const std::string& prefix = "") const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace qiva
