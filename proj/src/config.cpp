#include "qiva/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "qiva/core_model.hpp"

namespace qiva {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double to_double(const std::string& key, const std::string& s) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw PreconditionError("config: '" + key + "' expects a number, got '" + s + "'");
    }
}

long long to_int(const std::string& key, const std::string& s) {
    long long v = 0;
    // Accept integral values written in scientific form (e.g. 1e4).
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec == std::errc() && p == s.data() + s.size()) return v;
    const double d = to_double(key, s);
    if (d != static_cast<double>(static_cast<long long>(d))) {
        throw PreconditionError("config: '" + key + "' expects an integer, got '" + s + "'");
    }
    return static_cast<long long>(d);
}

}  // namespace

Config Config::parse(std::istream& in, const std::string& origin) {
    Config c;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw PreconditionError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw PreconditionError(origin + ":" + std::to_string(lineno) + ": empty key");
        c.values_[key] = trim(line.substr(eq + 1));
    }
    return c;
}

Config Config::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw PreconditionError("cannot open config file '" + path + "'");
    return parse(f, path);
}

void Config::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw PreconditionError("override '" + assignment + "' is not key=value");
    values_[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

void Config::merge(const Config& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
}

std::string Config::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw PreconditionError("config: missing key '" + key + "'");
    return it->second;
}

double Config::get_double(const std::string& key) const { return to_double(key, get(key)); }

long long Config::get_int(const std::string& key) const { return to_int(key, get(key)); }

std::uint64_t Config::get_uint64(const std::string& key) const {
    const std::string s = get(key);
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
        throw PreconditionError("config: '" + key + "' expects an unsigned integer, got '" + s + "'");
    }
    return v;
}

std::vector<double> Config::get_doubles(const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : split_list(get(key))) out.push_back(to_double(key, s));
    return out;
}

std::vector<long long> Config::get_ints(const std::string& key) const {
    std::vector<long long> out;
    for (const auto& s : split_list(get(key))) out.push_back(to_int(key, s));
    return out;
}

std::vector<std::string> Config::get_strings(const std::string& key) const { return split_list(get(key)); }

std::string Config::dump(const std::string& prefix) const {
    std::string out;
    for (const auto& [k, v] : values_) out += prefix + k + " = " + v + "\n";
    return out;
}

}  // namespace qiva
