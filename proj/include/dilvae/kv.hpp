#pragma once

#include <map>
#include <string>

namespace dilvae {

using KeyValues = std::map<std::string, std::string>;

// Typed reads of "key = value" settings; failures throw ConfigError naming the key.
std::size_t parse_size(const std::string& key, const std::string& value);
long long parse_int(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);

/// Shortest text that reads back to the same double.
std::string format_double(double v);

} // namespace dilvae
