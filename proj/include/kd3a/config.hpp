#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace kd3a {

// Flat "section.key" -> value map parsed from INI-style text: [section]
// headers, key = value lines, # or ; comments. Keys outside a section keep
// their bare name. Later duplicates win.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_config_text(const std::string& text);
KeyValues parse_config_file(const std::string& path);

// Value conversions with the offending key in the error message.
int config_int(const KeyValues& kv, const std::string& key, int fallback);
double config_double(const KeyValues& kv, const std::string& key, double fallback);
bool config_bool(const KeyValues& kv, const std::string& key, bool fallback);
std::string config_string(const KeyValues& kv, const std::string& key, std::string fallback);
std::vector<double> config_double_list(const KeyValues& kv, const std::string& key,
                                       std::vector<double> fallback);
std::vector<int> config_int_list(const KeyValues& kv, const std::string& key,
                                 std::vector<int> fallback);
std::vector<std::string> config_string_list(const KeyValues& kv, const std::string& key,
                                            std::vector<std::string> fallback);
std::vector<uint64_t> config_seed_list(const KeyValues& kv, const std::string& key,
                                       std::vector<uint64_t> fallback);

std::vector<std::string> split_list(const std::string& text);

}  // namespace kd3a
