#include "kd3a/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace kd3a {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::string strip_comment(const std::string& line) {
  const auto pos = line.find_first_of("#;");
  return pos == std::string::npos ? line : line.substr(0, pos);
}

}  // namespace

KeyValues parse_config_text(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::runtime_error("config line " + std::to_string(line_no) +
                                 ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty())
      throw std::runtime_error("config line " + std::to_string(line_no) + ": empty key");
    kv[section.empty() ? key : section + "." + key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(text);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

namespace {

const std::string* find(const KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  return it == kv.end() ? nullptr : &it->second;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw std::runtime_error("config key '" + key + "': cannot parse value '" + value + "'");
}

}  // namespace

int config_int(const KeyValues& kv, const std::string& key, int fallback) {
  const std::string* v = find(kv, key);
  if (!v) return fallback;
  try {
    size_t used = 0;
    const int out = std::stoi(*v, &used);
    if (used != v->size()) bad_value(key, *v);
    return out;
  } catch (const std::invalid_argument&) {
    bad_value(key, *v);
  } catch (const std::out_of_range&) {
    bad_value(key, *v);
  }
}

double config_double(const KeyValues& kv, const std::string& key, double fallback) {
  const std::string* v = find(kv, key);
  if (!v) return fallback;
  try {
    size_t used = 0;
    const double out = std::stod(*v, &used);
    if (used != v->size()) bad_value(key, *v);
    return out;
  } catch (const std::invalid_argument&) {
    bad_value(key, *v);
  } catch (const std::out_of_range&) {
    bad_value(key, *v);
  }
}

bool config_bool(const KeyValues& kv, const std::string& key, bool fallback) {
  const std::string* v = find(kv, key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  bad_value(key, *v);
}

std::string config_string(const KeyValues& kv, const std::string& key, std::string fallback) {
  const std::string* v = find(kv, key);
  return v ? *v : std::move(fallback);
}

std::vector<double> config_double_list(const KeyValues& kv, const std::string& key,
                                       std::vector<double> fallback) {
  const std::string* v = find(kv, key);
  if (!v) return fallback;
  std::vector<double> out;
  for (const auto& item : split_list(*v)) {
    try {
      out.push_back(std::stod(item));
    } catch (...) {
      bad_value(key, *v);
    }
  }
  if (out.empty()) bad_value(key, *v);
  return out;
}

std::vector<int> config_int_list(const KeyValues& kv, const std::string& key,
                                 std::vector<int> fallback) {
  const std::string* v = find(kv, key);
  if (!v) return fallback;
  std::vector<int> out;
  for (const auto& item : split_list(*v)) {
    try {
      out.push_back(std::stoi(item));
    } catch (...) {
      bad_value(key, *v);
    }
  }
  if (out.empty()) bad_value(key, *v);
  return out;
}

std::vector<std::string> config_string_list(const KeyValues& kv, const std::string& key,
                                            std::vector<std::string> fallback) {
  const std::string* v = find(kv, key);
  if (!v) return fallback;
  std::vector<std::string> out = split_list(*v);
  if (out.empty()) bad_value(key, *v);
  return out;
}

std::vector<uint64_t> config_seed_list(const KeyValues& kv, const std::string& key,
                                       std::vector<uint64_t> fallback) {
  const std::string* v = find(kv, key);
  if (!v) return fallback;
  std::vector<uint64_t> out;
  for (const auto& item : split_list(*v)) {
    try {
      out.push_back(std::stoull(item));
    } catch (...) {
      bad_value(key, *v);
    }
  }
  if (out.empty()) bad_value(key, *v);
  return out;
}

}  // namespace kd3a
