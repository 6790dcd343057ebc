#include "uvq/kv_document.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "uvq/error.hpp"

namespace uvq {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<std::string> split_on(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_number(const KvEntry& e, std::string_view token) {
  const std::string tok(token);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(tok.c_str(), &end);
  if (tok.empty() || end != tok.c_str() + tok.size() || errno == ERANGE || !std::isfinite(v)) {
    throw ConfigError(e.key, e.line, "expected a finite number, got '" + tok + "'");
  }
  return v;
}

long long parse_integer(const KvEntry& e, std::string_view token) {
  long long v = 0;
  const auto* first = token.data();
  const auto* last = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw ConfigError(e.key, e.line, "expected an integer, got '" + std::string(token) + "'");
  }
  return v;
}

KvDocument KvDocument::parse(std::string_view text, std::string source) {
  KvDocument doc;
  doc.source_ = std::move(source);
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(doc.source_, line_no, "expected 'key = value'");
    }
    KvEntry entry{trim(std::string_view(line).substr(0, eq)),
                  trim(std::string_view(line).substr(eq + 1)), line_no};
    if (entry.key.empty()) throw ConfigError(doc.source_, line_no, "empty key");
    if (const KvEntry* prev = doc.find(entry.key)) {
      throw ConfigError(entry.key, line_no,
                        "duplicate key (first defined on line " + std::to_string(prev->line) + ")");
    }
    doc.entries_.push_back(std::move(entry));
  }
  return doc;
}

KvDocument KvDocument::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string(), 0, "cannot open file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

const KvEntry* KvDocument::find(std::string_view key) const {
  const auto it = std::find_if(entries_.begin(), entries_.end(),
                               [&](const KvEntry& e) { return e.key == key; });
  return it == entries_.end() ? nullptr : &*it;
}

const KvEntry& KvDocument::require(std::string_view key) const {
  if (const KvEntry* e = find(key)) return *e;
  throw ConfigError(std::string(key), 0, "required field is missing");
}

std::string KvDocument::text(std::string_view key) const { return require(key).value; }

std::string KvDocument::text_or(std::string_view key, std::string fallback) const {
  const KvEntry* e = find(key);
  return e ? e->value : std::move(fallback);
}

double KvDocument::number(std::string_view key) const {
  const KvEntry& e = require(key);
  return parse_number(e, e.value);
}

double KvDocument::number_or(std::string_view key, double fallback) const {
  return has(key) ? number(key) : fallback;
}

long long KvDocument::integer(std::string_view key) const {
  const KvEntry& e = require(key);
  return parse_integer(e, e.value);
}

long long KvDocument::integer_or(std::string_view key, long long fallback) const {
  return has(key) ? integer(key) : fallback;
}

std::vector<double> KvDocument::numbers(std::string_view key) const {
  const KvEntry& e = require(key);
  std::vector<double> out;
  for (const auto& tok : split_ws(e.value)) out.push_back(parse_number(e, tok));
  return out;
}

std::vector<const KvEntry*> KvDocument::with_prefix(std::string_view prefix) const {
  std::vector<const KvEntry*> out;
  for (const auto& e : entries_) {
    if (e.key.starts_with(prefix)) out.push_back(&e);
  }
  return out;
}

void KvDocument::reject_unknown(const std::vector<std::string>& keys,
                                const std::vector<std::string>& prefixes) const {
  for (const auto& e : entries_) {
    const bool known = std::find(keys.begin(), keys.end(), e.key) != keys.end() ||
                       std::any_of(prefixes.begin(), prefixes.end(),
                                   [&](const std::string& p) { return e.key.starts_with(p); });
    if (!known) throw ConfigError(e.key, e.line, "unknown field");
  }
}

}  // namespace uvq
