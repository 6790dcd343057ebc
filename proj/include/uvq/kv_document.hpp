#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace uvq {

/// One `key = value` line.
struct KvEntry {
  std::string key;
  std::string value;
  int line = 0;
};

/// Plain-text key/value document shared by family and experiment files.
///
/// Grammar: one `key = value` per line; `#` starts a comment; blank lines are
/// ignored; keys are unique. All accessors raise ConfigError carrying the key
/// and the line number it came from.
class KvDocument {
 public:
  static KvDocument parse(std::string_view text, std::string source = "<string>");
  static KvDocument load(const std::filesystem::path& path);

  const std::string& source() const noexcept { return source_; }
  const std::vector<KvEntry>& entries() const noexcept { return entries_; }

  const KvEntry* find(std::string_view key) const;
  const KvEntry& require(std::string_view key) const;
  bool has(std::string_view key) const { return find(key) != nullptr; }

  std::string text(std::string_view key) const;
  std::string text_or(std::string_view key, std::string fallback) const;
  double number(std::string_view key) const;
  double number_or(std::string_view key, double fallback) const;
  long long integer(std::string_view key) const;
  long long integer_or(std::string_view key, long long fallback) const;
  std::vector<double> numbers(std::string_view key) const;

  /// Entries whose key starts with `prefix`, in document order.
  std::vector<const KvEntry*> with_prefix(std::string_view prefix) const;

  /// Rejects keys that are neither listed nor under one of `prefixes`.
  void reject_unknown(const std::vector<std::string>& keys,
                      const std::vector<std::string>& prefixes = {}) const;

 private:
  std::string source_;
  std::vector<KvEntry> entries_;
};

/// Helpers that report errors against an entry.
double parse_number(const KvEntry& e, std::string_view token);
long long parse_integer(const KvEntry& e, std::string_view token);
std::vector<std::string> split_ws(std::string_view s);
std::vector<std::string> split_on(std::string_view s, char sep);
std::string trim(std::string_view s);

}  // namespace uvq
