#pragma once

// Line-oriented text format shared by grid and scenario files.
//
//   # comment
//   key = value            assignment (belongs to the current section); a lone key=value also counts
//   [section]
//   a=1 b=two c=3.5        record (all tokens are key=value, no spaces around '=')

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ucsim::text {

struct Record {
    int line = 0;
    std::vector<std::pair<std::string, std::string>> fields;

    bool has(std::string_view key) const;
    const std::string* find(std::string_view key) const;
};

struct Assignment {
    int line = 0;
    std::string key;
    std::string value;
};

struct Section {
    std::string name; // empty for the preamble before the first header
    int line = 0;
    std::vector<Assignment> assignments;
    std::vector<Record> records;

    const Assignment* find(std::string_view key) const;
};

struct Document {
    std::string source;
    std::vector<Section> sections;

    const Section* section(std::string_view name) const;
    std::vector<const Section*> sections_named(std::string_view name) const;
};

Document parse(std::string_view text, std::string source);
Document parse_file(const std::string& path);

// Typed accessors; all throw ParseError pointing at the offending line.
double to_double(const Document& doc, int line, std::string_view key, const std::string& value);
long to_integer(const Document& doc, int line, std::string_view key, const std::string& value);
bool to_bool(const Document& doc, int line, std::string_view key, const std::string& value);

double require_double(const Document& doc, const Record& rec, std::string_view key);
std::optional<double> optional_double(const Document& doc, const Record& rec, std::string_view key);
long require_integer(const Document& doc, const Record& rec, std::string_view key);
std::string require_string(const Document& doc, const Record& rec, std::string_view key);

/// Reject keys outside `allowed` so that typos do not pass silently.
void check_keys(const Document& doc, const Record& rec, std::initializer_list<std::string_view> allowed);
void check_keys(const Document& doc, const Section& sec, std::initializer_list<std::string_view> allowed);

/// Split a comma-separated list, trimming blanks.
std::vector<std::string> split_list(std::string_view value);

} // namespace ucsim::text
