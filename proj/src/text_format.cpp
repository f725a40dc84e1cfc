#include "ucsim/text_format.hpp"

#include "ucsim/error.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace ucsim::text {

namespace {

std::string_view trim(std::string_view s) {
    auto not_space = [](char c) { return !std::isspace(static_cast<unsigned char>(c)); };
    auto b = std::find_if(s.begin(), s.end(), not_space);
    auto e = std::find_if(s.rbegin(), s.rend(), not_space).base();
    return b < e ? std::string_view(&*b, static_cast<std::size_t>(e - b)) : std::string_view{};
}

std::vector<std::string_view> tokens(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        std::size_t j = i;
        while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

} // namespace

bool Record::has(std::string_view key) const { return find(key) != nullptr; }

const std::string* Record::find(std::string_view key) const {
    for (const auto& [k, v] : fields)
        if (k == key) return &v;
    return nullptr;
}

const Assignment* Section::find(std::string_view key) const {
    for (const auto& a : assignments)
        if (a.key == key) return &a;
    return nullptr;
}

const Section* Document::section(std::string_view name) const {
    for (const auto& s : sections)
        if (s.name == name) return &s;
    return nullptr;
}

std::vector<const Section*> Document::sections_named(std::string_view name) const {
    std::vector<const Section*> out;
    for (const auto& s : sections)
        if (s.name == name) out.push_back(&s);
    return out;
}

Document parse(std::string_view text, std::string source) {
    Document doc;
    doc.source = std::move(source);
    doc.sections.push_back(Section{"", 0, {}, {}});

    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view raw = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;

        if (auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
        std::string_view line = trim(raw);
        if (line.empty()) {
            if (nl == text.size()) break;
            continue;
        }

        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3)
                throw ParseError(doc.source, line_no, "malformed section header '" + std::string(line) + "'");
            doc.sections.push_back(Section{std::string(trim(line.substr(1, line.size() - 2))), line_no, {}, {}});
            continue;
        }

        auto toks = tokens(line);
        Section& sec = doc.sections.back();
        if (toks.size() >= 2 && toks[1] == "=") {
            std::string_view value = trim(line.substr(line.find('=') + 1));
            sec.assignments.push_back(Assignment{line_no, std::string(toks[0]), std::string(value)});
            continue;
        }
        // A lone key=value token is an assignment too ("grid=x.grid"); records always carry several fields.
        if (toks.size() == 1) {
            const auto eq = toks[0].find('=');
            if (eq != std::string_view::npos && eq > 0 && eq + 1 < toks[0].size()) {
                sec.assignments.push_back(
                    Assignment{line_no, std::string(toks[0].substr(0, eq)), std::string(toks[0].substr(eq + 1))});
                continue;
            }
        }

        Record rec;
        rec.line = line_no;
        for (auto tok : toks) {
            auto eq = tok.find('=');
            if (eq == std::string_view::npos || eq == 0 || eq + 1 == tok.size())
                throw ParseError(doc.source, line_no, "expected key=value, got '" + std::string(tok) + "'");
            std::string key(tok.substr(0, eq));
            if (rec.has(key)) throw ParseError(doc.source, line_no, "duplicate field '" + key + "'");
            rec.fields.emplace_back(std::move(key), std::string(tok.substr(eq + 1)));
        }
        sec.records.push_back(std::move(rec));
        if (nl == text.size()) break;
    }
    return doc;
}

Document parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path, 0, "cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
}

double to_double(const Document& doc, int line, std::string_view key, const std::string& value) {
    double out = 0.0;
    const char* first = value.data();
    const char* last = value.data() + value.size();
    if (!value.empty() && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc{} || ptr != last)
        throw ParseError(doc.source, line, "field '" + std::string(key) + "': not a number: '" + value + "'");
    return out;
}

long to_integer(const Document& doc, int line, std::string_view key, const std::string& value) {
    long out = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || ptr != value.data() + value.size())
        throw ParseError(doc.source, line, "field '" + std::string(key) + "': not an integer: '" + value + "'");
    return out;
}

bool to_bool(const Document& doc, int line, std::string_view key, const std::string& value) {
    if (value == "true" || value == "yes" || value == "on" || value == "1") return true;
    if (value == "false" || value == "no" || value == "off" || value == "0") return false;
    throw ParseError(doc.source, line, "field '" + std::string(key) + "': not a boolean: '" + value + "'");
}

double require_double(const Document& doc, const Record& rec, std::string_view key) {
    const std::string* v = rec.find(key);
    if (!v) throw ParseError(doc.source, rec.line, "missing field '" + std::string(key) + "'");
    return to_double(doc, rec.line, key, *v);
}

std::optional<double> optional_double(const Document& doc, const Record& rec, std::string_view key) {
    const std::string* v = rec.find(key);
    if (!v || *v == "-") return std::nullopt;
    return to_double(doc, rec.line, key, *v);
}

long require_integer(const Document& doc, const Record& rec, std::string_view key) {
    const std::string* v = rec.find(key);
    if (!v) throw ParseError(doc.source, rec.line, "missing field '" + std::string(key) + "'");
    return to_integer(doc, rec.line, key, *v);
}

std::string require_string(const Document& doc, const Record& rec, std::string_view key) {
    const std::string* v = rec.find(key);
    if (!v) throw ParseError(doc.source, rec.line, "missing field '" + std::string(key) + "'");
    return *v;
}

void check_keys(const Document& doc, const Record& rec, std::initializer_list<std::string_view> allowed) {
    for (const auto& [k, v] : rec.fields)
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
            throw ParseError(doc.source, rec.line, "unknown field '" + k + "'");
}

void check_keys(const Document& doc, const Section& sec, std::initializer_list<std::string_view> allowed) {
    for (const auto& a : sec.assignments)
        if (std::find(allowed.begin(), allowed.end(), a.key) == allowed.end())
            throw ParseError(doc.source, a.line, "unknown key '" + a.key + "' in [" + sec.name + "]");
}

std::vector<std::string> split_list(std::string_view value) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= value.size()) {
        std::size_t comma = value.find(',', pos);
        if (comma == std::string_view::npos) comma = value.size();
        auto item = trim(value.substr(pos, comma - pos));
        if (!item.empty()) out.emplace_back(item);
        pos = comma + 1;
    }
    return out;
}

} // namespace ucsim::text
