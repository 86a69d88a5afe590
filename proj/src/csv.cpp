#include "flexcast/csv.hpp"

#include <charconv>
#include <fstream>

#include "flexcast/error.hpp"

namespace flexcast::csv {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(trim(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

Table read(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    Table table;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto fields = split_line(t);
        if (table.header.empty()) {
            table.header = std::move(fields);
            continue;
        }
        if (fields.size() != table.header.size())
            throw InputError(path + ":" + std::to_string(lineno) + ": expected " +
                             std::to_string(table.header.size()) + " fields, got " + std::to_string(fields.size()));
        table.rows.push_back(std::move(fields));
    }
    if (table.header.empty()) throw InputError(path + ": missing header");
    return table;
}

double to_double(const std::string& field, const std::string& context) {
    double v = 0.0;
    const auto* end = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(field.data(), end, v);
    if (ec != std::errc() || ptr != end) throw InputError(context + ": not a number: '" + field + "'");
    return v;
}

long long to_int(const std::string& field, const std::string& context) {
    long long v = 0;
    const auto* end = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(field.data(), end, v);
    if (ec != std::errc() || ptr != end) throw InputError(context + ": not an integer: '" + field + "'");
    return v;
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace flexcast::csv
