#pragma once

#include <string>
#include <vector>

namespace flexcast::csv {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

// Comma-separated, no quoting; blank lines and '#' comments skipped. Throws InputError.
Table read(const std::string& path);
std::vector<std::string> split_line(const std::string& line);

double to_double(const std::string& field, const std::string& context);
long long to_int(const std::string& field, const std::string& context);

// Shortest text that parses back to exactly the same double.
std::string format_double(double v);

}  // namespace flexcast::csv
