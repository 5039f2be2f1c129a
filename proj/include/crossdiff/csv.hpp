#pragma once

#include <fstream>
#include <string>
#include <vector>

namespace crossdiff {

/// Doubles serialized with 17 significant digits (round-trip exact).
std::string format_double(double v);

/// Row-oriented CSV emitter with a fixed header.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header);

    void row(const std::vector<std::string>& cells);
    static std::string cell(double v) { return format_double(v); }
    static std::string cell(int v) { return std::to_string(v); }
    static std::string cell(long long v) { return std::to_string(v); }
    static std::string cell(const std::string& s) { return s; }

private:
    std::ofstream out_;
    std::size_t columns_;
};

}  // namespace crossdiff
