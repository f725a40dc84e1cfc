#pragma once

#include <complex>
#include <filesystem>
#include <string>
#include <vector>

namespace ucsim {

/// Shortest decimal text that round-trips the double exactly ("nan", "inf", "-inf" for non-finite).
std::string format_number(double value);

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

std::string to_csv(const Table& table);
Table eigen_table(const std::vector<std::complex<double>>& values);

/// Writes through a temporary file and renames, so readers never see a half-written file.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

} // namespace ucsim
