#pragma once

// Small helpers shared by the plain-text file formats.

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace orf::text {

// Shortest decimal form that parses back to the identical double.
std::string fmt(double value);

std::string join(const Eigen::VectorXd& v, char sep);

std::vector<std::string> split(std::string_view s, char sep);
std::vector<std::string> split_ws(std::string_view s);
std::string_view trim(std::string_view s);

// Strict parses; throw IoError naming `what` on failure.
double parse_double(std::string_view s, std::string_view what);
long long parse_int(std::string_view s, std::string_view what);
Eigen::VectorXd parse_csv_vector(std::string_view s, std::string_view what);

// Parses "key=value key2=value2" tokens after an optional leading '#'.
std::map<std::string, std::string> parse_header(std::string_view line);
const std::string& require(const std::map<std::string, std::string>& kv, const std::string& key);

// Writes via a temporary sibling file, then renames over `path`.
void write_atomic(const std::filesystem::path& path,
                  const std::function<void(std::ostream&)>& writer);

std::string read_file(const std::filesystem::path& path);

}  // namespace orf::text
