#include "orf/text_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <system_error>

#include "orf/errors.hpp"

namespace orf::text {

std::string fmt(double value) {
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

std::string join(const Eigen::VectorXd& v, char sep) {
    std::string out;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i) out.push_back(sep);
        out += fmt(v[i]);
    }
    return out;
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto pos = s.find(sep, start);
        out.emplace_back(trim(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::vector<std::string> split_ws(std::string_view s) {
    std::vector<std::string> out;
    std::istringstream in{std::string(s)};
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

std::string_view trim(std::string_view s) {
    const char* ws = " \t\r\n";
    auto b = s.find_first_not_of(ws);
    if (b == s.npos) return {};
    auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

double parse_double(std::string_view s, std::string_view what) {
    s = trim(s);
    double value = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), value);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw IoError("cannot parse " + std::string(what) + " from '" + std::string(s) + "'");
    return value;
}

long long parse_int(std::string_view s, std::string_view what) {
    s = trim(s);
    long long value = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), value);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw IoError("cannot parse " + std::string(what) + " from '" + std::string(s) + "'");
    return value;
}

Eigen::VectorXd parse_csv_vector(std::string_view s, std::string_view what) {
    auto parts = split(s, ',');
    Eigen::VectorXd v(static_cast<Eigen::Index>(parts.size()));
    for (std::size_t i = 0; i < parts.size(); ++i) v[static_cast<Eigen::Index>(i)] = parse_double(parts[i], what);
    return v;
}

std::map<std::string, std::string> parse_header(std::string_view line) {
    line = trim(line);
    if (!line.empty() && line.front() == '#') line.remove_prefix(1);
    std::map<std::string, std::string> kv;
    for (const auto& tok : split_ws(line)) {
        auto eq = tok.find('=');
        if (eq == std::string::npos) throw IoError("malformed header token '" + tok + "'");
        kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    return kv;
}

const std::string& require(const std::map<std::string, std::string>& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw IoError("missing header key '" + key + "'");
    return it->second;
}

void write_atomic(const std::filesystem::path& path,
                  const std::function<void(std::ostream&)>& writer) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
        writer(out);
        out.flush();
        if (!out) throw IoError("write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot rename onto '" + path.string() + "'");
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace orf::text
