#include "orf/count_tree.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "orf/errors.hpp"
#include "orf/text_io.hpp"

namespace orf {

GridSpec::GridSpec(int dim, double delta, Eigen::VectorXd lower, Eigen::VectorXd upper)
    : dim_(dim), delta_(delta), lower_(std::move(lower)), upper_(std::move(upper)), bits_(0) {
    if (dim < 1) throw InvalidArgument("GridSpec: dim must be >= 1");
    if (!(delta > 0.0) || !std::isfinite(delta)) throw InvalidArgument("GridSpec: delta must be positive");
    if (lower_.size() != dim) throw DimensionMismatch("GridSpec lower", dim, lower_.size());
    if (upper_.size() != dim) throw DimensionMismatch("GridSpec upper", dim, upper_.size());
    if (!lower_.allFinite() || !upper_.allFinite()) throw InvalidArgument("GridSpec: non-finite bounds");
    double cells = 1.0;
    for (int d = 0; d < dim; ++d) {
        if (!(upper_[d] > lower_[d])) throw InvalidArgument("GridSpec: upper must exceed lower");
        cells = std::max(cells, (upper_[d] - lower_[d]) / delta_);
    }
    // Tolerate rounding when the span is already an exact power-of-two multiple.
    bits_ = std::max(1, static_cast<int>(std::ceil(std::log2(cells) - 1e-9)));
    if (bits_ > 62) throw InvalidArgument("GridSpec: too many cells per coordinate");
    const double side = std::ldexp(delta_, bits_);
    for (int d = 0; d < dim; ++d) upper_[d] = lower_[d] + side;
}

bool GridSpec::contains(const Eigen::VectorXd& x) const {
    if (x.size() != dim_) return false;
    for (int d = 0; d < dim_; ++d)
        if (!(x[d] >= lower_[d] && x[d] <= upper_[d])) return false;
    return true;
}

std::string GridSpec::grid_index(const Eigen::VectorXd& x) const {
    if (x.size() != dim_) throw DimensionMismatch("grid_index", dim_, x.size());
    if (!contains(x)) throw InvalidArgument("grid_index: point outside the grid box");
    const std::uint64_t last = (std::uint64_t{1} << bits_) - 1;
    std::string bits(static_cast<std::size_t>(depth()), '0');
    for (int d = 0; d < dim_; ++d) {
        auto cell = static_cast<std::uint64_t>(std::floor((x[d] - lower_[d]) / delta_));
        cell = std::min(cell, last);  // x == upper belongs to the last cell
        for (int b = 0; b < bits_; ++b)
            if (cell >> (bits_ - 1 - b) & 1U) bits[static_cast<std::size_t>(d * bits_ + b)] = '1';
    }
    return bits;
}

Eigen::VectorXd GridSpec::cell_center(const std::string& cell) const {
    if (static_cast<int>(cell.size()) != depth()) throw InvalidArgument("cell_center: wrong cell id length");
    Eigen::VectorXd center(dim_);
    for (int d = 0; d < dim_; ++d) {
        std::uint64_t idx = 0;
        for (int b = 0; b < bits_; ++b) {
            const char c = cell[static_cast<std::size_t>(d * bits_ + b)];
            if (c != '0' && c != '1') throw InvalidArgument("cell_center: cell id must be a bit string");
            idx = (idx << 1) | static_cast<std::uint64_t>(c == '1');
        }
        center[d] = lower_[d] + (static_cast<double>(idx) + 0.5) * delta_;
    }
    return center;
}

CountTree::CountTree(GridSpec spec) : spec_(std::move(spec)) {}

std::size_t CountTree::increment(const Eigen::VectorXd& x) {
    const std::string cell = spec_.grid_index(x);
    std::size_t touched = 0;
    for (std::size_t len = 0; len <= cell.size(); ++len) {
        ++nodes_[cell.substr(0, len)];
        ++touched;
    }
    return touched;
}

std::int64_t CountTree::total() const { return count(""); }

std::int64_t CountTree::count(const std::string& prefix) const {
    auto it = nodes_.find(prefix);
    return it == nodes_.end() ? 0 : it->second;
}

CellSample CountTree::sample_cell(Rng& rng) const {
    const std::int64_t root = total();
    if (root < 1) throw InvalidArgument("sample_cell: empty tree");
    std::string path;
    std::int64_t parent = root;
    const auto depth = static_cast<std::size_t>(spec_.depth());
    path.reserve(depth);
    while (path.size() < depth) {
        const std::int64_t left = count(path + '0');
        std::uniform_int_distribution<std::int64_t> pick(0, parent - 1);
        if (pick(rng) < left) {
            path.push_back('0');
            parent = left;
        } else {
            path.push_back('1');
            parent -= left;
        }
    }
    return {path, spec_.cell_center(path)};
}

std::vector<std::pair<CellId, std::int64_t>> CountTree::leaf_distribution() const {
    std::vector<std::pair<CellId, std::int64_t>> leaves;
    const auto depth = static_cast<std::size_t>(spec_.depth());
    for (const auto& [key, c] : nodes_)
        if (key.size() == depth) leaves.emplace_back(key, c);
    std::sort(leaves.begin(), leaves.end());
    return leaves;
}

bool CountTree::check_parent_sums() const {
    const auto depth = static_cast<std::size_t>(spec_.depth());
    for (const auto& [key, c] : nodes_) {
        if (c <= 0) return false;
        if (key.size() == depth) continue;
        if (count(key + '0') + count(key + '1') != c) return false;
    }
    return nodes_.empty() || nodes_.count("") == 1;
}

void CountTree::save(std::ostream& out) const {
    out << "# D=" << spec_.dim() << " delta=" << text::fmt(spec_.delta())
        << " lower=" << text::join(spec_.lower(), ',') << " upper=" << text::join(spec_.upper(), ',')
        << " total=" << total() << '\n';
    for (const auto& [cell, c] : leaf_distribution()) out << cell << ' ' << c << '\n';
}

CountTree CountTree::load(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw IoError("count tree: missing header");
    const auto kv = text::parse_header(line);
    const auto dim = text::parse_int(text::require(kv, "D"), "D");
    const auto delta = text::parse_double(text::require(kv, "delta"), "delta");
    auto lower = text::parse_csv_vector(text::require(kv, "lower"), "lower");
    auto upper = text::parse_csv_vector(text::require(kv, "upper"), "upper");
    const auto total = text::parse_int(text::require(kv, "total"), "total");
    CountTree tree(GridSpec(static_cast<int>(dim), delta, std::move(lower), std::move(upper)));
    const auto depth = static_cast<std::size_t>(tree.spec_.depth());
    std::int64_t sum = 0;
    while (std::getline(in, line)) {
        if (text::trim(line).empty()) continue;
        auto tok = text::split_ws(line);
        if (tok.size() != 2 || tok[0].size() != depth || tok[0].find_first_not_of("01") != std::string::npos)
            throw IoError("count tree: malformed leaf line '" + line + "'");
        const auto c = text::parse_int(tok[1], "leaf count");
        if (c <= 0) throw IoError("count tree: leaf counts must be positive");
        for (std::size_t len = 0; len <= depth; ++len) tree.nodes_[tok[0].substr(0, len)] += c;
        sum += c;
    }
    if (sum != total) throw IoError("count tree: leaf counts do not sum to total");
    return tree;
}

}  // namespace orf
