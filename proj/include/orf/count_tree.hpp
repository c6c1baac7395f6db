#pragma once

// Sparse binary counting tree over a fixed-point grid.
//
// Each coordinate is quantized to `bits_per_coord` bits; a cell id is the
// concatenation of those bits, coordinate-major (all bits of coordinate 0,
// then coordinate 1, ...). The tree has depth D * bits_per_coord and stores
// only nodes with a nonzero count, keyed by their path prefix.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "orf/rng.hpp"

namespace orf {

class GridSpec {
public:
    // Pads `upper` so every side spans delta * 2^bits with a common bit count.
    GridSpec(int dim, double delta, Eigen::VectorXd lower, Eigen::VectorXd upper);

    int dim() const { return dim_; }
    double delta() const { return delta_; }
    const Eigen::VectorXd& lower() const { return lower_; }
    const Eigen::VectorXd& upper() const { return upper_; }
    int bits_per_coord() const { return bits_; }
    int depth() const { return dim_ * bits_; }

    bool contains(const Eigen::VectorXd& x) const;

    // Coordinate-major cell bit string; throws InvalidArgument outside the box.
    std::string grid_index(const Eigen::VectorXd& x) const;
    Eigen::VectorXd cell_center(const std::string& cell) const;

private:
    int dim_;
    double delta_;
    Eigen::VectorXd lower_;
    Eigen::VectorXd upper_;
    int bits_;
};

using CellId = std::string;

struct CellSample {
    CellId cell;
    Eigen::VectorXd center;
};

class CountTree {
public:
    explicit CountTree(GridSpec spec);

    const GridSpec& spec() const { return spec_; }

    // Adds one example; returns the number of node counts updated
    // (always depth + 1).
    std::size_t increment(const Eigen::VectorXd& x);

    std::int64_t total() const;
    std::int64_t count(const std::string& prefix) const;
    std::size_t stored_nodes() const { return nodes_.size(); }

    // Root-to-leaf descent, each child chosen with probability
    // child_count / parent_count.
    CellSample sample_cell(Rng& rng) const;

    // (cell, count) for every stored leaf, sorted by cell id.
    std::vector<std::pair<CellId, std::int64_t>> leaf_distribution() const;

    // Every stored parent equals the sum of its stored children.
    bool check_parent_sums() const;

    void save(std::ostream& out) const;
    static CountTree load(std::istream& in);

private:
    GridSpec spec_;
    std::unordered_map<std::string, std::int64_t> nodes_;
};

}  // namespace orf
