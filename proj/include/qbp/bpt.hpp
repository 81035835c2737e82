#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "irrep.hpp"
#include "numerics.hpp"

namespace qbp {

/**
 * One block of a bipartition table. Column k holds h_k orthonormal vectors
 * stacked from the first row down, which is exactly the compact form; a
 * rectangular block has all heights equal.
 */
struct TableBlock {
    int q = 0;
    std::vector<std::string> labels;   ///< one per column
    std::vector<cmat> columns;         ///< columns[k] is dim x h_k

    int cols() const { return static_cast<int>(columns.size()); }
    int height(int k) const { return static_cast<int>(columns.at(static_cast<std::size_t>(k)).cols()); }
    int rows() const {
        int r = 0;
        for (const auto& c : columns) r = std::max(r, static_cast<int>(c.cols()));
        return r;
    }
    std::vector<int> heights() const {
        std::vector<int> h;
        for (int k = 0; k < cols(); ++k) h.push_back(height(k));
        return h;
    }
    bool rectangular() const {
        for (int k = 0; k < cols(); ++k)
            if (height(k) != rows()) return false;
        return true;
    }
    /// Number of cells in row i.
    int width(int i) const {
        int w = 0;
        for (int k = 0; k < cols(); ++k) w += height(k) > i ? 1 : 0;
        return w;
    }
    cvec vector(int i, int k) const { return columns.at(static_cast<std::size_t>(k)).col(i); }
};

class BipartitionTable {
public:
    BipartitionTable() = default;

    /// Validates shapes and orthonormality of all vectors.
    BipartitionTable(Eigen::Index dim, std::vector<TableBlock> blocks, const Tolerance& tol)
        : dim_(dim), blocks_(std::move(blocks)) {
        Eigen::Index count = 0;
        for (auto& b : blocks_) {
            if (b.labels.empty())
                for (int k = 0; k < b.cols(); ++k) b.labels.push_back(std::to_string(k));
            if (static_cast<int>(b.labels.size()) != b.cols())
                throw invalid_input("table block " + std::to_string(b.q) + ": label count does not match columns");
            for (const auto& c : b.columns) {
                if (c.rows() != dim) throw DimensionMismatch("table vector dimension does not match table");
                if (c.cols() == 0) throw NonCompact("table column without cells");
                count += c.cols();
            }
        }
        if (count > dim) throw invalid_input("table has more vectors than the dimension");
        cmat e(dim, count);
        Eigen::Index j = 0;
        for (const auto& b : blocks_)
            for (const auto& c : b.columns) {
                e.middleCols(j, c.cols()) = c;
                j += c.cols();
            }
        const double dev = (e.adjoint() * e - cmat::Identity(count, count)).norm();
        if (dev > 10.0 * tol.eps_zero) throw invalid_input("table vectors are not orthonormal (deviation " +
                                                           std::to_string(dev) + ")");
    }

    /**
     * Builds a single-block table from a row-major grid of optional cells.
     * Every column must be filled contiguously from the first row, and the
     * table may not have empty trailing rows.
     */
    static BipartitionTable from_grid(Eigen::Index dim, int q,
                                      const std::vector<std::vector<std::optional<cvec>>>& grid,
                                      std::vector<std::string> labels, const Tolerance& tol) {
        if (grid.empty()) throw NonCompact("empty grid");
        const std::size_t ncols = grid.front().size();
        TableBlock b;
        b.q = q;
        b.labels = std::move(labels);
        std::size_t max_h = 0;
        for (std::size_t k = 0; k < ncols; ++k) {
            std::vector<cvec> cells;
            bool ended = false;
            for (std::size_t i = 0; i < grid.size(); ++i) {
                if (grid[i].size() != ncols) throw invalid_input("grid rows have different lengths");
                if (grid[i][k]) {
                    if (ended)
                        throw NonCompact("column " + std::to_string(k) + " has a gap above row " +
                                         std::to_string(i));
                    cells.push_back(*grid[i][k]);
                } else {
                    ended = true;
                }
            }
            if (cells.empty()) throw NonCompact("column " + std::to_string(k) + " is empty");
            max_h = std::max(max_h, cells.size());
            cmat c(dim, static_cast<Eigen::Index>(cells.size()));
            for (std::size_t i = 0; i < cells.size(); ++i) c.col(static_cast<Eigen::Index>(i)) = cells[i];
            b.columns.push_back(std::move(c));
        }
        if (max_h != grid.size()) throw NonCompact("grid has empty trailing rows");
        return BipartitionTable(dim, {std::move(b)}, tol);
    }

    static BipartitionTable from_irrep_basis(const IrrepBasis& basis, const Tolerance& tol) {
        std::vector<TableBlock> blocks;
        int q = 0;
        for (const auto& ib : basis.blocks) {
            TableBlock b;
            b.q = q++;
            b.columns = ib.columns;
            for (int m : ib.member_ids) b.labels.push_back("v" + std::to_string(m));
            blocks.push_back(std::move(b));
        }
        return BipartitionTable(basis.dim, std::move(blocks), tol);
    }

    Eigen::Index dim() const { return dim_; }
    const std::vector<TableBlock>& blocks() const { return blocks_; }

    int total_columns() const {
        int n = 0;
        for (const auto& b : blocks_) n += b.cols();
        return n;
    }

    Eigen::Index covered_dim() const {
        Eigen::Index n = 0;
        for (const auto& b : blocks_)
            for (const auto& c : b.columns) n += c.cols();
        return n;
    }

    bool rectangular() const {
        return std::all_of(blocks_.begin(), blocks_.end(), [](const TableBlock& b) { return b.rectangular(); });
    }

private:
    Eigen::Index dim_ = 0;
    std::vector<TableBlock> blocks_;
};

/// Bipartition operator S_kl of block q.
struct Bpo {
    int q = 0;
    int k = 0;
    int l = 0;
    cmat op;
};

/// All S_kl = sum_{i < min(h_k, h_l)} |e_ik><e_il|, including k = l.
inline std::vector<Bpo> bpos(const BipartitionTable& table) {
    std::vector<Bpo> out;
    for (const auto& b : table.blocks())
        for (int k = 0; k < b.cols(); ++k)
            for (int l = 0; l < b.cols(); ++l) {
                const int h = std::min(b.height(k), b.height(l));
                Bpo s{b.q, k, l, b.columns[static_cast<std::size_t>(k)].leftCols(h) *
                                     b.columns[static_cast<std::size_t>(l)].leftCols(h).adjoint()};
                out.push_back(std::move(s));
            }
    return out;
}

struct ReducedLabel {
    int q = 0;
    int column = 0;
    std::string label;
};

/**
 * Reduced density matrix on the column space together with the labels of
 * its basis and the trace lost relative to the input.
 */
struct ReducedState {
    cmat rho;
    std::vector<ReducedLabel> labels;
    double trace_deficit = 0.0;
};

/**
 * rho_B[(q,k),(q,l)] = sum_i <e_ik| rho |e_il> over rows i holding both
 * cells. Coherences between rows and between blocks are discarded.
 */
inline ReducedState reduce_partial_state(const cmat& rho, const BipartitionTable& table) {
    if (rho.rows() != table.dim() || rho.cols() != table.dim())
        throw DimensionMismatch("reduce_partial_state: density matrix dimension " + std::to_string(rho.rows()) +
                                " does not match table dimension " + std::to_string(table.dim()));
    ReducedState out;
    const int n = table.total_columns();
    out.rho = cmat::Zero(n, n);
    int off = 0;
    for (const auto& b : table.blocks()) {
        for (int k = 0; k < b.cols(); ++k)
            out.labels.push_back(ReducedLabel{b.q, k, b.labels[static_cast<std::size_t>(k)]});
        for (int i = 0; i < b.rows(); ++i) {
            std::vector<int> present;
            for (int k = 0; k < b.cols(); ++k)
                if (b.height(k) > i) present.push_back(k);
            cmat e(table.dim(), static_cast<Eigen::Index>(present.size()));
            for (std::size_t j = 0; j < present.size(); ++j) e.col(static_cast<Eigen::Index>(j)) = b.vector(i, present[j]);
            const cmat r = e.adjoint() * rho * e;
            for (std::size_t a = 0; a < present.size(); ++a)
                for (std::size_t c = 0; c < present.size(); ++c)
                    out.rho(off + present[a], off + present[c]) += r(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c));
        }
        off += b.cols();
    }
    out.trace_deficit = rho.trace().real() - out.rho.trace().real();
    return out;
}

/// Superselect onto the Wedderburn sectors, then trace out the multiplicity
/// (row) factor of each. No renormalization is applied.
inline ReducedState reduce_algebra_state(const cmat& rho, const IrrepBasis& basis, const Tolerance& tol) {
    if (rho.rows() != basis.dim || rho.cols() != basis.dim)
        throw DimensionMismatch("reduce_algebra_state: density matrix dimension does not match the basis");
    return reduce_partial_state(rho, BipartitionTable::from_irrep_basis(basis, tol));
}

/// Rows become columns in every block; only defined for rectangular tables.
inline BipartitionTable transpose(const BipartitionTable& table, const Tolerance& tol) {
    if (!table.rectangular()) throw NotRectangular("transpose requires every block to be rectangular");
    std::vector<TableBlock> blocks;
    for (const auto& b : table.blocks()) {
        TableBlock t;
        t.q = b.q;
        for (int i = 0; i < b.rows(); ++i) {
            cmat c(table.dim(), b.cols());
            for (int k = 0; k < b.cols(); ++k) c.col(k) = b.vector(i, k);
            t.columns.push_back(std::move(c));
            t.labels.push_back("row " + std::to_string(i));
        }
        blocks.push_back(std::move(t));
    }
    return BipartitionTable(table.dim(), std::move(blocks), tol);
}

} // namespace qbp
