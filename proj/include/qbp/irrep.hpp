#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <string>
#include <tuple>
#include <vector>

#include "numerics.hpp"
#include "scattering.hpp"

namespace qbp {

/**
 * Normalized product of projections along a network path. op maps the range
 * of the last vertex onto the range of the first one, so that
 * op op^H = Pi_first and op^H op = Pi_last.
 */
struct PathIsometry {
    std::vector<int> path;
    cmat op;
    double normalization = 1.0;
};

inline PathIsometry path_isometry(const ReflectionNetwork& net, const std::vector<int>& path) {
    if (path.empty()) throw invalid_input("path_isometry: empty path");
    PathIsometry s;
    s.path = path;
    cmat prod = net.vertex(path.front()).projection;
    for (std::size_t k = 1; k < path.size(); ++k) {
        if (!net.edge(path[k - 1], path[k]))
            throw invalid_input("path_isometry: consecutive vertices " + std::to_string(path[k - 1]) + " and " +
                                std::to_string(path[k]) + " are orthogonal");
        prod = prod * net.vertex(path[k]).projection;
    }
    const int rank = net.vertex(path.front()).rank;
    s.normalization = std::sqrt((prod * prod.adjoint()).trace().real() / static_cast<double>(rank));
    if (!(s.normalization > 0.0)) throw SpectralFailure("path_isometry: vanishing path product");
    s.op = prod / s.normalization;
    return s;
}

namespace detail {

/// BFS spanning tree of one component; parent[root] = root.
inline std::map<int, int> spanning_tree(const ReflectionNetwork& net, int root) {
    std::map<int, int> parent{{root, root}};
    std::queue<int> q;
    q.push(root);
    while (!q.empty()) {
        const int v = q.front();
        q.pop();
        for (const auto& [w, st] : net.neighbours(v))
            if (!parent.count(w)) {
                parent[w] = v;
                q.push(w);
            }
    }
    return parent;
}

/// Tree path [v, parent(v), ..., root].
inline std::vector<int> tree_path(const std::map<int, int>& parent, int v) {
    std::vector<int> path{v};
    while (parent.at(path.back()) != path.back()) path.push_back(parent.at(path.back()));
    return path;
}

/// Spectral projections of a unitary u (given on C^r) obtained from the
/// Hermitian pair (u + u^H)/2 and (u - u^H)/2i.
inline std::vector<cmat> unitary_spectral_projections(const cmat& u, const Tolerance& tol) {
    const Eigen::Index r = u.rows();
    const cmat id = cmat::Identity(r, r);
    const cmat re = hermitian_part(u);
    const cmat im = (u - u.adjoint()) / cplx(0.0, 2.0);
    std::vector<cmat> out;
    // Shift by 3 so that no eigenvalue falls into the zero cluster.
    for (const auto& c : spectral_decompose(re + 3.0 * id, tol).clusters) {
        const cmat& b = c.basis;
        const cmat sub = b.adjoint() * im * b;
        const cmat sid = cmat::Identity(sub.rows(), sub.cols());
        for (const auto& d : spectral_decompose(hermitian_part(sub) + 3.0 * sid, tol).clusters) {
            const cmat v = b * d.basis;
            out.push_back(v * v.adjoint());
        }
    }
    return out;
}

} // namespace detail

/**
 * Replaces every vertex of the network by minimal projections. For each
 * component a BFS spanning tree is built and the holonomy of every
 * fundamental cycle is tested for proportionality to the root projection.
 * A non-scalar holonomy splits the root by the holonomy's spectral
 * projections, after which the network is re-scattered.
 */
inline ReflectionNetwork establish_minimality(ReflectionNetwork net, const Tolerance& tol,
                                              std::ostream* dump = nullptr) {
    if (!net.proper()) throw invalid_input("establish_minimality: network still has Unknown edges");
    const auto max_rounds = static_cast<std::size_t>(std::max<Eigen::Index>(net.dim(), 1));
    for (std::size_t round = 0; round <= max_rounds; ++round) {
        bool split = false;
        for (const auto& comp : net.components()) {
            const int root = comp.front();
            if (net.vertex(root).rank == 1) continue;
            const auto parent = detail::spanning_tree(net, root);
            const cmat& proot = net.vertex(root).projection;
            for (int u : comp) {
                for (const auto& [w, st] : net.neighbours(u)) {
                    if (u >= w || parent.at(u) == w || parent.at(w) == u) continue;
                    const PathIsometry su = path_isometry(net, detail::tree_path(parent, u));
                    const PathIsometry sw = path_isometry(net, detail::tree_path(parent, w));
                    const cmat hop = net.vertex(u).projection * net.vertex(w).projection / std::sqrt(st.lambda);
                    const cmat hol = su.op.adjoint() * hop * sw.op;
                    const ProportionalityFit fit = fit_proportional(hol, proot);
                    if (fit.residual <= tol.eps_prop) continue;

                    const cmat b = canonical_basis(proot, net.vertex(root).rank, tol.eps_zero);
                    const auto pieces = detail::unitary_spectral_projections(b.adjoint() * hol * b, tol);
                    if (pieces.size() < 2)
                        throw NonConvergence("holonomy is not proportional to the root projection but has a "
                                             "single eigenvalue cluster");
                    if (dump) *dump << "minimality split vertex " << root << " into " << pieces.size() << '\n';
                    std::vector<int> ids;
                    for (const auto& p : pieces) {
                        const cmat full = b * p * b.adjoint();
                        ids.push_back(net.add_vertex(full, projection_rank(full), net.vertex(root).origin));
                    }
                    for (int id : ids)
                        for (const auto& [x, xs] : net.neighbours(root))
                            if ((net.vertex(id).projection * net.vertex(x).projection).norm() > tol.eps_zero)
                                net.set_edge(id, x, EdgeState{EdgeKind::Unknown, 0.0});
                    net.remove_vertex(root);
                    resolve_network(net, tol, dump);
                    split = true;
                    break;
                }
                if (split) break;
            }
            if (split) break;
        }
        if (!split) return net;
    }
    throw NonConvergence("minimality repair did not settle within " + std::to_string(max_rounds) + " rounds");
}

/// Maximal set of pairwise-orthogonal minimal projections and their sum.
struct Msmp {
    std::vector<int> members;
    cmat identity;
};

/**
 * Greedy MSMP over vertices in ascending (rank, origin, id) order, followed by the
 * completion step: every vertex not fixed by I_A contributes the normalized
 * compression of itself onto the complement of I_A. `preferred` vertices, if
 * given, are offered to the greedy selection first.
 */
inline std::pair<ReflectionNetwork, Msmp> establish_completeness(ReflectionNetwork net, const Tolerance& tol,
                                                                 const std::vector<int>& preferred = {}) {
    if (!net.proper()) throw invalid_input("establish_completeness: network still has Unknown edges");
    const Eigen::Index n = net.dim();
    std::vector<int> order = preferred;
    {
        auto ids = net.vertex_ids();
        std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
            return std::make_pair(net.vertex(a).rank, net.vertex(a).origin) <
                   std::make_pair(net.vertex(b).rank, net.vertex(b).origin);
        });
        for (int id : ids)
            if (std::find(order.begin(), order.end(), id) == order.end()) order.push_back(id);
    }

    Msmp msmp;
    msmp.identity = cmat::Zero(n, n);
    for (int v : order) {
        bool independent = true;
        for (int m : msmp.members)
            if (net.edge(v, m)) {
                independent = false;
                break;
            }
        if (!independent) continue;
        msmp.members.push_back(v);
        msmp.identity += net.vertex(v).projection;
    }

    const cmat id = cmat::Identity(n, n);
    for (int v : order) {
        const cmat& pv = net.vertex(v).projection;
        if ((msmp.identity * pv - pv).norm() <= 10.0 * tol.eps_zero) continue;
        const ProportionalityFit fit = fit_proportional(pv * msmp.identity * pv, pv);
        const double alpha = fit.c.real();
        if (std::abs(1.0 - alpha) <= tol.eps_zero)
            throw DegenerateNormalization("completion of vertex " + std::to_string(v) +
                                          " has vanishing normalization 1 - alpha");
        const cmat q = id - msmp.identity;
        const cmat tilde = purify_projection(q * pv * q / (1.0 - alpha), tol);
        const int rank = projection_rank(tilde);
        const int nid = net.add_vertex(tilde, rank, net.vertex(v).origin);
        for (int x : net.vertex_ids()) {
            if (x == nid) continue;
            const cmat& px = net.vertex(x).projection;
            if ((tilde * px).norm() <= tol.eps_zero) continue;
            const ProportionalityFit lf = fit_proportional(px * tilde * px, px);
            if (lf.residual > tol.eps_prop)
                throw SpectralFailure("completed projection does not reflect properly against vertex " +
                                      std::to_string(x));
            net.set_edge(nid, x, EdgeState{EdgeKind::Reflecting, lf.c.real()});
        }
        msmp.members.push_back(nid);
        msmp.identity += tilde;
    }
    for (int v : net.vertex_ids()) {
        const cmat& pv = net.vertex(v).projection;
        if ((msmp.identity * pv - pv).norm() > 10.0 * tol.eps_zero)
            throw SpectralFailure("MSMP identity does not fix vertex " + std::to_string(v));
    }
    return {std::move(net), std::move(msmp)};
}

/// One Wedderburn block: vectors e(i, k) for rows i < rows, columns k < cols.
struct IrrepBlock {
    int rows = 0;
    int cols = 0;
    int root_id = -1;
    std::vector<int> member_ids;   ///< MSMP vertex of each column
    std::vector<cmat> columns;     ///< columns[k] is dim x rows

    cvec vector(int i, int k) const { return columns.at(static_cast<std::size_t>(k)).col(i); }
};

struct IrrepBasis {
    Eigen::Index dim = 0;
    std::vector<IrrepBlock> blocks;
    cmat null_basis;   ///< dim x dim(H_0), orthonormal columns

    Eigen::Index support_dim() const {
        Eigen::Index s = 0;
        for (const auto& b : blocks) s += static_cast<Eigen::Index>(b.rows) * b.cols;
        return s;
    }

    /// Isometry V whose rows are the conjugated basis vectors, block by
    /// block and row-major (i * cols + k) inside each block.
    cmat embedding() const {
        cmat v(support_dim(), dim);
        Eigen::Index r = 0;
        for (const auto& b : blocks)
            for (int i = 0; i < b.rows; ++i)
                for (int k = 0; k < b.cols; ++k) v.row(r++) = b.vector(i, k).adjoint();
        return v;
    }

    std::vector<std::pair<int, int>> block_dims() const {
        std::vector<std::pair<int, int>> d;
        for (const auto& b : blocks) d.emplace_back(b.rows, b.cols);
        return d;
    }
};

/**
 * Per component: canonical eigenbasis of the root MSMP member, mapped to the
 * other members by spanning-tree path isometries.
 */
inline IrrepBasis construct_irrep_basis(const ReflectionNetwork& net, const Msmp& msmp, const Tolerance& tol) {
    IrrepBasis basis;
    basis.dim = net.dim();
    for (const auto& comp : net.components()) {
        std::vector<int> members;
        for (int m : msmp.members)
            if (std::binary_search(comp.begin(), comp.end(), m)) members.push_back(m);
        if (members.empty()) throw SpectralFailure("network component without an MSMP member");
        std::sort(members.begin(), members.end());
        IrrepBlock blk;
        blk.root_id = members.front();
        blk.rows = net.vertex(blk.root_id).rank;
        blk.cols = static_cast<int>(members.size());
        blk.member_ids = members;
        const cmat root_basis = canonical_basis(net.vertex(blk.root_id).projection, blk.rows, tol.eps_zero);
        const auto parent = detail::spanning_tree(net, blk.root_id);
        for (int m : members) {
            if (m == blk.root_id) {
                blk.columns.push_back(root_basis);
                continue;
            }
            const PathIsometry s = path_isometry(net, detail::tree_path(parent, m));
            blk.columns.push_back(s.op * root_basis);
        }
        basis.blocks.push_back(std::move(blk));
    }
    std::sort(basis.blocks.begin(), basis.blocks.end(), [](const IrrepBlock& a, const IrrepBlock& b) {
        return std::make_tuple(-a.rows * a.cols, -a.cols, a.root_id) <
               std::make_tuple(-b.rows * b.cols, -b.cols, b.root_id);
    });
    const Eigen::Index null_dim = basis.dim - basis.support_dim();
    if (null_dim < 0) throw SpectralFailure("irrep basis has more vectors than the dimension");
    const cmat rest = cmat::Identity(basis.dim, basis.dim) - msmp.identity;
    basis.null_basis = null_dim > 0 ? canonical_basis(rest, static_cast<int>(null_dim), tol.eps_zero)
                                    : cmat(basis.dim, 0);
    return basis;
}

struct DecomposeOptions {
    std::ostream* dump = nullptr;   ///< per-iteration network trace
};

/// The full pipeline: spectral projections, scattering, minimality,
/// completeness and basis construction.
inline IrrepBasis irrep_decompose(const std::vector<cmat>& generators, const Tolerance& tol,
                                  const DecomposeOptions& opts = {}) {
    if (generators.empty()) throw invalid_input("irrep_decompose: no generators");
    std::vector<cmat> projections;
    for (const auto& g : generators) {
        require_same_dim(g, generators.front(), "irrep_decompose");
        for (auto& p : spectral_projections(g, tol)) projections.push_back(std::move(p));
    }
    if (projections.empty()) {
        IrrepBasis basis;
        basis.dim = generators.front().rows();
        basis.null_basis = cmat::Identity(basis.dim, basis.dim);
        return basis;
    }
    ReflectionNetwork net = scatter_all(projections, tol, opts.dump);
    net = establish_minimality(std::move(net), tol, opts.dump);
    auto [complete, msmp] = establish_completeness(std::move(net), tol);
    return construct_irrep_basis(complete, msmp, tol);
}

struct GeneratorResidual {
    std::string name;
    double off_block = 0.0;    ///< weight outside the diagonal blocks
    double in_block = 0.0;     ///< deviation from I_A (x) M_B inside blocks
    double null_leak = 0.0;    ///< ||M restricted to H_0||
    double max() const { return std::max({off_block, in_block, null_leak}); }
    std::vector<cmat> block_matrices;   ///< M_B per block
};

struct VerificationReport {
    std::vector<GeneratorResidual> generators;
    double max_residual = 0.0;
    bool passed = true;
};

/// Computes the residuals of V M V^H against Wedderburn form without throwing.
inline VerificationReport check_decomposition(const IrrepBasis& basis, const std::vector<cmat>& generators,
                                              const Tolerance& tol, const std::vector<std::string>& names = {}) {
    VerificationReport rep;
    const cmat v = basis.embedding();
    for (std::size_t g = 0; g < generators.size(); ++g) {
        const cmat& m = generators[g];
        if (m.rows() != basis.dim) throw DimensionMismatch("check_decomposition: generator dimension mismatch");
        GeneratorResidual res;
        res.name = g < names.size() ? names[g] : "generator " + std::to_string(g);
        const cmat w = v * m * v.adjoint();
        cmat expected = cmat::Zero(w.rows(), w.cols());
        Eigen::Index off = 0;
        double in_block2 = 0.0;
        for (const auto& b : basis.blocks) {
            const Eigen::Index sz = static_cast<Eigen::Index>(b.rows) * b.cols;
            const cmat blk = w.block(off, off, sz, sz);
            const cmat mb = blk.topLeftCorner(b.cols, b.cols);
            const cmat ideal = kron(cmat::Identity(b.rows, b.rows), mb);
            in_block2 += (blk - ideal).squaredNorm();
            expected.block(off, off, sz, sz) = blk;
            res.block_matrices.push_back(mb);
            off += sz;
        }
        res.off_block = (w - expected).norm();
        res.in_block = std::sqrt(in_block2);
        if (basis.null_basis.cols() > 0) res.null_leak = (m * basis.null_basis).norm();
        const double threshold = tol.eps_prop * std::max(1.0, m.norm());
        if (res.max() > threshold) rep.passed = false;
        rep.max_residual = std::max(rep.max_residual, res.max());
        rep.generators.push_back(std::move(res));
    }
    return rep;
}

/// check_decomposition that throws VerificationFailed on the worst offender.
inline VerificationReport verify_decomposition(const IrrepBasis& basis, const std::vector<cmat>& generators,
                                               const Tolerance& tol, const std::vector<std::string>& names = {}) {
    VerificationReport rep = check_decomposition(basis, generators, tol, names);
    if (!rep.passed) {
        const auto worst = std::max_element(rep.generators.begin(), rep.generators.end(),
                                            [](const auto& a, const auto& b) { return a.max() < b.max(); });
        throw VerificationFailed(worst->name, worst->max());
    }
    return rep;
}

} // namespace qbp
