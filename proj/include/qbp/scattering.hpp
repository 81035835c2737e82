#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <tuple>
#include <utility>
#include <vector>

#include "numerics.hpp"

namespace qbp {

enum class EdgeKind { Unknown, Reflecting };

struct EdgeState {
    EdgeKind kind = EdgeKind::Unknown;
    double lambda = 0.0;   ///< reflection coefficient, meaningful for Reflecting
};

struct Vertex {
    int id = -1;
    cmat projection;
    int rank = 0;
    int origin = -1;   ///< id of the starting vertex this one was split from
};

/**
 * Graph of projections. A missing edge between two vertices means the
 * projections are orthogonal; otherwise the pair is either still Unknown or
 * properly reflecting with coefficient lambda.
 */
class ReflectionNetwork {
public:
    explicit ReflectionNetwork(Eigen::Index dim = 0) : dim_(dim) {}

    Eigen::Index dim() const { return dim_; }

    /// Adds a vertex; origin defaults to the new id.
    int add_vertex(cmat projection, int rank, int origin = -1) {
        const int id = next_id_++;
        vertices_.emplace(id, Vertex{id, std::move(projection), rank, origin < 0 ? id : origin});
        adj_[id];
        return id;
    }

    void remove_vertex(int id) {
        auto it = adj_.find(id);
        if (it != adj_.end()) {
            for (const auto& [other, st] : it->second) adj_[other].erase(id);
            adj_.erase(it);
        }
        vertices_.erase(id);
    }

    bool has_vertex(int id) const { return vertices_.count(id) != 0; }

    const Vertex& vertex(int id) const {
        auto it = vertices_.find(id);
        if (it == vertices_.end()) throw invalid_input("no vertex with id " + std::to_string(id));
        return it->second;
    }

    /// Vertices in ascending id order.
    std::vector<int> vertex_ids() const {
        std::vector<int> ids;
        ids.reserve(vertices_.size());
        for (const auto& kv : vertices_) ids.push_back(kv.first);
        return ids;
    }

    std::size_t vertex_count() const { return vertices_.size(); }

    std::optional<EdgeState> edge(int a, int b) const {
        auto it = adj_.find(a);
        if (it == adj_.end()) return std::nullopt;
        auto jt = it->second.find(b);
        if (jt == it->second.end()) return std::nullopt;
        return jt->second;
    }

    void set_edge(int a, int b, EdgeState st) {
        if (a == b) return;
        if (st.kind == EdgeKind::Reflecting && st.lambda <= 0.0) {
            clear_edge(a, b);
            return;
        }
        adj_[a][b] = st;
        adj_[b][a] = st;
    }

    void clear_edge(int a, int b) {
        adj_[a].erase(b);
        adj_[b].erase(a);
    }

    /// Neighbours (non-orthogonal vertices) in ascending id order.
    const std::map<int, EdgeState>& neighbours(int id) const {
        auto it = adj_.find(id);
        if (it == adj_.end()) throw invalid_input("no vertex with id " + std::to_string(id));
        return it->second;
    }

    std::size_t unknown_edge_count() const {
        std::size_t n = 0;
        for (const auto& [a, nb] : adj_)
            for (const auto& [b, st] : nb)
                if (a < b && st.kind == EdgeKind::Unknown) ++n;
        return n;
    }

    bool proper() const { return unknown_edge_count() == 0; }

    /// Connected components over non-orthogonal edges; each sorted by id,
    /// components ordered by their smallest id.
    std::vector<std::vector<int>> components() const {
        std::vector<std::vector<int>> out;
        std::set<int> seen;
        for (const auto& kv : vertices_) {
            if (seen.count(kv.first)) continue;
            std::vector<int> comp;
            std::vector<int> stack{kv.first};
            seen.insert(kv.first);
            while (!stack.empty()) {
                const int v = stack.back();
                stack.pop_back();
                comp.push_back(v);
                for (const auto& [w, st] : adj_.at(v))
                    if (seen.insert(w).second) stack.push_back(w);
            }
            std::sort(comp.begin(), comp.end());
            out.push_back(std::move(comp));
        }
        return out;
    }

    /// Line-oriented text dump: vertex ranks followed by the edge list.
    void dump(std::ostream& os) const {
        const auto prec = os.precision();
        os << std::setprecision(17);
        for (const auto& [id, v] : vertices_) os << "vertex " << id << " rank " << v.rank << '\n';
        for (const auto& [a, nb] : adj_)
            for (const auto& [b, st] : nb) {
                if (a >= b) continue;
                if (st.kind == EdgeKind::Unknown)
                    os << "edge " << a << ' ' << b << " unknown\n";
                else
                    os << "edge " << a << ' ' << b << " reflecting " << st.lambda << '\n';
            }
        os.precision(prec);
    }

private:
    Eigen::Index dim_;
    int next_id_ = 0;
    std::map<int, Vertex> vertices_;
    std::map<int, std::map<int, EdgeState>> adj_;
};

/**
 * Result of scattering p1 against p2. left_parts[k] and right_parts[k] belong
 * to spectrum[k]; the optional null parts are the pieces of p1 (p2) that are
 * orthogonal to p2 (p1).
 */
struct ScatterOutcome {
    std::vector<double> spectrum;
    std::vector<cmat> left_parts;
    std::vector<cmat> right_parts;
    std::vector<int> part_ranks;
    std::optional<cmat> left_null;
    std::optional<cmat> right_null;
    /// Index into spectrum of a lambda ~ 1 entry whose two sides coincide.
    std::optional<std::size_t> unit_index;

    bool left_unbroken() const { return spectrum.size() == 1 && !left_null; }
    bool right_unbroken() const { return spectrum.size() == 1 && !right_null; }
};

inline ScatterOutcome scatter_pair(const cmat& p1, const cmat& p2, const Tolerance& tol) {
    require_same_dim(p1, p2, "scatter_pair");
    if (!is_projection(p1, tol)) throw NotProjection("scatter_pair: first argument is not a projection");
    if (!is_projection(p2, tol)) throw NotProjection("scatter_pair: second argument is not a projection");

    const SpectralForm sf = spectral_decompose(hermitian_part(p1 * p2 * p1), tol);
    ScatterOutcome out;
    cmat left_sum = cmat::Zero(p1.rows(), p1.cols());
    cmat right_sum = left_sum;
    for (const auto& c : sf.clusters) {
        if (c.value < 0.0 || c.value > 1.0 + tol.eps_eig)
            throw SpectralFailure("scattering eigenvalue " + std::to_string(c.value) + " outside [0, 1]");
        const double lambda = std::min(c.value, 1.0);
        out.spectrum.push_back(lambda);
        out.left_parts.push_back(c.projection);
        out.part_ranks.push_back(c.rank);
        cmat right;
        if (std::abs(lambda - 1.0) <= tol.eps_eig) {
            right = c.projection;
            out.unit_index = out.spectrum.size() - 1;
        } else {
            right = purify_projection((p2 * c.projection * p2) / lambda, tol);
        }
        left_sum += c.projection;
        right_sum += right;
        out.right_parts.push_back(std::move(right));
    }
    const cmat ln = p1 - left_sum;
    if (ln.norm() > tol.eps_zero) out.left_null = purify_projection(ln, tol);
    const cmat rn = p2 - right_sum;
    if (rn.norm() > tol.eps_zero) out.right_null = purify_projection(rn, tol);
    return out;
}

namespace detail {

inline EdgeState combine_duplicate_edges(const std::optional<EdgeState>& a, const std::optional<EdgeState>& b) {
    if (a && a->kind == EdgeKind::Reflecting) return *a;
    if (b && b->kind == EdgeKind::Reflecting) return *b;
    return EdgeState{EdgeKind::Unknown, 0.0};
}

} // namespace detail

/// Iteration cap for resolving a network: dim^2 plus the squared total rank
/// of the starting vertices.
inline std::size_t scatter_iteration_cap(const ReflectionNetwork& net) {
    std::size_t total_rank = 0;
    for (int id : net.vertex_ids()) total_rank += static_cast<std::size_t>(net.vertex(id).rank);
    const auto d = static_cast<std::size_t>(net.dim());
    return d * d + total_rank * total_rank;
}

/**
 * Scatters Unknown pairs until the network is proper. Pairs are chosen by
 * (smaller rank, larger rank, smaller id, larger id). When a vertex breaks, its
 * parts inherit orthogonality, and every former Unknown or Reflecting relation
 * of the broken vertex is re-tested directly against the new part.
 */
inline void resolve_network(ReflectionNetwork& net, const Tolerance& tol, std::ostream* dump = nullptr,
                            std::size_t* iterations = nullptr) {
    const std::size_t cap = scatter_iteration_cap(net);
    std::size_t iter = 0;
    if (dump) {
        *dump << "iteration 0 initial\n";
        net.dump(*dump);
    }
    for (;;) {
        std::optional<std::tuple<int, int, int, int>> best;
        for (int a : net.vertex_ids())
            for (const auto& [b, st] : net.neighbours(a)) {
                if (a >= b || st.kind != EdgeKind::Unknown) continue;
                const int ra = net.vertex(a).rank, rb = net.vertex(b).rank;
                auto key = std::make_tuple(std::min(ra, rb), std::max(ra, rb), a, b);
                if (!best || key < *best) best = key;
            }
        if (!best) break;
        if (++iter > cap)
            throw NonConvergence("scattering did not terminate within " + std::to_string(cap) + " iterations");

        int a = std::get<2>(*best), b = std::get<3>(*best);
        if (net.vertex(b).rank < net.vertex(a).rank) std::swap(a, b);
        const Vertex va = net.vertex(a);
        const Vertex vb = net.vertex(b);
        const ScatterOutcome out = scatter_pair(va.projection, vb.projection, tol);

        if (dump) {
            *dump << "iteration " << iter << " scatter " << a << ' ' << b << " spectrum";
            const auto prec = dump->precision();
            *dump << std::setprecision(17);
            for (double l : out.spectrum) *dump << ' ' << l;
            dump->precision(prec);
            *dump << '\n';
        }

        if (out.spectrum.empty()) {
            net.clear_edge(a, b);
        } else if (out.left_unbroken() && out.right_unbroken()) {
            if (out.unit_index) {
                // Identical projections: keep a single vertex.
                for (const auto& [x, st] : std::map<int, EdgeState>(net.neighbours(b))) {
                    if (x == a) continue;
                    net.set_edge(a, x, detail::combine_duplicate_edges(net.edge(a, x), st));
                }
                net.remove_vertex(b);
            } else {
                net.set_edge(a, b, EdgeState{EdgeKind::Reflecting, out.spectrum[0]});
            }
        } else {
            const std::size_t ns = out.spectrum.size();
            const bool a_broken = !out.left_unbroken();
            const bool b_broken = !out.right_unbroken();
            std::vector<int> left_ids(ns, -1), right_ids(ns, -1);
            std::vector<int> parts_a, parts_b;   // new vertices and the vertex they replace
            if (!a_broken) left_ids[0] = a;
            if (!b_broken) right_ids[0] = b;
            if (out.unit_index) {
                // The lambda = 1 parts of both sides are the same projection.
                const std::size_t u = *out.unit_index;
                if (!a_broken) {
                    right_ids[u] = a;
                } else if (!b_broken) {
                    left_ids[u] = b;
                } else {
                    const int id = net.add_vertex(out.left_parts[u], out.part_ranks[u], std::min(va.origin, vb.origin));
                    left_ids[u] = right_ids[u] = id;
                    parts_a.push_back(id);
                    parts_b.push_back(id);
                }
            }
            auto is_unit = [&](std::size_t k) { return out.unit_index && *out.unit_index == k; };
            if (a_broken) {
                for (std::size_t k = 0; k < ns; ++k) {
                    if (is_unit(k)) continue;
                    left_ids[k] = net.add_vertex(out.left_parts[k], out.part_ranks[k], va.origin);
                    parts_a.push_back(left_ids[k]);
                }
                if (out.left_null) parts_a.push_back(net.add_vertex(*out.left_null, projection_rank(*out.left_null), va.origin));
            }
            if (b_broken) {
                for (std::size_t k = 0; k < ns; ++k) {
                    if (is_unit(k)) continue;
                    right_ids[k] = net.add_vertex(out.right_parts[k], out.part_ranks[k], vb.origin);
                    parts_b.push_back(right_ids[k]);
                }
                if (out.right_null) parts_b.push_back(net.add_vertex(*out.right_null, projection_rank(*out.right_null), vb.origin));
            }

            // Orthogonality is inherited; former Unknown/Reflecting relations
            // of a broken vertex are re-tested against each new part.
            auto inherit = [&](const std::vector<int>& parts, int old, int partner) {
                for (int p : parts) {
                    const cmat& pp = net.vertex(p).projection;
                    for (const auto& [x, st] : net.neighbours(old)) {
                        if (x == partner || net.edge(p, x)) continue;
                        if ((pp * net.vertex(x).projection).norm() > tol.eps_zero)
                            net.set_edge(p, x, EdgeState{EdgeKind::Unknown, 0.0});
                    }
                }
            };
            inherit(parts_a, a, b);
            inherit(parts_b, b, a);
            if (a_broken) net.remove_vertex(a);
            if (b_broken) net.remove_vertex(b);
            for (std::size_t k = 0; k < ns; ++k)
                if (left_ids[k] != right_ids[k])
                    net.set_edge(left_ids[k], right_ids[k], EdgeState{EdgeKind::Reflecting, out.spectrum[k]});
        }
        if (dump) net.dump(*dump);
    }
    if (iterations) *iterations = iter;
}

/**
 * Builds the initial network from a list of projections (Unknown wherever two
 * projections are not orthogonal) and resolves it into a proper network.
 */
inline ReflectionNetwork scatter_all(const std::vector<cmat>& projections, const Tolerance& tol,
                                     std::ostream* dump = nullptr, std::size_t* iterations = nullptr) {
    if (projections.empty()) throw invalid_input("scatter_all: no projections given");
    const Eigen::Index dim = projections.front().rows();
    ReflectionNetwork net(dim);
    for (const auto& p : projections) {
        require_same_dim(p, projections.front(), "scatter_all");
        if (!is_projection(p, tol)) throw NotProjection("scatter_all: input is not a projection");
        const int rank = projection_rank(p);
        if (rank == 0) continue;
        net.add_vertex(p, rank);
    }
    const auto ids = net.vertex_ids();
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = i + 1; j < ids.size(); ++j)
            if ((net.vertex(ids[i]).projection * net.vertex(ids[j]).projection).norm() > tol.eps_zero)
                net.set_edge(ids[i], ids[j], EdgeState{EdgeKind::Unknown, 0.0});

    resolve_network(net, tol, dump, iterations);

    for (const auto& comp : net.components())
        for (int v : comp)
            if (net.vertex(v).rank != net.vertex(comp.front()).rank)
                throw SpectralFailure("connected component mixes projection ranks");
    return net;
}

} // namespace qbp
