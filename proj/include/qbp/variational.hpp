#pragma once

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "bpt.hpp"
#include "numerics.hpp"

namespace qbp::variational {

/// Scale convention of the Ising terms before Frobenius normalization.
enum class IsingConvention {
    spin_half,   ///< -sum S_z S_z - g sum S_x with S = sigma / 2
    pauli,       ///< -sum sigma_z sigma_z - g sum sigma_x
};

struct SpinChain {
    int n = 0;
    std::vector<int> local_dims;
    double g = 0.0;
    IsingConvention convention = IsingConvention::spin_half;
    bool periodic = false;
    cmat hamiltonian;   ///< Frobenius-normalized

    Eigen::Index dim() const { return hamiltonian.rows(); }
};

namespace detail {

inline cmat pauli_x() {
    cmat m(2, 2);
    m << 0.0, 1.0, 1.0, 0.0;
    return m;
}

inline cmat pauli_y() {
    cmat m(2, 2);
    m << 0.0, cplx(0.0, -1.0), cplx(0.0, 1.0), 0.0;
    return m;
}

inline cmat pauli_z() {
    cmat m(2, 2);
    m << 1.0, 0.0, 0.0, -1.0;
    return m;
}

/// Embeds a single-site operator at site mu (site 0 is the leftmost factor).
inline cmat site_operator(const cmat& op, int mu, int n) {
    cmat out = cmat::Identity(1, 1);
    const cmat id = cmat::Identity(2, 2);
    for (int k = 0; k < n; ++k) out = kron(out, k == mu ? op : id);
    return out;
}

} // namespace detail

/// Open (or optionally periodic) transverse-field Ising chain of n qubits.
inline SpinChain build_ising(int n, double g, IsingConvention convention = IsingConvention::spin_half,
                             bool periodic = false) {
    if (n < 2) throw invalid_input("Ising chain requires at least 2 sites");
    if (!(g >= 0.0) || !std::isfinite(g)) throw invalid_input("Ising field g must be finite and non-negative");
    if (n > 14) throw invalid_input("Ising chain with more than 14 sites is too large for dense matrices");
    const Eigen::Index dim = Eigen::Index{1} << n;
    const cmat sz = detail::pauli_z(), sx = detail::pauli_x();
    const double field = convention == IsingConvention::spin_half ? 2.0 * g : g;
    cmat h = cmat::Zero(dim, dim);
    const int bonds = periodic && n > 2 ? n : n - 1;
    for (int mu = 0; mu < bonds; ++mu)
        h -= detail::site_operator(sz, mu, n) * detail::site_operator(sz, (mu + 1) % n, n);
    for (int mu = 0; mu < n; ++mu) h -= field * detail::site_operator(sx, mu, n);
    SpinChain c;
    c.n = n;
    c.local_dims.assign(static_cast<std::size_t>(n), 2);
    c.g = g;
    c.convention = convention;
    c.periodic = periodic;
    c.hamiltonian = h / h.norm();
    return c;
}

/// Critical field at which the preferred collective observable switches.
inline double gcrit(int n) {
    if (n < 2) throw invalid_input("gcrit requires n >= 2");
    return std::sqrt(static_cast<double>(n - 1) / (2.0 * n));
}

/**
 * Closed form for the commutator of the normalized open-chain Hamiltonian
 * with the normalized sum of sigma_z + alpha sigma_x. It is only used as a
 * cross-check target; alpha = +inf selects the pure sigma_x observable.
 */
inline double ising_commutator_formula(int n, double g, double alpha) {
    const double nn = n;
    const double denom_common = std::pow(2.0, nn - 3.0) * nn * (4.0 * nn * g * g + nn - 1.0);
    if (std::isinf(alpha)) return (nn - 1.0) / denom_common;
    const double a2 = alpha * alpha;
    return ((nn - 1.0) * a2 + 2.0 * nn * g * g) / (denom_common * (1.0 + a2));
}

/// Per-site Pauli coefficients (x, y, z) of a collective observable.
using SiteCoefficients = std::array<double, 3>;

struct CollectiveObservable {
    std::vector<SiteCoefficients> coefficients;
    std::optional<double> alpha;   ///< set for members of the sigma_z + alpha sigma_x family
    cmat mc;                       ///< Frobenius-normalized
    double commutator_norm = std::numeric_limits<double>::quiet_NaN();

    int sites() const { return static_cast<int>(coefficients.size()); }
};

inline cmat site_observable(const SiteCoefficients& c) {
    return c[0] * detail::pauli_x() + c[1] * detail::pauli_y() + c[2] * detail::pauli_z();
}

inline CollectiveObservable make_collective(std::vector<SiteCoefficients> coefficients) {
    const int n = static_cast<int>(coefficients.size());
    if (n < 1) throw invalid_input("collective observable needs at least one site");
    for (std::size_t mu = 0; mu < coefficients.size(); ++mu) {
        const auto& c = coefficients[mu];
        if (!std::all_of(c.begin(), c.end(), [](double x) { return std::isfinite(x); }))
            throw invalid_input("non-finite coefficient at site " + std::to_string(mu));
        if (c[0] == 0.0 && c[1] == 0.0 && c[2] == 0.0)
            throw invalid_input("site " + std::to_string(mu) + " has no nonzero coefficient");
    }
    const Eigen::Index dim = Eigen::Index{1} << n;
    cmat m = cmat::Zero(dim, dim);
    for (int mu = 0; mu < n; ++mu)
        m += detail::site_operator(site_observable(coefficients[static_cast<std::size_t>(mu)]), mu, n);
    CollectiveObservable out;
    out.coefficients = std::move(coefficients);
    out.mc = m / m.norm();
    return out;
}

/// M_mu proportional to sigma_z + alpha sigma_x on every site; alpha = +inf gives sigma_x.
inline CollectiveObservable alpha_observable(int n, double alpha) {
    if (!(alpha >= 0.0)) throw invalid_input("alpha must be non-negative");
    const SiteCoefficients c = std::isinf(alpha) ? SiteCoefficients{1.0, 0.0, 0.0} : SiteCoefficients{alpha, 0.0, 1.0};
    CollectiveObservable out = make_collective(std::vector<SiteCoefficients>(static_cast<std::size_t>(n), c));
    out.alpha = alpha;
    return out;
}

enum class Family { alpha_scan, general };

struct MinimizeOptions {
    std::vector<double> alpha_grid;   ///< empty selects default_alpha_grid()
    std::uint64_t seed = 0;
    int restarts = 8;
    int max_iterations = 4000;
};

/// alpha = 0, a log grid from 1e-4 to 1e3 with 20 points per decade, and +inf.
inline std::vector<double> default_alpha_grid() {
    std::vector<double> a{0.0};
    for (int k = 0; k <= 140; ++k) a.push_back(std::pow(10.0, -4.0 + k / 20.0));
    a.push_back(std::numeric_limits<double>::infinity());
    return a;
}

namespace detail {

struct GeneralObjective {
    const cmat* h;
    int n;
};

inline double general_objective(const gsl_vector* x, void* params) {
    const auto* p = static_cast<const GeneralObjective*>(params);
    std::vector<SiteCoefficients> c(static_cast<std::size_t>(p->n));
    double total = 0.0;
    for (int mu = 0; mu < p->n; ++mu) {
        double site = 0.0;
        for (int a = 0; a < 3; ++a) {
            const double v = gsl_vector_get(x, static_cast<std::size_t>(3 * mu + a));
            c[static_cast<std::size_t>(mu)][static_cast<std::size_t>(a)] = v;
            site += v * v;
        }
        if (!(site > 1e-24)) return 1e6;
        total += site;
    }
    if (!std::isfinite(total)) return 1e6;
    return commutator_fnorm(*p->h, make_collective(std::move(c)).mc);
}

} // namespace detail

/**
 * Finds the collective observable with the smallest ||[H, M_c]||_F within
 * the requested family. Ties in the alpha scan keep the earliest grid entry.
 */
inline CollectiveObservable compatibility_minimize(const SpinChain& chain, Family family,
                                                   const MinimizeOptions& opts = {}) {
    const cmat& h = chain.hamiltonian;
    if (family == Family::alpha_scan) {
        const std::vector<double> grid = opts.alpha_grid.empty() ? default_alpha_grid() : opts.alpha_grid;
        std::optional<CollectiveObservable> best;
        for (double a : grid) {
            CollectiveObservable m = alpha_observable(chain.n, a);
            m.commutator_norm = commutator_fnorm(h, m.mc);
            if (!best || m.commutator_norm < best->commutator_norm) best = std::move(m);
        }
        if (!best) throw EmptyFamily("alpha grid is empty");
        return *best;
    }

    if (opts.restarts < 1) throw EmptyFamily("general family requires at least one restart");
    const std::size_t nvar = 3 * static_cast<std::size_t>(chain.n);
    detail::GeneralObjective params{&h, chain.n};
    gsl_multimin_function fn{&detail::general_objective, nvar, &params};
    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    gsl_vector* x = gsl_vector_alloc(nvar);
    gsl_vector* step = gsl_vector_alloc(nvar);
    gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, nvar);
    std::vector<double> best_x;
    double best_f = std::numeric_limits<double>::infinity();
    for (int r = 0; r < opts.restarts; ++r) {
        for (std::size_t i = 0; i < nvar; ++i) gsl_vector_set(x, i, normal(rng));
        gsl_vector_set_all(step, 0.25);
        gsl_multimin_fminimizer_set(s, &fn, x, step);
        for (int it = 0; it < opts.max_iterations; ++it) {
            if (gsl_multimin_fminimizer_iterate(s) != GSL_SUCCESS) break;
            if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), 1e-10) == GSL_SUCCESS) break;
        }
        if (s->fval < best_f) {
            best_f = s->fval;
            best_x.assign(s->x->data, s->x->data + nvar);
        }
    }
    gsl_multimin_fminimizer_free(s);
    gsl_vector_free(step);
    gsl_vector_free(x);

    std::vector<SiteCoefficients> c(static_cast<std::size_t>(chain.n));
    for (std::size_t i = 0; i < nvar; ++i) c[i / 3][i % 3] = best_x[i];
    CollectiveObservable out = make_collective(std::move(c));
    out.commutator_norm = commutator_fnorm(h, out.mc);
    return out;
}

/**
 * Columns of the coarse-graining: the product eigenbasis of M_c grouped by
 * eigenvalue. Per-site eigenvectors are ordered by descending eigenvalue,
 * so local index 0 is "up" along the site axis; site 0 is the most
 * significant digit of a product-state index.
 */
struct ColumnStructure {
    int n = 0;
    cmat basis;                          ///< column s is product state s
    std::vector<double> state_labels;    ///< sum of per-site eigenvalues of c . sigma / 2
    std::vector<double> labels;          ///< distinct values, ascending
    std::vector<std::vector<int>> states; ///< per column, ascending (lexicographic) state indices
    std::array<char, 2> symbols{'0', '1'};

    int columns() const { return static_cast<int>(labels.size()); }
    Eigen::Index dim() const { return basis.rows(); }

    std::vector<int> heights() const {
        std::vector<int> h;
        for (const auto& s : states) h.push_back(static_cast<int>(s.size()));
        return h;
    }

    std::string state_string(int s) const {
        std::string out;
        for (int mu = 0; mu < n; ++mu) out += symbols[static_cast<std::size_t>((s >> (n - 1 - mu)) & 1)];
        return out;
    }
};

inline std::string format_label(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%+.6g", x);
    return buf;
}

inline ColumnStructure columns_from_mc(const CollectiveObservable& mc, const Tolerance& tol) {
    const int n = mc.sites();
    ColumnStructure cs;
    cs.n = n;
    std::vector<cmat> site_vecs;
    std::vector<Eigen::Vector2d> site_vals;
    bool all_x = true;
    for (const auto& c : mc.coefficients) {
        const cmat m = site_observable(c) / 2.0;
        Eigen::SelfAdjointEigenSolver<cmat> es(m);
        if (es.info() != Eigen::Success) throw EigFailure("per-site eigensolver failed");
        cmat v(2, 2);
        v.col(0) = es.eigenvectors().col(1);
        v.col(1) = es.eigenvectors().col(0);
        for (int k = 0; k < 2; ++k) fix_phase(v.col(k), 1e-12);
        const Eigen::Vector2d lam(es.eigenvalues()(1), es.eigenvalues()(0));
        cmat d = cmat::Zero(2, 2);
        d(0, 0) = lam(0);
        d(1, 1) = lam(1);
        if ((v * d * v.adjoint() - m).norm() > tol.eps_zero)
            throw NotProductDiagonalizable("site observable is not reproduced by its diagonalization");
        site_vecs.push_back(v);
        site_vals.push_back(lam);
        all_x = all_x && c[1] == 0.0 && c[2] == 0.0;
    }
    if (all_x) cs.symbols = {'+', '-'};

    cmat b = cmat::Identity(1, 1);
    for (const auto& v : site_vecs) b = kron(b, v);
    cs.basis = b;
    const Eigen::Index dim = b.rows();
    cs.state_labels.resize(static_cast<std::size_t>(dim));
    for (Eigen::Index s = 0; s < dim; ++s) {
        double l = 0.0;
        for (int mu = 0; mu < n; ++mu) l += site_vals[static_cast<std::size_t>(mu)]((s >> (n - 1 - mu)) & 1);
        cs.state_labels[static_cast<std::size_t>(s)] = l;
    }
    const cmat rotated = b.adjoint() * mc.mc * b;
    const cmat offdiag = rotated - cmat(rotated.diagonal().asDiagonal());
    if (offdiag.norm() > tol.eps_zero * std::max(1.0, rotated.norm()))
        throw NotProductDiagonalizable("M_c is not diagonal in the product eigenbasis");

    std::vector<int> order(static_cast<std::size_t>(dim));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int c) {
        return cs.state_labels[static_cast<std::size_t>(a)] < cs.state_labels[static_cast<std::size_t>(c)];
    });
    double prev = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const double l = cs.state_labels[static_cast<std::size_t>(order[i])];
        if (i == 0 || l - prev > tol.eps_eig) {
            cs.labels.push_back(l);
            cs.states.emplace_back();
        }
        cs.states.back().push_back(order[i]);
        prev = l;
    }
    for (auto& s : cs.states) std::sort(s.begin(), s.end());
    // Report each column by the mean of its members so clusters do not drift.
    for (std::size_t k = 0; k < cs.states.size(); ++k) {
        double sum = 0.0;
        for (int s : cs.states[k]) sum += cs.state_labels[static_cast<std::size_t>(s)];
        cs.labels[k] = sum / static_cast<double>(cs.states[k].size());
    }
    return cs;
}

/// Sectors as sorted lists of column indices, ordered by their first column.
using Sectors = std::vector<std::vector<int>>;

inline Sectors detect_sectors(const SpinChain& chain, const ColumnStructure& cs, const Tolerance& tol) {
    if (chain.dim() != cs.dim()) throw DimensionMismatch("chain and column structure dimensions differ");
    const cmat ht = cs.basis.adjoint() * chain.hamiltonian * cs.basis;
    const int nc = cs.columns();
    std::vector<int> column_of(static_cast<std::size_t>(cs.dim()));
    for (int k = 0; k < nc; ++k)
        for (int s : cs.states[static_cast<std::size_t>(k)]) column_of[static_cast<std::size_t>(s)] = k;
    std::vector<int> parent(static_cast<std::size_t>(nc));
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int x) {
        while (parent[static_cast<std::size_t>(x)] != x) x = parent[static_cast<std::size_t>(x)] =
                                                             parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
        return x;
    };
    for (Eigen::Index s = 0; s < ht.rows(); ++s)
        for (Eigen::Index t = s + 1; t < ht.cols(); ++t) {
            const int a = column_of[static_cast<std::size_t>(s)], b = column_of[static_cast<std::size_t>(t)];
            if (a != b && std::abs(ht(s, t)) > tol.eps_zero) {
                const int ra = find(a), rb = find(b);
                if (ra != rb) parent[static_cast<std::size_t>(std::max(ra, rb))] = std::min(ra, rb);
            }
        }
    std::map<int, std::vector<int>> groups;
    for (int k = 0; k < nc; ++k) groups[find(k)].push_back(k);
    Sectors out;
    for (auto& [root, cols] : groups) out.push_back(std::move(cols));
    std::sort(out.begin(), out.end());
    return out;
}

/// Row alignment: for each column the ordered list of its product states.
using Alignment = std::vector<std::vector<int>>;

/// One block per sector; columns in ascending label order, row i of column
/// k holds alignment[k][i].
inline BipartitionTable candidate_table(const ColumnStructure& cs, const Sectors& sectors, const Alignment& al,
                                        const Tolerance& tol) {
    if (static_cast<int>(al.size()) != cs.columns()) throw invalid_input("alignment has the wrong number of columns");
    std::vector<TableBlock> blocks;
    for (std::size_t q = 0; q < sectors.size(); ++q) {
        TableBlock b;
        b.q = static_cast<int>(q);
        for (int k : sectors[q]) {
            const auto& col = al[static_cast<std::size_t>(k)];
            if (col.empty()) throw NonCompact("empty column in alignment");
            cmat c(cs.dim(), static_cast<Eigen::Index>(col.size()));
            for (std::size_t i = 0; i < col.size(); ++i) c.col(static_cast<Eigen::Index>(i)) = cs.basis.col(col[i]);
            b.columns.push_back(std::move(c));
            b.labels.push_back(format_label(cs.labels[static_cast<std::size_t>(k)]));
        }
        blocks.push_back(std::move(b));
    }
    return BipartitionTable(cs.dim(), std::move(blocks), tol);
}

/// Second derivative of the linear entropy at t = 0 for one row state.
struct RowRate {
    int q = 0;
    int row = 0;
    double analytic = 0.0;
    double finite_difference = std::numeric_limits<double>::quiet_NaN();
};

struct QScore {
    double q = 0.0;
    std::vector<RowRate> rows;
    /// Largest |analytic - fd| / (rel * max(|analytic|, |fd|) + abs) over rows; <= 1 means agreement.
    double fd_ratio(double rel, double abs) const {
        double worst = 0.0;
        for (const auto& r : rows) {
            const double scale = rel * std::max(std::abs(r.analytic), std::abs(r.finite_difference)) + abs;
            worst = std::max(worst, std::abs(r.analytic - r.finite_difference) / scale);
        }
        return worst;
    }
};

/**
 * Reduction of |a><b| through a table: R[(q,k),(q,l)] = sum_i <e_ik|a><b|e_il>
 * over the rows where both cells exist.
 */
inline cmat reduce_outer(const BipartitionTable& t, const cvec& a, const cvec& b) {
    const int n = t.total_columns();
    cmat r = cmat::Zero(n, n);
    int off = 0;
    for (const auto& blk : t.blocks()) {
        std::vector<cvec> ca, cb;
        for (const auto& c : blk.columns) {
            ca.push_back(c.adjoint() * a);
            cb.push_back(c.adjoint() * b);
        }
        for (int k = 0; k < blk.cols(); ++k)
            for (int l = 0; l < blk.cols(); ++l) {
                const Eigen::Index h = std::min(blk.height(k), blk.height(l));
                r(off + k, off + l) = (ca[static_cast<std::size_t>(k)].head(h).array() *
                                       cb[static_cast<std::size_t>(l)].head(h).array().conjugate())
                                          .sum();
            }
        off += blk.cols();
    }
    return r;
}

/// Product-basis table layout: blocks of columns, each a list of state indices.
using IndexLayout = std::vector<std::vector<std::vector<int>>>;

inline IndexLayout index_layout(const Sectors& sectors, const Alignment& al) {
    IndexLayout out;
    for (const auto& sec : sectors) {
        std::vector<std::vector<int>> b;
        for (int k : sec) b.push_back(al[static_cast<std::size_t>(k)]);
        out.push_back(std::move(b));
    }
    return out;
}

/// reduce_outer for a table whose vectors are the standard basis vectors
/// named by an index layout.
inline cmat reduce_outer_indexed(const IndexLayout& layout, const cvec& a, const cvec& b) {
    int n = 0;
    for (const auto& blk : layout) n += static_cast<int>(blk.size());
    cmat r = cmat::Zero(n, n);
    int off = 0;
    for (const auto& blk : layout) {
        const int nc = static_cast<int>(blk.size());
        for (int k = 0; k < nc; ++k)
            for (int l = 0; l < nc; ++l) {
                const auto& ck = blk[static_cast<std::size_t>(k)];
                const auto& cl = blk[static_cast<std::size_t>(l)];
                const std::size_t h = std::min(ck.size(), cl.size());
                cplx acc = 0.0;
                for (std::size_t i = 0; i < h; ++i) acc += a[ck[i]] * std::conj(b[cl[i]]);
                r(off + k, off + l) = acc;
            }
        off += nc;
    }
    return r;
}

namespace detail {

/// Entropy-rate formulas shared by the dense and indexed scorers. The reducer
/// maps a pair (a, b) to the reduction of |a><b|.
class RateEngine {
public:
    RateEngine(cmat h, double fd_step) : h_(std::move(h)), step_(fd_step) {
        Eigen::SelfAdjointEigenSolver<cmat> es(hermitian_part(h_));
        if (es.info() != Eigen::Success) throw EigFailure("Hamiltonian eigensolver failed");
        vecs_ = es.eigenvectors();
        vals_ = es.eigenvalues();
    }

    const cmat& hamiltonian() const { return h_; }

    /// -2 tr(rho_c rho_c'' + rho_c'^2) at t = 0 for rho = |phi><phi|.
    template <class Reduce>
    double analytic(const Reduce& reduce, const cvec& phi) const {
        const cvec h1 = h_ * phi;
        const cvec h2 = h_ * h1;
        const cplx mi(0.0, -1.0);
        const cmat rho = reduce(phi, phi);
        const cmat rho_d = mi * (reduce(h1, phi) - reduce(phi, h1));
        const cmat rho_dd = -(reduce(h2, phi) - 2.0 * reduce(h1, h1) + reduce(phi, h2));
        return -2.0 * (rho * rho_dd + rho_d * rho_d).trace().real();
    }

    /// Linear entropy 1 - tr(rho_c(t)^2) of the evolved state.
    template <class Reduce>
    double linear_entropy(const Reduce& reduce, const cvec& phi, double time) const {
        const cvec c = vecs_.adjoint() * phi;
        cvec ct(c.size());
        for (Eigen::Index j = 0; j < c.size(); ++j) ct[j] = std::polar(1.0, -vals_[j] * time) * c[j];
        const cvec pt = vecs_ * ct;
        const cmat rho = reduce(pt, pt);
        return 1.0 - (rho * rho).trace().real();
    }

    /**
     * Central second difference of the linear entropy around t = 0. The
     * stencil is accumulated from the increments rho_c(t) - rho_c(0) rather
     * than from three O(1) entropies, which would cancel most digits.
     */
    template <class Reduce>
    double finite_difference(const Reduce& reduce, const cvec& phi) const {
        const cvec c = vecs_.adjoint() * phi;
        const cmat rho0 = reduce(phi, phi);
        double second = 0.0;
        for (double t : {step_, -step_}) {
            cvec dc(c.size());
            for (Eigen::Index j = 0; j < c.size(); ++j) {
                const double th = vals_[j] * t;
                const double s = std::sin(0.5 * th);
                dc[j] = cplx(-2.0 * s * s, -std::sin(th)) * c[j];   // (exp(-i th) - 1) c_j
            }
            const cvec d = vecs_ * dc;
            const cmat delta = reduce(d, phi) + reduce(phi, d) + reduce(d, d);
            second += 2.0 * (rho0 * delta).trace().real() + (delta * delta).trace().real();
        }
        return -second / (step_ * step_);
    }

private:
    cmat h_;
    double step_;
    cmat vecs_;
    Eigen::VectorXd vals_;
};

} // namespace detail

/**
 * Scores tables by the mean initial second derivative of the linear
 * entanglement entropy of uniform row superpositions, optionally checked
 * against a central finite difference of the evolved entropy.
 */
class QbptScorer {
public:
    explicit QbptScorer(cmat h, double fd_step = 1e-4) : engine_(std::move(h), fd_step) {}

    const cmat& hamiltonian() const { return engine_.hamiltonian(); }

    QScore score(const BipartitionTable& t, bool with_fd) const {
        if (t.dim() != hamiltonian().rows()) throw DimensionMismatch("table and Hamiltonian dimensions differ");
        auto reduce = [&t](const cvec& a, const cvec& b) { return reduce_outer(t, a, b); };
        QScore out;
        double sum = 0.0;
        for (const auto& blk : t.blocks())
            for (int i = 0; i < blk.rows(); ++i) {
                cvec phi = cvec::Zero(t.dim());
                int w = 0;
                for (int k = 0; k < blk.cols(); ++k)
                    if (blk.height(k) > i) {
                        phi += blk.vector(i, k);
                        ++w;
                    }
                phi /= std::sqrt(static_cast<double>(w));
                RowRate rr{blk.q, i, engine_.analytic(reduce, phi), std::numeric_limits<double>::quiet_NaN()};
                if (with_fd) rr.finite_difference = engine_.finite_difference(reduce, phi);
                sum += rr.analytic;
                out.rows.push_back(rr);
            }
        if (out.rows.empty()) throw NonCompact("table has no rows");
        out.q = sum / static_cast<double>(out.rows.size());
        return out;
    }

private:
    detail::RateEngine engine_;
};

inline QScore score_qbpt(const SpinChain& chain, const BipartitionTable& t, bool with_fd = true) {
    return QbptScorer(chain.hamiltonian).score(t, with_fd);
}

/**
 * Same score for tables built from the product eigenbasis of a column
 * structure. Working with B^H H B, every table vector is a standard basis
 * vector, so reductions are plain index lookups.
 */
class ProductScorer {
public:
    ProductScorer(const SpinChain& chain, const ColumnStructure& cs, double fd_step = 1e-4)
        : engine_(cs.basis.adjoint() * chain.hamiltonian * cs.basis, fd_step) {
        if (chain.dim() != cs.dim()) throw DimensionMismatch("chain and column structure dimensions differ");
    }

    QScore score(const Sectors& sectors, const Alignment& al, bool with_fd) const {
        const IndexLayout layout = index_layout(sectors, al);
        auto reduce = [&layout](const cvec& a, const cvec& b) { return reduce_outer_indexed(layout, a, b); };
        const Eigen::Index dim = engine_.hamiltonian().rows();
        QScore out;
        double sum = 0.0;
        for (std::size_t q = 0; q < layout.size(); ++q) {
            std::size_t rows = 0;
            for (const auto& c : layout[q]) rows = std::max(rows, c.size());
            if (rows == 0) throw NonCompact("sector without states");
            for (std::size_t i = 0; i < rows; ++i) {
                cvec phi = cvec::Zero(dim);
                int w = 0;
                for (const auto& c : layout[q])
                    if (c.size() > i) {
                        phi[c[i]] = 1.0;
                        ++w;
                    }
                phi /= std::sqrt(static_cast<double>(w));
                RowRate rr{static_cast<int>(q), static_cast<int>(i), engine_.analytic(reduce, phi),
                           std::numeric_limits<double>::quiet_NaN()};
                if (with_fd) rr.finite_difference = engine_.finite_difference(reduce, phi);
                sum += rr.analytic;
                out.rows.push_back(rr);
            }
        }
        out.q = sum / static_cast<double>(out.rows.size());
        return out;
    }

private:
    detail::RateEngine engine_;
};

enum class FdCheck { none, sample, all };

struct ScanOptions {
    std::uint64_t cap = 1000000;
    unsigned workers = 0;            ///< 0 uses the hardware concurrency
    FdCheck fd_check = FdCheck::sample;
    std::size_t fd_samples = 10;
    std::uint64_t seed = 0;
    double fd_rel = 1e-5;
    /// Absolute floor of the finite-difference comparison; rows whose rate
    /// vanishes exactly are otherwise dominated by rounding in the stencil.
    double fd_abs = 1e-7;
    double class_tol = 1e-9;
    bool throw_on_fd_mismatch = true;
};

struct Candidate {
    std::size_t index = 0;
    std::vector<std::uint32_t> digits;   ///< lexicographic permutation rank per column
    double q = 0.0;
    int class_id = -1;
    int distinct_map_id = -1;
    bool fd_checked = false;
    double fd_ratio = 0.0;
};

struct ClassSummary {
    int id = 0;
    double q = 0.0;
    std::size_t entries = 0;
    std::size_t distinct_maps = 0;
};

struct ScanResult {
    std::uint64_t total = 0;
    std::vector<Candidate> candidates;   ///< sorted by Q descending, then index
    std::vector<ClassSummary> classes;   ///< class 0 has the highest Q
    std::vector<std::size_t> maximal_representatives;   ///< positions in candidates, one per distinct map
    std::size_t fd_checked = 0;
    double fd_worst_ratio = 0.0;
};

/// Product of h_k! saturated at cap + 1.
inline std::uint64_t alignment_count(const std::vector<int>& heights, std::uint64_t cap) {
    std::uint64_t total = 1;
    const std::uint64_t limit = cap == std::numeric_limits<std::uint64_t>::max() ? cap : cap + 1;
    for (int h : heights)
        for (int f = 2; f <= h; ++f) {
            if (total > limit / static_cast<std::uint64_t>(f)) return limit;
            total *= static_cast<std::uint64_t>(f);
        }
    return total;
}

inline std::uint64_t factorial(int n) {
    std::uint64_t f = 1;
    for (int k = 2; k <= n; ++k) f *= static_cast<std::uint64_t>(k);
    return f;
}

/// The rank-th permutation of items in lexicographic order.
inline std::vector<int> nth_permutation(std::vector<int> items, std::uint64_t rank) {
    std::vector<int> out;
    while (!items.empty()) {
        const std::uint64_t f = factorial(static_cast<int>(items.size()) - 1);
        const std::size_t j = static_cast<std::size_t>(rank / f);
        rank %= f;
        out.push_back(items[j]);
        items.erase(items.begin() + static_cast<std::ptrdiff_t>(j));
    }
    return out;
}

/// Mixed-radix decoding with the last column varying fastest.
inline std::vector<std::uint32_t> alignment_digits(const ColumnStructure& cs, std::uint64_t index) {
    std::vector<std::uint32_t> d(static_cast<std::size_t>(cs.columns()));
    for (int k = cs.columns() - 1; k >= 0; --k) {
        const std::uint64_t radix = factorial(static_cast<int>(cs.states[static_cast<std::size_t>(k)].size()));
        d[static_cast<std::size_t>(k)] = static_cast<std::uint32_t>(index % radix);
        index /= radix;
    }
    return d;
}

inline Alignment alignment_from_digits(const ColumnStructure& cs, const std::vector<std::uint32_t>& digits) {
    Alignment a;
    for (int k = 0; k < cs.columns(); ++k)
        a.push_back(nth_permutation(cs.states[static_cast<std::size_t>(k)], digits[static_cast<std::size_t>(k)]));
    return a;
}

/// Canonical reduction map: the sorted list of rows, each as a bitmask of states.
inline std::vector<std::uint64_t> canonical_map(const Sectors& sectors, const Alignment& al) {
    std::vector<std::uint64_t> rows;
    for (const auto& sec : sectors) {
        std::size_t height = 0;
        for (int k : sec) height = std::max(height, al[static_cast<std::size_t>(k)].size());
        for (std::size_t i = 0; i < height; ++i) {
            std::uint64_t mask = 0;
            for (int k : sec)
                if (al[static_cast<std::size_t>(k)].size() > i)
                    mask |= std::uint64_t{1} << al[static_cast<std::size_t>(k)][i];
            rows.push_back(mask);
        }
    }
    std::sort(rows.begin(), rows.end());
    return rows;
}

/// "a.b|c.d.e|..." with one group of state indices per column.
inline std::string encode_alignment(const Alignment& al) {
    std::string out;
    for (std::size_t k = 0; k < al.size(); ++k) {
        if (k) out += '|';
        for (std::size_t i = 0; i < al[k].size(); ++i) {
            if (i) out += '.';
            out += std::to_string(al[k][i]);
        }
    }
    return out;
}

/**
 * Enumerates every row alignment, scores it, groups scores into classes and
 * tables into distinct reduction maps. Scoring runs on worker threads and
 * results are merged by candidate index, so the output does not depend on
 * the worker count.
 */
inline ScanResult scan_alignments(const SpinChain& chain, const ColumnStructure& cs, const Sectors& sectors,
                                  const ScanOptions& opts = {}) {
    if (cs.dim() > 64) throw invalid_input("alignment scans support at most 64 basis states");
    const std::uint64_t total = alignment_count(cs.heights(), opts.cap);
    if (total > opts.cap) {
        // Report the exact count when it fits in 64 bits.
        std::uint64_t exact = alignment_count(cs.heights(), std::numeric_limits<std::uint64_t>::max() - 1);
        throw EnumerationTooLarge(exact, opts.cap);
    }
    ScanResult res;
    res.total = total;
    res.candidates.resize(static_cast<std::size_t>(total));

    std::vector<char> check(static_cast<std::size_t>(total), 0);
    if (opts.fd_check == FdCheck::all) {
        std::fill(check.begin(), check.end(), 1);
    } else if (opts.fd_check == FdCheck::sample) {
        std::vector<std::size_t> idx(static_cast<std::size_t>(total));
        std::iota(idx.begin(), idx.end(), 0);
        std::mt19937_64 rng(opts.seed);
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t i = 0; i < std::min(opts.fd_samples, idx.size()); ++i) check[idx[i]] = 1;
    }

    const ProductScorer scorer(chain, cs);
    unsigned workers = opts.workers ? opts.workers : std::max(1u, std::thread::hardware_concurrency());
    workers = static_cast<unsigned>(std::min<std::uint64_t>(workers, total));
    std::atomic<std::uint64_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&]() {
        try {
            for (;;) {
                const std::uint64_t i = next.fetch_add(1);
                if (i >= total) break;
                Candidate& c = res.candidates[static_cast<std::size_t>(i)];
                c.index = static_cast<std::size_t>(i);
                c.digits = alignment_digits(cs, i);
                const QScore s = scorer.score(sectors, alignment_from_digits(cs, c.digits),
                                              check[static_cast<std::size_t>(i)] != 0);
                c.q = s.q;
                if (check[static_cast<std::size_t>(i)]) {
                    c.fd_checked = true;
                    c.fd_ratio = s.fd_ratio(opts.fd_rel, opts.fd_abs);
                }
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next.store(total);
        }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);

    for (const auto& c : res.candidates)
        if (c.fd_checked) {
            ++res.fd_checked;
            res.fd_worst_ratio = std::max(res.fd_worst_ratio, c.fd_ratio);
        }
    if (opts.throw_on_fd_mismatch && res.fd_worst_ratio > 1.0)
        throw SpectralFailure("analytic and finite-difference entropy rates disagree (ratio " +
                              std::to_string(res.fd_worst_ratio) + ")");

    std::sort(res.candidates.begin(), res.candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.q != b.q) return a.q > b.q;
        return a.index < b.index;
    });
    std::map<std::vector<std::uint64_t>, int> map_ids;
    std::vector<std::map<int, std::size_t>> class_maps;
    for (std::size_t p = 0; p < res.candidates.size(); ++p) {
        Candidate& c = res.candidates[p];
        if (res.classes.empty() || res.classes.back().q - c.q > opts.class_tol) {
            res.classes.push_back(ClassSummary{static_cast<int>(res.classes.size()), c.q, 0, 0});
            class_maps.emplace_back();
        }
        c.class_id = res.classes.back().id;
        ++res.classes.back().entries;
        const auto key = canonical_map(sectors, alignment_from_digits(cs, c.digits));
        auto [it, inserted] = map_ids.emplace(key, static_cast<int>(map_ids.size()));
        c.distinct_map_id = it->second;
        if (class_maps.back().emplace(c.distinct_map_id, p).second) {
            ++res.classes.back().distinct_maps;
            if (c.class_id == 0) res.maximal_representatives.push_back(p);
        }
    }
    return res;
}

/// Everything produced by the variational pipeline for one (N, g).
struct PipelineResult {
    SpinChain chain;
    double g_crit = 0.0;
    CollectiveObservable observable;
    ColumnStructure columns;
    Sectors sectors;
    ScanResult scan;
};

inline PipelineResult run_ising_pipeline(int n, double g, Family family, const Tolerance& tol,
                                         const ScanOptions& scan_opts = {}, const MinimizeOptions& min_opts = {},
                                         IsingConvention convention = IsingConvention::spin_half) {
    PipelineResult r;
    r.chain = build_ising(n, g, convention);
    r.g_crit = gcrit(n);
    r.observable = compatibility_minimize(r.chain, family, min_opts);
    r.columns = columns_from_mc(r.observable, tol);
    r.sectors = detect_sectors(r.chain, r.columns, tol);
    r.scan = scan_alignments(r.chain, r.columns, r.sectors, scan_opts);
    return r;
}

} // namespace qbp::variational
