#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "bpt.hpp"
#include "numerics.hpp"

namespace qbp::models {

/// A named list of Hermitian generators on a common dimension.
struct GeneratorSet {
    Eigen::Index dim = 0;
    std::vector<std::string> names;
    std::vector<cmat> matrices;
};

namespace detail {

inline cvec basis_vector(Eigen::Index dim, Eigen::Index i) {
    cvec v = cvec::Zero(dim);
    v[i] = 1.0;
    return v;
}

inline cmat ket_bra(const cvec& a, const cvec& b) { return a * b.adjoint(); }

} // namespace detail

/// Projections of the 8-dimensional example, basis |1>..|8> stored at 0..7.
struct ToyProjections {
    cmat z1, z2, x1, x2;
};

inline ToyProjections toy_projections() {
    using detail::basis_vector;
    const Eigen::Index n = 8;
    ToyProjections t;
    t.z1 = cmat::Zero(n, n);
    for (int i = 0; i < 4; ++i) t.z1(i, i) = 1.0;
    t.z2 = cmat::Identity(n, n) - t.z1;
    const cvec p37 = (basis_vector(n, 2) + basis_vector(n, 6)) / std::sqrt(2.0);
    const cvec p1256 = (basis_vector(n, 0) + basis_vector(n, 1) + basis_vector(n, 4) + basis_vector(n, 5)) / 2.0;
    t.x1 = p37 * p37.adjoint() + p1256 * p1256.adjoint();
    t.x2 = cmat::Identity(n, n) - t.x1;
    return t;
}

/// Z = a Pi_Z1 + b Pi_Z2 and X = c Pi_X1 + d Pi_X2.
inline GeneratorSet toy(double a = 1.0, double b = -1.0, double c = 1.0, double d = -1.0) {
    const ToyProjections t = toy_projections();
    GeneratorSet g;
    g.dim = 8;
    g.names = {"Z", "X"};
    g.matrices = {a * t.z1 + b * t.z2, c * t.x1 + d * t.x2};
    return g;
}

/// Spin-j operators (z, x) in the basis m = j, j-1, ..., -j; twice_j = 2j.
inline std::pair<cmat, cmat> spin_operators(int twice_j) {
    const Eigen::Index n = twice_j + 1;
    const double j = twice_j / 2.0;
    cmat jz = cmat::Zero(n, n), jp = cmat::Zero(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const double m = j - static_cast<double>(r);
        jz(r, r) = m;
        if (r > 0) jp(r - 1, r) = std::sqrt(j * (j + 1) - m * (m + 1));   // J+ |m> -> |m+1>
    }
    const cmat jx = 0.5 * (jp + jp.adjoint());
    return {jz, jx};
}

/**
 * J_z and J_x of a particle with orbital angular momentum l and spin 1/2,
 * on the product basis |m_l> (x) |m_s>, m_l = l..-l, m_s = +1/2, -1/2.
 */
inline GeneratorSet spin_orbit(int l) {
    if (l < 1) throw invalid_input("spin-orbit example requires l >= 1");
    const auto [lz, lx] = spin_operators(2 * l);
    const auto [sz, sx] = spin_operators(1);
    const cmat il = cmat::Identity(lz.rows(), lz.cols());
    const cmat is = cmat::Identity(2, 2);
    GeneratorSet g;
    g.dim = 2 * (2 * l + 1);
    g.names = {"Jz", "Jx"};
    g.matrices = {kron(lz, is) + kron(il, sz), kron(lx, is) + kron(il, sx)};
    return g;
}

/**
 * Bound pair on a periodic lattice of length D, restricted to the 2D
 * configurations |n, n+1> (index 2n) and |n+1, n> (index 2n+1).
 *
 * The position generators are the rank-2 projections Pi_x;n. The momentum
 * generators are the two-particle momentum projections Pi_p;m compressed onto
 * this bound subspace; they are Hermitian but not projections, and their
 * spectral projections separate the exchange-symmetric and antisymmetric
 * configurations whenever cos(2 pi / D) != 0.
 */
inline GeneratorSet bound_pair(int D) {
    if (D < 3) throw invalid_input("bound-pair example requires D >= 3");
    const Eigen::Index n = 2 * D;
    auto idx = [D](int a, int b) -> Eigen::Index {
        a = ((a % D) + D) % D;
        b = ((b % D) + D) % D;
        if (b == (a + 1) % D) return 2 * a;
        if (a == (b + 1) % D) return 2 * b + 1;
        return -1;
    };
    GeneratorSet g;
    g.dim = n;
    for (int k = 0; k < D; ++k) {
        cmat p = cmat::Zero(n, n);
        p(2 * k, 2 * k) = 1.0;
        p(2 * k + 1, 2 * k + 1) = 1.0;
        g.names.push_back("Pi_x_" + std::to_string(k));
        g.matrices.push_back(p);
    }
    const double two_pi = 2.0 * std::numbers::pi;
    for (int m = 0; m < D; ++m) {
        // Components of |p; m1, m2> on the bound configurations.
        auto momentum = [&](int m1, int m2) {
            cvec v = cvec::Zero(n);
            for (int a = 0; a < D; ++a)
                for (int b : {a + 1, a - 1}) {
                    const Eigen::Index i = idx(a, b);
                    const int bb = ((b % D) + D) % D;
                    v[i] = std::polar(1.0 / D, two_pi * (m1 * a + m2 * bb) / D);
                }
            return v;
        };
        const cvec u = momentum(m, m + 1);
        const cvec w = momentum(m + 1, m);
        g.names.push_back("Kp_" + std::to_string(m));
        g.matrices.push_back(u * u.adjoint() + w * w.adjoint());
    }
    return g;
}

/// Two spin-1/2 particles: computational basis |00>,|01>,|10>,|11>, where
/// |1> is spin up. Generators are the total S_z and S_x.
inline GeneratorSet two_spin_total() {
    cmat sz(2, 2), sx(2, 2);
    sz << -0.5, 0.0, 0.0, 0.5;
    sx << 0.0, 0.5, 0.5, 0.0;
    const cmat id = cmat::Identity(2, 2);
    GeneratorSet g;
    g.dim = 4;
    g.names = {"Sz_tot", "Sx_tot"};
    g.matrices = {kron(sz, id) + kron(id, sz), kron(sx, id) + kron(id, sx)};
    return g;
}

/// Total-spin states |S_z, mu> of two spins in the computational basis.
struct TwoSpinStates {
    cvec up_t, zero_t, zero_s, down_t;
};

inline TwoSpinStates two_spin_states() {
    using detail::basis_vector;
    TwoSpinStates s;
    s.up_t = basis_vector(4, 3);
    s.down_t = basis_vector(4, 0);
    s.zero_t = (basis_vector(4, 1) + basis_vector(4, 2)) / std::sqrt(2.0);
    s.zero_s = (basis_vector(4, 1) - basis_vector(4, 2)) / std::sqrt(2.0);
    return s;
}

/// Partial bipartition with columns S_z = +1, 0, -1; triplets in the first
/// row and the singlet below |0,t>.
inline BipartitionTable two_spin_table(const Tolerance& tol) {
    const TwoSpinStates s = two_spin_states();
    std::vector<std::vector<std::optional<cvec>>> grid = {
        {s.up_t, s.zero_t, s.down_t},
        {std::nullopt, s.zero_s, std::nullopt},
    };
    return BipartitionTable::from_grid(4, 0, grid, {"+1", "0", "-1"}, tol);
}

} // namespace qbp::models
