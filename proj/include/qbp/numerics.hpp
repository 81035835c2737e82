#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "errors.hpp"

namespace qbp {

using cplx = std::complex<double>;
using cmat = Eigen::MatrixXcd;
using cvec = Eigen::VectorXcd;

/**
 * Tolerance policy shared by every stage of the pipeline.
 *
 * eps_zero is the threshold for "this matrix or norm vanishes", eps_eig the
 * single-linkage radius used to group eigenvalues, eps_prop the residual
 * allowed when testing proportionality of operators.
 */
struct Tolerance {
    double eps_zero = 1e-10;
    double eps_eig = 1e-8;
    double eps_prop = 1e-8;

    /// Defaults for a given Hilbert-space dimension.
    static Tolerance for_dim(Eigen::Index dim) {
        Tolerance t;
        t.eps_zero = 1e-10 * static_cast<double>(std::max<Eigen::Index>(dim, 1));
        t.eps_eig = std::max(1e-8, t.eps_zero);
        t.eps_prop = 1e-8;
        return t;
    }

    void validate() const {
        if (!(eps_zero > 0) || !(eps_eig > 0) || !(eps_prop > 0))
            throw invalid_input("tolerances must be strictly positive");
        if (eps_eig < eps_zero)
            throw invalid_input("eps_eig must not be smaller than eps_zero");
    }
};

inline cmat adjoint(const cmat& m) { return m.adjoint(); }

inline double fnorm(const cmat& m) { return m.norm(); }

inline void require_square(const cmat& m, const char* what) {
    if (m.rows() != m.cols())
        throw DimensionMismatch(std::string(what) + ": matrix is not square");
    if (m.rows() == 0)
        throw DimensionMismatch(std::string(what) + ": matrix is empty");
    if (!m.allFinite())
        throw invalid_input(std::string(what) + ": matrix has non-finite entries");
}

inline void require_same_dim(const cmat& a, const cmat& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw DimensionMismatch(std::string(what) + ": dimension mismatch (" +
                                std::to_string(a.rows()) + " vs " + std::to_string(b.rows()) + ")");
}

inline cmat hermitian_part(const cmat& m) { return 0.5 * (m + m.adjoint()); }

inline double hermiticity_residual(const cmat& m) { return (m - m.adjoint()).norm(); }

inline cmat commutator(const cmat& a, const cmat& b) {
    require_same_dim(a, b, "commutator");
    return a * b - b * a;
}

/// Frobenius norm of ab - ba.
inline double commutator_fnorm(const cmat& a, const cmat& b) { return commutator(a, b).norm(); }

inline bool is_projection(const cmat& p, const Tolerance& tol) {
    if (p.rows() != p.cols()) return false;
    return (p - p.adjoint()).norm() <= tol.eps_zero && (p * p - p).norm() <= tol.eps_zero;
}

/// True iff S S^H and S^H S both pass is_projection.
inline bool is_partial_isometry(const cmat& s, const Tolerance& tol) {
    if (s.rows() != s.cols()) return false;
    return is_projection(s * s.adjoint(), tol) && is_projection(s.adjoint() * s, tol);
}

/// Integer rank of a projection from its trace; a trace further than 0.01
/// from an integer means the input was not a projection.
inline int projection_rank(const cmat& p) {
    const double tr = p.trace().real();
    const double r = std::round(tr);
    if (std::abs(tr - r) > 0.01)
        throw SpectralFailure("projection trace " + std::to_string(tr) + " is not close to an integer");
    return static_cast<int>(r);
}

/// Least-squares scalar c with a ~ c*b, and the residual ||a - c b||_F.
struct ProportionalityFit {
    cplx c{0.0, 0.0};
    double residual = 0.0;
};

inline ProportionalityFit fit_proportional(const cmat& a, const cmat& b) {
    require_same_dim(a, b, "fit_proportional");
    ProportionalityFit fit;
    const double bb = b.squaredNorm();
    if (bb == 0.0) {
        fit.residual = a.norm();
        return fit;
    }
    fit.c = (b.adjoint() * a).trace() / bb;
    fit.residual = (a - fit.c * b).norm();
    return fit;
}

/// Scale v so that its first entry of magnitude above eps is real positive.
inline void fix_phase(Eigen::Ref<cvec> v, double eps) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double a = std::abs(v[i]);
        if (a > eps) {
            v *= std::conj(v[i]) / a;
            v[i] = cplx(a, 0.0);
            return;
        }
    }
}

/**
 * Deterministic orthonormal basis (as columns) of the range of a projection.
 *
 * Ordered Gram-Schmidt over the columns P e_1, P e_2, ...; a column is accepted
 * once its residual squared norm exceeds 1/(2 dim). Since the residual columns
 * of the remaining projection have squared norms summing to its rank, such a
 * column always exists until the rank is exhausted. The result depends only on
 * P, not on how P was computed.
 */
inline cmat canonical_basis(const cmat& p, int rank, double eps_phase) {
    const Eigen::Index n = p.rows();
    cmat basis(n, rank);
    int found = 0;
    const double threshold = 0.5 / static_cast<double>(n);
    for (Eigen::Index j = 0; j < n && found < rank; ++j) {
        cvec r = p.col(j);
        for (int pass = 0; pass < 2; ++pass)
            for (int k = 0; k < found; ++k) r -= basis.col(k) * basis.col(k).dot(r);
        const double nr2 = r.squaredNorm();
        if (nr2 > threshold) {
            r /= std::sqrt(nr2);
            fix_phase(r, eps_phase);
            basis.col(found++) = r;
        }
    }
    if (found != rank)
        throw SpectralFailure("could not extract " + std::to_string(rank) +
                              " orthonormal vectors from projection (found " + std::to_string(found) + ")");
    return basis;
}

struct SpectralCluster {
    double value = 0.0;
    cmat projection;
    int rank = 0;
    cmat basis;   ///< dim x rank, canonical orthonormal columns
};

/**
 * Eigenvalue clusters of a Hermitian matrix. Nonzero clusters are sorted by
 * ascending eigenvalue; the cluster with |lambda| <= eps_eig is kept apart.
 */
struct SpectralForm {
    Eigen::Index dim = 0;
    std::vector<SpectralCluster> clusters;
    cmat zero_projection;
    int zero_rank = 0;

    cmat reconstruct() const {
        cmat m = cmat::Zero(dim, dim);
        for (const auto& c : clusters) m += c.value * c.projection;
        return m;
    }
};

inline SpectralForm spectral_decompose(const cmat& m, const Tolerance& tol) {
    require_square(m, "spectral_decompose");
    const Eigen::Index n = m.rows();
    const double herm = hermiticity_residual(m);
    if (herm > tol.eps_zero * static_cast<double>(n)) throw NotHermitian(herm);

    Eigen::SelfAdjointEigenSolver<cmat> es(hermitian_part(m));
    if (es.info() != Eigen::Success) throw EigFailure("Hermitian eigensolver did not converge");
    const Eigen::VectorXd& w = es.eigenvalues();   // ascending
    const cmat& v = es.eigenvectors();

    SpectralForm out;
    out.dim = n;
    out.zero_projection = cmat::Zero(n, n);

    auto emit = [&](Eigen::Index begin, Eigen::Index end, bool zero) {
        if (begin >= end) return;
        const cmat vs = v.middleCols(begin, end - begin);
        const cmat p = vs * vs.adjoint();
        const int rank = static_cast<int>(end - begin);
        if (zero) {
            out.zero_rank = rank;
            const cmat b = canonical_basis(p, rank, tol.eps_zero);
            out.zero_projection = b * b.adjoint();
            return;
        }
        SpectralCluster c;
        c.value = w.segment(begin, end - begin).mean();
        c.rank = rank;
        c.basis = canonical_basis(p, rank, tol.eps_zero);
        c.projection = c.basis * c.basis.adjoint();
        out.clusters.push_back(std::move(c));
    };

    // Split into negative, zero and positive ranges, then single-linkage
    // clustering inside the nonzero ranges.
    Eigen::Index z0 = 0;
    while (z0 < n && w[z0] < -tol.eps_eig) ++z0;
    Eigen::Index z1 = z0;
    while (z1 < n && w[z1] <= tol.eps_eig) ++z1;

    auto cluster_range = [&](Eigen::Index begin, Eigen::Index end) {
        Eigen::Index start = begin;
        for (Eigen::Index i = begin + 1; i <= end; ++i) {
            if (i == end || w[i] - w[i - 1] > tol.eps_eig) {
                emit(start, i, false);
                start = i;
            }
        }
    };
    cluster_range(0, z0);
    emit(z0, z1, true);
    cluster_range(z1, n);
    return out;
}

/// Projections onto the nonzero eigenspaces of a Hermitian matrix.
inline std::vector<cmat> spectral_projections(const cmat& m, const Tolerance& tol) {
    std::vector<cmat> out;
    for (auto& c : spectral_decompose(m, tol).clusters) out.push_back(std::move(c.projection));
    return out;
}

/// Re-projects a numerically near-projection onto its eigenvalue-one
/// eigenspace, so that long scattering chains do not accumulate drift.
inline cmat purify_projection(const cmat& p, const Tolerance& tol) {
    const int rank = projection_rank(hermitian_part(p));
    if (rank == 0) return cmat::Zero(p.rows(), p.cols());
    Eigen::SelfAdjointEigenSolver<cmat> es(hermitian_part(p));
    if (es.info() != Eigen::Success) throw EigFailure("eigensolver failed while purifying a projection");
    const cmat vs = es.eigenvectors().rightCols(rank);
    const cmat b = canonical_basis(vs * vs.adjoint(), rank, tol.eps_zero);
    return b * b.adjoint();
}

/// Kronecker product of dense complex matrices.
inline cmat kron(const cmat& a, const cmat& b) {
    cmat out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

} // namespace qbp
