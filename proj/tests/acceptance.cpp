// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <qbp/bpt.hpp>
#include <qbp/irrep.hpp>
#include <qbp/models.hpp>
#include <qbp/variational.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "support/synthetic.hpp"

using namespace qbp;
namespace var = qbp::variational;

namespace {

// Pinned tolerances and runtime budgets.
constexpr double kToyResidual = 1e-9;
constexpr double kToyEntry = 1e-9;
constexpr double kToySeconds = 1.0;
constexpr double kCgTol = 1e-8;
constexpr double kSpinOrbitSeconds = 5.0;
constexpr double kCoherenceTol = 1e-10;
constexpr double kBoundPairSeconds = 5.0;
constexpr double kSyntheticResidual = 1e-8;
constexpr double kSyntheticSeconds = 60.0;
constexpr int kSyntheticCount = 50;
constexpr double kHypothesisRel = 1e-8;
constexpr double kClassGap = 1e-9;
constexpr double kScanSeconds = 30.0;
constexpr double kLabelTol = 1e-12;
constexpr double kFdStep = 1e-4;
constexpr double kFdRel = 1e-5;
constexpr double kFdAbsFloor = 1e-7;
constexpr double kPsdTol = 1e-10;
constexpr double kTraceTol = 1e-10;
constexpr double kBpoTol = 1e-12;
constexpr int kStatesPerTable = 200;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Thrown by require() so a criterion stops at its first failed check.
struct CheckFailed {
    std::string what;
};

void require(bool ok, const std::string& what) {
    if (!ok) throw CheckFailed{what};
}

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", x);
    return buf;
}

bool run(const char* id, const std::function<std::string()>& body) {
    const auto t0 = Clock::now();
    std::string detail;
    bool ok = true;
    try {
        detail = body();
    } catch (const CheckFailed& f) {
        ok = false;
        detail = f.what;
    } catch (const std::exception& e) {
        ok = false;
        detail = std::string("exception: ") + e.what();
    }
    std::printf("%s %s (%.2f s) %s\n", ok ? "PASS" : "FAIL", id, seconds_since(t0), detail.c_str());
    std::fflush(stdout);
    return ok;
}

std::vector<std::pair<int, int>> sorted_dims(std::vector<std::pair<int, int>> d) {
    std::sort(d.begin(), d.end());
    return d;
}

// ---------------------------------------------------------------- AC1

std::string ac1_toy() {
    const auto t0 = Clock::now();
    const auto g = models::toy(1.0, -1.0, 1.0, -1.0);
    const Tolerance tol = Tolerance::for_dim(g.dim);
    const IrrepBasis basis = irrep_decompose(g.matrices, tol);
    const VerificationReport rep = check_decomposition(basis, g.matrices, tol, g.names);
    const double elapsed = seconds_since(t0);

    require(sorted_dims(basis.block_dims()) == std::vector<std::pair<int, int>>{{2, 1}, {2, 1}, {2, 2}},
            "block dims differ from {(2,1),(2,1),(2,2)}");
    require(rep.max_residual <= kToyResidual, "residual " + fmt(rep.max_residual));
    require(elapsed < kToySeconds, "runtime " + fmt(elapsed) + " s");

    // Expected per-block (Z, X) forms: the 1x1 blocks carry (a, d) and (b, d);
    // the 2x2 block is Z = diag(a, b), X = [[(c+d)/2, (c-d)/2], [(c-d)/2, (c+d)/2]]
    // up to a unitary change of basis inside the block.
    std::multiset<std::pair<double, double>> small;
    for (std::size_t q = 0; q < basis.blocks.size(); ++q) {
        const cmat& z = rep.generators[0].block_matrices[q];
        const cmat& x = rep.generators[1].block_matrices[q];
        if (basis.blocks[q].cols == 1) {
            small.insert({std::round(z(0, 0).real()), std::round(x(0, 0).real())});
            require(std::abs(z(0, 0) - std::round(z(0, 0).real())) < kToyEntry, "small Z block not integral");
            require(std::abs(x(0, 0) - std::round(x(0, 0).real())) < kToyEntry, "small X block not integral");
            continue;
        }
        // Rotate to the Z eigenbasis, ascending, then compare X entries by modulus.
        Eigen::SelfAdjointEigenSolver<cmat> es(z);
        require(std::abs(es.eigenvalues()[0] + 1.0) < kToyEntry && std::abs(es.eigenvalues()[1] - 1.0) < kToyEntry,
                "large Z block spectrum is not {-1, 1}");
        const cmat xr = es.eigenvectors().adjoint() * x * es.eigenvectors();
        require(std::abs(xr(0, 0)) < kToyEntry && std::abs(xr(1, 1)) < kToyEntry, "large X block has a diagonal");
        require(std::abs(std::abs(xr(0, 1)) - 1.0) < kToyEntry, "large X block off-diagonal modulus is not 1");
    }
    require(small == std::multiset<std::pair<double, double>>{{1.0, -1.0}, {-1.0, -1.0}},
            "small blocks differ from (a,d), (b,d)");
    return "dims {(2,1),(2,1),(2,2)}, residual " + fmt(rep.max_residual);
}

// ---------------------------------------------------------------- AC2

Eigen::Index so_index(int l, double m_l, bool up) {
    return static_cast<Eigen::Index>(2 * (l - static_cast<int>(std::lround(m_l))) + (up ? 0 : 1));
}

std::string ac2_spin_orbit() {
    double worst_time = 0.0, worst_cg = 0.0;
    for (int l : {1, 2, 3}) {
        const auto t0 = Clock::now();
        const auto g = models::spin_orbit(l);
        const Tolerance tol = Tolerance::for_dim(g.dim);
        const IrrepBasis basis = irrep_decompose(g.matrices, tol);
        verify_decomposition(basis, g.matrices, tol, g.names);
        worst_time = std::max(worst_time, seconds_since(t0));
        require(sorted_dims(basis.block_dims()) == std::vector<std::pair<int, int>>{{1, 2 * l}, {1, 2 * l + 2}},
                "l=" + std::to_string(l) + ": block widths differ");
        if (l != 1) continue;
        const cmat& jz = g.matrices[0];
        for (const auto& blk : basis.blocks) {
            cmat span(g.dim, blk.cols);
            for (int k = 0; k < blk.cols; ++k) span.col(k) = blk.vector(0, k);
            Eigen::SelfAdjointEigenSolver<cmat> es(span.adjoint() * jz * span);
            const bool upper = blk.cols == 2 * l + 2;
            for (int k = 0; k < blk.cols; ++k) {
                const double mj = es.eigenvalues()[k];
                const cvec v = span * es.eigenvectors().col(k);
                const double lp = l + 0.5;
                const double up = std::abs(mj - 0.5) <= l ? std::abs(v[so_index(l, mj - 0.5, true)]) : 0.0;
                const double down = std::abs(mj + 0.5) <= l ? std::abs(v[so_index(l, mj + 0.5, false)]) : 0.0;
                const double eu = std::sqrt((upper ? lp + mj : lp - mj) / (2 * l + 1));
                const double ed = std::sqrt((upper ? lp - mj : lp + mj) / (2 * l + 1));
                worst_cg = std::max({worst_cg, std::abs(up - eu), std::abs(down - ed)});
            }
        }
    }
    require(worst_cg <= kCgTol, "Clebsch-Gordan deviation " + fmt(worst_cg));
    require(worst_time < kSpinOrbitSeconds, "runtime " + fmt(worst_time) + " s");
    return "widths 2l+2, 2l for l=1..3; CG deviation " + fmt(worst_cg);
}

// ---------------------------------------------------------------- AC3

std::string ac3_bound_pair() {
    testing::Rng rng(3);
    double worst = 0.0, worst_time = 0.0;
    for (int d : {3, 5, 8}) {
        const auto t0 = Clock::now();
        const auto g = models::bound_pair(d);
        const Tolerance tol = Tolerance::for_dim(g.dim);
        const IrrepBasis basis = irrep_decompose(g.matrices, tol);
        verify_decomposition(basis, g.matrices, tol, g.names);
        require(basis.block_dims() == std::vector<std::pair<int, int>>{{1, d}, {1, d}},
                "D=" + std::to_string(d) + ": expected two single-row blocks of width D");
        for (int trial = 0; trial < 20; ++trial) {
            const ReducedState red = reduce_algebra_state(testing::random_density(g.dim, rng), basis, tol);
            worst = std::max({worst, red.rho.topRightCorner(d, d).cwiseAbs().maxCoeff(),
                              red.rho.bottomLeftCorner(d, d).cwiseAbs().maxCoeff()});
        }
        worst_time = std::max(worst_time, seconds_since(t0));
    }
    require(worst <= kCoherenceTol, "inter-sector coherence " + fmt(worst));
    require(worst_time < kBoundPairSeconds, "runtime " + fmt(worst_time) + " s");
    return "D=3,5,8 give {(1,D),(1,D)}; max inter-sector coherence " + fmt(worst);
}

// ---------------------------------------------------------------- AC4

std::string ac4_synthetic() {
    const auto t0 = Clock::now();
    testing::Rng rng(4);
    double worst = 0.0;
    for (int i = 0; i < kSyntheticCount; ++i) {
        const auto s = testing::random_synthetic(rng, 12, 3);
        const Tolerance tol = Tolerance::for_dim(s.dim);
        const IrrepBasis basis = irrep_decompose(s.generators, tol);
        require(sorted_dims(basis.block_dims()) == s.planted_dims(), "case " + std::to_string(i) + ": block mismatch");
        const double r = check_decomposition(basis, s.generators, tol).max_residual;
        require(r <= kSyntheticResidual, "case " + std::to_string(i) + ": residual " + fmt(r));
        worst = std::max(worst, r);
    }
    const double elapsed = seconds_since(t0);
    require(elapsed < kSyntheticSeconds, "runtime " + fmt(elapsed) + " s");
    return std::to_string(kSyntheticCount) + " planted structures recovered; worst residual " + fmt(worst);
}

// ---------------------------------------------------------------- AC5

std::string ac5_transition() {
    const double inf = std::numeric_limits<double>::infinity();
    require(std::abs(var::gcrit(3) - std::sqrt(1.0 / 3.0)) < 1e-15, "gcrit(3)");
    require(std::abs(var::gcrit(4) - std::sqrt(3.0 / 8.0)) < 1e-15, "gcrit(4)");
    for (int n : {3, 4}) {
        const double gc = var::gcrit(n);
        const auto below = var::compatibility_minimize(var::build_ising(n, 0.9 * gc), var::Family::alpha_scan);
        const auto above = var::compatibility_minimize(var::build_ising(n, 1.1 * gc), var::Family::alpha_scan);
        require(below.alpha && *below.alpha == 0.0, "N=" + std::to_string(n) + ": argmin below gcrit is not 0");
        require(above.alpha && std::isinf(*above.alpha), "N=" + std::to_string(n) + ": argmin above gcrit is not inf");
    }

    testing::Rng rng(5);
    std::uniform_real_distribution<double> gd(0.1, 1.2), ad(0.0, 3.0);
    bool norm_ok = true, squared_ok = true;
    for (int s = 0; s < 10; ++s) {
        const int n = 3 + s % 2;
        const double g = gd(rng);
        const double alpha = s == 9 ? inf : ad(rng);
        const double direct =
            commutator_fnorm(var::build_ising(n, g).hamiltonian, var::alpha_observable(n, alpha).mc);
        const double formula = var::ising_commutator_formula(n, g, alpha);
        norm_ok = norm_ok && std::abs(direct - formula) <= kHypothesisRel * std::abs(formula);
        squared_ok = squared_ok && std::abs(direct * direct - formula) <= kHypothesisRel * std::abs(formula);
    }
    require(norm_ok != squared_ok, "hypotheses not exclusive (norm " + std::to_string(norm_ok) + ", squared-norm " +
                                       std::to_string(squared_ok) + ")");
    return std::string("argmin switches 0 -> inf at gcrit for N=3,4; matching hypothesis: ") +
           (squared_ok ? "squared-norm" : "norm");
}

// ---------------------------------------------------------------- AC6, AC7

int state_index(const std::string& bits) { return std::stoi(bits, nullptr, 2); }

std::vector<std::uint64_t> map_of(const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::uint64_t> out;
    for (const auto& row : rows) {
        std::uint64_t m = 0;
        for (const auto& s : row) m |= std::uint64_t{1} << state_index(s);
        out.push_back(m);
    }
    std::sort(out.begin(), out.end());
    return out;
}

var::ScanOptions scan_options() {
    var::ScanOptions o;
    o.workers = 1;
    return o;
}

std::string ac6_scan_below() {
    const auto t0 = Clock::now();
    const Tolerance tol = Tolerance::for_dim(8);
    const var::PipelineResult r = var::run_ising_pipeline(3, 0.5, var::Family::alpha_scan, tol, scan_options());
    const double elapsed = seconds_since(t0);
    require(r.scan.total == 36, "candidate count " + std::to_string(r.scan.total));
    require(r.scan.classes.size() == 3, "class count " + std::to_string(r.scan.classes.size()));
    double gap = std::numeric_limits<double>::infinity();
    for (std::size_t c = 1; c < r.scan.classes.size(); ++c)
        gap = std::min(gap, r.scan.classes[c - 1].q - r.scan.classes[c].q);
    require(gap > kClassGap, "class gap " + fmt(gap));
    require(r.scan.classes[0].entries == 12, "maximal class entries " + std::to_string(r.scan.classes[0].entries));
    require(r.scan.classes[0].distinct_maps == 6, "maximal class maps " + std::to_string(r.scan.classes[0].distinct_maps));

    std::set<std::vector<std::uint64_t>> maps;
    for (const auto& c : r.scan.candidates)
        if (c.class_id == 0) maps.insert(var::canonical_map(r.sectors, var::alignment_from_digits(r.columns, c.digits)));
    const std::set<std::vector<std::uint64_t>> expected = {
        map_of({{"000", "001", "011", "111"}, {"010", "110"}, {"100", "101"}}),
        map_of({{"000", "010", "011", "111"}, {"001", "101"}, {"100", "110"}}),
        map_of({{"000", "100", "101", "111"}, {"001", "011"}, {"010", "110"}}),
        map_of({{"000", "001", "101", "111"}, {"010", "011"}, {"100", "110"}}),
        map_of({{"000", "010", "110", "111"}, {"001", "011"}, {"100", "101"}}),
        map_of({{"000", "100", "110", "111"}, {"001", "101"}, {"010", "011"}}),
    };
    require(maps == expected, "maximal maps differ from the six reference tables");
    require(elapsed < kScanSeconds, "runtime " + fmt(elapsed) + " s");
    return "36 candidates, 3 classes (min gap " + fmt(gap) + "), 12 maximal entries -> 6 reference maps";
}

std::string ac7_scan_above() {
    const auto t0 = Clock::now();
    const Tolerance tol = Tolerance::for_dim(8);
    const var::PipelineResult r = var::run_ising_pipeline(3, 0.7, var::Family::alpha_scan, tol, scan_options());
    const double elapsed = seconds_since(t0);
    require(r.observable.alpha && std::isinf(*r.observable.alpha), "observable is not the x-basis one");
    require(r.columns.heights() == std::vector<int>{1, 3, 3, 1}, "column heights differ from [1,3,3,1]");
    require(r.sectors.size() == 2, "sector count " + std::to_string(r.sectors.size()));
    std::set<std::set<double>> labels;
    for (const auto& sec : r.sectors) {
        std::set<double> ls;
        for (int k : sec) {
            const double l = r.columns.labels[static_cast<std::size_t>(k)];
            const double half = std::round(2.0 * l) / 2.0;
            require(std::abs(l - half) <= kLabelTol, "label " + fmt(l) + " is not a half-integer");
            ls.insert(half);
        }
        labels.insert(ls);
    }
    require(labels == std::set<std::set<double>>{{-1.5, 0.5}, {-0.5, 1.5}}, "sector labels differ");
    require(r.scan.maximal_representatives.size() == 1,
            "maximal maps " + std::to_string(r.scan.maximal_representatives.size()));
    require(elapsed < kScanSeconds, "runtime " + fmt(elapsed) + " s");
    return "heights [1,3,3,1], sectors {-3/2,+1/2} {-1/2,+3/2}, unique maximal map";
}

// ---------------------------------------------------------------- AC8

struct FdSummary {
    std::size_t rows = 0;
    std::size_t floored = 0;
    double worst_rel = 0.0;     ///< over rows with |rate| above the floor
    double worst_floor = 0.0;   ///< |analytic - fd| over rows below the floor
};

void fd_rescore(double g, FdSummary& s) {
    const Tolerance tol = Tolerance::for_dim(8);
    var::ScanOptions o = scan_options();
    o.fd_check = var::FdCheck::all;
    o.fd_rel = kFdRel;
    o.fd_abs = kFdAbsFloor;
    o.throw_on_fd_mismatch = false;
    const var::PipelineResult r = var::run_ising_pipeline(3, g, var::Family::alpha_scan, tol, o);
    const var::ProductScorer scorer(r.chain, r.columns, kFdStep);
    for (const auto& c : r.scan.candidates) {
        const var::QScore q = scorer.score(r.sectors, var::alignment_from_digits(r.columns, c.digits), true);
        for (const auto& row : q.rows) {
            ++s.rows;
            const double scale = std::max(std::abs(row.analytic), std::abs(row.finite_difference));
            const double diff = std::abs(row.analytic - row.finite_difference);
            if (scale > kFdAbsFloor / kFdRel) {
                s.worst_rel = std::max(s.worst_rel, diff / scale);
            } else {
                ++s.floored;
                s.worst_floor = std::max(s.worst_floor, diff);
            }
        }
    }
}

std::string ac8_finite_difference() {
    FdSummary s;
    fd_rescore(0.5, s);
    fd_rescore(0.7, s);
    require(s.worst_rel <= kFdRel, "worst relative deviation " + fmt(s.worst_rel));
    require(s.worst_floor <= kFdAbsFloor, "near-zero rows deviate by " + fmt(s.worst_floor));
    return std::to_string(s.rows) + " rows, worst relative " + fmt(s.worst_rel) + "; " + std::to_string(s.floored) +
           " near-zero rows within abs " + fmt(kFdAbsFloor) + " (worst " + fmt(s.worst_floor) + ")";
}

// ---------------------------------------------------------------- AC9

cvec unit(Eigen::Index dim, Eigen::Index i) { return models::detail::basis_vector(dim, i); }

BipartitionTable six_dim_table() {
    const auto e = [](int one_based) { return std::optional<cvec>(unit(6, one_based - 1)); };
    std::vector<std::vector<std::optional<cvec>>> grid = {
        {e(1), e(2), e(3)},
        {e(4), e(5), std::nullopt},
        {std::nullopt, e(6), std::nullopt},
    };
    return BipartitionTable::from_grid(6, 0, grid, {"a", "b", "c"}, Tolerance::for_dim(6));
}

BipartitionTable table_of(const models::GeneratorSet& g) {
    const Tolerance tol = Tolerance::for_dim(g.dim);
    return BipartitionTable::from_irrep_basis(irrep_decompose(g.matrices, tol), tol);
}

BipartitionTable ising_candidate_table() {
    const Tolerance tol = Tolerance::for_dim(8);
    const var::ColumnStructure cs = var::columns_from_mc(var::alpha_observable(3, 0.0), tol);
    const var::Sectors sec = var::detect_sectors(var::build_ising(3, 0.5), cs, tol);
    return var::candidate_table(cs, sec, var::alignment_from_digits(cs, var::alignment_digits(cs, 7)), tol);
}

std::string ac9_reduction_properties() {
    const std::vector<std::pair<std::string, BipartitionTable>> tables = {
        {"toy", table_of(models::toy())},
        {"two-spin", models::two_spin_table(Tolerance::for_dim(4))},
        {"six-dim", six_dim_table()},
        {"spin-orbit l=1", table_of(models::spin_orbit(1))},
        {"bound pair D=5", table_of(models::bound_pair(5))},
        {"Ising N=3 candidate", ising_candidate_table()},
    };
    testing::Rng rng(9);
    double min_eig = std::numeric_limits<double>::infinity(), trace_err = 0.0, bpo_err = 0.0;
    for (const auto& [name, t] : tables) {
        std::vector<int> off;
        int o = 0;
        for (const auto& b : t.blocks()) {
            off.push_back(o);
            o += b.cols();
        }
        const auto ops = bpos(t);
        const bool full = t.covered_dim() == t.dim();
        for (int trial = 0; trial < kStatesPerTable; ++trial) {
            const cmat rho = testing::random_density(t.dim(), rng);
            const ReducedState red = reduce_partial_state(rho, t);
            Eigen::SelfAdjointEigenSolver<cmat> es(red.rho);
            min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
            if (full) trace_err = std::max(trace_err, std::abs(red.rho.trace().real() - rho.trace().real()));
            for (const auto& s : ops) {
                std::size_t q = 0;
                while (t.blocks()[q].q != s.q) ++q;
                const cplx lhs = (s.op * rho).trace();
                const cplx rhs = red.rho(off[q] + s.l, off[q] + s.k);
                bpo_err = std::max(bpo_err, std::abs(lhs - rhs));
            }
        }
        require(min_eig >= -kPsdTol, name + ": min eigenvalue " + fmt(min_eig));
        require(trace_err <= kTraceTol, name + ": trace error " + fmt(trace_err));
        require(bpo_err <= kBpoTol, name + ": BPO consistency error " + fmt(bpo_err));
    }
    return std::to_string(tables.size()) + " tables x " + std::to_string(kStatesPerTable) + " states; min eig " +
           fmt(min_eig) + ", trace err " + fmt(trace_err) + ", BPO err " + fmt(bpo_err);
}

} // namespace

int main() {
    int failures = 0;
    const std::vector<std::pair<const char*, std::function<std::string()>>> criteria = {
        {"AC1", ac1_toy},
        {"AC2", ac2_spin_orbit},
        {"AC3", ac3_bound_pair},
        {"AC4", ac4_synthetic},
        {"AC5", ac5_transition},
        {"AC6", ac6_scan_below},
        {"AC7", ac7_scan_above},
        {"AC8", ac8_finite_difference},
        {"AC9", ac9_reduction_properties},
    };
    for (const auto& [id, body] : criteria)
        if (!run(id, body)) ++failures;
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
