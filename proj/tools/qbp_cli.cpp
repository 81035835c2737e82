// qbp: command-line front end for irrep decomposition, bipartition-table
// state reduction and the Ising coarse-graining scan.
//
// Exit codes: 0 success, 2 bad arguments or input files, 3 numerical
// failure, 4 verification failure.

#include <CLI11.hpp>

#include <qbp/io.hpp>
#include <qbp/irrep.hpp>
#include <qbp/models.hpp>
#include <qbp/variational.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace {

namespace fs = std::filesystem;
using namespace qbp;

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitVerification = 4;

struct GlobalOptions {
    std::optional<double> tol_zero, tol_eig, tol_prop;
    std::uint64_t seed = 0;
    unsigned workers = 0;
    std::uint64_t cap = 1000000;
    bool debug_network = false;
    std::string out;
};

Tolerance tolerance_for(const GlobalOptions& g, Eigen::Index dim) {
    Tolerance t = Tolerance::for_dim(dim);
    if (g.tol_zero) t.eps_zero = *g.tol_zero;
    if (g.tol_eig) t.eps_eig = *g.tol_eig;
    else t.eps_eig = std::max(t.eps_eig, t.eps_zero);
    if (g.tol_prop) t.eps_prop = *g.tol_prop;
    t.validate();
    return t;
}

/// --out, falling back to QBP_OUT_DIR; empty means "no output directory".
std::string output_dir(const GlobalOptions& g) {
    if (!g.out.empty()) return g.out;
    if (const char* env = std::getenv("QBP_OUT_DIR")) return env;
    return {};
}

std::string prepare_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw invalid_input("cannot create output directory '" + dir + "': " + ec.message());
    return dir;
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

std::string fmt(double x) { return io::format_double(x); }

// ---------------------------------------------------------------- decompose

int cmd_decompose(const GlobalOptions& g, const std::string& input) {
    const models::GeneratorSet gens = io::parse_generators(io::read_json_file(input));
    const Tolerance tol = tolerance_for(g, gens.dim);
    std::ostringstream trace;
    DecomposeOptions opts;
    if (g.debug_network) opts.dump = &trace;
    const IrrepBasis basis = irrep_decompose(gens.matrices, tol, opts);
    const VerificationReport rep = check_decomposition(basis, gens.matrices, tol, gens.names);

    if (g.debug_network) std::cout << "network trace\n" << trace.str() << "end trace\n";
    std::cout << "dim " << gens.dim << "\n";
    std::cout << "generators " << gens.matrices.size() << "\n";
    std::cout << "blocks " << basis.blocks.size() << "\n";
    std::cout << "block_dims";
    for (auto [r, n] : basis.block_dims()) std::cout << " (" << r << "," << n << ")";
    std::cout << "\n";
    std::cout << "h0_dim " << basis.null_basis.cols() << "\n";
    for (const auto& r : rep.generators)
        std::cout << "residual " << r.name << " off_block " << fmt(r.off_block) << " in_block " << fmt(r.in_block)
                  << " null_leak " << fmt(r.null_leak) << "\n";
    std::cout << "max_residual " << fmt(rep.max_residual) << "\n";
    std::cout << "verification " << (rep.passed ? "passed" : "FAILED") << "\n";

    const std::string dir = output_dir(g);
    if (!dir.empty()) {
        prepare_dir(dir);
        io::json b = io::table_json(BipartitionTable::from_irrep_basis(basis, tol));
        io::json nulls = io::json::array();
        for (Eigen::Index c = 0; c < basis.null_basis.cols(); ++c)
            nulls.push_back(io::detail::vector_json(basis.null_basis.col(c)));
        b["null_basis"] = std::move(nulls);
        io::write_json_file(join(dir, "basis.json"), b);
        io::json report = io::verification_json(rep);
        io::json dims = io::json::array();
        for (auto [r, n] : basis.block_dims()) dims.push_back(io::json{{"rows", r}, {"cols", n}});
        report["block_dims"] = std::move(dims);
        report["h0_dim"] = basis.null_basis.cols();
        io::write_json_file(join(dir, "report.json"), report);
        if (g.debug_network) io::write_text_file(join(dir, "network_trace.txt"), trace.str());
    }
    return rep.passed ? kExitOk : kExitVerification;
}

// ------------------------------------------------------------------ example

int cmd_example(const GlobalOptions& g, const std::string& name, const std::optional<int>& param) {
    models::GeneratorSet gens;
    std::string file = name;
    if (name == "toy") {
        gens = models::toy();
    } else if (name == "spin-orbit") {
        if (!param) throw invalid_input("spin-orbit needs the orbital quantum number l");
        gens = models::spin_orbit(*param);
        file += "-" + std::to_string(*param);
    } else if (name == "bound-pair") {
        if (!param) throw invalid_input("bound-pair needs the lattice length D");
        gens = models::bound_pair(*param);
        file += "-" + std::to_string(*param);
    } else if (name == "two-spin-total") {
        gens = models::two_spin_total();
    } else {
        throw invalid_input("unknown example '" + name + "'");
    }
    std::string dir = output_dir(g);
    if (dir.empty()) dir = ".";
    prepare_dir(dir);
    const std::string path = join(dir, file + ".json");
    io::write_json_file(path, io::generators_json(gens));
    std::cout << "generators " << path << "\n";
    if (name == "two-spin-total") {
        const std::string tpath = join(dir, "two-spin-table.json");
        io::write_json_file(tpath, io::table_json(models::two_spin_table(tolerance_for(g, gens.dim))));
        std::cout << "table " << tpath << "\n";
    }
    return kExitOk;
}

// ------------------------------------------------------------------- reduce

int cmd_reduce(const GlobalOptions& g, const std::string& rho_path, const std::string& table_path,
               const std::string& mode) {
    const models::GeneratorSet rho_file = io::parse_generators(io::read_json_file(rho_path));
    if (rho_file.matrices.size() != 1)
        throw io::ParseError("density-matrix file must hold exactly one matrix");
    const Tolerance tol = tolerance_for(g, rho_file.dim);
    const BipartitionTable table = io::parse_table(io::read_json_file(table_path), tol);
    if (mode == "algebra" && !table.rectangular())
        throw NotRectangular("algebra reduction needs a rectangular (Wedderburn) table");
    const ReducedState r = reduce_partial_state(rho_file.matrices.front(), table);
    const io::json out = io::reduced_state_json(r);
    const std::string dir = output_dir(g);
    if (dir.empty()) {
        std::cout << out.dump(2) << "\n";
    } else {
        prepare_dir(dir);
        const std::string path = join(dir, "reduced.json");
        io::write_json_file(path, out);
        std::cout << "reduced " << path << "\n";
        std::cout << "trace_deficit " << fmt(r.trace_deficit) << "\n";
    }
    return kExitOk;
}

// --------------------------------------------------------------- ising-scan

struct ScanArgs {
    int n = 3;
    double g = 0.5;
    std::string family = "alpha";
    std::string convention = "spin-half";
    std::string fd_check = "sample";
    int max_n = 12;
};

void print_table(std::ostream& os, const variational::ColumnStructure& cs, const variational::Sectors& sectors,
                 const variational::Alignment& al) {
    for (std::size_t q = 0; q < sectors.size(); ++q) {
        os << "  block " << q << "\n";
        std::size_t rows = 0;
        for (int k : sectors[q]) rows = std::max(rows, al[static_cast<std::size_t>(k)].size());
        for (std::size_t i = 0; i < rows; ++i) {
            os << "    row " << i << ":";
            for (int k : sectors[q]) {
                const auto& col = al[static_cast<std::size_t>(k)];
                os << ' ' << (i < col.size() ? cs.state_string(col[i]) : std::string(static_cast<std::size_t>(cs.n), '.'));
            }
            os << "\n";
        }
    }
}

int cmd_ising_scan(const GlobalOptions& g, const ScanArgs& a) {
    using namespace variational;
    if (a.n < 2 || a.n > a.max_n)
        throw invalid_input("N must lie in [2, " + std::to_string(a.max_n) + "]");
    const IsingConvention conv = a.convention == "pauli" ? IsingConvention::pauli : IsingConvention::spin_half;
    const Family family = a.family == "general" ? Family::general : Family::alpha_scan;
    const Tolerance tol = tolerance_for(g, Eigen::Index{1} << a.n);
    ScanOptions so;
    so.cap = g.cap;
    so.workers = g.workers;
    so.seed = g.seed;
    so.fd_check = a.fd_check == "all" ? FdCheck::all : a.fd_check == "none" ? FdCheck::none : FdCheck::sample;
    MinimizeOptions mo;
    mo.seed = g.seed;

    const SpinChain chain = build_ising(a.n, a.g, conv);
    const CollectiveObservable mc = compatibility_minimize(chain, family, mo);
    const ColumnStructure cs = columns_from_mc(mc, tol);
    const Sectors sectors = detect_sectors(chain, cs, tol);

    std::cout << "N " << a.n << "\n";
    std::cout << "g " << fmt(a.g) << "\n";
    std::cout << "g_crit " << fmt(gcrit(a.n)) << "\n";
    std::cout << "family " << (family == Family::general ? "general" : "alpha_scan") << "\n";
    if (mc.alpha) {
        std::cout << "observable alpha " << fmt(*mc.alpha);
        if (*mc.alpha == 0.0) std::cout << " (sum sigma_z)";
        if (std::isinf(*mc.alpha)) std::cout << " (sum sigma_x)";
        std::cout << "\n";
    } else {
        for (std::size_t mu = 0; mu < mc.coefficients.size(); ++mu)
            std::cout << "observable site " << mu << " x " << fmt(mc.coefficients[mu][0]) << " y "
                      << fmt(mc.coefficients[mu][1]) << " z " << fmt(mc.coefficients[mu][2]) << "\n";
    }
    std::cout << "commutator_norm " << fmt(mc.commutator_norm) << "\n";
    std::cout << "columns " << cs.columns() << "\n";
    for (int k = 0; k < cs.columns(); ++k) {
        std::cout << "column " << k << " label " << format_label(cs.labels[static_cast<std::size_t>(k)]) << " height "
                  << cs.states[static_cast<std::size_t>(k)].size() << " states";
        for (int s : cs.states[static_cast<std::size_t>(k)]) std::cout << ' ' << cs.state_string(s);
        std::cout << "\n";
    }
    std::cout << "sectors " << sectors.size() << "\n";
    for (std::size_t q = 0; q < sectors.size(); ++q) {
        std::cout << "sector " << q << " columns";
        for (int k : sectors[q]) std::cout << ' ' << k;
        std::cout << "\n";
    }

    const ScanResult scan = scan_alignments(chain, cs, sectors, so);
    std::cout << "candidates " << scan.total << "\n";
    std::cout << "fd_checked " << scan.fd_checked << " worst_ratio " << fmt(scan.fd_worst_ratio) << "\n";
    std::cout << "classes " << scan.classes.size() << "\n";
    for (const auto& c : scan.classes)
        std::cout << "class " << c.id << " q " << fmt(c.q) << " entries " << c.entries << " distinct_maps "
                  << c.distinct_maps << "\n";
    std::cout << "maximal_distinct_tables " << scan.maximal_representatives.size() << "\n";
    for (std::size_t r = 0; r < scan.maximal_representatives.size(); ++r) {
        const Candidate& c = scan.candidates[scan.maximal_representatives[r]];
        std::cout << "selected " << r << " candidate " << c.index << "\n";
        print_table(std::cout, cs, sectors, alignment_from_digits(cs, c.digits));
    }

    const std::string dir = output_dir(g);
    if (!dir.empty()) {
        prepare_dir(dir);
        std::ostringstream csv;
        io::write_scan_csv(csv, cs, scan);
        io::write_text_file(join(dir, "scan.csv"), csv.str());
        for (std::size_t r = 0; r < scan.maximal_representatives.size(); ++r) {
            const Candidate& c = scan.candidates[scan.maximal_representatives[r]];
            const BipartitionTable t = candidate_table(cs, sectors, alignment_from_digits(cs, c.digits), tol);
            io::write_json_file(join(dir, "selected-" + std::to_string(r) + ".json"), io::table_json(t));
        }
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Irrep decomposition and bipartition-table tools"};
    app.require_subcommand(1);
    app.fallthrough();
    GlobalOptions g;
    app.add_option("--tol-zero", g.tol_zero, "Threshold for vanishing norms (default 1e-10 * dim)");
    app.add_option("--tol-eig", g.tol_eig, "Eigenvalue clustering radius (default max(1e-8, tol-zero))");
    app.add_option("--tol-prop", g.tol_prop, "Proportionality residual (default 1e-8)");
    app.add_option("--seed", g.seed, "Seed for randomized restarts and spot checks");
    app.add_option("--workers", g.workers, "Worker threads for scans (0 = hardware concurrency)");
    app.add_option("--cap", g.cap, "Maximum number of enumerated alignments");
    app.add_flag("--debug-network", g.debug_network, "Print the reflection-network trace");
    app.add_option("--out", g.out, "Output directory (default: $QBP_OUT_DIR)");

    std::string input;
    auto* dec = app.add_subcommand("decompose", "Decompose the algebra generated by a matrix file");
    dec->add_option("input", input, "Matrix file")->required();

    std::string example;
    std::optional<int> example_param;
    auto* ex = app.add_subcommand("example", "Write the generators of a built-in example");
    ex->add_option("name", example, "toy | spin-orbit | bound-pair | two-spin-total")
        ->required()
        ->check(CLI::IsMember({"toy", "spin-orbit", "bound-pair", "two-spin-total"}));
    ex->add_option("param", example_param, "l for spin-orbit, D for bound-pair");

    std::string rho_path, table_path, mode = "partial";
    auto* red = app.add_subcommand("reduce", "Reduce a density matrix through a table");
    red->add_option("rho", rho_path, "Matrix file holding one density matrix")->required();
    red->add_option("table", table_path, "Table file")->required();
    red->add_option("--mode", mode, "algebra | partial")->check(CLI::IsMember({"algebra", "partial"}));

    ScanArgs sa;
    auto* scan = app.add_subcommand("ising-scan", "Variational coarse-graining scan of the Ising chain");
    scan->add_option("--n", sa.n, "Number of sites")->required();
    scan->add_option("--g", sa.g, "Transverse field")->required();
    scan->add_option("--family", sa.family, "alpha | general")->check(CLI::IsMember({"alpha", "general"}));
    scan->add_option("--convention", sa.convention, "spin-half | pauli")
        ->check(CLI::IsMember({"spin-half", "pauli"}));
    scan->add_option("--fd-check", sa.fd_check, "none | sample | all")
        ->check(CLI::IsMember({"none", "sample", "all"}));
    scan->add_option("--max-n", sa.max_n, "Largest accepted N");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInput;
    }

    try {
        if (*dec) return cmd_decompose(g, input);
        if (*ex) return cmd_example(g, example, example_param);
        if (*red) return cmd_reduce(g, rho_path, table_path, mode);
        if (*scan) return cmd_ising_scan(g, sa);
    } catch (const VerificationFailed& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitVerification;
    } catch (const numeric_error& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const invalid_input& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
    return kExitInput;
}
