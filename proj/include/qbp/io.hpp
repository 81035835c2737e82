#pragma once

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "bpt.hpp"
#include "irrep.hpp"
#include "models.hpp"
#include "numerics.hpp"
#include "variational.hpp"

namespace qbp::io {

using json = nlohmann::json;

/// Malformed or unreadable input files. The CLI maps these to exit 2.
class ParseError : public invalid_input {
public:
    using invalid_input::invalid_input;
};

namespace detail {

inline json grid(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline const json& field(const json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) throw ParseError(where + ": missing field '" + key + "'");
    return j.at(key);
}

inline Eigen::Index index_field(const json& j, const char* key, const std::string& where) {
    const json& v = field(j, key, where);
    if (!v.is_number_integer() || v.get<long long>() < 0)
        throw ParseError(where + ": field '" + key + "' must be a non-negative integer");
    return static_cast<Eigen::Index>(v.get<long long>());
}

inline double number(const json& v, const std::string& where) {
    if (!v.is_number()) throw ParseError(where + ": expected a number");
    return v.get<double>();
}

inline Eigen::MatrixXd read_grid(const json& g, Eigen::Index rows, Eigen::Index cols, const std::string& where) {
    if (!g.is_array() || static_cast<Eigen::Index>(g.size()) != rows)
        throw ParseError(where + ": expected " + std::to_string(rows) + " rows");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const json& row = g[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
            throw ParseError(where + ": row " + std::to_string(i) + " must have " + std::to_string(cols) + " entries");
        for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = number(row[static_cast<std::size_t>(k)], where);
    }
    return m;
}

inline json vector_json(const cvec& v) {
    json re = json::array(), im = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        re.push_back(v[i].real());
        im.push_back(v[i].imag());
    }
    return json{{"re", std::move(re)}, {"im", std::move(im)}};
}

inline cvec read_vector(const json& j, Eigen::Index dim, const std::string& where) {
    const json& re = field(j, "re", where);
    const json& im = field(j, "im", where);
    if (!re.is_array() || !im.is_array() || static_cast<Eigen::Index>(re.size()) != dim ||
        static_cast<Eigen::Index>(im.size()) != dim)
        throw ParseError(where + ": vector must have " + std::to_string(dim) + " real and imaginary parts");
    cvec v(dim);
    for (Eigen::Index i = 0; i < dim; ++i)
        v[i] = cplx(number(re[static_cast<std::size_t>(i)], where), number(im[static_cast<std::size_t>(i)], where));
    return v;
}

} // namespace detail

/// {re, im} row-major grids of a complex matrix.
inline json matrix_json(const cmat& m) {
    return json{{"re", detail::grid(m.real())}, {"im", detail::grid(m.imag())}};
}

inline cmat read_matrix(const json& j, Eigen::Index dim, const std::string& where) {
    const Eigen::MatrixXd re = detail::read_grid(detail::field(j, "re", where), dim, dim, where + ".re");
    const Eigen::MatrixXd im = detail::read_grid(detail::field(j, "im", where), dim, dim, where + ".im");
    cmat m(dim, dim);
    m.real() = re;
    m.imag() = im;
    return m;
}

/// Matrix file: {dim, matrices: [{name, re, im}]}.
inline json generators_json(const models::GeneratorSet& g) {
    json ms = json::array();
    for (std::size_t i = 0; i < g.matrices.size(); ++i) {
        json m = matrix_json(g.matrices[i]);
        m["name"] = i < g.names.size() ? g.names[i] : "M" + std::to_string(i);
        ms.push_back(std::move(m));
    }
    return json{{"dim", g.dim}, {"matrices", std::move(ms)}};
}

inline models::GeneratorSet parse_generators(const json& j) {
    models::GeneratorSet g;
    g.dim = detail::index_field(j, "dim", "matrix file");
    if (g.dim == 0) throw ParseError("matrix file: dim must be positive");
    const json& ms = detail::field(j, "matrices", "matrix file");
    if (!ms.is_array()) throw ParseError("matrix file: 'matrices' must be a list");
    for (std::size_t i = 0; i < ms.size(); ++i) {
        const std::string where = "matrices[" + std::to_string(i) + "]";
        std::string name = "M" + std::to_string(i);
        if (ms[i].is_object() && ms[i].contains("name")) {
            if (!ms[i]["name"].is_string()) throw ParseError(where + ": name must be a string");
            name = ms[i]["name"].get<std::string>();
        }
        g.names.push_back(std::move(name));
        g.matrices.push_back(read_matrix(ms[i], g.dim, where));
    }
    return g;
}

/**
 * Table file: {dim, blocks: [{q, heights, labels, vectors}]}, where vectors
 * lists the cells of the grid in row-major order.
 */
inline json table_json(const BipartitionTable& t) {
    json blocks = json::array();
    for (const auto& b : t.blocks()) {
        json vs = json::array();
        for (int i = 0; i < b.rows(); ++i)
            for (int k = 0; k < b.cols(); ++k)
                if (b.height(k) > i) vs.push_back(detail::vector_json(b.vector(i, k)));
        blocks.push_back(json{{"q", b.q}, {"heights", b.heights()}, {"labels", b.labels}, {"vectors", std::move(vs)}});
    }
    return json{{"dim", t.dim()}, {"blocks", std::move(blocks)}};
}

inline BipartitionTable parse_table(const json& j, const Tolerance& tol) {
    const Eigen::Index dim = detail::index_field(j, "dim", "table file");
    const json& bs = detail::field(j, "blocks", "table file");
    if (!bs.is_array()) throw ParseError("table file: 'blocks' must be a list");
    std::vector<TableBlock> blocks;
    for (std::size_t bi = 0; bi < bs.size(); ++bi) {
        const std::string where = "blocks[" + std::to_string(bi) + "]";
        const json& bj = bs[bi];
        TableBlock b;
        const json& q = detail::field(bj, "q", where);
        if (!q.is_number_integer()) throw ParseError(where + ": q must be an integer");
        b.q = q.get<int>();
        const json& hs = detail::field(bj, "heights", where);
        if (!hs.is_array() || hs.empty()) throw ParseError(where + ": heights must be a non-empty list");
        std::vector<int> heights;
        for (const auto& h : hs) {
            if (!h.is_number_integer() || h.get<long long>() < 1)
                throw NonCompact(where + ": every column height must be a positive integer");
            heights.push_back(h.get<int>());
        }
        if (bj.contains("labels")) {
            const json& ls = bj["labels"];
            if (!ls.is_array()) throw ParseError(where + ": labels must be a list");
            for (const auto& l : ls) {
                if (!l.is_string()) throw ParseError(where + ": labels must be strings");
                b.labels.push_back(l.get<std::string>());
            }
        }
        const json& vs = detail::field(bj, "vectors", where);
        std::size_t cells = 0;
        int rows = 0;
        for (int h : heights) {
            cells += static_cast<std::size_t>(h);
            rows = std::max(rows, h);
        }
        if (!vs.is_array() || vs.size() != cells)
            throw ParseError(where + ": expected " + std::to_string(cells) + " vectors for the given heights");
        for (int h : heights) b.columns.emplace_back(dim, h);
        std::size_t next = 0;
        for (int i = 0; i < rows; ++i)
            for (std::size_t k = 0; k < heights.size(); ++k)
                if (heights[k] > i)
                    b.columns[k].col(i) = detail::read_vector(vs[next++], dim, where + ".vectors");
        blocks.push_back(std::move(b));
    }
    return BipartitionTable(dim, std::move(blocks), tol);
}

/// Reduced-state file: {dim, labels: [{q, column, label}], trace_deficit, re, im}.
inline json reduced_state_json(const ReducedState& r) {
    json labels = json::array();
    for (const auto& l : r.labels) labels.push_back(json{{"q", l.q}, {"column", l.column}, {"label", l.label}});
    json out = matrix_json(r.rho);
    out["dim"] = r.rho.rows();
    out["labels"] = std::move(labels);
    out["trace_deficit"] = r.trace_deficit;
    return out;
}

inline ReducedState parse_reduced_state(const json& j) {
    ReducedState r;
    const Eigen::Index dim = detail::index_field(j, "dim", "reduced-state file");
    r.rho = read_matrix(j, dim, "reduced-state file");
    const json& ls = detail::field(j, "labels", "reduced-state file");
    if (!ls.is_array() || static_cast<Eigen::Index>(ls.size()) != dim)
        throw ParseError("reduced-state file: expected one label per basis state");
    for (const auto& l : ls) {
        ReducedLabel rl;
        const json& q = detail::field(l, "q", "label");
        const json& c = detail::field(l, "column", "label");
        const json& s = detail::field(l, "label", "label");
        if (!q.is_number_integer() || !c.is_number_integer() || !s.is_string())
            throw ParseError("reduced-state file: malformed label");
        rl.q = q.get<int>();
        rl.column = c.get<int>();
        rl.label = s.get<std::string>();
        r.labels.push_back(std::move(rl));
    }
    r.trace_deficit = detail::number(detail::field(j, "trace_deficit", "reduced-state file"), "trace_deficit");
    return r;
}

inline json verification_json(const VerificationReport& rep) {
    json gens = json::array();
    for (const auto& g : rep.generators)
        gens.push_back(json{{"name", g.name},
                            {"off_block", g.off_block},
                            {"in_block", g.in_block},
                            {"null_leak", g.null_leak}});
    return json{{"generators", std::move(gens)}, {"max_residual", rep.max_residual}, {"passed", rep.passed}};
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError("'" + path + "': " + e.what());
    }
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw invalid_input("cannot write '" + path + "'");
    out << text;
    if (!out) throw invalid_input("failed while writing '" + path + "'");
}

inline void write_json_file(const std::string& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

inline std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

/// Scan results, one row per candidate in ranked order.
inline void write_scan_csv(std::ostream& os, const variational::ColumnStructure& cs,
                           const variational::ScanResult& scan) {
    os << "candidate_index,permutation,q,class_id,distinct_map_id\n";
    for (const auto& c : scan.candidates)
        os << c.index << ',' << variational::encode_alignment(variational::alignment_from_digits(cs, c.digits)) << ','
           << format_double(c.q) << ',' << c.class_id << ',' << c.distinct_map_id << '\n';
}

} // namespace qbp::io
