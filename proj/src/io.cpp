#include "liftnet/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "liftnet/errors.hpp"

namespace liftnet {

using nlohmann::json;

std::string double_to_string(double v) {
    if (!std::isfinite(v)) throw NumericalError("cannot serialize non-finite value");
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double double_from_string(const std::string& s) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc{} || res.ptr != last)
        throw ValidationError("bad numeric literal: '" + s + "'");
    return v;
}

namespace {

double number_from_json(const json& j, const char* what) {
    if (j.is_string()) return double_from_string(j.get<std::string>());
    if (j.is_number()) return j.get<double>();
    throw ValidationError(std::string(what) + ": expected a number");
}

json vector_to_json(const Vector& v) {
    json a = json::array();
    for (double x : v) a.push_back(double_to_string(x));
    return a;
}

Vector vector_from_json(const json& a, const char* what) {
    if (!a.is_array()) throw ValidationError(std::string(what) + ": expected an array");
    Vector v;
    v.reserve(a.size());
    for (const json& x : a) v.push_back(number_from_json(x, what));
    return v;
}

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(double_to_string(m(i, j)));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const json& a, const char* what) {
    if (!a.is_array()) throw ValidationError(std::string(what) + ": expected an array");
    std::vector<Vector> rows;
    for (const json& r : a) rows.push_back(vector_from_json(r, what));
    return Matrix::from_rows(rows);
}

} // namespace

json params_to_json(const NetworkParams& p) {
    p.validate();
    json j;
    j["widths"] = p.widths;
    json act;
    act["kind"] = p.activation.name();
    if (p.activation.kind() == ActKind::leaky_relu || p.activation.kind() == ActKind::elu)
        act["alpha"] = double_to_string(p.activation.alpha());
    j["activation"] = act;
    json layers = json::array();
    for (std::size_t i = 0; i < p.weights.size(); ++i) {
        json layer;
        layer["W"] = matrix_to_json(p.weights[i]);
        layer["b"] = vector_to_json(p.biases[i]);
        layers.push_back(std::move(layer));
    }
    j["layers"] = std::move(layers);
    if (p.any_bn()) {
        json bn = json::array();
        for (const BatchNorm& b : p.bn) {
            json e;
            e["enabled"] = b.enabled;
            if (b.enabled) {
                e["gamma"] = vector_to_json(b.gamma);
                e["beta"] = vector_to_json(b.beta);
            }
            bn.push_back(std::move(e));
        }
        j["bn"] = std::move(bn);
    }
    if (p.any_residual()) j["residual"] = p.residual;
    return j;
}

NetworkParams params_from_json(const json& j) {
    if (!j.contains("widths") || !j.contains("layers") || !j.contains("activation"))
        throw ValidationError("weight file: missing widths/activation/layers");

    const json& act = j.at("activation");
    double alpha = 0.0;
    if (act.contains("alpha")) alpha = number_from_json(act.at("alpha"), "alpha");
    ActivationSpec spec =
        ActivationSpec::from_name(act.at("kind").get<std::string>(), alpha);

    std::vector<std::size_t> widths = j.at("widths").get<std::vector<std::size_t>>();
    if (widths.size() < 2) throw ValidationError("weight file: need at least two widths");
    NetworkParams p = NetworkParams::zeros(widths, spec);

    const json& layers = j.at("layers");
    if (!layers.is_array() || layers.size() != widths.size() - 1)
        throw ValidationError("weight file: layer count does not match widths");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        p.weights[i] = matrix_from_json(layers[i].at("W"), "W");
        p.biases[i] = vector_from_json(layers[i].at("b"), "b");
    }
    if (j.contains("bn")) {
        const json& bn = j.at("bn");
        if (!bn.is_array() || bn.size() != p.weights.size())
            throw ValidationError("weight file: bn entry count mismatch");
        for (std::size_t i = 0; i < bn.size(); ++i) {
            p.bn[i].enabled = bn[i].value("enabled", false);
            if (p.bn[i].enabled) {
                p.bn[i].gamma = vector_from_json(bn[i].at("gamma"), "gamma");
                p.bn[i].beta = vector_from_json(bn[i].at("beta"), "beta");
            }
        }
    }
    if (j.contains("residual")) p.residual = j.at("residual").get<std::vector<bool>>();
    p.validate();
    return p;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open for writing: " + path.string());
    f << text;
    if (!f) throw ValidationError("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open: " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_json_file(const std::filesystem::path& path, const json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

json read_json_file(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ValidationError("malformed JSON: " + path.string());
    return j;
}

void save_params(const std::filesystem::path& path, const NetworkParams& p) {
    write_json_file(path, params_to_json(p));
}

NetworkParams load_params(const std::filesystem::path& path) {
    try {
        return params_from_json(read_json_file(path));
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

void save_dataset_csv(const std::filesystem::path& path, const Dataset& d) {
    std::ostringstream out;
    for (std::size_t j = 0; j < d.input_dim(); ++j) out << (j ? "," : "") << "x" << j;
    for (std::size_t j = 0; j < d.output_dim(); ++j) out << ",y" << j;
    out << "\n";
    for (std::size_t i = 0; i < d.size(); ++i) {
        for (std::size_t j = 0; j < d.input_dim(); ++j)
            out << (j ? "," : "") << double_to_string(d.x(i, j));
        for (std::size_t j = 0; j < d.output_dim(); ++j)
            out << "," << double_to_string(d.y(i, j));
        out << "\n";
    }
    write_text_file(path, out.str());
}

Dataset load_dataset_csv(const std::filesystem::path& path, LossKind loss) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open: " + path.string());
    std::string line;
    if (!std::getline(f, line)) throw ValidationError(path.string() + ": empty file");

    // Header: x0..x{d-1},y0..y{d'-1}.
    std::size_t d_in = 0, d_out = 0;
    {
        std::istringstream hs(line);
        std::string col;
        bool seen_y = false;
        while (std::getline(hs, col, ',')) {
            if (!col.empty() && col[0] == 'x' && !seen_y)
                ++d_in;
            else if (!col.empty() && col[0] == 'y') {
                seen_y = true;
                ++d_out;
            } else
                throw ValidationError(path.string() + ": bad header column '" + col + "'");
        }
    }
    if (d_in == 0 || d_out == 0)
        throw ValidationError(path.string() + ": header must name x* and y* columns");

    std::vector<Vector> xs, ys;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        Vector row;
        while (std::getline(ls, cell, ',')) {
            try {
                row.push_back(double_from_string(cell));
            } catch (const ValidationError&) {
                throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                                      ": bad value '" + cell + "'");
            }
        }
        if (row.size() != d_in + d_out)
            throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                                  ": expected " + std::to_string(d_in + d_out) +
                                  " columns, got " + std::to_string(row.size()));
        xs.emplace_back(row.begin(), row.begin() + static_cast<long>(d_in));
        ys.emplace_back(row.begin() + static_cast<long>(d_in), row.end());
    }
    Dataset d;
    d.x = Matrix::from_rows(xs);
    d.y = Matrix::from_rows(ys);
    d.loss = loss;
    d.validate();
    return d;
}

} // namespace liftnet
