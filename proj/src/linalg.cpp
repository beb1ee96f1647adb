#include "liftnet/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

namespace liftnet {

namespace {

std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) +
                             " vs " + shape_str(b));
}

} // namespace

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_rows(const std::vector<Vector>& rows) {
    if (rows.empty()) return Matrix();
    Matrix m(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != m.cols())
            throw DimensionError("from_rows: ragged row " + std::to_string(i));
        std::copy(rows[i].begin(), rows[i].end(), m.row_ptr(i));
    }
    return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a) +
                             " times " + shape_str(b));
    Matrix c(a.rows(), b.cols());
    // i-k-j ordering: cache friendly and keeps the k-sum strictly ascending.
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* ci = c.row_ptr(i);
        const double* ai = a.row_ptr(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = ai[k];
            if (aik == 0.0) continue;
            const double* bk = b.row_ptr(k);
            for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
    check_same_shape(a, b, "add");
    Matrix c = a;
    for (std::size_t i = 0; i < c.data().size(); ++i) c.data()[i] += b.data()[i];
    return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    check_same_shape(a, b, "sub");
    Matrix c = a;
    for (std::size_t i = 0; i < c.data().size(); ++i) c.data()[i] -= b.data()[i];
    return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    check_same_shape(a, b, "hadamard");
    Matrix c = a;
    for (std::size_t i = 0; i < c.data().size(); ++i) c.data()[i] *= b.data()[i];
    return c;
}

Matrix scale(const Matrix& a, double s) {
    Matrix c = a;
    for (double& x : c.data()) x *= s;
    return c;
}

double frobenius_norm(const Matrix& m) {
    double s = 0.0;
    for (double x : m.data()) s += x * x;
    return std::sqrt(s);
}

double l1_norm(const Matrix& m) {
    double s = 0.0;
    for (double x : m.data()) s += std::fabs(x);
    return s;
}

double linf_norm(const Matrix& m) {
    double s = 0.0;
    for (double x : m.data()) s = std::max(s, std::fabs(x));
    return s;
}

double l1_norm(const Vector& v) {
    double s = 0.0;
    for (double x : v) s += std::fabs(x);
    return s;
}

double l2_norm(const Vector& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double mean(const Vector& v) {
    if (v.empty()) throw DimensionError("mean: empty vector");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double variance(const Vector& v) {
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size());
}

bool is_constant(const Vector& v) {
    const double m = mean(v);
    const double sd = std::sqrt(variance(v));
    return sd <= 1e-12 * std::max(1.0, std::fabs(m));
}

double pearson(const Vector& u, const Vector& v) {
    if (u.size() != v.size())
        throw DimensionError("pearson: length mismatch " + std::to_string(u.size()) +
                             " vs " + std::to_string(v.size()));
    if (u.size() < 2) throw DimensionError("pearson: need at least 2 samples");
    const double mu = mean(u), mv = mean(v);
    double suv = 0.0, suu = 0.0, svv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double du = u[i] - mu, dv = v[i] - mv;
        suv += du * dv;
        suu += du * du;
        svv += dv * dv;
    }
    if (suu == 0.0 || svv == 0.0) return 0.0;
    const double r = suv / std::sqrt(suu * svv);
    // Rounding can push |r| a hair past 1 for exactly collinear inputs.
    return std::clamp(r, -1.0, 1.0);
}

AffineFit lstsq_affine(const Vector& x, const Vector& y) {
    if (x.size() != y.size())
        throw DimensionError("lstsq_affine: length mismatch");
    if (x.empty()) throw DimensionError("lstsq_affine: empty input");
    const double mx = mean(x), my = mean(y);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    AffineFit fit;
    if (sxx == 0.0) {
        fit.slope = 0.0;
        fit.intercept = my;
    } else {
        fit.slope = sxy / sxx;
        fit.intercept = my - fit.slope * mx;
    }
    return fit;
}

EigResult sym_eig(const Matrix& h) {
    if (h.rows() != h.cols())
        throw DimensionError("sym_eig: matrix not square, " + shape_str(h));
    ensure_finite(h, "sym_eig input");
    const std::size_t n = h.rows();

    // Warn-and-symmetrize on asymmetric input rather than fail.
    double asym = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = h(i, j) - h(j, i);
            asym += 2.0 * d * d;
        }
    const double hnorm = frobenius_norm(h);
    if (std::sqrt(asym) > kSymTol * std::max(1.0, hnorm))
        std::cerr << "warning: sym_eig input asymmetry " << std::sqrt(asym)
                  << " exceeds tolerance; symmetrizing\n";

    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (h(i, j) + h(j, i));
    Matrix q = Matrix::identity(n);

    EigResult out;
    if (n == 0) return out;
    if (n == 1) {
        out.values = {a(0, 0)};
        out.vectors = q;
        return out;
    }

    const double stop = 1e-14 * std::max(1.0, frobenius_norm(a));
    const auto off_norm = [&]() {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t r = p + 1; r < n; ++r) off += 2.0 * a(p, r) * a(p, r);
        return std::sqrt(off);
    };
    const int max_sweeps = 100;
    for (int sweep = 0; sweep < max_sweeps && off_norm() > stop; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t r = p + 1; r < n; ++r) {
                const double apq = a(p, r);
                if (apq == 0.0) continue;
                const double theta = (a(r, r) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, r);
                    a(k, p) = c * akp - s * akq;
                    a(k, r) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(r, k);
                    a(p, k) = c * apk - s * aqk;
                    a(r, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double qkp = q(k, p), qkq = q(k, r);
                    q(k, p) = c * qkp - s * qkq;
                    q(k, r) = s * qkp + c * qkq;
                }
            }
        }
    }
    if (off_norm() > stop)
        throw NumericalError("sym_eig: Jacobi sweep did not converge");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return a(i, i) < a(j, j); });
    out.values.resize(n);
    out.vectors = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        out.values[j] = a(order[j], order[j]);
        for (std::size_t i = 0; i < n; ++i) out.vectors(i, j) = q(i, order[j]);
    }
    return out;
}

Matrix orthonormal_columns(const Matrix& a, double drop_tol) {
    std::vector<Vector> basis;
    for (std::size_t j = 0; j < a.cols(); ++j) {
        Vector v(a.rows());
        for (std::size_t i = 0; i < a.rows(); ++i) v[i] = a(i, j);
        const double orig = l2_norm(v);
        // Two rounds of Gram-Schmidt keep the basis orthonormal to roundoff.
        for (int round = 0; round < 2; ++round) {
            for (const Vector& b : basis) {
                double dot = 0.0;
                for (std::size_t i = 0; i < v.size(); ++i) dot += b[i] * v[i];
                for (std::size_t i = 0; i < v.size(); ++i) v[i] -= dot * b[i];
            }
        }
        const double res = l2_norm(v);
        if (res <= drop_tol * std::max(1.0, orig)) continue;
        for (double& x : v) x /= res;
        basis.push_back(std::move(v));
    }
    Matrix qm(a.rows(), basis.size());
    for (std::size_t j = 0; j < basis.size(); ++j)
        for (std::size_t i = 0; i < a.rows(); ++i) qm(i, j) = basis[j][i];
    return qm;
}

bool all_finite(const Matrix& m) {
    for (double x : m.data())
        if (!std::isfinite(x)) return false;
    return true;
}

bool all_finite(const Vector& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

void ensure_finite(const Matrix& m, const std::string& what) {
    if (!all_finite(m)) throw NumericalError(what + ": non-finite entries");
}

void ensure_finite(const Vector& v, const std::string& what) {
    if (!all_finite(v)) throw NumericalError(what + ": non-finite entries");
}

} // namespace liftnet
