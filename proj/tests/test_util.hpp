#pragma once

#include <cmath>
#include <cstddef>

#include "liftnet/linalg.hpp"
#include "liftnet/network.hpp"
#include "liftnet/rng.hpp"

namespace testutil {

inline liftnet::Matrix random_matrix(liftnet::Rng& rng, std::size_t r, std::size_t c,
                                     double lo = -1.0, double hi = 1.0) {
    liftnet::Matrix m(r, c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
    return m;
}

inline liftnet::Vector random_vector(liftnet::Rng& rng, std::size_t n,
                                     double lo = -1.0, double hi = 1.0) {
    liftnet::Vector v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

inline double max_abs_diff(const liftnet::Matrix& a, const liftnet::Matrix& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            m = std::max(m, std::fabs(a(i, j) - b(i, j)));
    return m;
}

inline double max_abs_diff(const liftnet::Vector& a, const liftnet::Vector& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

inline liftnet::NetworkParams random_network(liftnet::Rng& rng,
                                             std::vector<std::size_t> widths,
                                             liftnet::ActivationSpec act,
                                             double scale = 1.0) {
    auto p = liftnet::NetworkParams::zeros(std::move(widths), act);
    for (auto& w : p.weights)
        for (double& x : w.data()) x = scale * rng.uniform(-1.0, 1.0);
    for (auto& b : p.biases)
        for (double& x : b) x = scale * rng.uniform(-0.5, 0.5);
    return p;
}

/// Dataset whose targets come from the given network, so loss(p, data) == 0.
inline liftnet::Dataset teacher_dataset(const liftnet::NetworkParams& teacher,
                                        liftnet::Rng& rng, std::size_t n,
                                        liftnet::LossKind loss = liftnet::LossKind::mse) {
    liftnet::Dataset d;
    d.loss = loss;
    d.x = random_matrix(rng, n, teacher.widths.front());
    d.y = liftnet::forward_batch(teacher, d.x);
    return d;
}

/// Central-difference gradient of the empirical risk, used as the oracle for
/// backprop checks.
inline liftnet::Vector fd_gradient(const liftnet::NetworkParams& p,
                                   const liftnet::Dataset& data, double h = 1e-5) {
    liftnet::Vector theta = p.flatten();
    liftnet::NetworkParams work = p;
    liftnet::Vector g(theta.size());
    for (std::size_t j = 0; j < theta.size(); ++j) {
        const double tj = theta[j];
        theta[j] = tj + h;
        work.set_from_flat(theta);
        const double rp = liftnet::loss_value(work, data);
        theta[j] = tj - h;
        work.set_from_flat(theta);
        const double rm = liftnet::loss_value(work, data);
        theta[j] = tj;
        g[j] = (rp - rm) / (2.0 * h);
    }
    return g;
}

/// Gradient entries agree within 1e-5 relative or 1e-8 absolute.
inline bool gradients_match(const liftnet::Vector& got, const liftnet::Vector& want,
                            double rel = 1e-5, double abs = 1e-8) {
    if (got.size() != want.size()) return false;
    for (std::size_t i = 0; i < got.size(); ++i) {
        const double d = std::fabs(got[i] - want[i]);
        if (d > abs && d > rel * std::max(std::fabs(got[i]), std::fabs(want[i])))
            return false;
    }
    return true;
}

/// Smallest |activation input| over hidden layers; used to avoid finite
/// difference checks straddling a relu kink.
inline double min_hidden_preact(const liftnet::NetworkParams& p,
                                const liftnet::Matrix& x) {
    liftnet::ForwardTrace tr;
    liftnet::forward_batch(p, x, &tr);
    double m = 1e300;
    for (std::size_t l = 1; l < p.depth(); ++l)
        for (double v : tr.act_in[l].data()) m = std::min(m, std::fabs(v));
    return m;
}

/// [m | 1]: the feature matrix augmented with a ones column.
inline liftnet::Matrix with_ones(const liftnet::Matrix& m) {
    liftnet::Matrix out(m.rows(), m.cols() + 1);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(i, j);
        out(i, m.cols()) = 1.0;
    }
    return out;
}

/// Worst projection residual between the column spaces of a and b, checked in
/// both directions on orthonormalized bases (unit columns, so the residual is
/// already relative).
inline double mutual_span_residual(const liftnet::Matrix& a, const liftnet::Matrix& b) {
    const liftnet::Matrix qa = liftnet::orthonormal_columns(a);
    const liftnet::Matrix qb = liftnet::orthonormal_columns(b);
    double worst = 0.0;
    auto one_way = [&](const liftnet::Matrix& from, const liftnet::Matrix& onto) {
        for (std::size_t j = 0; j < from.cols(); ++j) {
            liftnet::Vector col(from.rows());
            for (std::size_t i = 0; i < from.rows(); ++i) col[i] = from(i, j);
            for (std::size_t k = 0; k < onto.cols(); ++k) {
                double coeff = 0.0;
                for (std::size_t i = 0; i < onto.rows(); ++i) coeff += onto(i, k) * col[i];
                for (std::size_t i = 0; i < onto.rows(); ++i) col[i] -= coeff * onto(i, k);
            }
            worst = std::max(worst, liftnet::l2_norm(col));
        }
    };
    one_way(qa, qb);
    one_way(qb, qa);
    return worst;
}

/// Worst mutual span residual of [F(X), 1] over every layer pairing between a
/// network and its one-layer lift (inserted layer pairs with shallow layer q).
inline double lift_span_residual(const liftnet::NetworkParams& shallow,
                                 const liftnet::NetworkParams& deep,
                                 const liftnet::Matrix& x, std::size_t q) {
    liftnet::ForwardTrace ts, td;
    liftnet::forward_batch(shallow, x, &ts);
    liftnet::forward_batch(deep, x, &td);
    double worst = 0.0;
    for (std::size_t l = 0; l <= shallow.depth(); ++l) {
        const std::size_t dl = l <= q ? l : l + 1;
        worst = std::max(worst, mutual_span_residual(with_ones(ts.post[l]),
                                                     with_ones(td.post[dl])));
    }
    worst = std::max(worst, mutual_span_residual(with_ones(ts.post[q]),
                                                 with_ones(td.post[q + 1])));
    return worst;
}

} // namespace testutil
