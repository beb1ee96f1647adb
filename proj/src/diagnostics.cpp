#include "liftnet/diagnostics.hpp"

#include <cmath>

#include "liftnet/errors.hpp"

namespace liftnet {

MpcLayerReport mpc_from_features(const Matrix& act_in, const Matrix& act_out,
                                 const std::vector<bool>& zero_mask, double threshold) {
    if (act_in.rows() != act_out.rows() || act_in.cols() != act_out.cols())
        throw DimensionError("mpc: feature shape mismatch");
    const std::size_t m = act_in.cols();
    if (!zero_mask.empty() && zero_mask.size() != m)
        throw DimensionError("mpc: mask length mismatch");

    MpcLayerReport rep;
    rep.abs_rho.assign(m, 0.0);
    rep.zero_neuron.assign(m, false);
    rep.constant_neuron.assign(m, false);

    for (std::size_t j = 0; j < m; ++j) {
        if (!zero_mask.empty() && zero_mask[j]) {
            rep.zero_neuron[j] = true;
            continue;
        }
        Vector u(act_in.rows()), v(act_in.rows());
        for (std::size_t i = 0; i < act_in.rows(); ++i) {
            u[i] = act_in(i, j);
            v[i] = act_out(i, j);
        }
        if (is_constant(u) || is_constant(v)) {
            rep.constant_neuron[j] = true;
            continue;
        }
        rep.abs_rho[j] = std::fabs(pearson(u, v));
        if (!rep.defined || rep.abs_rho[j] < rep.mpc) rep.mpc = rep.abs_rho[j];
        rep.defined = true;
    }
    rep.flagged = rep.defined && rep.mpc > threshold;
    return rep;
}

MpcReport mpc(const NetworkParams& p, const Dataset& data, double threshold,
              double zero_tol) {
    data.validate();
    if (data.size() < 2) throw ValidationError("mpc needs at least 2 samples");
    ForwardTrace tr;
    forward_batch(p, data.x, &tr);

    MpcReport out;
    out.threshold = threshold;
    const std::size_t L = p.depth();
    for (std::size_t l = 1; l < L; ++l) {
        const std::size_t m = p.widths[l];
        std::vector<bool> zero_mask(m, false);
        for (std::size_t j = 0; j < m; ++j) {
            double win = 0.0, wout = 0.0;
            for (std::size_t c = 0; c < p.weights[l - 1].cols(); ++c)
                win += p.weights[l - 1](j, c) * p.weights[l - 1](j, c);
            for (std::size_t r = 0; r < p.weights[l].rows(); ++r)
                wout += p.weights[l](r, j) * p.weights[l](r, j);
            zero_mask[j] = std::max(std::sqrt(win), std::sqrt(wout)) <= zero_tol;
        }

        // Neuron output is sigma(act_in); residual skips are not part of the
        // neuron itself, so recompute the plain activation here.
        const Matrix& in = tr.act_in[l];
        Matrix outact(in.rows(), in.cols());
        for (std::size_t i = 0; i < in.rows(); ++i)
            for (std::size_t j = 0; j < in.cols(); ++j)
                outact(i, j) = p.activation.value(in(i, j));

        MpcLayerReport rep = mpc_from_features(in, outact, zero_mask, threshold);
        rep.layer = l;
        if (rep.flagged) out.flagged_layers.push_back(l);
        out.layers.push_back(std::move(rep));
    }
    return out;
}

CriticalityReport criticality(const NetworkParams& p, const Dataset& data, double tol) {
    CriticalityReport rep;
    rep.tol = tol;
    rep.grad_l1 = backprop(p, data).l1_norm();
    rep.is_critical = rep.grad_l1 < tol;
    return rep;
}

SpectrumReport classify_spectrum(Vector eigenvalues, double tau) {
    SpectrumReport rep;
    rep.tau = tau;
    rep.eigenvalues = std::move(eigenvalues);
    for (double v : rep.eigenvalues) {
        if (v < -tau)
            ++rep.n_negative;
        else if (v > tau)
            ++rep.n_positive;
        else
            ++rep.n_zero;
    }
    rep.strict_saddle = rep.n_negative > 0;
    return rep;
}

SpectrumReport spectrum(const NetworkParams& p, const Dataset& data, double tau,
                        std::size_t max_params) {
    HessianResult hr = hessian_fd(p, data, max_params);
    EigResult eig = sym_eig(hr.h);
    SpectrumReport rep = classify_spectrum(std::move(eig.values), tau);
    rep.rel_asymmetry = hr.rel_asymmetry;
    return rep;
}

std::vector<int> predict_labels(const NetworkParams& p, const Matrix& x) {
    if (p.widths.back() < 2)
        throw ValidationError("prediction agreement needs categorical outputs");
    Matrix out = forward_batch(p, x);
    std::vector<int> labels(out.rows());
    for (std::size_t i = 0; i < out.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < out.cols(); ++j)
            if (out(i, j) > out(i, best)) best = j;
        labels[i] = static_cast<int>(best);
    }
    return labels;
}

AgreementReport prediction_agreement(const NetworkParams& a, const NetworkParams& b,
                                     const Dataset& data) {
    data.validate();
    if (a.widths.back() != b.widths.back())
        throw DimensionError("prediction agreement: output dims differ");
    const std::vector<int> pa = predict_labels(a, data.x);
    const std::vector<int> pb = predict_labels(b, data.x);

    const std::size_t k = a.widths.back();
    AgreementReport rep;
    rep.count_a.assign(k, 0);
    Matrix counts(k, k);
    std::size_t same = 0;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        counts(static_cast<std::size_t>(pb[i]), static_cast<std::size_t>(pa[i])) += 1.0;
        ++rep.count_a[static_cast<std::size_t>(pa[i])];
        if (pa[i] == pb[i]) ++same;
    }
    rep.pair_ratio = Matrix(k, k);
    for (std::size_t j = 0; j < k; ++j)
        if (rep.count_a[j] > 0)
            for (std::size_t i = 0; i < k; ++i)
                rep.pair_ratio(i, j) = counts(i, j) / static_cast<double>(rep.count_a[j]);
    rep.agreement = static_cast<double>(same) / static_cast<double>(pa.size());
    return rep;
}

} // namespace liftnet
