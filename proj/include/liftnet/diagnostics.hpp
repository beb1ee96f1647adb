#pragma once

#include <cstddef>
#include <vector>

#include "liftnet/dataset.hpp"
#include "liftnet/network.hpp"

namespace liftnet {

/// Minimal Pearson correlation between neuron input and output over a layer.
/// Zero-neurons (input row and output column weights both below zero_tol) and
/// constant neurons are masked out of the minimum.
struct MpcLayerReport {
    std::size_t layer = 0; // paper numbering, 1..L-1
    bool defined = false;  // false when every neuron is masked
    double mpc = 0.0;      // min over unmasked |rho|, valid when defined
    std::vector<double> abs_rho;
    std::vector<bool> zero_neuron;
    std::vector<bool> constant_neuron;
    bool flagged = false; // defined && mpc > threshold
};

struct MpcReport {
    double threshold = 0.99;
    std::vector<MpcLayerReport> layers; // one per hidden layer
    std::vector<std::size_t> flagged_layers;
};

inline constexpr double kZeroNeuronTol = 1e-6;
inline constexpr double kMpcThreshold = 0.99;

/// Pure form over per-neuron input/output feature columns.
MpcLayerReport mpc_from_features(const Matrix& act_in, const Matrix& act_out,
                                 const std::vector<bool>& zero_mask, double threshold);

MpcReport mpc(const NetworkParams& p, const Dataset& data,
              double threshold = kMpcThreshold, double zero_tol = kZeroNeuronTol);

struct CriticalityReport {
    double grad_l1 = 0.0;
    double tol = 1e-4;
    bool is_critical = false;
};
CriticalityReport criticality(const NetworkParams& p, const Dataset& data,
                              double tol = 1e-4);

/// Hessian eigenvalue counts at threshold tau. A point is a strict saddle
/// when at least one eigenvalue is below -tau; otherwise the spectrum is
/// consistent with a minimum or non-strict saddle.
struct SpectrumReport {
    Vector eigenvalues; // ascending
    double tau = 1e-12;
    std::size_t n_negative = 0;
    std::size_t n_zero = 0;
    std::size_t n_positive = 0;
    bool strict_saddle = false;
    double rel_asymmetry = 0.0; // of the finite-difference Hessian
};

SpectrumReport classify_spectrum(Vector eigenvalues, double tau);
SpectrumReport spectrum(const NetworkParams& p, const Dataset& data, double tau = 1e-12,
                        std::size_t max_params = 3000);

/// Argmax predictions; requires at least two output coordinates.
std::vector<int> predict_labels(const NetworkParams& p, const Matrix& x);

/// Fraction of inputs on which two networks predict the same class, plus the
/// pair ratio matrix: entry (i, j) is the fraction of samples predicted j by
/// `a` that `b` predicts as i.
struct AgreementReport {
    double agreement = 0.0;
    Matrix pair_ratio;
    std::vector<std::size_t> count_a; // samples per class predicted by `a`
};
AgreementReport prediction_agreement(const NetworkParams& a, const NetworkParams& b,
                                     const Dataset& data);

} // namespace liftnet
