#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "liftnet/activation.hpp"
#include "liftnet/dataset.hpp"
#include "liftnet/linalg.hpp"
#include "liftnet/rng.hpp"

namespace liftnet {

/// Per-layer batch-norm state. Applied between the affine map and the
/// activation; never on the output layer.
struct BatchNorm {
    bool enabled = false;
    Vector gamma;
    Vector beta;
};

inline constexpr double kBnEps = 1e-8;

/// Fully connected network f^[l] = sigma(W^[l] f^[l-1] + b^[l]) for
/// l = 1..L-1 and affine output f^[L] = W^[L] f^[L-1] + b^[L].
///
/// weights[i] holds W^[i+1] (shape widths[i+1] x widths[i]); a layer marked
/// residual adds its input back after the activation:
/// f^[l] = sigma(W f^[l-1] + b) + f^[l-1], which requires equal widths.
struct NetworkParams {
    std::vector<std::size_t> widths; // m_0 .. m_L
    std::vector<Matrix> weights;
    std::vector<Vector> biases;
    ActivationSpec activation = ActivationSpec::relu();
    std::vector<BatchNorm> bn;       // sized like weights; output entry disabled
    std::vector<bool> residual;      // sized like weights; hidden layers only

    std::size_t depth() const { return weights.size(); } // L
    std::size_t param_count() const;
    void validate() const;

    bool any_bn() const;
    bool any_residual() const;

    /// Zero-initialized network of the given shape.
    static NetworkParams zeros(std::vector<std::size_t> widths, ActivationSpec act);
    /// Gaussian init: entries ~ N(0, variance), biases zero, BN at gamma_init/0.
    static NetworkParams gaussian(std::vector<std::size_t> widths, ActivationSpec act,
                                  double variance, Rng& rng,
                                  bool with_bn = false, double gamma_init = 1.0);

    /// Canonical coordinates: per layer W (row-major), b, then gamma and beta
    /// when batch norm is on. Used by the Hessian and criticality code.
    Vector flatten() const;
    void set_from_flat(const Vector& theta);
};

/// Everything the backward pass and the diagnostics need from a forward pass.
/// Index l runs over paper layers 0..L; entry 0 holds the input batch.
struct ForwardTrace {
    std::vector<Matrix> pre;     // affine output W f + b (entry 0 = inputs)
    std::vector<Matrix> act_in;  // input to sigma (= BN output when enabled)
    std::vector<Matrix> post;    // f^[l]; post[L] is the network output
    // BN caches (filled only for BN layers).
    std::vector<Matrix> bn_xnorm;
    std::vector<Vector> bn_rstd;
};

/// Forward pass over a batch; rows are samples.
Matrix forward_batch(const NetworkParams& p, const Matrix& x, ForwardTrace* trace = nullptr);
Vector forward_one(const NetworkParams& p, const Vector& x);

/// Empirical risk R_S = (1/n) sum_i loss(f(x_i), y_i); mse uses the squared
/// euclidean norm, cross_entropy is softmax cross entropy.
double loss_value(const NetworkParams& p, const Dataset& data);
/// Classification accuracy under argmax; requires categorical targets.
double accuracy(const NetworkParams& p, const Dataset& data);

/// Gradients of R_S plus the per-sample backprop intermediates:
/// z[l] row i = dloss_i/df^[l] and g[l] the activation slopes (g[L] = 1).
struct GradientBundle {
    std::vector<Matrix> dw;
    std::vector<Vector> db;
    std::vector<Vector> dgamma; // empty vectors for non-BN layers
    std::vector<Vector> dbeta;
    std::vector<Matrix> z; // index by paper layer 1..L (entry 0 unused)
    std::vector<Matrix> g;

    double l1_norm() const;
    Vector flatten(const NetworkParams& shape) const;
};

GradientBundle backprop(const NetworkParams& p, const Dataset& data,
                        const ForwardTrace* shared_trace = nullptr);

/// Central-difference Hessian of R_S on the flattened coordinates, step
/// h_j = step_scale * max(1, |theta_j|). Symmetrized before return.
struct HessianResult {
    Matrix h;
    double rel_asymmetry = 0.0;
};
HessianResult hessian_fd(const NetworkParams& p, const Dataset& data,
                         std::size_t max_params = 3000, double step_scale = 1e-4);

/// Standalone batch-norm ops (column-wise over the batch).
struct BnCache {
    Matrix xnorm;
    Vector mean;
    Vector rstd;
};
Matrix batchnorm_forward(const Matrix& v, const Vector& gamma, const Vector& beta,
                         BnCache* cache = nullptr);
/// Given dL/d(output), returns dL/d(input) and writes parameter gradients
/// (sums over the batch; divide by n for means).
Matrix batchnorm_backward(const Matrix& dout, const BnCache& cache, const Vector& gamma,
                          Vector* dgamma_sum = nullptr, Vector* dbeta_sum = nullptr);

} // namespace liftnet
