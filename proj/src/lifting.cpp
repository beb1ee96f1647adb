#include "liftnet/lifting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace liftnet {

namespace {

std::string side_name(FactorSide s) {
    switch (s) {
    case FactorSide::match_next: return "match_next";
    case FactorSide::match_prev: return "match_prev";
    default: return "auto";
    }
}

/// matmul(a, diag(d) * b): rows of b scaled by d before the product.
Matrix mul_diag_scaled(const Matrix& a, const Vector& d, const Matrix& b) {
    Matrix scaled = b;
    for (std::size_t i = 0; i < scaled.rows(); ++i) {
        double* row = scaled.row_ptr(i);
        for (std::size_t j = 0; j < scaled.cols(); ++j) row[j] *= d[i];
    }
    return matmul(a, scaled);
}

Vector matvec(const Matrix& a, const Vector& v) {
    if (a.cols() != v.size())
        throw DimensionError("matvec: " + std::to_string(a.rows()) + "x" +
                             std::to_string(a.cols()) + " vs " + std::to_string(v.size()));
    Vector out(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* row = a.row_ptr(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) acc += row[j] * v[j];
        out[i] = acc;
    }
    return out;
}

struct ValueRange {
    double lo = 0.0;
    double hi = 0.0;
};

ValueRange matrix_range(const Matrix& m) {
    ValueRange r{std::numeric_limits<double>::infinity(),
                 -std::numeric_limits<double>::infinity()};
    for (double v : m.data()) {
        r.lo = std::min(r.lo, v);
        r.hi = std::max(r.hi, v);
    }
    return r;
}

bool bn_equal(const BatchNorm& a, const BatchNorm& b) {
    return a.enabled == b.enabled && a.gamma == b.gamma && a.beta == b.beta;
}

} // namespace

LiftResult one_layer_lift(const NetworkParams& p, const Dataset& data, LiftPlan plan) {
    p.validate();
    data.validate();
    const std::size_t L = p.depth();
    const std::size_t q = plan.insert_after;
    if (q >= L)
        throw ValidationError("insert_after must be in [0, " + std::to_string(L - 1) +
                              "], got " + std::to_string(q));
    if (data.input_dim() != p.widths[0])
        throw DimensionError("dataset inputs have " + std::to_string(data.input_dim()) +
                             " features, network expects " + std::to_string(p.widths[0]));
    if (p.residual[q])
        throw ValidationError("cannot insert before layer " + std::to_string(q + 1) +
                              ": its residual skip would lose its input");

    const std::size_t m_q = p.widths[q];
    const std::size_t m_next = p.widths[q + 1];

    // Resolve the target interval.
    if (plan.x_low == plan.x_up) {
        if (plan.x_low != 0.0)
            throw ValidationError("lift interval is empty");
        auto [lo, hi] = p.activation.default_lift_interval();
        plan.x_low = lo;
        plan.x_up = hi;
    }
    if (!(plan.x_low < plan.x_up))
        throw ValidationError("lift interval needs x_low < x_up");
    const AffineSubdomain& seg = p.activation.subdomain_for(plan.x_low, plan.x_up);

    // Resolve the factorization side and the inserted width.
    std::size_t core = 0;
    if (plan.residual) {
        if (plan.factor_side == FactorSide::match_next)
            throw ValidationError("residual lifts factor through the identity; "
                                  "use match_prev or auto");
        plan.factor_side = FactorSide::match_prev;
        core = m_q;
        if (plan.inserted_width == 0) plan.inserted_width = m_q;
        if (plan.inserted_width != m_q)
            throw ValidationError("a residual inserted layer must have width " +
                                  std::to_string(m_q) + " to carry the skip, got " +
                                  std::to_string(plan.inserted_width));
    } else {
        if (plan.factor_side == FactorSide::auto_side)
            plan.factor_side =
                m_next <= m_q ? FactorSide::match_next : FactorSide::match_prev;
        core = plan.factor_side == FactorSide::match_next ? m_next : m_q;
        if (plan.inserted_width == 0) plan.inserted_width = core;
        if (plan.inserted_width < core)
            throw ValidationError("inserted width " + std::to_string(plan.inserted_width) +
                                  " is below the minimum " + std::to_string(core) + " for " +
                                  side_name(plan.factor_side));
    }
    const std::size_t w = plan.inserted_width;

    // Range of the values the inserted layer must reproduce.
    ForwardTrace trace;
    forward_batch(p, data.x, &trace);
    const bool next_style = plan.factor_side == FactorSide::match_next;
    const Matrix& feat = next_style ? trace.pre[q + 1] : trace.post[q];
    ValueRange r = matrix_range(feat);
    const double span = r.hi - r.lo;
    const bool degenerate =
        span <= 1e-12 * std::max({1.0, std::fabs(r.lo), std::fabs(r.hi)});

    const double mid = 0.5 * (plan.x_low + plan.x_up);
    double xi = 1.0;
    double shift = mid - r.lo;
    if (!degenerate) {
        xi = (plan.x_up - plan.x_low) / span;
        shift = plan.x_low - xi * r.lo;
    }

    const Matrix& w_next = p.weights[q]; // W^[q+1]
    const Vector& b_next = p.biases[q];

    Matrix w_hat(w, m_q, 0.0);
    Vector b_hat(w, mid); // padded neurons sit at the interval midpoint
    if (next_style) {
        for (std::size_t i = 0; i < core; ++i) {
            for (std::size_t j = 0; j < m_q; ++j) w_hat(i, j) = xi * w_next(i, j);
            b_hat[i] = xi * b_next[i] + shift;
        }
    } else {
        for (std::size_t i = 0; i < core; ++i) {
            w_hat(i, i) = xi;
            b_hat[i] = shift;
        }
    }

    Matrix w_out(m_next, w, 0.0);
    if (plan.residual) {
        const double denom = 1.0 + seg.lambda * xi;
        for (std::size_t i = 0; i < m_next; ++i)
            for (std::size_t j = 0; j < m_q; ++j) w_out(i, j) = w_next(i, j) / denom;
    } else if (next_style) {
        for (std::size_t i = 0; i < m_next; ++i) w_out(i, i) = 1.0 / (seg.lambda * xi);
    } else {
        for (std::size_t i = 0; i < m_next; ++i)
            for (std::size_t j = 0; j < m_q; ++j)
                w_out(i, j) = w_next(i, j) / (seg.lambda * xi);
    }

    Vector seg_out(w);
    for (std::size_t j = 0; j < w; ++j) seg_out[j] = seg.lambda * b_hat[j] + seg.mu;
    Vector correction = matvec(w_out, seg_out);
    Vector b_out(m_next);
    for (std::size_t i = 0; i < m_next; ++i) b_out[i] = b_next[i] - correction[i];

    NetworkParams deep;
    deep.activation = p.activation;
    deep.widths = p.widths;
    deep.widths.insert(deep.widths.begin() + static_cast<std::ptrdiff_t>(q + 1), w);
    deep.weights.reserve(L + 1);
    deep.biases.reserve(L + 1);
    deep.bn.reserve(L + 1);
    deep.residual.reserve(L + 1);
    for (std::size_t i = 0; i < q; ++i) {
        deep.weights.push_back(p.weights[i]);
        deep.biases.push_back(p.biases[i]);
        deep.bn.push_back(p.bn[i]);
        deep.residual.push_back(p.residual[i]);
    }
    deep.weights.push_back(std::move(w_hat));
    deep.biases.push_back(std::move(b_hat));
    deep.bn.push_back(BatchNorm{});
    deep.residual.push_back(plan.residual);
    deep.weights.push_back(std::move(w_out));
    deep.biases.push_back(std::move(b_out));
    deep.bn.push_back(p.bn[q]);
    deep.residual.push_back(false); // p.residual[q] was checked false above
    for (std::size_t i = q + 1; i < L; ++i) {
        deep.weights.push_back(p.weights[i]);
        deep.biases.push_back(p.biases[i]);
        deep.bn.push_back(p.bn[i]);
        deep.residual.push_back(p.residual[i]);
    }
    deep.validate();

    LiftRecord rec;
    rec.plan = plan;
    rec.case_taken = degenerate ? LiftCase::degenerate_constant
                    : next_style ? LiftCase::next_narrower
                                 : LiftCase::prev_narrower;
    rec.xi = xi;
    rec.lambda = Vector(w, seg.lambda);
    rec.mu = Vector(w, seg.mu);
    rec.core_width = core;
    return LiftResult{std::move(deep), std::move(rec)};
}

MembershipReport verify_membership(const NetworkParams& shallow, const NetworkParams& deep,
                                   const Dataset& data, const LiftPlan& plan) {
    shallow.validate();
    deep.validate();
    data.validate();
    const std::size_t L = shallow.depth();
    const std::size_t q = plan.insert_after;
    if (q >= L)
        throw ValidationError("insert_after must be in [0, " + std::to_string(L - 1) +
                              "], got " + std::to_string(q));
    if (deep.depth() != L + 1)
        throw ValidationError("deep network has depth " + std::to_string(deep.depth()) +
                              ", expected " + std::to_string(L + 1));
    if (deep.activation.kind() != shallow.activation.kind() ||
        deep.activation.alpha() != shallow.activation.alpha())
        throw ValidationError("networks use different activations");
    for (std::size_t i = 0; i <= q; ++i)
        if (deep.widths[i] != shallow.widths[i])
            throw ValidationError("width mismatch at layer " + std::to_string(i));
    for (std::size_t i = q + 1; i <= L; ++i)
        if (deep.widths[i + 1] != shallow.widths[i])
            throw ValidationError("width mismatch at layer " + std::to_string(i));
    if (data.input_dim() != shallow.widths[0])
        throw DimensionError("dataset inputs have " + std::to_string(data.input_dim()) +
                             " features, network expects " +
                             std::to_string(shallow.widths[0]));
    if (deep.bn[q].enabled)
        throw ValidationError("inserted layer must not use batch norm");
    if (shallow.residual[q] || deep.residual[q + 1])
        throw ValidationError("the layer after the insertion point must not carry "
                              "a residual skip");

    MembershipReport rep;

    // (i) every layer other than the inserted one and its successor is
    // inherited verbatim; the successor keeps everything but its affine map.
    bool local_ok = bn_equal(deep.bn[q + 1], shallow.bn[q]);
    for (std::size_t i = 0; local_ok && i < L; ++i) {
        if (i == q) continue; // replaced by the two new layers
        const std::size_t di = i < q ? i : i + 1;
        if (!(deep.weights[di] == shallow.weights[i]) ||
            deep.biases[di] != shallow.biases[i] ||
            !bn_equal(deep.bn[di], shallow.bn[i]) ||
            deep.residual[di] != shallow.residual[i]) {
            local_ok = false;
        }
    }
    rep.local_in_layer_ok = local_ok;

    // (ii) the inserted layer's pre-activations stay strictly inside one
    // affine subdomain per neuron.
    ForwardTrace trace;
    forward_batch(deep, data.x, &trace);
    const Matrix& pre = trace.act_in[q + 1];
    const std::size_t w = pre.cols();
    const std::size_t n = pre.rows();
    const auto& segs = deep.activation.subdomains();

    Vector lambda(w), mu(w);
    rep.neuron_margins.assign(w, 0.0);
    rep.min_margin = std::numeric_limits<double>::infinity();
    bool lin_ok = true;
    bool approx = false;
    for (std::size_t j = 0; j < w; ++j) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_seg = 0, best_arg = 0;
        for (std::size_t s = 0; s < segs.size(); ++s) {
            double worst = std::numeric_limits<double>::infinity();
            std::size_t arg = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const double m = segs[s].margin(pre(i, j));
                if (m < worst) {
                    worst = m;
                    arg = i;
                }
            }
            if (worst > best) {
                best = worst;
                best_seg = s;
                best_arg = arg;
            }
        }
        rep.neuron_margins[j] = best;
        rep.min_margin = std::min(rep.min_margin, best);
        lambda[j] = segs[best_seg].lambda;
        mu[j] = segs[best_seg].mu;
        approx = approx || segs[best_seg].approx;
        if (!(best > 0.0)) {
            lin_ok = false;
            if (!rep.first_violation) rep.first_violation = {j, best_arg};
        }
    }
    rep.linearization_ok = lin_ok;
    rep.approx_segment = approx;

    // (iii) the two new layers compose back to the replaced affine map.
    const Matrix& w_hat = deep.weights[q];
    const Vector& b_hat = deep.biases[q];
    const Matrix& w_out = deep.weights[q + 1];
    const Vector& b_out = deep.biases[q + 1];
    const Matrix& w_target = shallow.weights[q];
    const Vector& b_target = shallow.biases[q];

    Matrix lhs_w = mul_diag_scaled(w_out, lambda, w_hat);
    if (deep.residual[q]) lhs_w = add(lhs_w, w_out);
    Vector seg_out(w);
    for (std::size_t j = 0; j < w; ++j) seg_out[j] = lambda[j] * b_hat[j] + mu[j];
    Vector lhs_b = matvec(w_out, seg_out);
    for (std::size_t i = 0; i < lhs_b.size(); ++i) lhs_b[i] += b_out[i];

    rep.weight_residual =
        frobenius_norm(sub(lhs_w, w_target)) / std::max(1.0, frobenius_norm(w_target));
    Vector b_diff(b_target.size());
    for (std::size_t i = 0; i < b_target.size(); ++i) b_diff[i] = lhs_b[i] - b_target[i];
    rep.bias_residual = l2_norm(b_diff) / std::max(1.0, l2_norm(b_target));

    rep.tol = approx ? 1e-4 : 1e-8;
    rep.output_preserving_ok =
        rep.weight_residual <= rep.tol && rep.bias_residual <= rep.tol;

    rep.overall = rep.local_in_layer_ok && rep.linearization_ok && rep.output_preserving_ok;
    return rep;
}

MultiLiftResult multi_layer_lift(const NetworkParams& p, const Dataset& data,
                                 std::vector<LiftPlan> plans) {
    MultiLiftResult out;
    out.params = p;
    out.records.reserve(plans.size());
    for (std::size_t k = 0; k < plans.size(); ++k) {
        try {
            LiftResult step = one_layer_lift(out.params, data, plans[k]);
            out.params = std::move(step.params);
            out.records.push_back(std::move(step.record));
        } catch (const ValidationError& e) {
            throw ValidationError("plan " + std::to_string(k) + ": " + e.what());
        } catch (const NumericalError& e) {
            throw NumericalError("plan " + std::to_string(k) + ": " + e.what());
        }
    }
    return out;
}

MergeResult merge_linear_layers(const NetworkParams& p, const Dataset& data,
                                double threshold) {
    p.validate();
    data.validate();
    if (p.any_bn())
        throw ValidationError("merge does not support batch-norm layers");

    MergeResult out;
    out.params = p;
    // Merging the sole remaining hidden layer would leave a bare affine map,
    // so the loop always keeps at least one hidden layer.
    while (out.params.depth() > 2) {
        MpcReport rep = mpc(out.params, data, threshold);
        if (rep.flagged_layers.empty()) break;
        const std::size_t l = rep.flagged_layers.front(); // paper layer, 1-based
        if (out.params.residual[l])
            throw ValidationError("cannot merge layer " + std::to_string(l) +
                                  " into its residual successor");

        ForwardTrace trace;
        forward_batch(out.params, data.x, &trace);
        const Matrix& act_in = trace.act_in[l];
        const std::size_t m = act_in.cols();
        const std::size_t n = act_in.rows();
        Vector lam(m), muv(m);
        Vector col_in(n), col_out(n);
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t i = 0; i < n; ++i) {
                col_in[i] = act_in(i, j);
                col_out[i] = out.params.activation.value(col_in[i]);
            }
            AffineFit fit = lstsq_affine(col_in, col_out);
            lam[j] = fit.slope;
            muv[j] = fit.intercept;
        }

        const Matrix& w_lo = out.params.weights[l - 1]; // W^[l]
        const Vector& b_lo = out.params.biases[l - 1];
        const Matrix& w_hi = out.params.weights[l]; // W^[l+1]
        const Vector& b_hi = out.params.biases[l];

        Matrix w_new = mul_diag_scaled(w_hi, lam, w_lo);
        if (out.params.residual[l - 1]) w_new = add(w_new, w_hi);
        Vector seg_out(m);
        for (std::size_t j = 0; j < m; ++j) seg_out[j] = lam[j] * b_lo[j] + muv[j];
        Vector b_new = matvec(w_hi, seg_out);
        for (std::size_t i = 0; i < b_new.size(); ++i) b_new[i] += b_hi[i];

        MergeEvent ev;
        ev.layer = l;
        ev.mpc_value = rep.layers[l - 1].mpc;
        ev.lambda_hat = lam;
        ev.mu_hat = muv;
        out.report.events.push_back(std::move(ev));

        NetworkParams next;
        next.activation = out.params.activation;
        next.widths = out.params.widths;
        next.widths.erase(next.widths.begin() + static_cast<std::ptrdiff_t>(l));
        const std::size_t old_layers = out.params.weights.size();
        for (std::size_t i = 0; i < old_layers; ++i) {
            if (i == l - 1) {
                next.weights.push_back(std::move(w_new));
                next.biases.push_back(std::move(b_new));
                next.residual.push_back(false); // any skip was folded into w_new
                next.bn.push_back(BatchNorm{});
            } else if (i == l) {
                continue; // absorbed into the merged layer
            } else {
                next.weights.push_back(out.params.weights[i]);
                next.biases.push_back(out.params.biases[i]);
                next.residual.push_back(out.params.residual[i]);
                next.bn.push_back(BatchNorm{});
            }
        }
        next.validate();
        out.params = std::move(next);
    }
    return out;
}

double gradient_amplification_bound(const NetworkParams& deep, const LiftRecord& rec) {
    const std::size_t q = rec.plan.insert_after;
    if (q + 1 >= deep.depth())
        throw ValidationError("lift record does not match the network depth");
    const Matrix& w_hat = deep.weights[q];
    const Vector& b_hat = deep.biases[q];
    const Matrix& w_out = deep.weights[q + 1];
    const Vector& lam = rec.lambda;
    if (lam.size() != w_hat.rows())
        throw ValidationError("lift record width does not match the network");

    double t1 = 0.0; // |diag(lambda) W_out^T|_F
    for (std::size_t i = 0; i < w_out.rows(); ++i)
        for (std::size_t j = 0; j < w_out.cols(); ++j) {
            const double v = lam[j] * w_out(i, j);
            t1 += v * v;
        }
    t1 = std::sqrt(t1);
    double t2 = 0.0; // |diag(lambda) W_hat|_F
    for (std::size_t i = 0; i < w_hat.rows(); ++i)
        for (std::size_t j = 0; j < w_hat.cols(); ++j) {
            const double v = lam[i] * w_hat(i, j);
            t2 += v * v;
        }
    t2 = std::sqrt(t2);
    Vector seg_out(lam.size());
    for (std::size_t j = 0; j < lam.size(); ++j)
        seg_out[j] = lam[j] * b_hat[j] + rec.mu[j];
    const double t3 = l2_norm(seg_out);

    const double root_p = std::sqrt(static_cast<double>(deep.param_count()));
    return 1.0 + root_p * (2.0 * t1 + t2 + t3);
}

} // namespace liftnet
