#include "liftnet/network.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "liftnet/errors.hpp"

namespace liftnet {

namespace {

Vector column_mean(const Matrix& m) {
    Vector out(m.cols(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double* row = m.row_ptr(i);
        for (std::size_t j = 0; j < m.cols(); ++j) out[j] += row[j];
    }
    for (double& x : out) x /= static_cast<double>(m.rows());
    return out;
}

Vector column_sum(const Matrix& m) {
    Vector out(m.cols(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double* row = m.row_ptr(i);
        for (std::size_t j = 0; j < m.cols(); ++j) out[j] += row[j];
    }
    return out;
}

void check_input_dims(const NetworkParams& p, const Matrix& x) {
    if (x.cols() != p.widths.front())
        throw DimensionError("forward: input dim " + std::to_string(x.cols()) +
                             " does not match m_0 = " + std::to_string(p.widths.front()));
}

} // namespace

std::size_t NetworkParams::param_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        n += weights[i].rows() * weights[i].cols() + biases[i].size();
        if (i < bn.size() && bn[i].enabled) n += 2 * biases[i].size();
    }
    return n;
}

bool NetworkParams::any_bn() const {
    for (const BatchNorm& b : bn)
        if (b.enabled) return true;
    return false;
}

bool NetworkParams::any_residual() const {
    for (bool r : residual)
        if (r) return true;
    return false;
}

void NetworkParams::validate() const {
    const std::size_t L = weights.size();
    if (widths.size() != L + 1 || L == 0)
        throw ValidationError("network: widths/layers mismatch");
    if (biases.size() != L) throw ValidationError("network: biases/layers mismatch");
    if (!bn.empty() && bn.size() != L) throw ValidationError("network: bn/layers mismatch");
    if (!residual.empty() && residual.size() != L)
        throw ValidationError("network: residual flags/layers mismatch");
    for (std::size_t i = 0; i < L; ++i) {
        if (weights[i].rows() != widths[i + 1] || weights[i].cols() != widths[i])
            throw DimensionError("network: layer " + std::to_string(i + 1) +
                                 " weight shape mismatch");
        if (biases[i].size() != widths[i + 1])
            throw DimensionError("network: layer " + std::to_string(i + 1) +
                                 " bias length mismatch");
        ensure_finite(weights[i], "weights");
        ensure_finite(biases[i], "biases");
        if (!bn.empty() && bn[i].enabled) {
            if (i + 1 == L) throw ValidationError("network: batch norm on output layer");
            if (bn[i].gamma.size() != widths[i + 1] || bn[i].beta.size() != widths[i + 1])
                throw DimensionError("network: bn parameter length mismatch");
            ensure_finite(bn[i].gamma, "bn gamma");
            ensure_finite(bn[i].beta, "bn beta");
        }
        if (!residual.empty() && residual[i]) {
            if (i + 1 == L) throw ValidationError("network: residual output layer");
            if (widths[i + 1] != widths[i])
                throw ValidationError("network: residual layer " + std::to_string(i + 1) +
                                      " needs equal widths");
        }
    }
}

NetworkParams NetworkParams::zeros(std::vector<std::size_t> w, ActivationSpec act) {
    NetworkParams p;
    p.widths = std::move(w);
    p.activation = act;
    const std::size_t L = p.widths.size() - 1;
    for (std::size_t i = 0; i < L; ++i) {
        p.weights.emplace_back(p.widths[i + 1], p.widths[i]);
        p.biases.emplace_back(p.widths[i + 1], 0.0);
    }
    p.bn.assign(L, BatchNorm{});
    p.residual.assign(L, false);
    return p;
}

NetworkParams NetworkParams::gaussian(std::vector<std::size_t> w, ActivationSpec act,
                                      double variance, Rng& rng, bool with_bn,
                                      double gamma_init) {
    NetworkParams p = zeros(std::move(w), act);
    const double sd = std::sqrt(variance);
    for (Matrix& wm : p.weights)
        for (double& x : wm.data()) x = rng.normal(0.0, sd);
    if (with_bn) {
        for (std::size_t i = 0; i + 1 < p.weights.size(); ++i) {
            p.bn[i].enabled = true;
            p.bn[i].gamma.assign(p.widths[i + 1], gamma_init);
            p.bn[i].beta.assign(p.widths[i + 1], 0.0);
        }
    }
    return p;
}

Vector NetworkParams::flatten() const {
    Vector theta;
    theta.reserve(param_count());
    for (std::size_t i = 0; i < weights.size(); ++i) {
        theta.insert(theta.end(), weights[i].data().begin(), weights[i].data().end());
        theta.insert(theta.end(), biases[i].begin(), biases[i].end());
        if (i < bn.size() && bn[i].enabled) {
            theta.insert(theta.end(), bn[i].gamma.begin(), bn[i].gamma.end());
            theta.insert(theta.end(), bn[i].beta.begin(), bn[i].beta.end());
        }
    }
    return theta;
}

void NetworkParams::set_from_flat(const Vector& theta) {
    if (theta.size() != param_count())
        throw DimensionError("set_from_flat: expected " + std::to_string(param_count()) +
                             " coordinates, got " + std::to_string(theta.size()));
    std::size_t k = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        for (double& x : weights[i].data()) x = theta[k++];
        for (double& x : biases[i]) x = theta[k++];
        if (i < bn.size() && bn[i].enabled) {
            for (double& x : bn[i].gamma) x = theta[k++];
            for (double& x : bn[i].beta) x = theta[k++];
        }
    }
}

Matrix batchnorm_forward(const Matrix& v, const Vector& gamma, const Vector& beta,
                         BnCache* cache) {
    if (v.rows() < 2) throw ValidationError("batch norm needs batch size >= 2");
    if (gamma.size() != v.cols() || beta.size() != v.cols())
        throw DimensionError("batch norm parameter length mismatch");
    const std::size_t n = v.rows(), m = v.cols();
    Vector mu = column_mean(v);
    Vector var(m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            const double d = v(i, j) - mu[j];
            var[j] += d * d;
        }
    Vector rstd(m);
    for (std::size_t j = 0; j < m; ++j)
        rstd[j] = 1.0 / std::sqrt(var[j] / static_cast<double>(n) + kBnEps);

    Matrix xnorm(n, m), out(n, m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            xnorm(i, j) = (v(i, j) - mu[j]) * rstd[j];
            out(i, j) = gamma[j] * xnorm(i, j) + beta[j];
        }
    if (cache) {
        cache->xnorm = xnorm;
        cache->mean = std::move(mu);
        cache->rstd = std::move(rstd);
    }
    return out;
}

Matrix batchnorm_backward(const Matrix& dout, const BnCache& cache, const Vector& gamma,
                          Vector* dgamma_sum, Vector* dbeta_sum) {
    const std::size_t n = dout.rows(), m = dout.cols();
    if (cache.xnorm.rows() != n || cache.xnorm.cols() != m)
        throw DimensionError("batch norm backward: cache shape mismatch");
    Vector s1(m, 0.0), s2(m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            s1[j] += dout(i, j);
            s2[j] += dout(i, j) * cache.xnorm(i, j);
        }
    Matrix din(n, m);
    const double invn = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
            din(i, j) = gamma[j] * cache.rstd[j] *
                        (dout(i, j) - s1[j] * invn - cache.xnorm(i, j) * s2[j] * invn);
    if (dgamma_sum) *dgamma_sum = s2;
    if (dbeta_sum) *dbeta_sum = s1;
    return din;
}

Matrix forward_batch(const NetworkParams& p, const Matrix& x, ForwardTrace* trace) {
    p.validate();
    check_input_dims(p, x);
    const std::size_t L = p.depth();

    ForwardTrace local;
    ForwardTrace& tr = trace ? *trace : local;
    tr.pre.assign(L + 1, Matrix());
    tr.act_in.assign(L + 1, Matrix());
    tr.post.assign(L + 1, Matrix());
    tr.bn_xnorm.assign(L + 1, Matrix());
    tr.bn_rstd.assign(L + 1, Vector());
    tr.pre[0] = tr.act_in[0] = tr.post[0] = x;

    Matrix cur = x;
    for (std::size_t li = 0; li < L; ++li) {
        const std::size_t l = li + 1;
        Matrix pre = matmul(cur, transpose(p.weights[li]));
        for (std::size_t i = 0; i < pre.rows(); ++i) {
            double* row = pre.row_ptr(i);
            for (std::size_t j = 0; j < pre.cols(); ++j) row[j] += p.biases[li][j];
        }
        tr.pre[l] = pre;

        Matrix act_in;
        if (!p.bn.empty() && p.bn[li].enabled) {
            BnCache cache;
            act_in = batchnorm_forward(pre, p.bn[li].gamma, p.bn[li].beta, &cache);
            tr.bn_xnorm[l] = std::move(cache.xnorm);
            tr.bn_rstd[l] = std::move(cache.rstd);
        } else {
            act_in = pre;
        }
        tr.act_in[l] = act_in;

        if (l == L) {
            tr.post[l] = act_in; // affine output layer
        } else {
            Matrix post(act_in.rows(), act_in.cols());
            for (std::size_t i = 0; i < act_in.rows(); ++i)
                for (std::size_t j = 0; j < act_in.cols(); ++j)
                    post(i, j) = p.activation.value(act_in(i, j));
            if (!p.residual.empty() && p.residual[li]) post = add(post, cur);
            tr.post[l] = std::move(post);
        }
        cur = tr.post[l];
    }
    return cur;
}

Vector forward_one(const NetworkParams& p, const Vector& x) {
    Matrix xb(1, x.size());
    for (std::size_t j = 0; j < x.size(); ++j) xb(0, j) = x[j];
    Matrix out = forward_batch(p, xb);
    Vector v(out.cols());
    for (std::size_t j = 0; j < out.cols(); ++j) v[j] = out(0, j);
    return v;
}

namespace {

/// Row-wise softmax, numerically stable.
Matrix softmax_rows(const Matrix& f) {
    Matrix p(f.rows(), f.cols());
    for (std::size_t i = 0; i < f.rows(); ++i) {
        double mx = f(i, 0);
        for (std::size_t j = 1; j < f.cols(); ++j) mx = std::max(mx, f(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < f.cols(); ++j) {
            p(i, j) = std::exp(f(i, j) - mx);
            sum += p(i, j);
        }
        for (std::size_t j = 0; j < f.cols(); ++j) p(i, j) /= sum;
    }
    return p;
}

double loss_from_outputs(const Matrix& out, const Dataset& data) {
    const std::size_t n = data.size();
    double total = 0.0;
    if (data.loss == LossKind::mse) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < out.cols(); ++j) {
                const double d = out(i, j) - data.y(i, j);
                total += d * d;
            }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            double mx = out(i, 0);
            for (std::size_t j = 1; j < out.cols(); ++j) mx = std::max(mx, out(i, j));
            double sum = 0.0;
            for (std::size_t j = 0; j < out.cols(); ++j) sum += std::exp(out(i, j) - mx);
            const double lse = mx + std::log(sum);
            for (std::size_t j = 0; j < out.cols(); ++j)
                if (data.y(i, j) != 0.0) total -= data.y(i, j) * (out(i, j) - lse);
        }
    }
    return total / static_cast<double>(n);
}

} // namespace

double loss_value(const NetworkParams& p, const Dataset& data) {
    data.validate();
    if (data.output_dim() != p.widths.back())
        throw DimensionError("loss: target dim does not match m_L");
    Matrix out = forward_batch(p, data.x);
    return loss_from_outputs(out, data);
}

double accuracy(const NetworkParams& p, const Dataset& data) {
    data.validate();
    const std::vector<int> want = data.labels();
    Matrix out = forward_batch(p, data.x);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < out.cols(); ++j)
            if (out(i, j) > out(i, best)) best = j;
        if (static_cast<int>(best) == want[i]) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(out.rows());
}

double GradientBundle::l1_norm() const {
    double s = 0.0;
    for (const Matrix& m : dw) s += liftnet::l1_norm(m);
    for (const Vector& v : db) s += liftnet::l1_norm(v);
    for (const Vector& v : dgamma) s += liftnet::l1_norm(v);
    for (const Vector& v : dbeta) s += liftnet::l1_norm(v);
    return s;
}

Vector GradientBundle::flatten(const NetworkParams& shape) const {
    Vector out;
    for (std::size_t i = 0; i < dw.size(); ++i) {
        out.insert(out.end(), dw[i].data().begin(), dw[i].data().end());
        out.insert(out.end(), db[i].begin(), db[i].end());
        if (i < shape.bn.size() && shape.bn[i].enabled) {
            out.insert(out.end(), dgamma[i].begin(), dgamma[i].end());
            out.insert(out.end(), dbeta[i].begin(), dbeta[i].end());
        }
    }
    return out;
}

GradientBundle backprop(const NetworkParams& p, const Dataset& data,
                        const ForwardTrace* shared_trace) {
    data.validate();
    if (data.input_dim() != p.widths.front() || data.output_dim() != p.widths.back())
        throw DimensionError("backprop: dataset dims do not match network");

    ForwardTrace local;
    const ForwardTrace* tr = shared_trace;
    if (!tr) {
        forward_batch(p, data.x, &local);
        tr = &local;
    }

    const std::size_t L = p.depth();
    const std::size_t n = data.size();
    const double invn = 1.0 / static_cast<double>(n);

    GradientBundle gb;
    gb.dw.resize(L);
    gb.db.resize(L);
    gb.dgamma.resize(L);
    gb.dbeta.resize(L);
    gb.z.assign(L + 1, Matrix());
    gb.g.assign(L + 1, Matrix());

    // Per-sample loss gradient at the output.
    const Matrix& out = tr->post[L];
    Matrix zcur(n, out.cols());
    if (data.loss == LossKind::mse) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < out.cols(); ++j)
                zcur(i, j) = 2.0 * (out(i, j) - data.y(i, j));
    } else {
        zcur = softmax_rows(out);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < out.cols(); ++j) zcur(i, j) -= data.y(i, j);
    }
    gb.z[L] = zcur;
    gb.g[L] = Matrix(n, out.cols(), 1.0);

    for (std::size_t l = L; l >= 1; --l) {
        const std::size_t li = l - 1;
        Matrix gl;
        if (l == L) {
            gl = gb.g[L];
        } else {
            const Matrix& a = tr->act_in[l];
            gl = Matrix(n, a.cols());
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < a.cols(); ++j)
                    gl(i, j) = p.activation.slope(a(i, j));
            gb.g[l] = gl;
        }

        Matrix u = hadamard(zcur, gl); // d(sum loss)/d act_in[l]
        Matrix v;                      // d(sum loss)/d pre[l]
        if (!p.bn.empty() && p.bn[li].enabled) {
            BnCache cache;
            cache.xnorm = tr->bn_xnorm[l];
            cache.rstd = tr->bn_rstd[l];
            Vector dg, dbta;
            v = batchnorm_backward(u, cache, p.bn[li].gamma, &dg, &dbta);
            for (double& x : dg) x *= invn;
            for (double& x : dbta) x *= invn;
            gb.dgamma[li] = std::move(dg);
            gb.dbeta[li] = std::move(dbta);
        } else {
            v = std::move(u);
        }

        gb.dw[li] = scale(matmul(transpose(v), tr->post[l - 1]), invn);
        Vector dbv = column_sum(v);
        for (double& x : dbv) x *= invn;
        gb.db[li] = std::move(dbv);

        if (l > 1) {
            Matrix znext = matmul(v, p.weights[li]);
            if (!p.residual.empty() && p.residual[li]) znext = add(znext, zcur);
            zcur = std::move(znext);
            gb.z[l - 1] = zcur;
        }
    }
    return gb;
}

HessianResult hessian_fd(const NetworkParams& p, const Dataset& data,
                         std::size_t max_params, double step_scale) {
    data.validate();
    const std::size_t np = p.param_count();
    if (np > max_params)
        throw ValidationError("hessian: " + std::to_string(np) +
                              " parameters exceed cap " + std::to_string(max_params));

    Vector theta = p.flatten();
    NetworkParams work = p;
    Matrix h(np, np);
    for (std::size_t j = 0; j < np; ++j) {
        const double tj = theta[j];
        const double step = step_scale * std::max(1.0, std::fabs(tj));
        theta[j] = tj + step;
        work.set_from_flat(theta);
        Vector gp = backprop(work, data).flatten(work);
        theta[j] = tj - step;
        work.set_from_flat(theta);
        Vector gm = backprop(work, data).flatten(work);
        theta[j] = tj;
        for (std::size_t i = 0; i < np; ++i) h(i, j) = (gp[i] - gm[i]) / (2.0 * step);
    }

    double asym = 0.0;
    for (std::size_t i = 0; i < np; ++i)
        for (std::size_t j = i + 1; j < np; ++j) {
            const double d = h(i, j) - h(j, i);
            asym += 2.0 * d * d;
        }
    HessianResult res;
    res.rel_asymmetry = std::sqrt(asym) / std::max(1.0, frobenius_norm(h));
    res.h = Matrix(np, np);
    for (std::size_t i = 0; i < np; ++i)
        for (std::size_t j = 0; j < np; ++j) res.h(i, j) = 0.5 * (h(i, j) + h(j, i));
    return res;
}

} // namespace liftnet
