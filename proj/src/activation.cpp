#include "liftnet/activation.hpp"

#include <cmath>
#include <limits>

namespace liftnet {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

double AffineSubdomain::margin(double x) const {
    const double lo = std::isinf(a) ? kInf : x - a;
    const double hi = std::isinf(b) ? kInf : b - x;
    return std::min(lo, hi);
}

ActivationSpec::ActivationSpec(ActKind kind, double alpha) : kind_(kind), alpha_(alpha) {
    switch (kind_) {
    case ActKind::relu:
        subdomains_ = {{0.0, kInf, 1.0, 0.0, false}};
        break;
    case ActKind::leaky_relu:
        if (alpha_ == 0.0) throw ValidationError("leaky_relu: alpha must be nonzero");
        subdomains_ = {{-kInf, 0.0, alpha_, 0.0, false}, {0.0, kInf, 1.0, 0.0, false}};
        break;
    case ActKind::elu:
        if (alpha_ <= 0.0) throw ValidationError("elu: alpha must be positive");
        subdomains_ = {{0.0, kInf, 1.0, 0.0, false}};
        break;
    case ActKind::tanh_act:
        // tanh is affine only approximately, on a small segment at the origin.
        subdomains_ = {{-0.01, 0.01, 1.0, 0.0, true}};
        approx_ = true;
        break;
    }
    self_check();
}

ActivationSpec ActivationSpec::relu() { return ActivationSpec(ActKind::relu, 0.0); }
ActivationSpec ActivationSpec::leaky_relu(double alpha) {
    return ActivationSpec(ActKind::leaky_relu, alpha);
}
ActivationSpec ActivationSpec::elu(double alpha) { return ActivationSpec(ActKind::elu, alpha); }
ActivationSpec ActivationSpec::tanh_act() { return ActivationSpec(ActKind::tanh_act, 0.0); }

ActivationSpec ActivationSpec::from_name(const std::string& name, double alpha) {
    if (name == "relu") return relu();
    if (name == "leaky_relu") return leaky_relu(alpha == 0.0 ? 0.01 : alpha);
    if (name == "elu") return elu(alpha == 0.0 ? 1.0 : alpha);
    if (name == "tanh") return tanh_act();
    throw ValidationError("unknown activation: " + name);
}

std::string ActivationSpec::name() const {
    switch (kind_) {
    case ActKind::relu: return "relu";
    case ActKind::leaky_relu: return "leaky_relu";
    case ActKind::elu: return "elu";
    case ActKind::tanh_act: return "tanh";
    }
    return "?";
}

double ActivationSpec::value(double x) const {
    switch (kind_) {
    case ActKind::relu: return x > 0.0 ? x : 0.0;
    case ActKind::leaky_relu: return x > 0.0 ? x : alpha_ * x;
    case ActKind::elu: return x > 0.0 ? x : alpha_ * std::expm1(x);
    case ActKind::tanh_act: return std::tanh(x);
    }
    return 0.0;
}

double ActivationSpec::slope(double x) const {
    switch (kind_) {
    case ActKind::relu: return x > 0.0 ? 1.0 : 0.0;
    case ActKind::leaky_relu: return x > 0.0 ? 1.0 : alpha_;
    case ActKind::elu: return x > 0.0 ? 1.0 : alpha_ * std::exp(x);
    case ActKind::tanh_act: {
        const double t = std::tanh(x);
        return 1.0 - t * t;
    }
    }
    return 0.0;
}

const AffineSubdomain& ActivationSpec::subdomain_for(double lo, double hi) const {
    if (!(lo < hi)) throw ValidationError("target interval must satisfy lo < hi");
    for (const AffineSubdomain& s : subdomains_)
        if (lo > s.a && hi < s.b) return s;
    throw ValidationError(name() + ": no affine subdomain strictly contains [" +
                          std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

std::pair<double, double> ActivationSpec::default_lift_interval() const {
    switch (kind_) {
    case ActKind::relu: return {1.0, 2.0};
    case ActKind::leaky_relu: return {1.0, 2.0}; // positive branch unless a plan opts out
    case ActKind::elu: return {1.0, 2.0};
    case ActKind::tanh_act: return {-0.008, 0.008};
    }
    return {1.0, 2.0};
}

void ActivationSpec::self_check() const {
    // Spot-check sigma(x) = lambda*x + mu on each exact subdomain.
    for (const AffineSubdomain& s : subdomains_) {
        if (s.approx) continue;
        const double lo = std::isinf(s.a) ? -100.0 : s.a;
        const double hi = std::isinf(s.b) ? 100.0 : s.b;
        for (int i = 1; i < 1000; ++i) {
            const double x = lo + (hi - lo) * static_cast<double>(i) / 1000.0;
            if (!s.contains(x)) continue;
            const double want = s.lambda * x + s.mu;
            if (std::fabs(value(x) - want) > 1e-12 * std::max(1.0, std::fabs(want)))
                throw NumericalError(name() + ": subdomain self-check failed at x=" +
                                     std::to_string(x));
        }
    }
}

} // namespace liftnet
