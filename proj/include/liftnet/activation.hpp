#pragma once

#include <string>
#include <vector>

#include "liftnet/errors.hpp"
#include "liftnet/linalg.hpp"

namespace liftnet {

enum class ActKind { relu, leaky_relu, elu, tanh_act };

/// Open interval (a, b) on which sigma(x) = lambda*x + mu with lambda != 0.
/// approx marks segments where the identity only holds to working precision
/// (tanh near the origin).
struct AffineSubdomain {
    double a = 0.0;
    double b = 0.0; // a < b; may be +-infinity
    double lambda = 1.0;
    double mu = 0.0;
    bool approx = false;

    bool contains(double x) const { return x > a && x < b; }
    /// Distance from x to the nearest boundary; negative outside.
    double margin(double x) const;
};

/// A scalar activation together with its affine subdomains.
class ActivationSpec {
public:
    static ActivationSpec relu();
    static ActivationSpec leaky_relu(double alpha = 0.01);
    static ActivationSpec elu(double alpha = 1.0);
    static ActivationSpec tanh_act();
    static ActivationSpec from_name(const std::string& name, double alpha);

    ActKind kind() const { return kind_; }
    double alpha() const { return alpha_; }
    std::string name() const;
    bool approx() const { return approx_; }

    double value(double x) const;
    /// Derivative with a fixed choice at kinks: relu'(0) = 0, leaky'(0) = alpha.
    double slope(double x) const;

    const std::vector<AffineSubdomain>& subdomains() const { return subdomains_; }
    /// Subdomain strictly containing [lo, hi]; throws ValidationError if none.
    const AffineSubdomain& subdomain_for(double lo, double hi) const;
    /// Conventional target interval for lifts when a plan does not set one.
    std::pair<double, double> default_lift_interval() const;

private:
    ActivationSpec(ActKind kind, double alpha);
    void self_check() const;

    ActKind kind_;
    double alpha_ = 0.0;
    bool approx_ = false;
    std::vector<AffineSubdomain> subdomains_;
};

} // namespace liftnet
