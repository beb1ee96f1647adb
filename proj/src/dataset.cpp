#include "liftnet/dataset.hpp"

#include <string>

#include "liftnet/errors.hpp"

namespace liftnet {

void Dataset::validate() const {
    if (x.rows() == 0) throw ValidationError("empty dataset");
    if (x.rows() != y.rows())
        throw DimensionError("dataset: " + std::to_string(x.rows()) + " inputs vs " +
                             std::to_string(y.rows()) + " targets");
    ensure_finite(x, "dataset inputs");
    ensure_finite(y, "dataset targets");
}

Dataset Dataset::subset(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.loss = loss;
    out.x = Matrix(idx.size(), x.cols());
    out.y = Matrix(idx.size(), y.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= x.rows())
            throw DimensionError("dataset subset: index " + std::to_string(idx[r]) +
                                 " out of range");
        for (std::size_t j = 0; j < x.cols(); ++j) out.x(r, j) = x(idx[r], j);
        for (std::size_t j = 0; j < y.cols(); ++j) out.y(r, j) = y(idx[r], j);
    }
    return out;
}

bool Dataset::one_hot_targets() const {
    for (std::size_t i = 0; i < y.rows(); ++i) {
        int ones = 0;
        for (std::size_t j = 0; j < y.cols(); ++j) {
            if (y(i, j) == 1.0)
                ++ones;
            else if (y(i, j) != 0.0)
                return false;
        }
        if (ones != 1) return false;
    }
    return y.rows() > 0;
}

std::vector<int> Dataset::labels() const {
    if (y.cols() < 2) throw ValidationError("labels: targets are not categorical");
    std::vector<int> out(y.rows());
    for (std::size_t i = 0; i < y.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < y.cols(); ++j)
            if (y(i, j) > y(i, best)) best = j;
        out[i] = static_cast<int>(best);
    }
    return out;
}

Dataset Dataset::from_labels(Matrix x, const std::vector<int>& labels,
                             std::size_t n_classes, LossKind loss) {
    if (x.rows() != labels.size())
        throw DimensionError("from_labels: rows vs labels mismatch");
    Dataset d;
    d.loss = loss;
    d.y = Matrix(labels.size(), n_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes)
            throw ValidationError("from_labels: label " + std::to_string(labels[i]) +
                                  " outside [0, " + std::to_string(n_classes) + ")");
        d.y(i, static_cast<std::size_t>(labels[i])) = 1.0;
    }
    d.x = std::move(x);
    d.validate();
    return d;
}

} // namespace liftnet
