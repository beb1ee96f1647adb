#pragma once

#include <cstddef>
#include <vector>

#include "liftnet/linalg.hpp"

namespace liftnet {

enum class LossKind { mse, cross_entropy };

/// Training set: inputs x (n x d), targets y (n x d'). Classification targets
/// are stored one-hot; labels() recovers the class index per row.
struct Dataset {
    Matrix x;
    Matrix y;
    LossKind loss = LossKind::mse;

    std::size_t size() const { return x.rows(); }
    std::size_t input_dim() const { return x.cols(); }
    std::size_t output_dim() const { return y.cols(); }

    void validate() const;

    /// Row subset in the given index order; indices must be in range.
    Dataset subset(const std::vector<std::size_t>& idx) const;

    /// True when every target row is exactly one-hot.
    bool one_hot_targets() const;
    /// Argmax class per row (first maximum wins). Requires output_dim >= 2.
    std::vector<int> labels() const;

    static Dataset from_labels(Matrix x, const std::vector<int>& labels,
                               std::size_t n_classes, LossKind loss);
};

} // namespace liftnet
