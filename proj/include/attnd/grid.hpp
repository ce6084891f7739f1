#pragma once

#include <cmath>

#include "attnd/errors.hpp"
#include "attnd/ops.hpp"
#include "attnd/tensor.hpp"

namespace attnd {

/// Grid of d-dimensional visual feature vectors, shape [h x w x d].
struct FeatureGrid {
    size_t h = 0;
    size_t w = 0;
    Tensor features;  // [h x w x d]

    FeatureGrid() = default;
    FeatureGrid(size_t h_, size_t w_, Tensor f) : h(h_), w(w_), features(std::move(f)) {
        if (features.rank() != 3 || features.dim(0) != h || features.dim(1) != w) {
            throw DimensionError("feature grid shape " + features.shape_str() + " does not match " +
                                 std::to_string(h) + "x" + std::to_string(w));
        }
    }

    size_t depth() const { return features.dim(2); }

    /// View of the grid as [h*w x d] token rows.
    Tensor tokens() const { return ops::reshape(features, {h * w, depth()}); }
};

/// Nonnegative distribution over the grid cells, shape [h x w], sum 1.
struct AttentionMap {
    Tensor weights;  // [h x w]

    AttentionMap() = default;
    explicit AttentionMap(Tensor w_) : weights(std::move(w_)) {
        if (weights.rank() != 2) {
            throw DimensionError("attention map must be rank 2, got " + weights.shape_str());
        }
    }

    size_t h() const { return weights.dim(0); }
    size_t w() const { return weights.dim(1); }

    double sum() const {
        double s = 0.0;
        for (double v : weights.data()) s += v;
        return s;
    }
};

}  // namespace attnd
