// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "dsrh/matrix.hpp"
#include "dsrh/rng.hpp"

namespace dsrh {

struct AffineLayer {
    Matrix weight;  // out x in
    std::vector<double> bias;

    size_t in_dim() const { return weight.cols; }
    size_t out_dim() const { return weight.rows; }

    bool operator==(const AffineLayer&) const = default;
};

/// Feedforward feature extractor with rectified-linear blocks. The hash
/// layer consumes the concatenation of two tapped block outputs, so the
/// first tap feeds it directly as well as through the remaining layers.
struct FeatureNet {
    std::vector<AffineLayer> layers;
    size_t tap_a = 0;  // first block output, concatenated straight through
    size_t tap_b = 0;  // last layer output

    bool operator==(const FeatureNet&) const = default;
};

/// Bias-free binary mapping on top of the tapped features.
struct HashLayer {
    Matrix weight;  // K x (d_a + d_b)

    bool operator==(const HashLayer&) const = default;
};

struct HashModel {
    FeatureNet feature_net;
    HashLayer hash_layer;
    size_t bits = 0;

    size_t input_dim() const { return feature_net.layers.front().in_dim(); }
    size_t tap_a_dim() const {
        return feature_net.layers[feature_net.tap_a].out_dim();
    }
    size_t tap_b_dim() const {
        return feature_net.layers[feature_net.tap_b].out_dim();
    }

    bool operator==(const HashModel&) const = default;
};

/// Inverted-dropout keep indicators for each hidden block: zeros drop a
/// unit, survivors are scaled by 1/keep_prob at train time.
struct DropoutMask {
    double keep_prob = 1.0;
    std::vector<Matrix> keep;  // per layer, batch x width, entries 0/1
};

DropoutMask make_dropout_mask(const HashModel& model, size_t batch_size,
                              double keep_prob, Rng& rng);

/// Everything backward needs from one relaxed forward pass.
struct ForwardTrace {
    Matrix input;                 // batch x D
    std::vector<Matrix> preacts;  // per layer, batch x width
    std::vector<Matrix> acts;     // per layer, post-relu post-dropout
    Matrix hash_preact;           // batch x K
    Matrix codes;                 // batch x K, in (-1, 1)
    std::optional<DropoutMask> mask;
};

/// Gradients with the same shapes as the model parameters.
struct ModelGradients {
    std::vector<Matrix> layer_weight;
    std::vector<std::vector<double>> layer_bias;
    Matrix hash_weight;
};

ModelGradients zero_gradients(const HashModel& model);

/// Relaxed forward pass: codes are 2*sigmoid(z) - 1 of the hash
/// pre-activations, differentiable and strictly inside (-1, 1).
ForwardTrace forward_relaxed(const HashModel& model, const Matrix& batch,
                             const DropoutMask* mask = nullptr);

/// Binary forward pass: sign of the hash pre-activations with sign(0) = +1.
/// No dropout.
Matrix forward_binary(const HashModel& model, const Matrix& batch);

/// Exact gradients of the relaxed forward map composed with the given
/// per-item code gradients, covering both paths into the first tapped
/// block (direct concatenation and through the later layers).
ModelGradients backward(const HashModel& model, const ForwardTrace& trace,
                        const Matrix& code_grads);

/// Fan-in-scaled uniform initialization, biases zero, deterministic under
/// the seed. layer_dims is the feature chain (input first); taps default to
/// the first and last feature layers.
HashModel init_weights(std::span<const size_t> layer_dims, size_t bits,
                       Rng& rng);
HashModel init_weights(std::span<const size_t> layer_dims, size_t bits,
                       size_t tap_a, size_t tap_b, Rng& rng);

/// Binary checkpoint: magic DSRHMODL, version u16=1, K u32, layer count
/// u16, taps as two u16, then per layer rows/cols u32 + row-major f64
/// weights + f64 biases (hash layer last, bias-free). Little-endian;
/// round-trips bit-exactly.
void save_model(const HashModel& model, const std::filesystem::path& path);
HashModel load_model(const std::filesystem::path& path);

}  // namespace dsrh
