// SPDX-License-Identifier: Apache-2.0
#include "dsrh/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include "dsrh/io.hpp"

namespace dsrh {

namespace {

constexpr char kModelMagic[8] = {'D', 'S', 'R', 'H', 'M', 'O', 'D', 'L'};
constexpr uint16_t kModelVersion = 1;

void check_batch(const HashModel& model, const Matrix& batch) {
    if (batch.cols != model.input_dim())
        throw std::invalid_argument("batch dimension " +
                                    std::to_string(batch.cols) +
                                    " does not match model input " +
                                    std::to_string(model.input_dim()));
    for (double v : batch.data)
        if (!std::isfinite(v))
            throw std::invalid_argument("non-finite input feature");
}

void validate_model(const HashModel& model) {
    const auto& net = model.feature_net;
    if (net.layers.size() < 2)
        throw std::invalid_argument("feature net needs at least two layers");
    if (net.tap_a >= net.tap_b || net.tap_b != net.layers.size() - 1)
        throw std::invalid_argument("taps must satisfy tap_a < tap_b == last");
    for (size_t i = 0; i + 1 < net.layers.size(); ++i)
        if (net.layers[i].out_dim() != net.layers[i + 1].in_dim())
            throw std::invalid_argument("layer dimensions do not compose");
    for (const auto& layer : net.layers)
        if (layer.bias.size() != layer.out_dim())
            throw std::invalid_argument("bias length mismatch");
    if (model.hash_layer.weight.rows != model.bits)
        throw std::invalid_argument("hash layer rows != bits");
    if (model.hash_layer.weight.cols !=
        model.tap_a_dim() + model.tap_b_dim())
        throw std::invalid_argument("hash layer input != tap_a + tap_b dims");
}

/// out = in * W^T + b, followed by ReLU into `post`.
void affine_relu(const AffineLayer& layer, const Matrix& in, Matrix& pre,
                 Matrix& post) {
    const size_t batch = in.rows;
    pre = Matrix(batch, layer.out_dim());
    post = Matrix(batch, layer.out_dim());
    for (size_t n = 0; n < batch; ++n) {
        const auto x = in.row(n);
        for (size_t r = 0; r < layer.out_dim(); ++r) {
            double acc = layer.bias[r];
            const auto w = layer.weight.row(r);
            for (size_t c = 0; c < layer.in_dim(); ++c) acc += w[c] * x[c];
            pre(n, r) = acc;
            post(n, r) = acc > 0.0 ? acc : 0.0;
        }
    }
}

void apply_dropout(Matrix& act, const Matrix& keep, double keep_prob) {
    const double scale = 1.0 / keep_prob;
    for (size_t i = 0; i < act.data.size(); ++i)
        act.data[i] *= keep.data[i] * scale;
}

/// Shared feature + hash pre-activation pass.
void forward_core(const HashModel& model, const Matrix& batch,
                  const DropoutMask* mask, std::vector<Matrix>& preacts,
                  std::vector<Matrix>& acts, Matrix& hash_preact) {
    const auto& net = model.feature_net;
    const size_t batch_size = batch.rows;

    preacts.resize(net.layers.size());
    acts.resize(net.layers.size());
    const Matrix* current = &batch;
    for (size_t l = 0; l < net.layers.size(); ++l) {
        affine_relu(net.layers[l], *current, preacts[l], acts[l]);
        if (mask) apply_dropout(acts[l], mask->keep[l], mask->keep_prob);
        current = &acts[l];
    }

    const Matrix& f_a = acts[net.tap_a];
    const Matrix& f_b = acts[net.tap_b];
    const size_t d_a = f_a.cols;
    const Matrix& w = model.hash_layer.weight;

    hash_preact = Matrix(batch_size, model.bits);
    for (size_t n = 0; n < batch_size; ++n) {
        for (size_t k = 0; k < model.bits; ++k) {
            double acc = 0.0;
            const auto wk = w.row(k);
            for (size_t c = 0; c < d_a; ++c) acc += wk[c] * f_a(n, c);
            for (size_t c = 0; c < f_b.cols; ++c)
                acc += wk[d_a + c] * f_b(n, c);
            hash_preact(n, k) = acc;
        }
    }
}

}  // namespace

DropoutMask make_dropout_mask(const HashModel& model, size_t batch_size,
                              double keep_prob, Rng& rng) {
    if (keep_prob <= 0.0 || keep_prob > 1.0)
        throw std::invalid_argument("keep probability must be in (0, 1]");
    DropoutMask mask;
    mask.keep_prob = keep_prob;
    mask.keep.reserve(model.feature_net.layers.size());
    for (const auto& layer : model.feature_net.layers) {
        Matrix m(batch_size, layer.out_dim());
        for (auto& v : m.data) v = rng.uniform() < keep_prob ? 1.0 : 0.0;
        mask.keep.push_back(std::move(m));
    }
    return mask;
}

ForwardTrace forward_relaxed(const HashModel& model, const Matrix& batch,
                             const DropoutMask* mask) {
    validate_model(model);
    check_batch(model, batch);
    if (mask) {
        if (mask->keep.size() != model.feature_net.layers.size())
            throw std::invalid_argument("dropout mask layer count mismatch");
        for (size_t l = 0; l < mask->keep.size(); ++l)
            if (mask->keep[l].rows != batch.rows ||
                mask->keep[l].cols != model.feature_net.layers[l].out_dim())
                throw std::invalid_argument("dropout mask shape mismatch");
    }

    ForwardTrace trace;
    trace.input = batch;
    forward_core(model, batch, mask, trace.preacts, trace.acts,
                 trace.hash_preact);

    trace.codes = Matrix(batch.rows, model.bits);
    for (size_t i = 0; i < trace.codes.data.size(); ++i)
        // 2*sigmoid(z) - 1 == tanh(z/2), kept in that form for stability
        trace.codes.data[i] = std::tanh(0.5 * trace.hash_preact.data[i]);
    if (mask) trace.mask = *mask;
    return trace;
}

Matrix forward_binary(const HashModel& model, const Matrix& batch) {
    validate_model(model);
    check_batch(model, batch);

    std::vector<Matrix> preacts, acts;
    Matrix hash_preact;
    forward_core(model, batch, nullptr, preacts, acts, hash_preact);

    Matrix codes(batch.rows, model.bits);
    for (size_t i = 0; i < codes.data.size(); ++i)
        codes.data[i] = hash_preact.data[i] >= 0.0 ? 1.0 : -1.0;
    return codes;
}

ModelGradients zero_gradients(const HashModel& model) {
    ModelGradients g;
    for (const auto& layer : model.feature_net.layers) {
        g.layer_weight.emplace_back(layer.weight.rows, layer.weight.cols);
        g.layer_bias.emplace_back(layer.bias.size(), 0.0);
    }
    g.hash_weight =
        Matrix(model.hash_layer.weight.rows, model.hash_layer.weight.cols);
    return g;
}

ModelGradients backward(const HashModel& model, const ForwardTrace& trace,
                        const Matrix& code_grads) {
    validate_model(model);
    const auto& net = model.feature_net;
    const size_t batch = trace.input.rows;
    if (code_grads.rows != batch || code_grads.cols != model.bits)
        throw std::invalid_argument("code gradient shape mismatch");
    if (trace.acts.size() != net.layers.size())
        throw std::invalid_argument("trace does not match model");

    ModelGradients grads = zero_gradients(model);

    // d code / d preact for h = tanh(z/2) is (1 - h^2)/2
    Matrix g_hash_pre(batch, model.bits);
    for (size_t i = 0; i < g_hash_pre.data.size(); ++i) {
        const double h = trace.codes.data[i];
        g_hash_pre.data[i] = code_grads.data[i] * 0.5 * (1.0 - h * h);
    }

    const Matrix& f_a = trace.acts[net.tap_a];
    const Matrix& f_b = trace.acts[net.tap_b];
    const size_t d_a = f_a.cols;
    const Matrix& w_hash = model.hash_layer.weight;

    // Gradients flowing into each layer's post-dropout activation.
    std::vector<Matrix> g_act(net.layers.size());
    for (size_t l = 0; l < net.layers.size(); ++l)
        g_act[l] = Matrix(batch, net.layers[l].out_dim());

    for (size_t n = 0; n < batch; ++n) {
        for (size_t k = 0; k < model.bits; ++k) {
            const double gz = g_hash_pre(n, k);
            if (gz == 0.0) continue;
            const auto wk = w_hash.row(k);
            auto gw = grads.hash_weight.row(k);
            for (size_t c = 0; c < d_a; ++c) {
                gw[c] += gz * f_a(n, c);
                g_act[net.tap_a](n, c) += gz * wk[c];
            }
            for (size_t c = 0; c < f_b.cols; ++c) {
                gw[d_a + c] += gz * f_b(n, c);
                g_act[net.tap_b](n, c) += gz * wk[d_a + c];
            }
        }
    }

    const DropoutMask* mask = trace.mask ? &*trace.mask : nullptr;
    for (size_t l = net.layers.size(); l-- > 0;) {
        const auto& layer = net.layers[l];
        const Matrix& in = l == 0 ? trace.input : trace.acts[l - 1];
        Matrix g_pre(batch, layer.out_dim());
        for (size_t n = 0; n < batch; ++n) {
            for (size_t r = 0; r < layer.out_dim(); ++r) {
                double g = g_act[l](n, r);
                if (mask) g *= mask->keep[l](n, r) / mask->keep_prob;
                if (trace.preacts[l](n, r) <= 0.0) g = 0.0;  // ReLU gate
                g_pre(n, r) = g;
            }
        }
        for (size_t n = 0; n < batch; ++n) {
            for (size_t r = 0; r < layer.out_dim(); ++r) {
                const double g = g_pre(n, r);
                if (g == 0.0) continue;
                grads.layer_bias[l][r] += g;
                auto gw = grads.layer_weight[l].row(r);
                const auto x = in.row(n);
                for (size_t c = 0; c < layer.in_dim(); ++c) gw[c] += g * x[c];
                if (l > 0) {
                    const auto w = layer.weight.row(r);
                    for (size_t c = 0; c < layer.in_dim(); ++c)
                        g_act[l - 1](n, c) += g * w[c];
                }
            }
        }
    }
    return grads;
}

HashModel init_weights(std::span<const size_t> layer_dims, size_t bits,
                       Rng& rng) {
    if (layer_dims.size() < 3)
        throw std::invalid_argument(
            "need input plus at least two hidden widths");
    return init_weights(layer_dims, bits, 0, layer_dims.size() - 2, rng);
}

HashModel init_weights(std::span<const size_t> layer_dims, size_t bits,
                       size_t tap_a, size_t tap_b, Rng& rng) {
    if (bits == 0) throw std::invalid_argument("bits must be positive");
    if (layer_dims.size() < 3)
        throw std::invalid_argument(
            "need input plus at least two hidden widths");
    for (size_t d : layer_dims)
        if (d == 0) throw std::invalid_argument("zero layer width");
    if (tap_a >= tap_b || tap_b != layer_dims.size() - 2)
        throw std::invalid_argument("taps must satisfy tap_a < tap_b == last");

    HashModel model;
    model.bits = bits;
    model.feature_net.tap_a = tap_a;
    model.feature_net.tap_b = tap_b;

    auto uniform_fan_in = [&rng](Matrix& w) {
        // zero-mean uniform with +-sqrt(3)/sqrt(fan_in) bounds
        const double bound = std::sqrt(3.0 / static_cast<double>(w.cols));
        for (auto& v : w.data) v = rng.uniform(-bound, bound);
    };

    for (size_t l = 0; l + 1 < layer_dims.size(); ++l) {
        AffineLayer layer;
        layer.weight = Matrix(layer_dims[l + 1], layer_dims[l]);
        uniform_fan_in(layer.weight);
        layer.bias.assign(layer_dims[l + 1], 0.0);
        model.feature_net.layers.push_back(std::move(layer));
    }

    const size_t hash_in = layer_dims[tap_a + 1] + layer_dims[tap_b + 1];
    model.hash_layer.weight = Matrix(bits, hash_in);
    uniform_fan_in(model.hash_layer.weight);

    validate_model(model);
    return model;
}

void save_model(const HashModel& model, const std::filesystem::path& path) {
    validate_model(model);
    atomic_write_file(path, [&model](std::ostream& out) {
        write_bytes(out, kModelMagic, sizeof kModelMagic);
        write_u16(out, kModelVersion);
        write_u32(out, static_cast<uint32_t>(model.bits));
        write_u16(out, static_cast<uint16_t>(model.feature_net.layers.size() + 1));
        write_u16(out, static_cast<uint16_t>(model.feature_net.tap_a));
        write_u16(out, static_cast<uint16_t>(model.feature_net.tap_b));
        for (const auto& layer : model.feature_net.layers) {
            write_u32(out, static_cast<uint32_t>(layer.weight.rows));
            write_u32(out, static_cast<uint32_t>(layer.weight.cols));
            for (double v : layer.weight.data) write_f64(out, v);
            for (double v : layer.bias) write_f64(out, v);
        }
        write_u32(out, static_cast<uint32_t>(model.hash_layer.weight.rows));
        write_u32(out, static_cast<uint32_t>(model.hash_layer.weight.cols));
        for (double v : model.hash_layer.weight.data) write_f64(out, v);
    });
}

HashModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());

    char magic[8];
    read_bytes(in, magic, sizeof magic);
    if (!std::equal(magic, magic + 8, kModelMagic))
        throw std::runtime_error("bad magic, not a model file");
    const uint16_t version = read_u16(in);
    if (version != kModelVersion)
        throw std::runtime_error("unsupported model version " +
                                 std::to_string(version));

    HashModel model;
    model.bits = read_u32(in);
    const uint16_t layer_count = read_u16(in);
    if (layer_count < 3)
        throw std::runtime_error("model needs two feature layers plus hash");
    model.feature_net.tap_a = read_u16(in);
    model.feature_net.tap_b = read_u16(in);

    auto read_matrix = [&in]() {
        const uint32_t rows = read_u32(in);
        const uint32_t cols = read_u32(in);
        if (rows == 0 || cols == 0)
            throw std::runtime_error("zero-sized layer in model file");
        Matrix m(rows, cols);
        for (auto& v : m.data) v = read_f64(in);
        return m;
    };

    for (uint16_t l = 0; l + 1 < layer_count; ++l) {
        AffineLayer layer;
        layer.weight = read_matrix();
        layer.bias.resize(layer.weight.rows);
        for (auto& v : layer.bias) v = read_f64(in);
        model.feature_net.layers.push_back(std::move(layer));
    }
    model.hash_layer.weight = read_matrix();

    try {
        validate_model(model);
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error(std::string("inconsistent model file: ") +
                                 e.what());
    }
    return model;
}

}  // namespace dsrh
