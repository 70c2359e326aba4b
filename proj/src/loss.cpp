// SPDX-License-Identifier: Apache-2.0
#include "dsrh/loss.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "dsrh/model.hpp"

namespace dsrh {

double hamming_inner(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw std::invalid_argument("code lengths differ");
    double dot = 0.0;
    for (size_t k = 0; k < a.size(); ++k) dot += a[k] * b[k];
    return (static_cast<double>(a.size()) - dot) / 2.0;
}

double ndcg_norm(std::span<const int> levels, size_t p) {
    if (p > levels.size())
        throw std::invalid_argument("truncation exceeds list length");
    std::vector<int> sorted(levels.begin(), levels.end());
    std::sort(sorted.begin(), sorted.end(), std::greater<int>());
    double z = 0.0;
    for (size_t i = 0; i < p; ++i) {
        if (sorted[i] < 0)
            throw std::invalid_argument("negative similarity level");
        z += (std::exp2(static_cast<double>(sorted[i])) - 1.0) /
             std::log2(static_cast<double>(i + 2));
    }
    return z;
}

double triplet_weight(int r_i, int r_j, double z) {
    if (r_j >= r_i)
        throw std::invalid_argument("triplet requires r_j < r_i");
    if (z <= 0.0)
        throw std::invalid_argument("normalizer must be positive");
    return (std::exp2(static_cast<double>(r_i)) -
            std::exp2(static_cast<double>(r_j))) /
           z;
}

TripletLossResult triplet_loss(std::span<const double> h_query,
                               std::span<const double> h_pos,
                               std::span<const double> h_neg, double weight,
                               const LossConfig& cfg) {
    const size_t k = h_query.size();
    if (h_pos.size() != k || h_neg.size() != k)
        throw std::invalid_argument("code lengths differ");

    TripletLossResult out;
    out.grad_query.assign(k, 0.0);
    out.grad_pos.assign(k, 0.0);
    out.grad_neg.assign(k, 0.0);

    const double gap =
        hamming_inner(h_query, h_pos) - hamming_inner(h_query, h_neg);
    const double hinge = gap + cfg.margin;
    if (hinge > 0.0) {
        out.active = true;
        out.loss = weight * hinge;
        for (size_t i = 0; i < k; ++i) {
            out.grad_query[i] = 0.5 * weight * (h_neg[i] - h_pos[i]);
            out.grad_pos[i] = -0.5 * weight * h_query[i];
            out.grad_neg[i] = 0.5 * weight * h_query[i];
        }
    }
    return out;
}

double list_loss(std::span<const double> h_query,
                 std::span<const ScoredCode> items, const LossConfig& cfg,
                 double z) {
    double total = 0.0;
    for (size_t i = 0; i < items.size(); ++i) {
        for (size_t j = 0; j < items.size(); ++j) {
            if (items[j].level >= items[i].level) continue;
            const double w =
                cfg.weighted ? triplet_weight(items[i].level, items[j].level, z)
                             : 1.0;
            const double hinge = hamming_inner(h_query, items[i].code) -
                                 hamming_inner(h_query, items[j].code) +
                                 cfg.margin;
            if (hinge > 0.0) total += w * hinge;
        }
    }
    return total;
}

std::vector<double> balance_gradient(const Matrix& query_codes, double alpha) {
    if (query_codes.rows == 0)
        throw std::invalid_argument("empty query batch");
    const double n = static_cast<double>(query_codes.rows);
    std::vector<double> grad(query_codes.cols, 0.0);
    for (size_t i = 0; i < query_codes.rows; ++i)
        for (size_t k = 0; k < query_codes.cols; ++k)
            grad[k] += query_codes(i, k);
    for (auto& g : grad) g = alpha * (g / n) / n;  // (alpha/N_q) * mean
    return grad;
}

double balance_penalty(const Matrix& query_codes, double alpha) {
    if (query_codes.rows == 0)
        throw std::invalid_argument("empty query batch");
    const double n = static_cast<double>(query_codes.rows);
    double sq = 0.0;
    for (size_t k = 0; k < query_codes.cols; ++k) {
        double mean = 0.0;
        for (size_t i = 0; i < query_codes.rows; ++i) mean += query_codes(i, k);
        mean /= n;
        sq += mean * mean;
    }
    return 0.5 * alpha * sq;
}

double weight_decay_penalty(const HashModel& model, double beta) {
    double sq = 0.0;
    for (const auto& layer : model.feature_net.layers)
        for (double w : layer.weight.data) sq += w * w;
    for (double w : model.hash_layer.weight.data) sq += w * w;
    return 0.5 * beta * sq;
}

double objective(std::span<const QueryListCodes> batch, const HashModel* model,
                 const LossConfig& cfg) {
    if (batch.empty()) throw std::invalid_argument("empty batch");

    const size_t k = batch.front().query_code.size();
    double ranking = 0.0;
    Matrix query_codes(batch.size(), k);
    for (size_t q = 0; q < batch.size(); ++q) {
        const auto& entry = batch[q];
        if (entry.query_code.size() != k)
            throw std::invalid_argument("code lengths differ");
        for (size_t i = 0; i < k; ++i) query_codes(q, i) = entry.query_code[i];

        double z = 1.0;
        if (cfg.weighted && !entry.items.empty()) {
            if (entry.z) {
                z = *entry.z;
            } else {
                std::vector<int> levels;
                levels.reserve(entry.items.size());
                for (const auto& item : entry.items)
                    levels.push_back(item.level);
                z = ndcg_norm(levels, levels.size());
            }
        }
        ranking += list_loss(entry.query_code, entry.items, cfg, z);
    }

    double total = ranking + balance_penalty(query_codes, cfg.alpha);
    if (model) total += weight_decay_penalty(*model, cfg.beta);
    return total;
}

}  // namespace dsrh
