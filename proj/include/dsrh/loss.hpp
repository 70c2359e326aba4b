// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <vector>

#include "dsrh/matrix.hpp"

namespace dsrh {

struct HashModel;

/// Pool of levels the NDCG normalizer Z in the triplet weight is computed
/// over: the sampled list itself, or the query's full-database ranking.
enum class ZNormMode { PerList, PerDatabase };

struct LossConfig {
    double margin = 1.0;   // rho, in Hamming-distance units
    double alpha = 1.0;    // balance penalty
    double beta = 5e-4;    // weight decay (applied at the update step)
    bool weighted = true;  // NDCG-derived triplet weights vs uniform
    ZNormMode z_mode = ZNormMode::PerList;
};

/// Hamming distance written as an inner product: (K - a.b)/2. Exact for
/// binary +-1 codes, and the relaxation used for gradients otherwise.
double hamming_inner(std::span<const double> a, std::span<const double> b);

/// Ideal DCG over the level multiset at truncation p (levels sorted
/// descending internally, log base 2). Zero iff every level is zero.
double ndcg_norm(std::span<const int> levels, size_t p);

/// NDCG-derived triplet weight (2^ri - 2^rj)/Z. Requires rj < ri and Z > 0.
double triplet_weight(int r_i, int r_j, double z);

struct TripletLossResult {
    double loss = 0.0;
    bool active = false;
    std::vector<double> grad_query;
    std::vector<double> grad_pos;
    std::vector<double> grad_neg;
};

/// Weighted hinge on the Hamming-distance gap, with the analytic gradients
/// with respect to the three code vectors. Inactive triplets produce zero
/// loss and zero gradients.
TripletLossResult triplet_loss(std::span<const double> h_query,
                               std::span<const double> h_pos,
                               std::span<const double> h_neg, double weight,
                               const LossConfig& cfg);

struct ScoredCode {
    std::vector<double> code;
    int level = 0;
};

/// Ranking loss of one query list: sum of weighted hinges over all pairs
/// (i, j) with r_j < r_i. Pass the normalizer z used for the weights;
/// ignored in unweighted mode.
double list_loss(std::span<const double> h_query,
                 std::span<const ScoredCode> items, const LossConfig& cfg,
                 double z);

struct QueryListCodes {
    std::vector<double> query_code;
    std::vector<ScoredCode> items;
    // Normalizer override for ZNormMode::PerDatabase; computed from the
    // list's own levels when absent.
    std::optional<double> z;
};

/// Balance-term contribution added to every query code gradient:
/// (alpha / N_q) * mean of the batch query codes.
std::vector<double> balance_gradient(const Matrix& query_codes, double alpha);

double balance_penalty(const Matrix& query_codes, double alpha);
double weight_decay_penalty(const HashModel& model, double beta);

/// Full objective over a batch: ranking losses + balance penalty +
/// weight decay (the latter only when a model is supplied).
double objective(std::span<const QueryListCodes> batch, const HashModel* model,
                 const LossConfig& cfg);

}  // namespace dsrh
