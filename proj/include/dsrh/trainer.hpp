// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "dsrh/dataset.hpp"
#include "dsrh/loss.hpp"
#include "dsrh/metrics.hpp"
#include "dsrh/model.hpp"
#include "dsrh/retrieval.hpp"

namespace dsrh {

struct TrainConfig {
    size_t epochs = 1;
    size_t batch_size = 128;  // N_q, queries per step
    double learning_rate = 0.01;
    double momentum = 0.9;
    LossConfig loss{};
    double dropout_keep = 0.5;  // hidden blocks only
    size_t list_length = 3;     // M, sampled ranking list length
    uint64_t seed = 0;
};

/// Momentum buffers mirroring the model parameters.
struct OptimizerState {
    std::vector<Matrix> weight_velocity;
    std::vector<std::vector<double>> bias_velocity;
    Matrix hash_velocity;
    size_t step = 0;
};

OptimizerState make_optimizer_state(const HashModel& model);

/// v <- momentum*v - lr*(grad + weight_decay*w); w <- w + v.
/// Weight decay applies to weight matrices only, never biases.
void sgd_step(HashModel& model, const ModelGradients& grads,
              OptimizerState& opt, double learning_rate, double momentum,
              double weight_decay);

struct EpochStats {
    size_t epoch = 0;  // 1-based
    double mean_objective = 0.0;
    double active_fraction = 0.0;  // active / evaluated triplets
    size_t skipped = 0;            // queries with an empty stratum
    double seconds = 0.0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    size_t total_steps = 0;
    size_t total_skipped = 0;
};

/// Mini-batch SGD over the whole pipeline: per step, draw queries (each
/// epoch is one shuffled pass), sample a ranking list per query, forward
/// query+list in one relaxed batch, assemble code gradients (triplet terms
/// plus the balance term over the query codes), backpropagate and update.
/// Deterministic under cfg.seed. Progress lines go to `progress` when set:
///   epoch=<n> step=<m> obj=<float> active=<float> skipped=<int>
TrainReport train(HashModel& model, const MultiLabelDataset& train_set,
                  const TrainConfig& cfg, std::ostream* progress = nullptr);

void write_train_report(const TrainReport& report, std::ostream& out);
void save_train_report(const TrainReport& report,
                       const std::filesystem::path& path);

/// Binary-encodes every point of a dataset into a packed code database.
CodeDatabase encode_dataset(const HashModel& model,
                            const MultiLabelDataset& ds);

/// Per-epoch validation hook: binary-encode both sides and run the ranking
/// metrics. Query and database ids must be disjoint.
MetricsReport evaluate_model(const HashModel& model,
                             const MultiLabelDataset& queries,
                             const MultiLabelDataset& db,
                             const MetricsConfig& cfg);

}  // namespace dsrh
