// SPDX-License-Identifier: Apache-2.0
#include "dsrh/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "dsrh/io.hpp"

namespace dsrh {

namespace {

void check_config(const TrainConfig& cfg) {
    if (cfg.batch_size == 0)
        throw std::invalid_argument("batch size must be positive");
    if (cfg.learning_rate <= 0.0)
        throw std::invalid_argument("learning rate must be positive");
    if (cfg.momentum < 0.0 || cfg.momentum >= 1.0)
        throw std::invalid_argument("momentum must be in [0, 1)");
    if (cfg.dropout_keep <= 0.0 || cfg.dropout_keep > 1.0)
        throw std::invalid_argument("dropout keep must be in (0, 1]");
    if (cfg.list_length == 0)
        throw std::invalid_argument("list length must be positive");
    if (cfg.loss.margin < 0.0 || cfg.loss.alpha < 0.0 || cfg.loss.beta < 0.0)
        throw std::invalid_argument("loss parameters must be non-negative");
}

/// Ideal DCG of the query's full-database ranking truncated at the training
/// list length; the PerDatabase normalizer.
double database_z(const DataPoint& query, const MultiLabelDataset& db,
                  size_t list_length) {
    std::vector<int> levels;
    levels.reserve(db.points.size());
    for (const auto& p : db.points) {
        if (p.id == query.id) continue;
        levels.push_back(similarity_level(query.labels, p.labels));
    }
    const size_t p = std::min(list_length, levels.size());
    return ndcg_norm(levels, p);
}

}  // namespace

OptimizerState make_optimizer_state(const HashModel& model) {
    OptimizerState opt;
    for (const auto& layer : model.feature_net.layers) {
        opt.weight_velocity.emplace_back(layer.weight.rows, layer.weight.cols);
        opt.bias_velocity.emplace_back(layer.bias.size(), 0.0);
    }
    opt.hash_velocity =
        Matrix(model.hash_layer.weight.rows, model.hash_layer.weight.cols);
    return opt;
}

void sgd_step(HashModel& model, const ModelGradients& grads,
              OptimizerState& opt, double learning_rate, double momentum,
              double weight_decay) {
    const size_t n_layers = model.feature_net.layers.size();
    if (grads.layer_weight.size() != n_layers ||
        opt.weight_velocity.size() != n_layers)
        throw std::invalid_argument("gradient/optimizer layer count mismatch");

    auto update_weights = [&](Matrix& w, const Matrix& g, Matrix& v) {
        if (!w.same_shape(g) || !w.same_shape(v))
            throw std::invalid_argument("gradient shape mismatch");
        for (size_t i = 0; i < w.data.size(); ++i) {
            v.data[i] = momentum * v.data[i] -
                        learning_rate * (g.data[i] + weight_decay * w.data[i]);
            w.data[i] += v.data[i];
        }
    };

    for (size_t l = 0; l < n_layers; ++l) {
        auto& layer = model.feature_net.layers[l];
        update_weights(layer.weight, grads.layer_weight[l],
                       opt.weight_velocity[l]);
        auto& b = layer.bias;
        const auto& gb = grads.layer_bias[l];
        auto& vb = opt.bias_velocity[l];
        if (gb.size() != b.size() || vb.size() != b.size())
            throw std::invalid_argument("bias gradient shape mismatch");
        for (size_t i = 0; i < b.size(); ++i) {
            vb[i] = momentum * vb[i] - learning_rate * gb[i];
            b[i] += vb[i];
        }
    }
    update_weights(model.hash_layer.weight, grads.hash_weight,
                   opt.hash_velocity);
    ++opt.step;
}

TrainReport train(HashModel& model, const MultiLabelDataset& train_set,
                  const TrainConfig& cfg, std::ostream* progress) {
    check_config(cfg);
    if (train_set.points.empty())
        throw std::invalid_argument("empty training set");
    if (model.input_dim() != train_set.dim)
        throw std::invalid_argument("model input dim does not match dataset");

    Rng rng(cfg.seed);
    OptimizerState opt = make_optimizer_state(model);
    TrainReport report;

    const size_t n = train_set.points.size();
    const size_t rows_per_query = 1 + cfg.list_length;
    std::unordered_map<uint64_t, double> z_cache;  // PerDatabase mode only

    auto z_for = [&](const DataPoint& query) {
        if (cfg.loss.z_mode == ZNormMode::PerList) return 0.0;  // unused
        auto it = z_cache.find(query.id);
        if (it != z_cache.end()) return it->second;
        const double z = database_z(query, train_set, cfg.list_length);
        z_cache.emplace(query.id, z);
        return z;
    };

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;

    for (size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();
        rng.shuffle(order);

        double obj_sum = 0.0;
        size_t steps = 0;
        size_t active_triplets = 0, total_triplets = 0;
        size_t epoch_skipped = 0;
        size_t step_in_epoch = 0;

        for (size_t start = 0; start < n; start += cfg.batch_size) {
            ++step_in_epoch;
            const size_t end = std::min(start + cfg.batch_size, n);

            struct DrawnQuery {
                size_t point_index;
                RankingListSample list;
            };
            std::vector<DrawnQuery> drawn;
            size_t step_skipped = 0;
            for (size_t i = start; i < end; ++i) {
                const auto& query = train_set.points[order[i]];
                auto result =
                    sample_ranking_list(query, train_set, cfg.list_length, rng);
                if (auto* sample = std::get_if<RankingListSample>(&result))
                    drawn.push_back({order[i], std::move(*sample)});
                else
                    ++step_skipped;
            }
            epoch_skipped += step_skipped;
            if (drawn.empty()) {
                if (progress) {
                    char line[160];
                    std::snprintf(line, sizeof line,
                                  "epoch=%zu step=%zu obj=nan active=0.000000 "
                                  "skipped=%zu\n",
                                  epoch, step_in_epoch, step_skipped);
                    *progress << line;
                }
                continue;
            }

            // One forward batch: each query followed by its list items.
            const size_t batch_rows = drawn.size() * rows_per_query;
            Matrix batch(batch_rows, train_set.dim);
            for (size_t s = 0; s < drawn.size(); ++s) {
                const size_t base = s * rows_per_query;
                const auto& qp = train_set.points[drawn[s].point_index];
                std::copy(qp.features.begin(), qp.features.end(),
                          batch.row(base).begin());
                for (size_t m = 0; m < cfg.list_length; ++m) {
                    const auto& item =
                        train_set.points[drawn[s].list.items[m].index];
                    std::copy(item.features.begin(), item.features.end(),
                              batch.row(base + 1 + m).begin());
                }
            }

            DropoutMask mask;
            const DropoutMask* mask_ptr = nullptr;
            if (cfg.dropout_keep < 1.0) {
                mask = make_dropout_mask(model, batch_rows, cfg.dropout_keep,
                                         rng);
                mask_ptr = &mask;
            }
            const ForwardTrace trace = forward_relaxed(model, batch, mask_ptr);

            Matrix query_codes(drawn.size(), model.bits);
            for (size_t s = 0; s < drawn.size(); ++s) {
                const auto src = trace.codes.row(s * rows_per_query);
                std::copy(src.begin(), src.end(), query_codes.row(s).begin());
            }

            Matrix code_grads(batch_rows, model.bits);
            const auto balance =
                balance_gradient(query_codes, cfg.loss.alpha);
            for (size_t s = 0; s < drawn.size(); ++s) {
                auto row = code_grads.row(s * rows_per_query);
                for (size_t k = 0; k < model.bits; ++k) row[k] += balance[k];
            }

            double ranking_loss = 0.0;
            size_t step_active = 0, step_triplets = 0;
            for (size_t s = 0; s < drawn.size(); ++s) {
                const size_t base = s * rows_per_query;
                const auto& items = drawn[s].list.items;
                double z = 1.0;
                if (cfg.loss.weighted) {
                    if (cfg.loss.z_mode == ZNormMode::PerList) {
                        std::vector<int> levels(items.size());
                        for (size_t m = 0; m < items.size(); ++m)
                            levels[m] = items[m].level;
                        z = ndcg_norm(levels, levels.size());
                    } else {
                        z = z_for(train_set.points[drawn[s].point_index]);
                    }
                }
                const auto h_q = trace.codes.row(base);
                for (size_t i = 0; i < items.size(); ++i) {
                    for (size_t j = 0; j < items.size(); ++j) {
                        if (items[j].level >= items[i].level) continue;
                        const double w =
                            cfg.loss.weighted
                                ? triplet_weight(items[i].level,
                                                 items[j].level, z)
                                : 1.0;
                        const auto result = triplet_loss(
                            h_q, trace.codes.row(base + 1 + i),
                            trace.codes.row(base + 1 + j), w, cfg.loss);
                        ++step_triplets;
                        if (!result.active) continue;
                        ++step_active;
                        ranking_loss += result.loss;
                        auto gq = code_grads.row(base);
                        auto gi = code_grads.row(base + 1 + i);
                        auto gj = code_grads.row(base + 1 + j);
                        for (size_t k = 0; k < model.bits; ++k) {
                            gq[k] += result.grad_query[k];
                            gi[k] += result.grad_pos[k];
                            gj[k] += result.grad_neg[k];
                        }
                    }
                }
            }

            const double step_obj =
                ranking_loss + balance_penalty(query_codes, cfg.loss.alpha) +
                weight_decay_penalty(model, cfg.loss.beta);

            const ModelGradients grads = backward(model, trace, code_grads);
            sgd_step(model, grads, opt, cfg.learning_rate, cfg.momentum,
                     cfg.loss.beta);

            obj_sum += step_obj;
            ++steps;
            active_triplets += step_active;
            total_triplets += step_triplets;

            if (progress) {
                const double frac =
                    step_triplets == 0
                        ? 0.0
                        : static_cast<double>(step_active) /
                              static_cast<double>(step_triplets);
                char line[160];
                std::snprintf(line, sizeof line,
                              "epoch=%zu step=%zu obj=%.6f active=%.6f "
                              "skipped=%zu\n",
                              epoch, step_in_epoch, step_obj, frac,
                              step_skipped);
                *progress << line;
            }
        }

        if (steps == 0)
            throw std::runtime_error(
                "epoch " + std::to_string(epoch) +
                ": every query was skipped (degenerate dataset)");

        EpochStats stats;
        stats.epoch = epoch;
        stats.mean_objective = obj_sum / static_cast<double>(steps);
        stats.active_fraction =
            total_triplets == 0 ? 0.0
                                : static_cast<double>(active_triplets) /
                                      static_cast<double>(total_triplets);
        stats.skipped = epoch_skipped;
        stats.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                          epoch_start)
                .count();
        report.epochs.push_back(stats);
        report.total_steps += steps;
        report.total_skipped += epoch_skipped;
    }
    return report;
}

void write_train_report(const TrainReport& report, std::ostream& out) {
    out << "total_steps=" << report.total_steps << "\n";
    out << "total_skipped=" << report.total_skipped << "\n";
    char buf[160];
    for (const auto& e : report.epochs) {
        std::snprintf(buf, sizeof buf,
                      "epoch=%zu mean_obj=%.17g active=%.17g skipped=%zu "
                      "seconds=%.3f\n",
                      e.epoch, e.mean_objective, e.active_fraction, e.skipped,
                      e.seconds);
        out << buf;
    }
}

void save_train_report(const TrainReport& report,
                       const std::filesystem::path& path) {
    atomic_write_file(
        path, [&report](std::ostream& out) { write_train_report(report, out); },
        /*binary=*/false);
}

CodeDatabase encode_dataset(const HashModel& model,
                            const MultiLabelDataset& ds) {
    if (ds.points.empty()) throw std::invalid_argument("empty dataset");
    if (model.input_dim() != ds.dim)
        throw std::invalid_argument("model input dim does not match dataset");

    CodeDatabase db(static_cast<uint32_t>(model.bits));
    constexpr size_t kChunk = 512;
    for (size_t start = 0; start < ds.points.size(); start += kChunk) {
        const size_t end = std::min(start + kChunk, ds.points.size());
        Matrix batch(end - start, ds.dim);
        for (size_t i = start; i < end; ++i)
            std::copy(ds.points[i].features.begin(),
                      ds.points[i].features.end(),
                      batch.row(i - start).begin());
        const Matrix codes = forward_binary(model, batch);
        for (size_t i = start; i < end; ++i)
            db.add(ds.points[i].id, pack_code(codes.row(i - start)));
    }
    return db;
}

MetricsReport evaluate_model(const HashModel& model,
                             const MultiLabelDataset& queries,
                             const MultiLabelDataset& db,
                             const MetricsConfig& cfg) {
    if (queries.points.empty()) throw std::invalid_argument("empty query set");
    if (db.points.empty()) throw std::invalid_argument("empty database");

    const CodeDatabase code_db = encode_dataset(model, db);
    std::vector<LabelSet> db_labels;
    db_labels.reserve(db.points.size());
    for (const auto& p : db.points) db_labels.push_back(p.labels);

    const CodeDatabase query_codes = encode_dataset(model, queries);
    std::vector<LabeledQueryCode> labeled;
    labeled.reserve(queries.points.size());
    for (size_t i = 0; i < queries.points.size(); ++i)
        labeled.push_back({queries.points[i].id, query_codes.packed_at(i),
                           queries.points[i].labels});

    return evaluate_queries(code_db, db_labels, labeled, cfg);
}

}  // namespace dsrh
