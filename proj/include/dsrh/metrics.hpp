// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "dsrh/dataset.hpp"
#include "dsrh/retrieval.hpp"

namespace dsrh {

/// Similarity levels of a retrieved ranking, position i holding the level of
/// the i-th retrieved item.
using RelevanceVector = std::vector<int>;

struct MetricsConfig {
    std::vector<size_t> cutoffs{100};
    // AP_w runs over the full ranking unless truncated here.
    std::optional<size_t> ap_truncation;
};

struct MetricsReport {
    std::vector<std::pair<size_t, double>> ndcg;  // cutoff -> mean
    std::vector<std::pair<size_t, double>> acg;   // cutoff -> mean
    double weighted_map = 0.0;
    std::optional<size_t> ap_truncation;
    size_t query_count = 0;
    size_t excluded_count = 0;  // all-irrelevant queries left out of the means
};

/// NDCG@p with log base 2; nullopt when the ideal DCG is zero (query has no
/// relevant item). p beyond the list length is clamped.
std::optional<double> ndcg_at(std::span<const int> levels, size_t p);

/// Mean similarity level of the top-p items; p beyond the length is clamped.
double acg_at(std::span<const int> levels, size_t p);

/// ACG-weighted average precision: sum of ACG@p over relevant positions p
/// divided by the relevant count; nullopt when nothing is relevant.
std::optional<double> average_precision_w(
    std::span<const int> levels,
    std::optional<size_t> truncation = std::nullopt);

/// Mean of the non-excluded per-query AP_w values.
double weighted_map(std::span<const std::optional<double>> per_query);

struct LabeledQueryCode {
    uint64_t id = 0;
    PackedCode code;
    LabelSet labels;
};

/// Ranks every query against the code database, maps ranked ids to
/// similarity levels, and aggregates all metrics. db_labels is aligned with
/// the database insertion order.
MetricsReport evaluate_queries(const CodeDatabase& db,
                               std::span<const LabelSet> db_labels,
                               std::span<const LabeledQueryCode> queries,
                               const MetricsConfig& cfg);

/// Flat text form: metric@cutoff=<value> lines plus queries=/excluded=.
void write_metrics_report(const MetricsReport& report, std::ostream& out);
void save_metrics_report(const MetricsReport& report,
                         const std::filesystem::path& path);

}  // namespace dsrh
