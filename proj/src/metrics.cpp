// SPDX-License-Identifier: Apache-2.0
#include "dsrh/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <unordered_map>

#include "dsrh/io.hpp"

namespace dsrh {

namespace {

double gain(int level) {
    if (level < 0) throw std::invalid_argument("negative similarity level");
    return std::exp2(static_cast<double>(level)) - 1.0;
}

double discounted_sum(std::span<const int> levels, size_t p) {
    double sum = 0.0;
    for (size_t i = 0; i < p; ++i)
        sum += gain(levels[i]) / std::log2(static_cast<double>(i + 2));
    return sum;
}

}  // namespace

std::optional<double> ndcg_at(std::span<const int> levels, size_t p) {
    p = std::min(p, levels.size());
    if (p == 0) return std::nullopt;

    std::vector<int> ideal(levels.begin(), levels.end());
    std::sort(ideal.begin(), ideal.end(), std::greater<int>());
    const double z = discounted_sum(ideal, p);
    if (z == 0.0) return std::nullopt;
    return discounted_sum(levels, p) / z;
}

double acg_at(std::span<const int> levels, size_t p) {
    if (p == 0) throw std::invalid_argument("cutoff must be positive");
    p = std::min(p, levels.size());
    if (p == 0) return 0.0;
    double sum = 0.0;
    for (size_t i = 0; i < p; ++i) {
        if (levels[i] < 0)
            throw std::invalid_argument("negative similarity level");
        sum += static_cast<double>(levels[i]);
    }
    return sum / static_cast<double>(p);
}

std::optional<double> average_precision_w(std::span<const int> levels,
                                          std::optional<size_t> truncation) {
    size_t limit = levels.size();
    if (truncation) limit = std::min(limit, *truncation);

    double sum = 0.0;
    size_t relevant = 0;
    double prefix = 0.0;
    for (size_t p = 1; p <= limit; ++p) {
        prefix += static_cast<double>(levels[p - 1]);
        if (levels[p - 1] > 0) {
            ++relevant;
            sum += prefix / static_cast<double>(p);  // ACG@p
        }
    }
    if (relevant == 0) return std::nullopt;
    return sum / static_cast<double>(relevant);
}

double weighted_map(std::span<const std::optional<double>> per_query) {
    double sum = 0.0;
    size_t n = 0;
    for (const auto& ap : per_query) {
        if (!ap) continue;
        sum += *ap;
        ++n;
    }
    if (n == 0) throw std::invalid_argument("all queries excluded");
    return sum / static_cast<double>(n);
}

MetricsReport evaluate_queries(const CodeDatabase& db,
                               std::span<const LabelSet> db_labels,
                               std::span<const LabeledQueryCode> queries,
                               const MetricsConfig& cfg) {
    if (db.size() == 0) throw std::invalid_argument("empty code database");
    if (queries.empty()) throw std::invalid_argument("empty query set");
    if (db_labels.size() != db.size())
        throw std::invalid_argument("database label list size mismatch");

    std::unordered_map<uint64_t, size_t> index_of;
    index_of.reserve(db.size());
    for (size_t i = 0; i < db.size(); ++i) index_of.emplace(db.id_at(i), i);
    for (const auto& q : queries)
        if (index_of.count(q.id))
            throw std::invalid_argument("query id " + std::to_string(q.id) +
                                        " also present in database");

    MetricsReport report;
    report.query_count = queries.size();
    report.ap_truncation = cfg.ap_truncation;
    std::vector<double> ndcg_sums(cfg.cutoffs.size(), 0.0);
    std::vector<double> acg_sums(cfg.cutoffs.size(), 0.0);
    std::vector<std::optional<double>> ap_values;
    ap_values.reserve(queries.size());

    for (const auto& q : queries) {
        const auto ranking = rank_all(db, q.code);
        RelevanceVector levels(ranking.size());
        for (size_t i = 0; i < ranking.size(); ++i) {
            const size_t idx = index_of.at(ranking[i].id);
            levels[i] = similarity_level(q.labels, db_labels[idx]);
        }

        const auto ap = average_precision_w(levels, cfg.ap_truncation);
        ap_values.push_back(ap);
        if (!ap) {
            ++report.excluded_count;
            continue;  // all-irrelevant query: left out of every mean
        }
        for (size_t c = 0; c < cfg.cutoffs.size(); ++c) {
            const auto ndcg = ndcg_at(levels, cfg.cutoffs[c]);
            ndcg_sums[c] += ndcg.value();  // relevant item exists, so Z > 0
            acg_sums[c] += acg_at(levels, cfg.cutoffs[c]);
        }
    }

    const size_t scored = report.query_count - report.excluded_count;
    if (scored == 0) throw std::runtime_error("all queries excluded");
    for (size_t c = 0; c < cfg.cutoffs.size(); ++c) {
        report.ndcg.emplace_back(cfg.cutoffs[c],
                                 ndcg_sums[c] / static_cast<double>(scored));
        report.acg.emplace_back(cfg.cutoffs[c],
                                acg_sums[c] / static_cast<double>(scored));
    }
    report.weighted_map = weighted_map(ap_values);
    return report;
}

void write_metrics_report(const MetricsReport& report, std::ostream& out) {
    char buf[64];
    auto fmt = [&buf](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    for (const auto& [cutoff, value] : report.ndcg)
        out << "ndcg@" << cutoff << "=" << fmt(value) << "\n";
    for (const auto& [cutoff, value] : report.acg)
        out << "acg@" << cutoff << "=" << fmt(value) << "\n";
    out << "map_w@";
    if (report.ap_truncation)
        out << *report.ap_truncation;
    else
        out << "full";
    out << "=" << fmt(report.weighted_map) << "\n";
    out << "queries=" << report.query_count << "\n";
    out << "excluded=" << report.excluded_count << "\n";
}

void save_metrics_report(const MetricsReport& report,
                         const std::filesystem::path& path) {
    atomic_write_file(
        path, [&report](std::ostream& out) { write_metrics_report(report, out); },
        /*binary=*/false);
}

}  // namespace dsrh
