// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "dsrh/rng.hpp"

namespace dsrh {

/// A point's subset of class labels, stored as a fixed-width bit vector over
/// the label universe {1..C}.
class LabelSet {
public:
    LabelSet() = default;
    explicit LabelSet(size_t universe)
        : universe_(universe), words_((universe + 63) / 64, 0) {}

    static LabelSet from_labels(std::span<const uint32_t> labels,
                                size_t universe);

    void insert(uint32_t label);
    bool contains(uint32_t label) const;
    size_t cardinality() const;
    size_t universe() const { return universe_; }
    size_t intersection_count(const LabelSet& other) const;
    std::vector<uint32_t> to_labels() const;  // ascending

    bool operator==(const LabelSet&) const = default;

private:
    size_t universe_ = 0;
    std::vector<uint64_t> words_;
};

struct DataPoint {
    uint64_t id = 0;
    std::vector<double> features;
    LabelSet labels;
};

struct MultiLabelDataset {
    std::vector<DataPoint> points;
    size_t dim = 0;
    size_t label_count = 0;

    size_t size() const { return points.size(); }
};

struct RankedEntry {
    uint64_t point_id = 0;
    int level = 0;
};

struct GroundTruthRanking {
    uint64_t query_id = 0;
    std::vector<RankedEntry> entries;  // level descending, id ascending on ties
};

/// Number of labels two points share; the multilevel relevance r.
int similarity_level(const LabelSet& a, const LabelSet& b);

/// Text dataset format:
///   #dsrh-features v1 dim=<D> labels=<C>
///   <id>\t<label;label;...>\t<f1,f2,...,fD>
/// Lines starting with '#' after the header are comments.
MultiLabelDataset load_dataset(const std::filesystem::path& path);
void write_dataset(const MultiLabelDataset& ds, std::ostream& out);
void save_dataset(const MultiLabelDataset& ds,
                  const std::filesystem::path& path);

GroundTruthRanking build_ranking_list(const DataPoint& query,
                                      const MultiLabelDataset& db,
                                      size_t max_len);

/// Strata used when sampling a training ranking list for a query q:
/// full match shares all of q's labels, partial shares some but not all,
/// disjoint shares none.
enum class Stratum { FullMatch, Partial, Disjoint };

struct SampledItem {
    size_t index = 0;  // into db.points
    int level = 0;
};

struct RankingListSample {
    std::vector<SampledItem> items;  // level descending
};

/// Either a sample or the stratum that turned out empty (query skipped).
using SampleResult = std::variant<RankingListSample, Stratum>;

/// Length-3 list: one full-match item, one partial, one disjoint, each drawn
/// uniformly within its stratum.
SampleResult sample_triplet_list(const DataPoint& query,
                                 const MultiLabelDataset& db, Rng& rng);

/// Generalization for other list lengths: first item full-match, last item
/// disjoint, the middle list_length-2 items drawn from the partial stratum
/// without replacement. list_length == 3 reproduces sample_triplet_list
/// draw for draw.
SampleResult sample_ranking_list(const DataPoint& query,
                                 const MultiLabelDataset& db,
                                 size_t list_length, Rng& rng);

/// Deterministic disjoint split; returns (queries, database).
std::pair<MultiLabelDataset, MultiLabelDataset> split_train_query(
    const MultiLabelDataset& ds, size_t query_count, Rng& rng);

/// Clustered multi-label generator used by the synth command and tests.
/// Clusters take two consecutive labels on a ring over {1..C}, so points in
/// one cluster share all labels, ring neighbors share one, and everything
/// else shares none; features are the cluster centroid plus isotropic noise.
struct SynthConfig {
    size_t points = 2000;
    size_t label_count = 8;
    size_t dim = 32;
    size_t clusters = 8;
    double noise = 0.5;
    uint64_t seed = 1;
};

MultiLabelDataset synth_dataset(const SynthConfig& cfg);

}  // namespace dsrh
