// SPDX-License-Identifier: Apache-2.0
#include "dsrh/dataset.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>

namespace dsrh {

// ---------------------------------------------------------------- LabelSet

LabelSet LabelSet::from_labels(std::span<const uint32_t> labels,
                               size_t universe) {
    LabelSet s(universe);
    for (uint32_t l : labels) s.insert(l);
    return s;
}

void LabelSet::insert(uint32_t label) {
    if (label < 1 || label > universe_)
        throw std::invalid_argument("label " + std::to_string(label) +
                                    " outside universe 1.." +
                                    std::to_string(universe_));
    const uint32_t bit = label - 1;
    words_[bit / 64] |= uint64_t{1} << (bit % 64);
}

bool LabelSet::contains(uint32_t label) const {
    if (label < 1 || label > universe_) return false;
    const uint32_t bit = label - 1;
    return (words_[bit / 64] >> (bit % 64)) & 1;
}

size_t LabelSet::cardinality() const {
    size_t n = 0;
    for (uint64_t w : words_) n += static_cast<size_t>(std::popcount(w));
    return n;
}

size_t LabelSet::intersection_count(const LabelSet& other) const {
    if (universe_ != other.universe_)
        throw std::invalid_argument("label universes differ");
    size_t n = 0;
    for (size_t i = 0; i < words_.size(); ++i)
        n += static_cast<size_t>(std::popcount(words_[i] & other.words_[i]));
    return n;
}

std::vector<uint32_t> LabelSet::to_labels() const {
    std::vector<uint32_t> out;
    for (uint32_t l = 1; l <= universe_; ++l)
        if (contains(l)) out.push_back(l);
    return out;
}

int similarity_level(const LabelSet& a, const LabelSet& b) {
    return static_cast<int>(a.intersection_count(b));
}

// ------------------------------------------------------------- text format

namespace {

[[noreturn]] void parse_fail(size_t line_no, const std::string& what) {
    throw std::runtime_error("line " + std::to_string(line_no) + ": " + what);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    size_t start = 0;
    while (true) {
        const size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

template <typename T>
T parse_number(std::string_view tok, size_t line_no, const char* what) {
    T value{};
    const auto* end = tok.data() + tok.size();
    const auto res = std::from_chars(tok.data(), end, value);
    if (res.ec != std::errc{} || res.ptr != end)
        parse_fail(line_no, std::string("malformed ") + what + " '" +
                                std::string(tok) + "'");
    return value;
}

}  // namespace

MultiLabelDataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());

    std::string line;
    size_t line_no = 0;

    if (!std::getline(in, line)) throw std::runtime_error("empty file");
    ++line_no;
    size_t dim = 0, label_count = 0;
    if (std::sscanf(line.c_str(), "#dsrh-features v1 dim=%zu labels=%zu", &dim,
                    &label_count) != 2)
        parse_fail(line_no, "bad header, expected "
                            "'#dsrh-features v1 dim=<D> labels=<C>'");
    if (dim == 0) parse_fail(line_no, "dim must be positive");
    if (label_count == 0) parse_fail(line_no, "labels must be positive");

    MultiLabelDataset ds;
    ds.dim = dim;
    ds.label_count = label_count;
    std::unordered_set<uint64_t> seen_ids;

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;

        const auto fields = split(line, '\t');
        if (fields.size() != 3)
            parse_fail(line_no, "expected 3 tab-separated fields, got " +
                                    std::to_string(fields.size()));

        DataPoint p;
        p.id = parse_number<uint64_t>(fields[0], line_no, "id");
        if (!seen_ids.insert(p.id).second)
            parse_fail(line_no, "duplicate id " + std::to_string(p.id));

        if (fields[1].empty()) parse_fail(line_no, "empty label set");
        p.labels = LabelSet(label_count);
        for (auto tok : split(fields[1], ';')) {
            if (tok.empty()) parse_fail(line_no, "empty label entry");
            const auto l = parse_number<uint32_t>(tok, line_no, "label");
            if (l < 1 || l > label_count)
                parse_fail(line_no, "label " + std::to_string(l) +
                                        " outside 1.." +
                                        std::to_string(label_count));
            p.labels.insert(l);
        }

        const auto feats = split(fields[2], ',');
        if (feats.size() != dim)
            parse_fail(line_no, "feature count " +
                                    std::to_string(feats.size()) +
                                    " does not match dim " +
                                    std::to_string(dim));
        p.features.reserve(dim);
        for (auto tok : feats) {
            const double v = parse_number<double>(tok, line_no, "feature");
            if (!std::isfinite(v)) parse_fail(line_no, "non-finite feature");
            p.features.push_back(v);
        }
        ds.points.push_back(std::move(p));
    }
    return ds;
}

void write_dataset(const MultiLabelDataset& ds, std::ostream& out) {
    char buf[64];
    out << "#dsrh-features v1 dim=" << ds.dim << " labels=" << ds.label_count
        << "\n";
    for (const auto& p : ds.points) {
        out << p.id << '\t';
        const auto labels = p.labels.to_labels();
        for (size_t i = 0; i < labels.size(); ++i) {
            if (i) out << ';';
            out << labels[i];
        }
        out << '\t';
        for (size_t i = 0; i < p.features.size(); ++i) {
            if (i) out << ',';
            std::snprintf(buf, sizeof buf, "%.17g", p.features[i]);
            out << buf;
        }
        out << '\n';
    }
}

void save_dataset(const MultiLabelDataset& ds,
                  const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    write_dataset(ds, out);
    if (!out.flush()) throw std::runtime_error("write failed: " + path.string());
}

// ---------------------------------------------------------------- rankings

GroundTruthRanking build_ranking_list(const DataPoint& query,
                                      const MultiLabelDataset& db,
                                      size_t max_len) {
    GroundTruthRanking r;
    r.query_id = query.id;
    r.entries.reserve(db.points.size());
    for (const auto& p : db.points) {
        if (p.id == query.id) continue;
        r.entries.push_back({p.id, similarity_level(query.labels, p.labels)});
    }
    std::sort(r.entries.begin(), r.entries.end(),
              [](const RankedEntry& a, const RankedEntry& b) {
                  if (a.level != b.level) return a.level > b.level;
                  return a.point_id < b.point_id;
              });
    if (r.entries.size() > max_len) r.entries.resize(max_len);
    return r;
}

SampleResult sample_triplet_list(const DataPoint& query,
                                 const MultiLabelDataset& db, Rng& rng) {
    return sample_ranking_list(query, db, 3, rng);
}

SampleResult sample_ranking_list(const DataPoint& query,
                                 const MultiLabelDataset& db,
                                 size_t list_length, Rng& rng) {
    if (db.points.empty()) throw std::invalid_argument("empty database");
    if (list_length < 1) throw std::invalid_argument("list length must be >= 1");

    const int full_level = static_cast<int>(query.labels.cardinality());
    std::vector<SampledItem> full, partial, none;
    for (size_t i = 0; i < db.points.size(); ++i) {
        const auto& p = db.points[i];
        if (p.id == query.id) continue;
        const int r = similarity_level(query.labels, p.labels);
        if (r == full_level)
            full.push_back({i, r});
        else if (r > 0)
            partial.push_back({i, r});
        else
            none.push_back({i, r});
    }

    const size_t want_partial = list_length >= 3 ? list_length - 2 : 0;
    const bool want_none = list_length >= 2;
    if (full.empty()) return Stratum::FullMatch;
    if (partial.size() < want_partial) return Stratum::Partial;
    if (want_none && none.empty()) return Stratum::Disjoint;

    RankingListSample out;
    out.items.reserve(list_length);
    out.items.push_back(full[rng.below(full.size())]);
    // partial Fisher-Yates prefix: without replacement, one draw per item
    for (size_t k = 0; k < want_partial; ++k) {
        const size_t j = k + rng.below(partial.size() - k);
        std::swap(partial[k], partial[j]);
        out.items.push_back(partial[k]);
    }
    if (want_none) out.items.push_back(none[rng.below(none.size())]);

    std::sort(out.items.begin(), out.items.end(),
              [&db](const SampledItem& a, const SampledItem& b) {
                  if (a.level != b.level) return a.level > b.level;
                  return db.points[a.index].id < db.points[b.index].id;
              });
    return out;
}

std::pair<MultiLabelDataset, MultiLabelDataset> split_train_query(
    const MultiLabelDataset& ds, size_t query_count, Rng& rng) {
    if (query_count >= ds.points.size())
        throw std::invalid_argument("query_count must be < dataset size");

    std::vector<size_t> order(ds.points.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    std::vector<size_t> query_idx(order.begin(), order.begin() + query_count);
    std::vector<size_t> db_idx(order.begin() + query_count, order.end());
    std::sort(query_idx.begin(), query_idx.end());
    std::sort(db_idx.begin(), db_idx.end());

    auto take = [&ds](const std::vector<size_t>& idx) {
        MultiLabelDataset out;
        out.dim = ds.dim;
        out.label_count = ds.label_count;
        out.points.reserve(idx.size());
        for (size_t i : idx) out.points.push_back(ds.points[i]);
        return out;
    };
    return {take(query_idx), take(db_idx)};
}

// ------------------------------------------------------------------- synth

MultiLabelDataset synth_dataset(const SynthConfig& cfg) {
    if (cfg.points == 0 || cfg.label_count == 0 || cfg.dim == 0 ||
        cfg.clusters == 0)
        throw std::invalid_argument("synth sizes must be positive");
    if (cfg.noise < 0.0) throw std::invalid_argument("noise must be >= 0");

    Rng rng(cfg.seed);

    std::vector<std::vector<double>> centroids(cfg.clusters);
    for (auto& c : centroids) {
        c.resize(cfg.dim);
        for (auto& v : c) v = rng.uniform(-1.0, 1.0);
    }

    MultiLabelDataset ds;
    ds.dim = cfg.dim;
    ds.label_count = cfg.label_count;
    ds.points.reserve(cfg.points);
    for (size_t i = 0; i < cfg.points; ++i) {
        const size_t c = i % cfg.clusters;
        DataPoint p;
        p.id = i + 1;
        p.labels = LabelSet(cfg.label_count);
        p.labels.insert(static_cast<uint32_t>(c % cfg.label_count) + 1);
        p.labels.insert(static_cast<uint32_t>((c + 1) % cfg.label_count) + 1);
        p.features.resize(cfg.dim);
        for (size_t d = 0; d < cfg.dim; ++d)
            p.features[d] = centroids[c][d] + cfg.noise * rng.normal();
        ds.points.push_back(std::move(p));
    }
    return ds;
}

}  // namespace dsrh
