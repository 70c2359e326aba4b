// SPDX-License-Identifier: Apache-2.0
#include "dsrh/dataset.hpp"

#include <algorithm>
#include <doctest.h>
#include <set>
#include <string>

#include "temp_files.hpp"

using namespace dsrh;

namespace {

LabelSet labels(std::initializer_list<uint32_t> ls, size_t universe) {
    LabelSet s(universe);
    for (auto l : ls) s.insert(l);
    return s;
}

DataPoint point(uint64_t id, std::initializer_list<uint32_t> ls,
                std::vector<double> feats, size_t universe) {
    DataPoint p;
    p.id = id;
    p.labels = labels(ls, universe);
    p.features = std::move(feats);
    return p;
}

}  // namespace

TEST_CASE("similarity level is the intersection cardinality") {
    // {sky,tree,night} vs {sky,tree}
    CHECK(similarity_level(labels({1, 2, 3}, 8), labels({1, 2}, 8)) == 2);
    CHECK(similarity_level(labels({1, 2, 3}, 8), labels({1, 2, 3}, 8)) == 3);
    CHECK(similarity_level(labels({1, 2}, 8), labels({5, 6}, 8)) == 0);
}

TEST_CASE("similarity level is symmetric and bounded") {
    Rng rng(42);
    for (int t = 0; t < 200; ++t) {
        LabelSet a(16), b(16);
        for (uint32_t l = 1; l <= 16; ++l) {
            if (rng.uniform() < 0.3) a.insert(l);
            if (rng.uniform() < 0.3) b.insert(l);
        }
        if (a.cardinality() == 0 || b.cardinality() == 0) continue;
        const int ab = similarity_level(a, b);
        CHECK(ab == similarity_level(b, a));
        CHECK(ab <= static_cast<int>(std::min(a.cardinality(), b.cardinality())));
    }
}

TEST_CASE("label set rejects labels outside the universe") {
    LabelSet s(4);
    CHECK_THROWS(s.insert(0));
    CHECK_THROWS(s.insert(5));
    CHECK_THROWS(similarity_level(LabelSet(4), LabelSet(8)));
}

TEST_CASE("load_dataset parses a valid file") {
    testutil::TempDir dir;
    const auto path = dir.file("ds.txt");
    testutil::write_text(path,
                         "#dsrh-features v1 dim=4 labels=3\n"
                         "# a comment\n"
                         "1\t1;2\t0.5,1,-2,0.25\n"
                         "2\t3\t1,2,3,4\n"
                         "\n"
                         "3\t2;3\t-1,-2,-3,-4\n");
    const auto ds = load_dataset(path);
    CHECK(ds.points.size() == 3);
    CHECK(ds.dim == 4);
    CHECK(ds.label_count == 3);
    CHECK(ds.points[0].features == std::vector<double>{0.5, 1, -2, 0.25});
    CHECK(ds.points[1].labels.contains(3));
    CHECK_FALSE(ds.points[1].labels.contains(1));
}

TEST_CASE("load_dataset reports the offending line") {
    testutil::TempDir dir;

    SUBCASE("feature count mismatch") {
        const auto path = dir.file("bad_dim.txt");
        testutil::write_text(path,
                             "#dsrh-features v1 dim=4 labels=3\n"
                             "1\t1\t0.5,1,-2\n");
        CHECK_THROWS_WITH_AS(load_dataset(path),
                             doctest::Contains("line 2"), std::runtime_error);
    }
    SUBCASE("empty label set") {
        const auto path = dir.file("no_labels.txt");
        testutil::write_text(path,
                             "#dsrh-features v1 dim=2 labels=3\n"
                             "7\t\t1,2\n");
        CHECK_THROWS_WITH_AS(load_dataset(path),
                             doctest::Contains("label"), std::runtime_error);
    }
    SUBCASE("duplicate id") {
        const auto path = dir.file("dup.txt");
        testutil::write_text(path,
                             "#dsrh-features v1 dim=1 labels=1\n"
                             "5\t1\t0\n"
                             "5\t1\t1\n");
        CHECK_THROWS_WITH_AS(load_dataset(path),
                             doctest::Contains("duplicate"),
                             std::runtime_error);
    }
    SUBCASE("bad header") {
        const auto path = dir.file("head.txt");
        testutil::write_text(path, "#something else\n");
        CHECK_THROWS(load_dataset(path));
    }
    SUBCASE("label outside universe") {
        const auto path = dir.file("range.txt");
        testutil::write_text(path,
                             "#dsrh-features v1 dim=1 labels=3\n"
                             "1\t4\t0\n");
        CHECK_THROWS(load_dataset(path));
    }
}

TEST_CASE("dataset text round-trips") {
    MultiLabelDataset ds;
    ds.dim = 3;
    ds.label_count = 4;
    ds.points.push_back(point(10, {1, 4}, {0.125, -3.75e-7, 42.0}, 4));
    ds.points.push_back(point(11, {2}, {1.0 / 3.0, 2.5, -0.0}, 4));

    testutil::TempDir dir;
    const auto path = dir.file("rt.txt");
    save_dataset(ds, path);
    const auto back = load_dataset(path);
    REQUIRE(back.points.size() == 2);
    CHECK(back.dim == ds.dim);
    for (size_t i = 0; i < 2; ++i) {
        CHECK(back.points[i].id == ds.points[i].id);
        CHECK(back.points[i].features == ds.points[i].features);
        CHECK(back.points[i].labels == ds.points[i].labels);
    }
}

namespace {

MultiLabelDataset small_db() {
    MultiLabelDataset db;
    db.dim = 1;
    db.label_count = 4;
    db.points.push_back(point(1, {1, 2}, {0.0}, 4));      // level 2 vs {1,2}
    db.points.push_back(point(2, {3}, {0.0}, 4));         // level 0
    db.points.push_back(point(3, {1, 3}, {0.0}, 4));      // level 1
    return db;
}

}  // namespace

TEST_CASE("build_ranking_list sorts by level then id") {
    const auto db = small_db();
    const auto query = point(99, {1, 2}, {0.0}, 4);

    const auto ranking = build_ranking_list(query, db, 3);
    REQUIRE(ranking.entries.size() == 3);
    CHECK(ranking.entries[0].point_id == 1);
    CHECK(ranking.entries[0].level == 2);
    CHECK(ranking.entries[1].point_id == 3);
    CHECK(ranking.entries[1].level == 1);
    CHECK(ranking.entries[2].point_id == 2);
    CHECK(ranking.entries[2].level == 0);

    const auto top1 = build_ranking_list(query, db, 1);
    REQUIRE(top1.entries.size() == 1);
    CHECK(top1.entries[0].point_id == 1);
}

TEST_CASE("build_ranking_list breaks level ties by ascending id") {
    MultiLabelDataset db;
    db.dim = 1;
    db.label_count = 2;
    db.points.push_back(point(9, {1}, {0.0}, 2));
    db.points.push_back(point(4, {1}, {0.0}, 2));
    const auto query = point(100, {1}, {0.0}, 2);
    const auto ranking = build_ranking_list(query, db, 2);
    CHECK(ranking.entries[0].point_id == 4);
    CHECK(ranking.entries[1].point_id == 9);
}

TEST_CASE("build_ranking_list is insensitive to database order") {
    auto db = small_db();
    const auto query = point(99, {1, 2}, {0.0}, 4);
    const auto before = build_ranking_list(query, db, 10);
    std::swap(db.points[0], db.points[2]);
    const auto after = build_ranking_list(query, db, 10);
    REQUIRE(before.entries.size() == after.entries.size());
    for (size_t i = 0; i < before.entries.size(); ++i) {
        CHECK(before.entries[i].point_id == after.entries[i].point_id);
        CHECK(before.entries[i].level == after.entries[i].level);
    }
}

TEST_CASE("build_ranking_list excludes the query id") {
    auto db = small_db();
    const auto ranking = build_ranking_list(db.points[0], db, 10);
    CHECK(ranking.entries.size() == 2);
    for (const auto& e : ranking.entries) CHECK(e.point_id != 1);
}

TEST_CASE("sample_triplet_list draws one item per stratum") {
    const auto db = small_db();
    const auto query = point(99, {1, 2}, {0.0}, 4);
    Rng rng(7);
    const auto result = sample_triplet_list(query, db, rng);
    const auto* sample = std::get_if<RankingListSample>(&result);
    REQUIRE(sample != nullptr);
    REQUIRE(sample->items.size() == 3);
    CHECK(sample->items[0].level == 2);
    CHECK(sample->items[1].level == 1);
    CHECK(sample->items[2].level == 0);
}

TEST_CASE("sample_triplet_list reports the missing stratum") {
    MultiLabelDataset db;
    db.dim = 1;
    db.label_count = 4;
    db.points.push_back(point(2, {3}, {0.0}, 4));     // disjoint only
    db.points.push_back(point(3, {1, 3}, {0.0}, 4));  // partial only
    const auto query = point(99, {1, 2}, {0.0}, 4);
    Rng rng(7);
    const auto result = sample_triplet_list(query, db, rng);
    const auto* missing = std::get_if<Stratum>(&result);
    REQUIRE(missing != nullptr);
    CHECK(*missing == Stratum::FullMatch);
}

TEST_CASE("sample_triplet_list is deterministic under the seed") {
    MultiLabelDataset db;
    db.dim = 1;
    db.label_count = 4;
    for (uint64_t i = 0; i < 30; ++i) {
        const uint32_t kind = i % 3;
        if (kind == 0) db.points.push_back(point(i, {1, 2}, {0.0}, 4));
        if (kind == 1) db.points.push_back(point(i, {1, 3}, {0.0}, 4));
        if (kind == 2) db.points.push_back(point(i, {3, 4}, {0.0}, 4));
    }
    const auto query = point(99, {1, 2}, {0.0}, 4);

    Rng rng_a(123), rng_b(123);
    for (int t = 0; t < 20; ++t) {
        const auto ra = sample_triplet_list(query, db, rng_a);
        const auto rb = sample_triplet_list(query, db, rng_b);
        const auto& sa = std::get<RankingListSample>(ra);
        const auto& sb = std::get<RankingListSample>(rb);
        for (size_t k = 0; k < 3; ++k)
            CHECK(sa.items[k].index == sb.items[k].index);
    }
}

TEST_CASE("sample_triplet_list draws uniformly within a stratum") {
    // 4 full-match candidates; chi-square over many draws stays small.
    MultiLabelDataset db;
    db.dim = 1;
    db.label_count = 4;
    for (uint64_t i = 0; i < 4; ++i) db.points.push_back(point(i, {1, 2}, {0.0}, 4));
    db.points.push_back(point(10, {1, 3}, {0.0}, 4));
    db.points.push_back(point(11, {3}, {0.0}, 4));
    const auto query = point(99, {1, 2}, {0.0}, 4);

    Rng rng(2024);
    const int draws = 4000;
    std::vector<int> counts(4, 0);
    for (int t = 0; t < draws; ++t) {
        const auto& s =
            std::get<RankingListSample>(sample_triplet_list(query, db, rng));
        ++counts[s.items[0].index];
    }
    const double expected = draws / 4.0;
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    CHECK(chi2 < 16.27);  // df=3, p=0.001
}

TEST_CASE("sample_ranking_list generalizes the list length") {
    MultiLabelDataset db;
    db.dim = 1;
    db.label_count = 4;
    for (uint64_t i = 0; i < 6; ++i) db.points.push_back(point(i, {1, 2}, {0.0}, 4));
    for (uint64_t i = 6; i < 12; ++i) db.points.push_back(point(i, {2, 3}, {0.0}, 4));
    for (uint64_t i = 12; i < 18; ++i) db.points.push_back(point(i, {3, 4}, {0.0}, 4));
    const auto query = point(99, {1, 2}, {0.0}, 4);

    Rng rng(5);
    const auto& s =
        std::get<RankingListSample>(sample_ranking_list(query, db, 5, rng));
    REQUIRE(s.items.size() == 5);
    CHECK(s.items.front().level == 2);
    CHECK(s.items[1].level == 1);
    CHECK(s.items[2].level == 1);
    CHECK(s.items[3].level == 1);
    CHECK(s.items.back().level == 0);
    // partial picks are distinct
    std::set<size_t> mid{s.items[1].index, s.items[2].index, s.items[3].index};
    CHECK(mid.size() == 3);
}

TEST_CASE("split_train_query splits deterministically") {
    MultiLabelDataset ds;
    ds.dim = 1;
    ds.label_count = 2;
    for (uint64_t i = 0; i < 100; ++i)
        ds.points.push_back(point(i, {1}, {static_cast<double>(i)}, 2));

    Rng rng1(9), rng2(9);
    const auto [q1, d1] = split_train_query(ds, 10, rng1);
    const auto [q2, d2] = split_train_query(ds, 10, rng2);
    CHECK(q1.points.size() == 10);
    CHECK(d1.points.size() == 90);
    for (size_t i = 0; i < q1.points.size(); ++i)
        CHECK(q1.points[i].id == q2.points[i].id);

    std::set<uint64_t> ids;
    for (const auto& p : q1.points) ids.insert(p.id);
    for (const auto& p : d1.points) ids.insert(p.id);
    CHECK(ids.size() == 100);  // disjoint union covers everything

    Rng rng3(9);
    const auto [q0, d0] = split_train_query(ds, 0, rng3);
    CHECK(q0.points.empty());
    CHECK(d0.points.size() == 100);

    Rng rng4(9);
    CHECK_THROWS(split_train_query(ds, 100, rng4));
}

TEST_CASE("synth_dataset is reproducible and well-formed") {
    SynthConfig cfg;
    cfg.points = 64;
    cfg.label_count = 8;
    cfg.dim = 8;
    cfg.clusters = 8;
    cfg.noise = 0.25;
    cfg.seed = 3;

    const auto a = synth_dataset(cfg);
    const auto b = synth_dataset(cfg);
    REQUIRE(a.points.size() == 64);
    for (size_t i = 0; i < a.points.size(); ++i) {
        CHECK(a.points[i].features == b.points[i].features);
        CHECK(a.points[i].labels.cardinality() == 2);
    }

    cfg.noise = 0.0;
    const auto c = synth_dataset(cfg);
    // same cluster => identical centroid features when noise is zero
    CHECK(c.points[0].features == c.points[8].features);
    CHECK(c.points[0].features != c.points[1].features);

    testutil::TempDir dir;
    const auto path = dir.file("synth.txt");
    save_dataset(a, path);
    const auto loaded = load_dataset(path);
    CHECK(loaded.points.size() == a.points.size());
    CHECK(loaded.points[17].features == a.points[17].features);
}
