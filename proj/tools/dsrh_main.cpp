// SPDX-License-Identifier: Apache-2.0
//
// dsrh — train binary hash functions under multilevel ranking supervision
// and run exact Hamming-distance retrieval over the learned codes.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <CLI11.hpp>

#include "dsrh/dataset.hpp"
#include "dsrh/io.hpp"
#include "dsrh/metrics.hpp"
#include "dsrh/model.hpp"
#include "dsrh/retrieval.hpp"
#include "dsrh/trainer.hpp"

namespace {

std::vector<size_t> parse_size_list(const std::string& csv, const char* what) {
    std::vector<size_t> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            const long long v = std::stoll(tok);
            if (v <= 0) throw std::invalid_argument("");
            out.push_back(static_cast<size_t>(v));
        } catch (...) {
            throw std::runtime_error(std::string("bad ") + what + " entry '" +
                                     tok + "'");
        }
    }
    if (out.empty())
        throw std::runtime_error(std::string("empty ") + what + " list");
    return out;
}

std::vector<double> parse_feature_csv(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            size_t used = 0;
            const double v = std::stod(tok, &used);
            if (used != tok.size()) throw std::invalid_argument("");
            out.push_back(v);
        } catch (...) {
            throw std::runtime_error("bad feature value '" + tok + "'");
        }
    }
    if (out.empty()) throw std::runtime_error("empty query vector");
    return out;
}

struct TrainFlags {
    std::string data;
    std::string model_out;
    size_t bits = 32;
    size_t epochs = 0;
    size_t batch_size = 128;
    double alpha = 1.0;
    double beta = 5e-4;
    double margin = 1.0;
    double lr = 0.01;
    double momentum = 0.9;
    double dropout_keep = 0.5;
    size_t list_length = 3;
    bool unweighted = false;
    std::string z_norm = "list";
    std::string hidden = "64,32";
    uint64_t seed = 1;
};

int run_train(const TrainFlags& f) {
    const auto ds = dsrh::load_dataset(f.data);
    if (ds.points.empty()) throw std::runtime_error("dataset has no points");

    std::vector<size_t> dims{ds.dim};
    for (size_t h : parse_size_list(f.hidden, "hidden width"))
        dims.push_back(h);
    if (dims.size() < 3)
        throw std::runtime_error("need at least two hidden widths");

    dsrh::Rng init_rng(dsrh::mix_seed(f.seed, 1));
    dsrh::HashModel model = dsrh::init_weights(dims, f.bits, init_rng);

    dsrh::TrainConfig cfg;
    cfg.epochs = f.epochs;
    cfg.batch_size = f.batch_size;
    cfg.learning_rate = f.lr;
    cfg.momentum = f.momentum;
    cfg.dropout_keep = f.dropout_keep;
    cfg.list_length = f.list_length;
    cfg.seed = dsrh::mix_seed(f.seed, 2);
    cfg.loss.alpha = f.alpha;
    cfg.loss.beta = f.beta;
    cfg.loss.margin = f.margin;
    cfg.loss.weighted = !f.unweighted;
    if (f.z_norm == "list")
        cfg.loss.z_mode = dsrh::ZNormMode::PerList;
    else if (f.z_norm == "db")
        cfg.loss.z_mode = dsrh::ZNormMode::PerDatabase;
    else
        throw std::runtime_error("--z-norm must be 'list' or 'db'");

    const auto report = dsrh::train(model, ds, cfg, &std::cout);
    dsrh::save_model(model, f.model_out);
    dsrh::save_train_report(report, f.model_out + ".report.txt");
    std::cout << "model: " << f.model_out << "\n";
    return 0;
}

int run_encode(const std::string& model_path, const std::string& data_path,
               const std::string& out_path) {
    const auto model = dsrh::load_model(model_path);
    const auto ds = dsrh::load_dataset(data_path);
    const auto codes = dsrh::encode_dataset(model, ds);
    dsrh::save_codes(codes, out_path);
    std::cout << "encoded " << codes.size() << " points at " << codes.bits()
              << " bits: " << out_path << "\n";
    return 0;
}

int run_search(const std::string& codes_path, const std::string& model_path,
               const std::string& query_csv, const std::string& query_file,
               size_t k) {
    const auto db = dsrh::load_codes(codes_path);
    const auto model = dsrh::load_model(model_path);
    if (model.bits != db.bits())
        throw std::runtime_error("model bits do not match code file");

    std::vector<std::vector<double>> queries;
    if (!query_csv.empty()) queries.push_back(parse_feature_csv(query_csv));
    if (!query_file.empty()) {
        std::ifstream in(query_file);
        if (!in) throw std::runtime_error("cannot open " + query_file);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            queries.push_back(parse_feature_csv(line));
        }
    }
    if (queries.empty())
        throw std::runtime_error("no query given; use --query or --query-file");

    for (size_t qi = 0; qi < queries.size(); ++qi) {
        if (queries[qi].size() != model.input_dim())
            throw std::runtime_error(
                "query dimension " + std::to_string(queries[qi].size()) +
                " does not match model input " +
                std::to_string(model.input_dim()));
        dsrh::Matrix batch(1, queries[qi].size());
        std::copy(queries[qi].begin(), queries[qi].end(),
                  batch.row(0).begin());
        const auto code = dsrh::forward_binary(model, batch);
        const auto hits =
            dsrh::search_topk(db, dsrh::pack_code(code.row(0)), k);
        if (queries.size() > 1) std::cout << "# query " << qi + 1 << "\n";
        for (size_t r = 0; r < hits.size(); ++r)
            std::cout << r + 1 << '\t' << hits[r].id << '\t'
                      << hits[r].distance << "\n";
    }
    return 0;
}

struct EvalFlags {
    std::string codes;
    std::string data;
    std::string out;
    std::string query_ids;
    size_t query_count = 0;
    uint64_t split_seed = 1;
    std::string cutoffs = "100";
    size_t ap_cutoff = 0;  // 0 = full list
};

int run_eval(const EvalFlags& f) {
    const auto all_codes = dsrh::load_codes(f.codes);
    const auto ds = dsrh::load_dataset(f.data);

    std::unordered_map<uint64_t, const dsrh::DataPoint*> by_id;
    for (const auto& p : ds.points) by_id.emplace(p.id, &p);

    std::unordered_set<uint64_t> query_ids;
    if (!f.query_ids.empty()) {
        std::ifstream in(f.query_ids);
        if (!in) throw std::runtime_error("cannot open " + f.query_ids);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            query_ids.insert(std::stoull(line));
        }
    } else {
        if (f.query_count == 0)
            throw std::runtime_error(
                "need --query-count or --query-ids to pick queries");
        dsrh::Rng rng(f.split_seed);
        const auto [queries, rest] =
            dsrh::split_train_query(ds, f.query_count, rng);
        for (const auto& p : queries.points) query_ids.insert(p.id);
    }
    if (query_ids.empty()) throw std::runtime_error("empty query set");

    dsrh::CodeDatabase db(all_codes.bits());
    std::vector<dsrh::LabelSet> db_labels;
    std::vector<dsrh::LabeledQueryCode> queries;
    for (size_t i = 0; i < all_codes.size(); ++i) {
        const uint64_t id = all_codes.id_at(i);
        const auto it = by_id.find(id);
        if (it == by_id.end())
            throw std::runtime_error("code id " + std::to_string(id) +
                                     " missing from dataset");
        if (query_ids.count(id)) {
            queries.push_back({id, all_codes.packed_at(i), it->second->labels});
        } else {
            db.add(id, all_codes.packed_at(i));
            db_labels.push_back(it->second->labels);
        }
    }
    if (queries.size() != query_ids.size())
        throw std::runtime_error("some query ids missing from code file");

    dsrh::MetricsConfig cfg;
    cfg.cutoffs = parse_size_list(f.cutoffs, "cutoff");
    if (f.ap_cutoff > 0) cfg.ap_truncation = f.ap_cutoff;

    const auto report = dsrh::evaluate_queries(db, db_labels, queries, cfg);
    if (!f.out.empty()) dsrh::save_metrics_report(report, f.out);
    dsrh::write_metrics_report(report, std::cout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"binary hashing with multilevel ranking supervision"};
    app.require_subcommand(1);

    // synth
    dsrh::SynthConfig synth_cfg;
    std::string synth_out;
    auto* synth = app.add_subcommand(
        "synth", "generate a clustered multi-label feature dataset");
    synth->add_option("--out", synth_out, "output dataset path")->required();
    synth->add_option("--points", synth_cfg.points, "number of points");
    synth->add_option("--labels", synth_cfg.label_count, "label universe size");
    synth->add_option("--dim", synth_cfg.dim, "feature dimension");
    synth->add_option("--clusters", synth_cfg.clusters, "cluster count");
    synth->add_option("--noise", synth_cfg.noise, "feature noise sigma");
    synth->add_option("--seed", synth_cfg.seed, "random seed");

    // train
    TrainFlags tf;
    auto* train = app.add_subcommand("train", "train a hash model");
    train->add_option("--data", tf.data, "dataset path")->required();
    train->add_option("--model-out", tf.model_out, "checkpoint path")
        ->required();
    train->add_option("--bits", tf.bits, "code length K");
    train->add_option("--epochs", tf.epochs, "training epochs")->required();
    train->add_option("--batch-size", tf.batch_size, "queries per step");
    train->add_option("--alpha", tf.alpha, "balance penalty weight");
    train->add_option("--beta", tf.beta, "weight decay");
    train->add_option("--margin", tf.margin, "triplet hinge margin");
    train->add_option("--lr", tf.lr, "learning rate");
    train->add_option("--momentum", tf.momentum, "SGD momentum");
    train->add_option("--dropout-keep", tf.dropout_keep,
                      "hidden unit keep probability");
    train->add_option("--list-length", tf.list_length,
                      "sampled ranking list length");
    train->add_flag("--unweighted", tf.unweighted,
                    "uniform triplet weights instead of NDCG weights");
    train->add_option("--z-norm", tf.z_norm,
                      "weight normalizer pool: list or db");
    train->add_option("--hidden", tf.hidden,
                      "comma-separated hidden widths, e.g. 64,32");
    train->add_option("--seed", tf.seed, "random seed");

    // encode
    std::string enc_model, enc_data, enc_out;
    auto* encode =
        app.add_subcommand("encode", "binary-encode a dataset with a model");
    encode->add_option("--model", enc_model, "checkpoint path")->required();
    encode->add_option("--data", enc_data, "dataset path")->required();
    encode->add_option("--out", enc_out, "code file path")->required();

    // search
    std::string s_codes, s_model, s_query, s_query_file;
    size_t s_k = 10;
    auto* search =
        app.add_subcommand("search", "rank database codes for a query");
    search->add_option("--codes", s_codes, "code file path")->required();
    search->add_option("--model", s_model, "checkpoint path")->required();
    search->add_option("--query", s_query, "comma-separated feature vector");
    search->add_option("--query-file", s_query_file,
                       "file with one feature vector per line");
    search->add_option("-k,--k", s_k, "results per query");

    // eval
    EvalFlags ef;
    auto* eval =
        app.add_subcommand("eval", "ranking-quality metrics over a query set");
    eval->add_option("--codes", ef.codes, "code file path")->required();
    eval->add_option("--data", ef.data, "dataset path")->required();
    eval->add_option("--out", ef.out, "metrics report path");
    eval->add_option("--query-ids", ef.query_ids,
                     "file with one query id per line");
    eval->add_option("--query-count", ef.query_count,
                     "hold out this many points as queries");
    eval->add_option("--split-seed", ef.split_seed, "query split seed");
    eval->add_option("--cutoffs", ef.cutoffs, "comma-separated ranking cutoffs");
    eval->add_option("--ap-cutoff", ef.ap_cutoff,
                     "truncate AP_w at this depth (0 = full ranking)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            const auto ds = dsrh::synth_dataset(synth_cfg);
            dsrh::atomic_write_file(
                synth_out,
                [&ds](std::ostream& out) { dsrh::write_dataset(ds, out); },
                /*binary=*/false);
            std::cout << "wrote " << ds.points.size() << " points to "
                      << synth_out << "\n";
            return 0;
        }
        if (train->parsed()) return run_train(tf);
        if (encode->parsed()) return run_encode(enc_model, enc_data, enc_out);
        if (search->parsed())
            return run_search(s_codes, s_model, s_query, s_query_file, s_k);
        if (eval->parsed()) return run_eval(ef);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
