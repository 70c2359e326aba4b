// SPDX-License-Identifier: Apache-2.0
#include "dsrh/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <queue>
#include <stdexcept>
#include <string>

#include "dsrh/io.hpp"

namespace dsrh {

namespace {

constexpr char kCodeMagic[8] = {'D', 'S', 'R', 'H', 'C', 'O', 'D', 'E'};
constexpr uint16_t kCodeVersion = 1;

size_t words_for_bits(uint32_t bits) { return (bits + 63) / 64; }
size_t bytes_for_bits(uint32_t bits) { return (bits + 7) / 8; }

uint32_t hamming_words(std::span<const uint64_t> a,
                       std::span<const uint64_t> b) {
    uint32_t sum = 0;
    for (size_t i = 0; i < a.size(); ++i)
        sum += static_cast<uint32_t>(std::popcount(a[i] ^ b[i]));
    return sum;
}

}  // namespace

PackedCode pack_code(std::span<const double> code) {
    PackedCode out;
    out.bits = static_cast<uint32_t>(code.size());
    if (out.bits == 0) throw std::invalid_argument("empty code");
    out.words.assign(words_for_bits(out.bits), 0);
    for (size_t j = 0; j < code.size(); ++j) {
        if (code[j] == 1.0)
            out.words[j / 64] |= uint64_t{1} << (j % 64);
        else if (code[j] != -1.0)
            throw std::invalid_argument("code entries must be +1 or -1");
    }
    return out;
}

std::vector<double> unpack_code(const PackedCode& code) {
    std::vector<double> out(code.bits);
    for (size_t j = 0; j < out.size(); ++j)
        out[j] = ((code.words[j / 64] >> (j % 64)) & 1) ? 1.0 : -1.0;
    return out;
}

uint32_t hamming_distance(const PackedCode& a, const PackedCode& b) {
    if (a.bits != b.bits) throw std::invalid_argument("code widths differ");
    return hamming_words(a.words, b.words);
}

CodeDatabase::CodeDatabase(uint32_t bits)
    : bits_(bits), words_per_code_(words_for_bits(bits)) {
    if (bits == 0) throw std::invalid_argument("bits must be positive");
}

void CodeDatabase::add(uint64_t id, const PackedCode& code) {
    if (code.bits != bits_) throw std::invalid_argument("code widths differ");
    if (!id_set_.insert(id).second)
        throw std::invalid_argument("duplicate id " + std::to_string(id));
    ids_.push_back(id);
    words_.insert(words_.end(), code.words.begin(), code.words.end());
}

std::span<const uint64_t> CodeDatabase::code_at(size_t i) const {
    return {words_.data() + i * words_per_code_, words_per_code_};
}

PackedCode CodeDatabase::packed_at(size_t i) const {
    PackedCode out;
    out.bits = bits_;
    const auto w = code_at(i);
    out.words.assign(w.begin(), w.end());
    return out;
}

std::vector<SearchHit> search_topk(const CodeDatabase& db,
                                   const PackedCode& query, size_t k) {
    if (query.bits != db.bits())
        throw std::invalid_argument("query width differs from database");
    if (k == 0) throw std::invalid_argument("k must be positive");
    k = std::min(k, db.size());

    using Entry = std::pair<uint32_t, size_t>;  // (distance, insertion index)
    std::priority_queue<Entry> worst;           // max-heap of current best k
    for (size_t i = 0; i < db.size(); ++i) {
        const uint32_t d = hamming_words(query.words, db.code_at(i));
        if (worst.size() < k) {
            worst.emplace(d, i);
        } else if (Entry(d, i) < worst.top()) {
            worst.pop();
            worst.emplace(d, i);
        }
    }

    std::vector<Entry> order;
    order.reserve(worst.size());
    while (!worst.empty()) {
        order.push_back(worst.top());
        worst.pop();
    }
    std::sort(order.begin(), order.end());

    std::vector<SearchHit> hits;
    hits.reserve(order.size());
    for (const auto& [d, i] : order) hits.push_back({db.id_at(i), d});
    return hits;
}

std::vector<SearchHit> rank_all(const CodeDatabase& db,
                                const PackedCode& query) {
    return search_topk(db, query, db.size() == 0 ? 1 : db.size());
}

void write_codes(const CodeDatabase& db, std::ostream& out) {
    if (db.bits() == 0) throw std::invalid_argument("bits must be positive");
    write_bytes(out, kCodeMagic, sizeof kCodeMagic);
    write_u16(out, kCodeVersion);
    write_u32(out, db.bits());
    write_u64(out, db.size());
    const size_t nbytes = bytes_for_bits(db.bits());
    for (size_t i = 0; i < db.size(); ++i) {
        write_u64(out, db.id_at(i));
        const auto words = db.code_at(i);
        for (size_t b = 0; b < nbytes; ++b) {
            const unsigned char byte = static_cast<unsigned char>(
                words[b / 8] >> ((b % 8) * 8));
            write_bytes(out, &byte, 1);
        }
    }
}

void save_codes(const CodeDatabase& db, const std::filesystem::path& path) {
    atomic_write_file(path, [&db](std::ostream& out) { write_codes(db, out); });
}

CodeDatabase load_codes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());

    char magic[8];
    read_bytes(in, magic, sizeof magic);
    if (!std::equal(magic, magic + 8, kCodeMagic))
        throw std::runtime_error("bad magic, not a code file");
    const uint16_t version = read_u16(in);
    if (version != kCodeVersion)
        throw std::runtime_error("unsupported code file version " +
                                 std::to_string(version));
    const uint32_t bits = read_u32(in);
    if (bits == 0) throw std::runtime_error("code file has zero-bit codes");
    const uint64_t count = read_u64(in);

    CodeDatabase db(bits);
    const size_t nbytes = bytes_for_bits(bits);
    for (uint64_t i = 0; i < count; ++i) {
        const uint64_t id = read_u64(in);
        PackedCode code;
        code.bits = bits;
        code.words.assign(words_for_bits(bits), 0);
        for (size_t b = 0; b < nbytes; ++b) {
            unsigned char byte;
            read_bytes(in, &byte, 1);
            code.words[b / 8] |= static_cast<uint64_t>(byte) << ((b % 8) * 8);
        }
        if (bits % 64 != 0) {
            const uint64_t mask = (uint64_t{1} << (bits % 64)) - 1;
            if (code.words.back() & ~mask)
                throw std::runtime_error("padding bits set in code file");
        }
        db.add(id, code);
    }
    return db;
}

}  // namespace dsrh
