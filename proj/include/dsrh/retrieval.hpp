// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <unordered_set>
#include <vector>

namespace dsrh {

/// K-bit binary code packed into 64-bit words, bit j at word j/64 position
/// j%64 (LSB first). Bit 1 maps to code value +1, bit 0 to -1; padding bits
/// above K are zero.
struct PackedCode {
    uint32_t bits = 0;
    std::vector<uint64_t> words;
};

PackedCode pack_code(std::span<const double> code);
std::vector<double> unpack_code(const PackedCode& code);

uint32_t hamming_distance(const PackedCode& a, const PackedCode& b);

/// Immutable store of packed codes with their ids; exhaustive XOR+popcount
/// scan only, so results are exact.
class CodeDatabase {
public:
    CodeDatabase() = default;
    explicit CodeDatabase(uint32_t bits);

    void add(uint64_t id, const PackedCode& code);

    size_t size() const { return ids_.size(); }
    uint32_t bits() const { return bits_; }
    uint64_t id_at(size_t i) const { return ids_[i]; }
    std::span<const uint64_t> code_at(size_t i) const;
    PackedCode packed_at(size_t i) const;

    const std::vector<uint64_t>& ids() const { return ids_; }

private:
    uint32_t bits_ = 0;
    size_t words_per_code_ = 0;
    std::vector<uint64_t> ids_;
    std::unordered_set<uint64_t> id_set_;
    std::vector<uint64_t> words_;  // size() * words_per_code_
};

struct SearchHit {
    uint64_t id = 0;
    uint32_t distance = 0;

    bool operator==(const SearchHit&) const = default;
};

/// k smallest distances in ascending order; ties broken by ascending
/// insertion index. k larger than the database returns everything.
std::vector<SearchHit> search_topk(const CodeDatabase& db,
                                   const PackedCode& query, size_t k);

std::vector<SearchHit> rank_all(const CodeDatabase& db,
                                const PackedCode& query);

/// Binary code file: magic DSRHCODE, version u16=1, K u32, N u64, then N
/// records of (id u64, ceil(K/8) code bytes LSB-first). Little-endian.
void save_codes(const CodeDatabase& db, const std::filesystem::path& path);
CodeDatabase load_codes(const std::filesystem::path& path);
void write_codes(const CodeDatabase& db, std::ostream& out);

}  // namespace dsrh
