#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace ticketforge {

// Reserved piece ids. The boundary marker is a real vocabulary piece emitted
// between words so decoding can restore spacing.
inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;
inline constexpr std::int32_t kBoundaryId = 2;

inline constexpr const char* kPadPiece = "<pad>";
inline constexpr const char* kUnkPiece = "<unk>";
inline constexpr const char* kBoundaryPiece = "\xe2\x96\x81";  // U+2581

// Byte-pair-encoding vocabulary shared across all domains. Immutable once
// trained; safe to share across concurrent encoders.
struct SubwordVocab {
    std::size_t target_size = 0;
    double coverage = 1.0;
    std::vector<std::string> pieces;                              // id -> piece
    std::vector<std::pair<std::string, std::string>> merges;      // learned order
    std::unordered_map<std::string, std::int32_t> piece_ids;
    std::unordered_map<std::string, std::size_t> merge_rank;      // "left\x1fright" -> rank
    std::unordered_set<std::string> retained_chars;

    std::size_t size() const { return pieces.size(); }
    std::int32_t id_of(const std::string& piece) const;
};

struct SeqEncoding {
    std::vector<std::int32_t> ids;   // padded/truncated to n_max
    std::size_t original_length = 0;
};

// Normalization applied before any vocabulary work: ASCII lowercasing and
// whitespace splitting. Words are sequences of UTF-8 code points.
std::vector<std::string> pretokenize(std::string_view text);
std::vector<std::string> utf8_chars(std::string_view word);

// Learns merges greedily by pair frequency (ties broken lexicographically)
// until the piece inventory reaches target_size or no pair occurs twice.
// Characters outside the cumulative coverage fraction map to <unk>.
SubwordVocab bpe_train(std::span<const std::string> corpus, std::size_t target_size,
                       double coverage);

SeqEncoding encode(const SubwordVocab& vocab, std::string_view text, std::size_t n_max);
std::string decode(const SubwordVocab& vocab, std::span<const std::int32_t> ids);

// Fraction of character occurrences in `corpus` representable without <unk>.
double char_coverage(const SubwordVocab& vocab, std::span<const std::string> corpus);

void save_vocab(const SubwordVocab& vocab, const std::filesystem::path& path);
SubwordVocab load_vocab(const std::filesystem::path& path);

}  // namespace ticketforge
