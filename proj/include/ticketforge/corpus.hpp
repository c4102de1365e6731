#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ticketforge/bpe.hpp"

namespace ticketforge {

struct ReviewRecord {
    std::string text;
    int rating = 0;  // 1..5
};

struct LabeledExample {
    SeqEncoding encoding;
    int label = 0;  // 0 negative, 1 positive
};

// Balanced, split, encoded corpus for one domain.
struct DomainDataset {
    std::string name;
    std::vector<LabeledExample> train, validation, test;
    std::size_t vocab_size = 0;
    std::string vocab_digest;
};

struct SplitSizes {
    std::size_t train = 0, validation = 0, test = 0;
};

// Raw text splits before encoding; the vocabulary is trained on the pooled
// train-split texts of all domains, so splitting must precede encoding.
struct RawSplits {
    std::vector<std::pair<std::string, int>> train, validation, test;  // (text, label)
};

// Ratings 1,2 -> negative; 4,5 -> positive; 3 discarded. Each split is
// exactly class-balanced, sampled deterministically from `seed`.
RawSplits sample_splits(std::span<const ReviewRecord> records, std::uint64_t seed,
                        const SplitSizes& sizes);

DomainDataset encode_dataset(const std::string& name, const RawSplits& splits,
                             const SubwordVocab& vocab, std::size_t n_max,
                             const std::string& vocab_digest);

DomainDataset ingest_reviews(const std::string& name, std::span<const ReviewRecord> records,
                             const SubwordVocab& vocab, std::size_t n_max, std::uint64_t seed,
                             const SplitSizes& sizes, const std::string& vocab_digest);

// Newline-delimited JSON records: {"text": ..., "rating": 1..5}.
std::vector<ReviewRecord> read_jsonl_reviews(const std::filesystem::path& path);

// ---- divergence ------------------------------------------------------------

struct UnigramDist {
    std::vector<double> p;  // over vocabulary ids, sums to 1
};

// Relative subword frequencies over the training split, pad excluded.
UnigramDist unigram_distribution(const DomainDataset& dataset);

// KL(p||q) = sum_x p(x) ln(p(x)/q(x)) in nats; requires support(p) within
// support(q).
double kl_divergence(const UnigramDist& p, const UnigramDist& q);

// JSD(p||q) = KL(p||m)/2 + KL(q||m)/2 with m = (p+q)/2; bounded by ln 2.
double jsd(const UnigramDist& p, const UnigramDist& q);

std::vector<std::vector<double>> divergence_matrix(std::span<const DomainDataset> domains);

// ---- synthetic domains -----------------------------------------------------

// Deterministic toy review generator: domain-specific topic tokens plus a
// sentiment token set shared by every domain, so transfer is meaningful
// without external data.
struct SyntheticDomainConfig {
    std::string name;
    std::size_t topic_tokens = 12;
    double noise_rate = 0.03;       // chance of an off-polarity sentiment word
    double neutral_rate = 0.04;     // chance of a rating-3 record (discarded later)
    std::uint64_t pool_seed = 0;    // 0: derive from name
};

std::vector<ReviewRecord> generate_reviews(const SyntheticDomainConfig& cfg, std::size_t count,
                                           std::uint64_t seed);

}  // namespace ticketforge
