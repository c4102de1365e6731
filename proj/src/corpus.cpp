#include "ticketforge/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "ticketforge/errors.hpp"
#include "ticketforge/rng.hpp"

namespace ticketforge {

RawSplits sample_splits(std::span<const ReviewRecord> records, std::uint64_t seed,
                        const SplitSizes& sizes) {
    for (auto [label, count] : {std::pair{"train", sizes.train},
                                std::pair{"validation", sizes.validation},
                                std::pair{"test", sizes.test}}) {
        if (count % 2 != 0) {
            throw ConfigError(std::string("sample_splits: ") + label + " size " +
                              std::to_string(count) + " cannot be class-balanced (must be even)");
        }
    }

    std::vector<std::size_t> neg, pos;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const int r = records[i].rating;
        if (r == 3) continue;  // neutral reviews are discarded
        if (r == 1 || r == 2) neg.push_back(i);
        else if (r == 4 || r == 5) pos.push_back(i);
        else throw DataError("sample_splits: rating " + std::to_string(r) +
                             " out of range at record " + std::to_string(i));
    }

    const std::size_t need = (sizes.train + sizes.validation + sizes.test) / 2;
    if (neg.size() < need || pos.size() < need) {
        throw DataError("sample_splits: need " + std::to_string(need) +
                        " records per class, have " + std::to_string(neg.size()) +
                        " negative and " + std::to_string(pos.size()) + " positive");
    }

    Rng rng(Rng::derive(seed, {stream::kIngest}));
    rng.shuffle(neg);
    rng.shuffle(pos);

    RawSplits out;
    std::size_t neg_at = 0, pos_at = 0;
    auto take = [&](std::vector<std::pair<std::string, int>>& split, std::size_t total) {
        for (std::size_t k = 0; k < total / 2; ++k)
            split.emplace_back(records[neg[neg_at++]].text, 0);
        for (std::size_t k = 0; k < total / 2; ++k)
            split.emplace_back(records[pos[pos_at++]].text, 1);
        rng.shuffle(split);
    };
    take(out.train, sizes.train);
    take(out.validation, sizes.validation);
    take(out.test, sizes.test);
    return out;
}

DomainDataset encode_dataset(const std::string& name, const RawSplits& splits,
                             const SubwordVocab& vocab, std::size_t n_max,
                             const std::string& vocab_digest) {
    DomainDataset dataset;
    dataset.name = name;
    dataset.vocab_size = vocab.size();
    dataset.vocab_digest = vocab_digest;
    auto encode_split = [&](const std::vector<std::pair<std::string, int>>& raw,
                            std::vector<LabeledExample>& out) {
        out.reserve(raw.size());
        for (const auto& [text, label] : raw) {
            out.push_back(LabeledExample{encode(vocab, text, n_max), label});
        }
    };
    encode_split(splits.train, dataset.train);
    encode_split(splits.validation, dataset.validation);
    encode_split(splits.test, dataset.test);
    return dataset;
}

DomainDataset ingest_reviews(const std::string& name, std::span<const ReviewRecord> records,
                             const SubwordVocab& vocab, std::size_t n_max, std::uint64_t seed,
                             const SplitSizes& sizes, const std::string& vocab_digest) {
    return encode_dataset(name, sample_splits(records, seed, sizes), vocab, n_max, vocab_digest);
}

std::vector<ReviewRecord> read_jsonl_reviews(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("read_jsonl_reviews: cannot open " + path.string());
    std::vector<ReviewRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (!obj.contains("text") || !obj.contains("rating")) {
            throw DataError(path.string() + ":" + std::to_string(line_no) +
                            ": record needs `text` and `rating` fields");
        }
        records.push_back(ReviewRecord{obj["text"].get<std::string>(), obj["rating"].get<int>()});
    }
    return records;
}

UnigramDist unigram_distribution(const DomainDataset& dataset) {
    if (dataset.train.empty()) {
        throw DataError("unigram_distribution: empty training split for " + dataset.name);
    }
    UnigramDist dist;
    dist.p.assign(dataset.vocab_size, 0.0);
    std::size_t total = 0;
    for (const auto& example : dataset.train) {
        for (std::int32_t id : example.encoding.ids) {
            if (id == kPadId) continue;
            dist.p[static_cast<std::size_t>(id)] += 1.0;
            ++total;
        }
    }
    if (total == 0) throw DataError("unigram_distribution: training split has no tokens");
    for (auto& v : dist.p) v /= static_cast<double>(total);
    return dist;
}

double kl_divergence(const UnigramDist& p, const UnigramDist& q) {
    if (p.p.size() != q.p.size()) {
        throw std::invalid_argument("kl_divergence: distributions over different vocabularies");
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < p.p.size(); ++i) {
        if (p.p[i] == 0.0) continue;
        if (q.p[i] == 0.0) {
            throw std::invalid_argument("kl_divergence: absolute continuity violated at id " +
                                        std::to_string(i));
        }
        kl += p.p[i] * std::log(p.p[i] / q.p[i]);
    }
    return kl;
}

double jsd(const UnigramDist& p, const UnigramDist& q) {
    if (p.p.size() != q.p.size()) {
        throw std::invalid_argument("jsd: distributions over different vocabularies");
    }
    UnigramDist m;
    m.p.resize(p.p.size());
    for (std::size_t i = 0; i < p.p.size(); ++i) m.p[i] = 0.5 * (p.p[i] + q.p[i]);
    return 0.5 * kl_divergence(p, m) + 0.5 * kl_divergence(q, m);
}

std::vector<std::vector<double>> divergence_matrix(std::span<const DomainDataset> domains) {
    for (const auto& d : domains) {
        if (d.vocab_digest != domains[0].vocab_digest) {
            throw DataError("divergence_matrix: domains " + domains[0].name + " and " + d.name +
                            " use different vocabularies");
        }
    }
    std::vector<UnigramDist> dists;
    dists.reserve(domains.size());
    for (const auto& d : domains) dists.push_back(unigram_distribution(d));

    std::vector<std::vector<double>> matrix(domains.size(),
                                            std::vector<double>(domains.size(), 0.0));
    for (std::size_t i = 0; i < domains.size(); ++i) {
        for (std::size_t j = i + 1; j < domains.size(); ++j) {
            const double v = jsd(dists[i], dists[j]);
            matrix[i][j] = v;
            matrix[j][i] = v;
        }
    }
    return matrix;
}

namespace {

const std::vector<std::string>& positive_words() {
    static const std::vector<std::string> words = {"great", "excellent", "wonderful",
                                                   "superb", "delightful", "fantastic"};
    return words;
}

const std::vector<std::string>& negative_words() {
    static const std::vector<std::string> words = {"terrible", "awful",  "dreadful",
                                                   "horrible", "boring", "disappointing"};
    return words;
}

const std::vector<std::string>& filler_words() {
    static const std::vector<std::string> words = {"the", "a",  "it",    "was",
                                                   "and", "is", "really", "quite"};
    return words;
}

// Pronounceable pseudo-words make the BPE statistics non-trivial while
// keeping pools disjoint across domains.
std::string pseudo_word(Rng& rng) {
    static const char* onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
    static const char* nuclei[] = {"a", "e", "i", "o", "u", "ai", "or", "el", "un"};
    static const char* codas[] = {"", "n", "r", "s", "t", "x", "ck", "sh"};
    std::string word;
    const std::size_t syllables = 2 + rng.below(2);
    for (std::size_t s = 0; s < syllables; ++s) {
        word += onsets[rng.below(std::size(onsets))];
        word += nuclei[rng.below(std::size(nuclei))];
    }
    word += codas[rng.below(std::size(codas))];
    return word;
}

std::uint64_t name_seed(const std::string& name) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : name) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace

std::vector<ReviewRecord> generate_reviews(const SyntheticDomainConfig& cfg, std::size_t count,
                                           std::uint64_t seed) {
    Rng pool_rng(cfg.pool_seed ? cfg.pool_seed : name_seed(cfg.name));
    std::vector<std::string> topics;
    topics.reserve(cfg.topic_tokens);
    while (topics.size() < cfg.topic_tokens) {
        std::string w = pseudo_word(pool_rng);
        if (std::find(topics.begin(), topics.end(), w) == topics.end()) topics.push_back(w);
    }

    Rng rng(Rng::derive(seed, {stream::kSynthetic, name_seed(cfg.name)}));
    std::vector<ReviewRecord> records;
    records.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const bool neutral = rng.bernoulli(cfg.neutral_rate);
        const bool positive = rng.bernoulli(0.5);
        const auto& own = positive ? positive_words() : negative_words();
        const auto& other = positive ? negative_words() : positive_words();

        std::vector<std::string> words;
        const std::size_t length = 6 + rng.below(7);
        const std::size_t sentiment_slots = 2 + rng.below(2);
        for (std::size_t w = 0; w < length; ++w) {
            const double roll = rng.uniform();
            if (roll < 0.35) words.push_back(topics[rng.below(topics.size())]);
            else words.push_back(filler_words()[rng.below(filler_words().size())]);
        }
        for (std::size_t s = 0; s < sentiment_slots; ++s) {
            const std::size_t at = rng.below(words.size() + 1);
            words.insert(words.begin() + static_cast<std::ptrdiff_t>(at),
                         own[rng.below(own.size())]);
        }
        if (rng.bernoulli(cfg.noise_rate)) {
            const std::size_t at = rng.below(words.size() + 1);
            words.insert(words.begin() + static_cast<std::ptrdiff_t>(at),
                         other[rng.below(other.size())]);
        }

        std::string text;
        for (std::size_t w = 0; w < words.size(); ++w) {
            if (w) text.push_back(' ');
            text += words[w];
        }
        int rating;
        if (neutral) rating = 3;
        else if (positive) rating = rng.bernoulli(0.5) ? 5 : 4;
        else rating = rng.bernoulli(0.5) ? 1 : 2;
        records.push_back(ReviewRecord{std::move(text), rating});
    }
    return records;
}

}  // namespace ticketforge
