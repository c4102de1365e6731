#include "ticketforge/bpe.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "ticketforge/errors.hpp"

namespace ticketforge {

namespace {

const std::string kUnkSymbol = "\x01unk\x01";  // internal sentinel, never a piece

std::string pair_key(const std::string& left, const std::string& right) {
    return left + '\x1f' + right;
}

}  // namespace

std::int32_t SubwordVocab::id_of(const std::string& piece) const {
    auto it = piece_ids.find(piece);
    return it == piece_ids.end() ? kUnkId : it->second;
}

std::vector<std::string> pretokenize(std::string_view text) {
    std::vector<std::string> words;
    std::string current;
    for (char ch : text) {
        const unsigned char u = static_cast<unsigned char>(ch);
        if (u == ' ' || u == '\t' || u == '\n' || u == '\r' || u == '\v' || u == '\f') {
            if (!current.empty()) words.push_back(std::move(current)), current.clear();
        } else {
            current.push_back(static_cast<char>(std::tolower(u)));
        }
    }
    if (!current.empty()) words.push_back(std::move(current));
    return words;
}

std::vector<std::string> utf8_chars(std::string_view word) {
    std::vector<std::string> chars;
    std::size_t i = 0;
    while (i < word.size()) {
        const unsigned char lead = static_cast<unsigned char>(word[i]);
        std::size_t len = 1;
        if ((lead & 0xE0) == 0xC0) len = 2;
        else if ((lead & 0xF0) == 0xE0) len = 3;
        else if ((lead & 0xF8) == 0xF0) len = 4;
        if (i + len > word.size()) len = 1;  // invalid tail: fall back to single byte
        chars.emplace_back(word.substr(i, len));
        i += len;
    }
    return chars;
}

SubwordVocab bpe_train(std::span<const std::string> corpus, std::size_t target_size,
                       double coverage) {
    if (corpus.empty()) throw DataError("bpe_train: empty corpus");

    // Word types with frequencies.
    std::map<std::string, std::size_t> word_freq;
    for (const auto& sentence : corpus) {
        for (auto& word : pretokenize(sentence)) ++word_freq[word];
    }
    if (word_freq.empty()) throw DataError("bpe_train: corpus contains no words");

    // Character census for the coverage cut.
    std::map<std::string, std::size_t> char_freq;
    std::size_t total_chars = 0;
    for (const auto& [word, freq] : word_freq) {
        for (const auto& ch : utf8_chars(word)) {
            char_freq[ch] += freq;
            total_chars += freq;
        }
    }

    std::vector<std::pair<std::string, std::size_t>> by_freq(char_freq.begin(), char_freq.end());
    std::sort(by_freq.begin(), by_freq.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    SubwordVocab vocab;
    vocab.target_size = target_size;
    vocab.coverage = coverage;

    std::size_t covered = 0;
    for (const auto& [ch, freq] : by_freq) {
        if (total_chars > 0 &&
            static_cast<double>(covered) >= coverage * static_cast<double>(total_chars)) {
            break;
        }
        vocab.retained_chars.insert(ch);
        covered += freq;
    }

    const std::size_t base_count = 3 + vocab.retained_chars.size();  // pad, unk, marker
    if (target_size < base_count) {
        throw ConfigError("bpe_train: target size " + std::to_string(target_size) +
                          " is smaller than the base inventory of " + std::to_string(base_count) +
                          " (specials + " + std::to_string(vocab.retained_chars.size()) +
                          " retained characters)");
    }

    // Word types as mutable symbol sequences; <unk> sentinels block merges.
    struct WordEntry {
        std::vector<std::string> symbols;
        std::size_t freq;
    };
    std::vector<WordEntry> words;
    words.reserve(word_freq.size());
    for (const auto& [word, freq] : word_freq) {
        WordEntry entry;
        entry.freq = freq;
        for (auto& ch : utf8_chars(word)) {
            entry.symbols.push_back(vocab.retained_chars.count(ch) ? ch : kUnkSymbol);
        }
        words.push_back(std::move(entry));
    }

    // Pair statistics plus an index of which words contain each pair.
    std::map<std::pair<std::string, std::string>, std::size_t> pair_freq;
    std::map<std::pair<std::string, std::string>, std::unordered_set<std::size_t>> pair_words;
    auto add_pair = [&](const std::string& l, const std::string& r, std::size_t word_id,
                        std::size_t freq) {
        if (l == kUnkSymbol || r == kUnkSymbol) return;
        pair_freq[{l, r}] += freq;
        pair_words[{l, r}].insert(word_id);
    };
    auto drop_pair = [&](const std::string& l, const std::string& r, std::size_t freq) {
        if (l == kUnkSymbol || r == kUnkSymbol) return;
        auto it = pair_freq.find({l, r});
        if (it == pair_freq.end()) return;
        it->second -= std::min(it->second, freq);
        if (it->second == 0) {
            pair_freq.erase(it);
            pair_words.erase({l, r});
        }
    };
    for (std::size_t w = 0; w < words.size(); ++w) {
        const auto& symbols = words[w].symbols;
        for (std::size_t i = 0; i + 1 < symbols.size(); ++i)
            add_pair(symbols[i], symbols[i + 1], w, words[w].freq);
    }

    std::unordered_set<std::string> piece_set(
        {kPadPiece, kUnkPiece, kBoundaryPiece});
    for (const auto& ch : vocab.retained_chars) piece_set.insert(ch);

    std::size_t piece_count = base_count;
    while (piece_count < target_size) {
        // Highest-frequency pair, ties broken lexicographically; std::map order
        // makes the scan deterministic. Skip pairs whose concatenation already
        // names an existing piece.
        const std::pair<std::string, std::string>* best = nullptr;
        std::size_t best_freq = 0;
        for (const auto& [pair, freq] : pair_freq) {
            if (freq < 2 || freq < best_freq) continue;
            if (freq == best_freq && best && !(pair < *best)) continue;
            if (piece_set.count(pair.first + pair.second)) continue;
            best = &pair;
            best_freq = freq;
        }
        if (!best) break;

        const std::string left = best->first, right = best->second;
        const std::string merged = left + right;
        const auto affected = pair_words[{left, right}];  // copy: mutated below

        for (std::size_t w : affected) {
            auto& symbols = words[w].symbols;
            const std::size_t freq = words[w].freq;
            std::vector<std::string> next;
            next.reserve(symbols.size());
            std::size_t i = 0;
            while (i < symbols.size()) {
                if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
                    if (!next.empty()) {
                        drop_pair(next.back(), left, freq);
                        add_pair(next.back(), merged, w, freq);
                    }
                    drop_pair(left, right, freq);
                    if (i + 2 < symbols.size()) {
                        drop_pair(right, symbols[i + 2], freq);
                        // neighbor pair on the right is added when the loop reaches it
                    }
                    next.push_back(merged);
                    i += 2;
                    if (i < symbols.size()) add_pair(merged, symbols[i], w, freq);
                } else {
                    next.push_back(symbols[i]);
                    ++i;
                }
            }
            symbols = std::move(next);
        }

        vocab.merges.emplace_back(left, right);
        piece_set.insert(merged);
        ++piece_count;
    }

    // Assign dense ids: specials, marker, retained chars by (freq desc, lex),
    // then merge products in learned order.
    vocab.pieces = {kPadPiece, kUnkPiece, kBoundaryPiece};
    for (const auto& [ch, freq] : by_freq) {
        if (vocab.retained_chars.count(ch)) vocab.pieces.push_back(ch);
    }
    for (const auto& [l, r] : vocab.merges) vocab.pieces.push_back(l + r);
    for (std::size_t i = 0; i < vocab.pieces.size(); ++i) {
        vocab.piece_ids[vocab.pieces[i]] = static_cast<std::int32_t>(i);
    }
    for (std::size_t i = 0; i < vocab.merges.size(); ++i) {
        vocab.merge_rank[pair_key(vocab.merges[i].first, vocab.merges[i].second)] = i;
    }
    return vocab;
}

namespace {

// Rank-greedy merge replay over one word: repeatedly merge the lowest-rank
// adjacent pair (leftmost occurrence) until no learned pair remains.
std::vector<std::string> segment_word(const SubwordVocab& vocab,
                                      std::vector<std::string> symbols) {
    while (symbols.size() > 1) {
        std::size_t best_rank = std::numeric_limits<std::size_t>::max();
        std::size_t best_pos = 0;
        for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
            auto it = vocab.merge_rank.find(pair_key(symbols[i], symbols[i + 1]));
            if (it != vocab.merge_rank.end() && it->second < best_rank) {
                best_rank = it->second;
                best_pos = i;
            }
        }
        if (best_rank == std::numeric_limits<std::size_t>::max()) break;
        symbols[best_pos] += symbols[best_pos + 1];
        symbols.erase(symbols.begin() + static_cast<std::ptrdiff_t>(best_pos) + 1);
    }
    return symbols;
}

}  // namespace

SeqEncoding encode(const SubwordVocab& vocab, std::string_view text, std::size_t n_max) {
    std::vector<std::int32_t> ids;
    const auto words = pretokenize(text);
    for (std::size_t w = 0; w < words.size(); ++w) {
        if (w > 0) ids.push_back(kBoundaryId);
        std::vector<std::string> symbols;
        for (auto& ch : utf8_chars(words[w])) {
            symbols.push_back(vocab.retained_chars.count(ch) ? ch : kUnkSymbol);
        }
        for (auto& piece : segment_word(vocab, std::move(symbols))) {
            ids.push_back(piece == kUnkSymbol ? kUnkId : vocab.id_of(piece));
        }
    }
    SeqEncoding enc;
    enc.original_length = ids.size();
    if (ids.size() > n_max) ids.resize(n_max);
    ids.resize(n_max, kPadId);
    enc.ids = std::move(ids);
    return enc;
}

std::string decode(const SubwordVocab& vocab, std::span<const std::int32_t> ids) {
    std::string out;
    for (std::int32_t id : ids) {
        if (id == kPadId) continue;
        if (id == kBoundaryId) {
            out.push_back(' ');
        } else if (id == kUnkId) {
            out += kUnkPiece;
        } else if (id >= 0 && static_cast<std::size_t>(id) < vocab.pieces.size()) {
            out += vocab.pieces[static_cast<std::size_t>(id)];
        }
    }
    return out;
}

double char_coverage(const SubwordVocab& vocab, std::span<const std::string> corpus) {
    std::size_t total = 0, representable = 0;
    for (const auto& sentence : corpus) {
        for (const auto& word : pretokenize(sentence)) {
            for (const auto& ch : utf8_chars(word)) {
                ++total;
                if (vocab.retained_chars.count(ch)) ++representable;
            }
        }
    }
    if (total == 0) throw DataError("char_coverage: empty corpus");
    return static_cast<double>(representable) / static_cast<double>(total);
}

void save_vocab(const SubwordVocab& vocab, const std::filesystem::path& path) {
    std::ostringstream os;
    os.precision(17);
    os << "bpe v1 size=" << vocab.pieces.size() << " coverage=" << vocab.coverage << "\n";
    for (std::size_t i = 0; i < vocab.pieces.size(); ++i) {
        os << vocab.pieces[i] << '\t' << i << '\n';
    }
    os << "#merges\n";
    for (const auto& [l, r] : vocab.merges) os << l << ' ' << r << '\n';

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("save_vocab: cannot open " + path.string());
    out << os.str();
    if (!out) throw DataError("save_vocab: write failed for " + path.string());
}

SubwordVocab load_vocab(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_vocab: cannot open " + path.string());

    SubwordVocab vocab;
    std::string line;
    if (!std::getline(in, line) || line.rfind("bpe v1 ", 0) != 0) {
        throw DataError("load_vocab: " + path.string() + " is not a bpe v1 vocabulary");
    }
    const auto cov_pos = line.find("coverage=");
    if (cov_pos == std::string::npos) throw DataError("load_vocab: missing coverage field");
    vocab.coverage = std::stod(line.substr(cov_pos + 9));

    bool in_merges = false;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line == "#merges") {
            in_merges = true;
            continue;
        }
        if (in_merges) {
            const auto space = line.find(' ');
            if (space == std::string::npos) {
                throw DataError("load_vocab: " + path.string() + ":" + std::to_string(line_no) +
                                ": malformed merge line");
            }
            vocab.merges.emplace_back(line.substr(0, space), line.substr(space + 1));
        } else {
            const auto tab = line.find('\t');
            if (tab == std::string::npos) {
                throw DataError("load_vocab: " + path.string() + ":" + std::to_string(line_no) +
                                ": malformed piece line");
            }
            const std::string piece = line.substr(0, tab);
            const std::size_t id = std::stoull(line.substr(tab + 1));
            if (id != vocab.pieces.size()) {
                throw DataError("load_vocab: " + path.string() + ":" + std::to_string(line_no) +
                                ": non-dense piece id " + std::to_string(id));
            }
            vocab.pieces.push_back(piece);
        }
    }
    if (vocab.pieces.size() < 3 || vocab.pieces[0] != kPadPiece || vocab.pieces[1] != kUnkPiece ||
        vocab.pieces[2] != kBoundaryPiece) {
        throw DataError("load_vocab: " + path.string() + ": reserved pieces missing or reordered");
    }
    vocab.target_size = vocab.pieces.size();
    for (std::size_t i = 0; i < vocab.pieces.size(); ++i) {
        vocab.piece_ids[vocab.pieces[i]] = static_cast<std::int32_t>(i);
    }
    for (std::size_t i = 0; i < vocab.merges.size(); ++i) {
        vocab.merge_rank[pair_key(vocab.merges[i].first, vocab.merges[i].second)] = i;
    }
    // Retained characters are the single-codepoint pieces after the specials.
    const std::size_t merge_start = vocab.pieces.size() - vocab.merges.size();
    for (std::size_t i = 3; i < merge_start; ++i) vocab.retained_chars.insert(vocab.pieces[i]);
    return vocab;
}

}  // namespace ticketforge
