#include "ticketforge/ticket_store.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "ticketforge/errors.hpp"

namespace ticketforge {

namespace {

constexpr char kMagic[4] = {'T', 'K', 'T', '1'};

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h = 14695981039346656037ULL) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float v) {
    static_assert(sizeof(float) == 4);
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::string& bytes;
    std::size_t at = 0;
    const std::string where;

    void need(std::size_t n) const {
        if (at + n > bytes.size()) {
            throw DataError(where + ": truncated file (need " + std::to_string(n) +
                            " bytes at offset " + std::to_string(at) + ")");
        }
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
        at += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
        at += 8;
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string take(std::size_t n) {
        need(n);
        std::string v = bytes.substr(at, n);
        at += n;
        return v;
    }
};

std::string join_sizes(const std::vector<std::size_t>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out.push_back('x');
        out += std::to_string(values[i]);
    }
    return out;
}

std::vector<std::size_t> split_sizes(const std::string& text) {
    std::vector<std::size_t> out;
    std::size_t at = 0;
    while (at < text.size()) {
        std::size_t next = text.find('x', at);
        if (next == std::string::npos) next = text.size();
        out.push_back(std::stoull(text.substr(at, next - at)));
        at = next + 1;
    }
    return out;
}

// Header is a fixed-order key=value text block; canonical bytes by design.
std::string header_text(const std::map<std::string, std::string>& kv) {
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

std::map<std::string, std::string> parse_header(const std::string& text,
                                                const std::string& where) {
    std::map<std::string, std::string> kv;
    std::size_t at = 0;
    while (at < text.size()) {
        std::size_t eol = text.find('\n', at);
        if (eol == std::string::npos) eol = text.size();
        const std::string line = text.substr(at, eol - at);
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw DataError(where + ": malformed header line: " + line);
        kv[line.substr(0, eq)] = line.substr(eq + 1);
        at = eol + 1;
    }
    return kv;
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::map<std::string, std::string> config_header(const ModelConfig& model) {
    std::map<std::string, std::string> kv;
    kv["model.vocab_size"] = std::to_string(model.vocab_size);
    kv["model.embed_dim"] = std::to_string(model.embed_dim);
    kv["model.filter_heights"] = join_sizes(model.filter_heights);
    kv["model.channels"] = std::to_string(model.channels);
    kv["model.mlp_hidden"] = std::to_string(model.mlp_hidden);
    kv["model.num_classes"] = std::to_string(model.num_classes);
    kv["model.max_len"] = std::to_string(model.max_len);
    kv["model.dropout_p"] = format_double(model.dropout_p);
    return kv;
}

ModelConfig config_from_header(const std::map<std::string, std::string>& kv,
                               const std::string& where) {
    auto need = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw DataError(where + ": missing header key " + key);
        return it->second;
    };
    ModelConfig model;
    model.vocab_size = std::stoull(need("model.vocab_size"));
    model.embed_dim = std::stoull(need("model.embed_dim"));
    model.filter_heights = split_sizes(need("model.filter_heights"));
    model.channels = std::stoull(need("model.channels"));
    model.mlp_hidden = std::stoull(need("model.mlp_hidden"));
    model.num_classes = std::stoull(need("model.num_classes"));
    model.max_len = std::stoull(need("model.max_len"));
    model.dropout_p = std::stod(need("model.dropout_p"));
    return model;
}

std::string write_file_with_checksum(std::string body, const std::filesystem::path& path) {
    put_u64(body, fnv1a(body.data(), body.size()));
    const std::string digest = hex64(fnv1a(body.data(), body.size()));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out) throw DataError("write failed for " + path.string());
    return digest;
}

std::string read_checked(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string bytes = buf.str();
    if (bytes.size() < 4 + 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw DataError(path.string() + ": not a TKT1 file");
    }
    const std::size_t body = bytes.size() - 8;
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i)
        stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[body + i]))
                  << (8 * i);
    if (fnv1a(bytes.data(), body) != stored) {
        throw DataError(path.string() + ": checksum mismatch (corrupt or truncated file)");
    }
    bytes.resize(body);
    return bytes;
}

}  // namespace

std::string bytes_digest(const std::string& bytes) {
    return hex64(fnv1a(bytes.data(), bytes.size()));
}

std::string file_digest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("file_digest: cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return bytes_digest(buf.str());
}

std::string save_ticket(const Ticket& ticket, const std::filesystem::path& path) {
    const ModelLayout layout = make_layout(ticket.model);
    if (ticket.masks.size() != layout.tensors.size()) {
        throw std::invalid_argument("save_ticket: mask count does not match model layout");
    }
    auto kv = config_header(ticket.model);
    kv["format"] = "ticket";
    kv["round"] = std::to_string(ticket.round);
    kv["seed"] = std::to_string(ticket.seed);
    kv["source_domain"] = ticket.source_domain;
    kv["theta0_digest"] = ticket.theta0_digest;
    kv["vocab_digest"] = ticket.vocab_digest;
    kv["prune.fraction"] = format_double(ticket.prune.fraction);
    kv["prune.total_rounds"] = std::to_string(ticket.prune.total_rounds);
    kv["prune.rule"] =
        ticket.prune.rule == PruneRule::KeepFraction ? "keep-fraction" : "paper-literal";

    std::string body(kMagic, 4);
    const std::string header = header_text(kv);
    put_u32(body, static_cast<std::uint32_t>(header.size()));
    body += header;

    for (std::size_t t = 0; t < layout.tensors.size(); ++t) {
        const auto& spec = layout.tensors[t];
        if (ticket.masks[t].shape != spec.shape) {
            throw std::invalid_argument("save_ticket: mask for " + spec.name +
                                        " has shape " + shape_string(ticket.masks[t].shape) +
                                        ", expected " + shape_string(spec.shape));
        }
        const std::size_t n = ticket.masks[t].numel();
        std::string packed((n + 7) / 8, '\0');
        for (std::size_t i = 0; i < n; ++i) {
            if (ticket.masks[t][i]) packed[i / 8] |= static_cast<char>(1 << (i % 8));
        }
        body += packed;
    }
    return write_file_with_checksum(std::move(body), path);
}

Ticket load_ticket(const std::filesystem::path& path) {
    const std::string bytes = read_checked(path);
    Reader reader{bytes, 4, path.string()};
    const std::uint32_t header_len = reader.u32();
    const auto kv = parse_header(reader.take(header_len), path.string());
    if (auto it = kv.find("format"); it == kv.end() || it->second != "ticket") {
        throw DataError(path.string() + ": not a ticket file");
    }

    Ticket ticket;
    ticket.model = config_from_header(kv, path.string());
    ticket.round = std::stoi(kv.at("round"));
    ticket.seed = std::stoull(kv.at("seed"));
    ticket.source_domain = kv.at("source_domain");
    ticket.theta0_digest = kv.at("theta0_digest");
    ticket.vocab_digest = kv.at("vocab_digest");
    ticket.prune.fraction = std::stod(kv.at("prune.fraction"));
    ticket.prune.total_rounds = std::stoi(kv.at("prune.total_rounds"));
    ticket.prune.rule = kv.at("prune.rule") == "paper-literal" ? PruneRule::PaperLiteral
                                                               : PruneRule::KeepFraction;

    const ModelLayout layout = make_layout(ticket.model);
    ticket.masks.round = ticket.round;
    for (const auto& spec : layout.tensors) {
        Tensor<std::uint8_t> mask(spec.shape);
        const std::size_t n = mask.numel();
        const std::string packed = reader.take((n + 7) / 8);
        for (std::size_t i = 0; i < n; ++i) {
            mask[i] = (static_cast<unsigned char>(packed[i / 8]) >> (i % 8)) & 1;
        }
        ticket.masks.tensors.push_back(std::move(mask));
    }
    if (reader.at != bytes.size()) {
        throw DataError(path.string() + ": trailing bytes after mask sections");
    }
    return ticket;
}

std::string save_theta0(const ModelConfig& cfg, const ParamSet<float>& theta0,
                        const std::filesystem::path& path) {
    const ModelLayout layout = make_layout(cfg);
    if (theta0.size() != layout.tensors.size()) {
        throw std::invalid_argument("save_theta0: parameter count does not match model layout");
    }
    auto kv = config_header(cfg);
    kv["format"] = "theta0";

    std::string body(kMagic, 4);
    const std::string header = header_text(kv);
    put_u32(body, static_cast<std::uint32_t>(header.size()));
    body += header;
    for (std::size_t t = 0; t < layout.tensors.size(); ++t) {
        if (theta0[t].shape != layout.tensors[t].shape) {
            throw std::invalid_argument("save_theta0: tensor " + layout.tensors[t].name +
                                        " has unexpected shape");
        }
        for (float v : theta0[t].data) put_f32(body, v);
    }
    return write_file_with_checksum(std::move(body), path);
}

ParamSet<float> load_theta0(const std::filesystem::path& path, const ModelConfig& expected) {
    const std::string bytes = read_checked(path);
    Reader reader{bytes, 4, path.string()};
    const std::uint32_t header_len = reader.u32();
    const auto kv = parse_header(reader.take(header_len), path.string());
    if (auto it = kv.find("format"); it == kv.end() || it->second != "theta0") {
        throw DataError(path.string() + ": not a theta0 file");
    }
    const ModelConfig stored = config_from_header(kv, path.string());
    const ModelLayout layout = make_layout(stored);
    const ModelLayout expected_layout = make_layout(expected);
    if (layout.tensors.size() != expected_layout.tensors.size()) {
        throw DataError(path.string() + ": stored model does not match the requested config");
    }
    for (std::size_t t = 0; t < layout.tensors.size(); ++t) {
        if (layout.tensors[t].shape != expected_layout.tensors[t].shape) {
            throw DataError(path.string() + ": tensor " + layout.tensors[t].name +
                            " has shape " + shape_string(layout.tensors[t].shape) +
                            ", expected " + shape_string(expected_layout.tensors[t].shape));
        }
    }
    ParamSet<float> theta0;
    for (const auto& spec : layout.tensors) {
        Tensor<float> tensor(spec.shape);
        for (std::size_t i = 0; i < tensor.numel(); ++i) tensor[i] = reader.f32();
        theta0.tensors.push_back(std::move(tensor));
    }
    if (reader.at != bytes.size()) {
        throw DataError(path.string() + ": trailing bytes after parameter sections");
    }
    return theta0;
}

}  // namespace ticketforge
