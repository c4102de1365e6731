#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ticketforge/pruning.hpp"
#include "ticketforge/textcnn.hpp"

namespace ticketforge {

// One pruning-round artifact: the masks plus a content digest pointing at the
// run's θ0 (stored once per run directory to avoid duplicating it per round).
struct Ticket {
    int round = 0;
    MaskSet masks;
    std::string theta0_digest;
    ModelConfig model;
    PruneConfig prune;
    std::string vocab_digest;
    std::string source_domain;
    std::uint64_t seed = 0;
};

// All files use the TKT1 container: magic "TKT1", a length-prefixed
// key-value text header, per-tensor sections (bit-packed masks and/or raw
// little-endian float32 values), and a trailing FNV-1a 64-bit checksum over
// everything before it. Serialization is canonical, so identical content
// yields identical bytes and digests on every platform.

// Writes a ticket (mask sections only) and returns its content digest.
std::string save_ticket(const Ticket& ticket, const std::filesystem::path& path);
Ticket load_ticket(const std::filesystem::path& path);

// Writes θ0 (float sections only) and returns its content digest, which
// tickets reference.
std::string save_theta0(const ModelConfig& cfg, const ParamSet<float>& theta0,
                        const std::filesystem::path& path);
ParamSet<float> load_theta0(const std::filesystem::path& path, const ModelConfig& expected);

// Digest of an arbitrary file's bytes (same FNV-1a 64 in hex).
std::string file_digest(const std::filesystem::path& path);
std::string bytes_digest(const std::string& bytes);

// Run directory layout: <run>/{vocab, theta0.bin, tickets/round-<i>.tkt,
// records.csv}.
struct RunPaths {
    std::filesystem::path root;
    std::filesystem::path vocab() const { return root / "vocab"; }
    std::filesystem::path theta0() const { return root / "theta0.bin"; }
    std::filesystem::path records() const { return root / "records.csv"; }
    std::filesystem::path ticket(int round) const {
        return root / "tickets" / ("round-" + std::to_string(round) + ".tkt");
    }
};

}  // namespace ticketforge
