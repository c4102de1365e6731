#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ticketforge/corpus.hpp"
#include "ticketforge/lottery.hpp"
#include "ticketforge/pruning.hpp"
#include "ticketforge/textcnn.hpp"
#include "ticketforge/transfer.hpp"

namespace ticketforge {

// Declarative description of an experiment grid, read from a line-oriented
// key-value file with [section] headers (see README for the grammar).
struct ExperimentConfig {
    // [experiment]
    std::filesystem::path out = "runs/out";
    std::vector<std::uint64_t> seeds = {1};
    std::size_t threads = 0;  // 0: hardware default; TICKETFORGE_THREADS caps

    // [data]
    std::string data_mode = "synthetic";                    // synthetic | jsonl
    std::vector<std::pair<std::string, std::string>> domains;  // name -> path ("" if synthetic)
    SplitSizes sizes{200, 100, 100};
    std::size_t max_len = 32;
    std::uint64_t data_seed = 13;  // splits are fixed across training seeds

    // [synthetic]
    std::size_t synth_topic_tokens = 12;
    double synth_noise = 0.03;
    double synth_neutral = 0.04;
    std::size_t synth_records = 0;  // 0: derived from split sizes

    // [vocab]
    std::filesystem::path vocab_path;  // empty: <out>/vocab
    std::size_t vocab_size = 256;
    double vocab_coverage = 1.0;

    // [model]
    ModelConfig model{0, 16, {3, 4, 5}, 8, 8, 2, 0, 0.285};

    // [prune]
    PruneConfig prune{0.35, 5, PruneRule::KeepFraction};

    // [train]
    TrainConfig train;

    // [obtain]
    std::vector<std::string> obtain_strategies = {"reset", "random"};

    // [transfer]
    std::vector<std::pair<std::string, std::string>> transfer_pairs;  // empty: all ordered pairs
    std::vector<std::string> transfer_strategies = {"masks-reset", "masks-random",
                                                    "ticket-target"};
    std::filesystem::path transfer_runs;  // obtain output dir; empty: `out`
    std::size_t scan_window = 2;
    double scan_margin = 0.02;
    double scan_var_factor = 2.0;

    // [divergence]
    bool divergence_scale_1e5 = false;

    std::filesystem::path resolved_vocab_path() const {
        return vocab_path.empty() ? out / "vocab" : vocab_path;
    }
    std::filesystem::path resolved_runs_dir() const {
        return transfer_runs.empty() ? out : transfer_runs;
    }

    void validate() const;
};

ExperimentConfig parse_config_text(const std::string& text, const std::string& where);
ExperimentConfig load_config(const std::filesystem::path& path);

// Fully resolved, defaults applied; parsing it back reproduces the config.
std::string serialize_config(const ExperimentConfig& cfg);

// Overlays applied after --config: the full-scale protocol preset (--paper)
// and the no-external-data synthetic preset.
void apply_paper_preset(ExperimentConfig& cfg);
void apply_synthetic_preset(ExperimentConfig& cfg);

std::size_t effective_threads(const ExperimentConfig& cfg);

// ---- commands --------------------------------------------------------------

struct CommandStats {
    std::size_t cells_run = 0;
    std::size_t cells_skipped = 0;
};

// Trains the shared BPE vocabulary on the pooled train-split texts of all
// domains and writes it to the vocab path. Returns the achieved character
// coverage on that pool.
double cmd_build_vocab(const ExperimentConfig& cfg);

// Writes the pairwise JSD matrix (nats; optionally scaled by 1e5) to
// <out>/divergence.csv and returns it.
std::vector<std::vector<double>> cmd_divergence(const ExperimentConfig& cfg);

// Runs the lottery grid (domain x strategy x seed), persisting tickets,
// theta0 and per-run records under <out>, plus an aggregate records.csv.
CommandStats cmd_obtain(const ExperimentConfig& cfg, bool force = false);

// Transfers obtained tickets across the configured (source, target) pairs
// and writes <out>/transfer-records.csv plus a phase-transition summary.
CommandStats cmd_transfer(const ExperimentConfig& cfg, bool force = false);

// Aggregates records from run directories into mean/std summary tables and
// phase-transition scans; writes summary.csv and phase-transition.csv.
void cmd_report(const std::vector<std::filesystem::path>& dirs,
                const std::filesystem::path& out_dir, std::size_t window = 2,
                double margin = 0.02, double var_factor = 2.0);

// Shared helpers (also used by tests).
std::vector<ReviewRecord> domain_records(const ExperimentConfig& cfg, const std::string& name,
                                         const std::string& path);
std::vector<DomainDataset> ingest_all_domains(const ExperimentConfig& cfg,
                                              const SubwordVocab& vocab,
                                              const std::string& vocab_digest);
std::string obtain_run_id(const std::string& domain, const std::string& strategy,
                          std::uint64_t seed);

std::string records_csv_header();
std::string transfer_csv_header();

}  // namespace ticketforge
