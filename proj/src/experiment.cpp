#include <algorithm>
#include <atomic>
#include <exception>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "ticketforge/experiment.hpp"
#include "ticketforge/io.hpp"
#include "ticketforge/ticket_store.hpp"

namespace ticketforge {

namespace {

// Runs fn(0..jobs) on a bounded worker pool; the first exception wins and is
// rethrown after all workers join.
template <typename Fn>
void run_parallel(std::size_t jobs, std::size_t threads, Fn&& fn) {
    if (jobs == 0) return;
    threads = std::min(threads, jobs);
    if (threads <= 1) {
        for (std::size_t i = 0; i < jobs; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= jobs) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& worker : pool) worker.join();
    if (error) std::rethrow_exception(error);
}

std::string obtain_strategy_label(const std::string& strategy) {
    return strategy == "reset" ? "ticket-reset" : "ticket-random";
}

InitStrategy obtain_strategy_enum(const std::string& strategy) {
    return strategy == "reset" ? InitStrategy::Reset : InitStrategy::Random;
}

std::string record_row(const RoundRecord& r, const std::string& strategy_label,
                       const std::string& domain, std::uint64_t seed) {
    std::ostringstream os;
    os << r.round << "," << format_fixed(r.sparsity) << "," << format_fixed(r.best_val_acc) << ","
       << format_fixed(r.test_acc) << "," << r.stop_epoch << "," << strategy_label << ","
       << domain << "," << seed << "\n";
    return os.str();
}

std::string transfer_row(const TransferRecord& r, std::uint64_t seed) {
    std::ostringstream os;
    os << r.source << "," << r.target << "," << r.strategy << "," << r.round << ","
       << format_fixed(r.sparsity) << "," << format_fixed(r.best_val_acc) << ","
       << format_fixed(r.test_acc) << "," << seed << "\n";
    return os.str();
}

ModelConfig runtime_model(const ExperimentConfig& cfg, std::size_t vocab_size) {
    ModelConfig model = cfg.model;
    model.vocab_size = vocab_size;
    model.max_len = cfg.max_len;
    model.validate();
    return model;
}

std::filesystem::path transfer_cell_path(const ExperimentConfig& cfg, const std::string& src,
                                         const std::string& dst, std::uint64_t seed) {
    return cfg.out / "transfer" / (src + "-to-" + dst) / ("seed-" + std::to_string(seed) + ".csv");
}

void write_manifest(const std::filesystem::path& out, const std::vector<std::string>& cells,
                    const std::vector<bool>& done) {
    std::string text;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        text += cells[i] + (done[i] ? " done\n" : " pending\n");
    }
    atomic_write_file(out / "manifest.txt", text);
}

}  // namespace

std::string records_csv_header() {
    return "round,sparsity,val_acc,test_acc,stop_epoch,strategy,domain,seed\n";
}

std::string transfer_csv_header() {
    return "source,target,strategy,round,sparsity,val_acc,test_acc,seed\n";
}

std::string obtain_run_id(const std::string& domain, const std::string& strategy,
                          std::uint64_t seed) {
    return domain + "-" + strategy + "-seed" + std::to_string(seed);
}

std::vector<ReviewRecord> domain_records(const ExperimentConfig& cfg, const std::string& name,
                                         const std::string& path) {
    if (cfg.data_mode == "jsonl") return read_jsonl_reviews(path);
    SyntheticDomainConfig synth;
    synth.name = name;
    synth.topic_tokens = cfg.synth_topic_tokens;
    synth.noise_rate = cfg.synth_noise;
    synth.neutral_rate = cfg.synth_neutral;
    std::size_t count = cfg.synth_records;
    if (count == 0) {
        count = 3 * (cfg.sizes.train + cfg.sizes.validation + cfg.sizes.test);
    }
    return generate_reviews(synth, count, cfg.data_seed);
}

std::vector<DomainDataset> ingest_all_domains(const ExperimentConfig& cfg,
                                              const SubwordVocab& vocab,
                                              const std::string& vocab_digest) {
    std::vector<DomainDataset> datasets;
    datasets.reserve(cfg.domains.size());
    for (const auto& [name, path] : cfg.domains) {
        const auto records = domain_records(cfg, name, path);
        datasets.push_back(ingest_reviews(name, records, vocab, cfg.max_len, cfg.data_seed,
                                          cfg.sizes, vocab_digest));
    }
    return datasets;
}

double cmd_build_vocab(const ExperimentConfig& cfg) {
    cfg.validate();
    std::vector<std::string> train_texts;
    for (const auto& [name, path] : cfg.domains) {
        const auto records = domain_records(cfg, name, path);
        const RawSplits splits = sample_splits(records, cfg.data_seed, cfg.sizes);
        for (const auto& [text, label] : splits.train) train_texts.push_back(text);
    }
    const SubwordVocab vocab = bpe_train(train_texts, cfg.vocab_size, cfg.vocab_coverage);
    const auto path = cfg.resolved_vocab_path();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    save_vocab(vocab, path);
    const double coverage = char_coverage(vocab, train_texts);
    std::cout << "vocab: " << vocab.size() << " pieces, " << vocab.merges.size()
              << " merges, train-pool character coverage " << format_fixed(coverage, 6) << "\n";
    return coverage;
}

std::vector<std::vector<double>> cmd_divergence(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.domains.size() < 2) {
        throw ConfigError("divergence: need at least two domains");
    }
    const auto vocab_file = cfg.resolved_vocab_path();
    if (!std::filesystem::exists(vocab_file)) {
        throw DataError("divergence: vocabulary file missing: " + vocab_file.string() +
                        " (run build-vocab first)");
    }
    const SubwordVocab vocab = load_vocab(vocab_file);
    const auto datasets = ingest_all_domains(cfg, vocab, file_digest(vocab_file));
    auto matrix = divergence_matrix(datasets);

    const double scale = cfg.divergence_scale_1e5 ? 1e5 : 1.0;
    std::string csv;
    for (const auto& d : datasets) csv += "," + d.name;
    csv += "\n";
    for (std::size_t i = 0; i < matrix.size(); ++i) {
        csv += datasets[i].name;
        for (std::size_t j = 0; j < matrix.size(); ++j) {
            csv += "," + format_fixed(matrix[i][j] * scale, 9);
        }
        csv += "\n";
    }
    atomic_write_file(cfg.out / "divergence.csv", csv);
    std::cout << "divergence matrix (nats" << (cfg.divergence_scale_1e5 ? ", x1e5" : "")
              << ") written to " << (cfg.out / "divergence.csv").string() << "\n";
    return matrix;
}

CommandStats cmd_obtain(const ExperimentConfig& cfg, bool force) {
    cfg.validate();
    const auto vocab_file = cfg.resolved_vocab_path();
    if (!std::filesystem::exists(vocab_file)) {
        throw DataError("obtain: vocabulary file missing: " + vocab_file.string() +
                        " (run build-vocab first)");
    }
    const SubwordVocab vocab = load_vocab(vocab_file);
    const std::string vocab_digest = file_digest(vocab_file);
    const std::string vocab_bytes = read_file(vocab_file);
    const auto datasets = ingest_all_domains(cfg, vocab, vocab_digest);
    const ModelConfig model = runtime_model(cfg, vocab.size());

    std::filesystem::create_directories(cfg.out);
    atomic_write_file(cfg.out / "config.resolved", serialize_config(cfg));

    struct Job {
        std::size_t domain = 0;
        std::uint64_t seed = 0;
        std::vector<std::string> pending;  // strategies to (re)compute
    };
    std::vector<Job> jobs;
    std::vector<std::string> cells;
    std::vector<bool> cell_done;
    CommandStats stats;

    for (std::size_t d = 0; d < datasets.size(); ++d) {
        for (std::uint64_t seed : cfg.seeds) {
            Job job{d, seed, {}};
            for (const auto& strategy : cfg.obtain_strategies) {
                const auto run_id = obtain_run_id(datasets[d].name, strategy, seed);
                const bool complete =
                    std::filesystem::exists(RunPaths{cfg.out / run_id}.records());
                cells.push_back(run_id);
                cell_done.push_back(complete && !force);
                if (complete && !force) {
                    ++stats.cells_skipped;
                } else {
                    job.pending.push_back(strategy);
                }
            }
            if (!job.pending.empty()) jobs.push_back(std::move(job));
        }
    }
    write_manifest(cfg.out, cells, cell_done);

    run_parallel(jobs.size(), effective_threads(cfg), [&](std::size_t j) {
        const Job& job = jobs[j];
        const DomainDataset& dataset = datasets[job.domain];
        TrainConfig train = cfg.train;
        train.seed = job.seed;

        const SeedRound seed_round = run_seed_round(dataset, model, train);
        for (const auto& strategy : job.pending) {
            const LotteryResult result = run_lottery(dataset, model, cfg.prune, train,
                                                     obtain_strategy_enum(strategy), &seed_round);
            RunPaths run{cfg.out / obtain_run_id(dataset.name, strategy, job.seed)};
            std::filesystem::create_directories(run.root / "tickets");
            atomic_write_file(run.vocab(), vocab_bytes);
            const std::string theta_digest = save_theta0(model, result.theta0, run.theta0());

            for (std::size_t i = 0; i < result.masks.size(); ++i) {
                Ticket ticket;
                ticket.round = static_cast<int>(i) + 1;
                ticket.masks = result.masks[i];
                ticket.theta0_digest = theta_digest;
                ticket.model = model;
                ticket.prune = cfg.prune;
                ticket.vocab_digest = vocab_digest;
                ticket.source_domain = dataset.name;
                ticket.seed = job.seed;
                save_ticket(ticket, run.ticket(ticket.round));
            }

            std::string csv = records_csv_header();
            for (const auto& record : result.records) {
                const std::string label =
                    record.round == 0 ? "full-model" : obtain_strategy_label(strategy);
                csv += record_row(record, label, dataset.name, job.seed);
            }
            atomic_write_file(run.records(), csv);  // completion marker, written last
        }
    });
    stats.cells_run = cells.size() - stats.cells_skipped;

    // Aggregate all run records, deduplicating the shared full-model rows.
    std::set<std::string> rows;
    for (std::size_t d = 0; d < datasets.size(); ++d) {
        for (const auto& strategy : cfg.obtain_strategies) {
            for (std::uint64_t seed : cfg.seeds) {
                RunPaths run{cfg.out / obtain_run_id(datasets[d].name, strategy, seed)};
                if (!std::filesystem::exists(run.records())) continue;
                std::istringstream in(read_file(run.records()));
                std::string line;
                std::getline(in, line);  // header
                while (std::getline(in, line)) {
                    if (!line.empty()) rows.insert(line + "\n");
                }
            }
        }
    }
    std::string aggregate = records_csv_header();
    // Stable output order: domain, strategy, seed, round.
    std::vector<std::string> ordered(rows.begin(), rows.end());
    std::sort(ordered.begin(), ordered.end(), [](const std::string& a, const std::string& b) {
        const auto fa = split_csv_line(a), fb = split_csv_line(b);
        const auto key = [](const std::vector<std::string>& f) {
            return std::make_tuple(f[6], f[5], std::stoull(f[7]), std::stoi(f[0]));
        };
        return key(fa) < key(fb);
    });
    for (const auto& row : ordered) aggregate += row;
    atomic_write_file(cfg.out / "records.csv", aggregate);

    std::fill(cell_done.begin(), cell_done.end(), false);
    for (std::size_t i = 0; i < cells.size(); ++i) {
        cell_done[i] = std::filesystem::exists(RunPaths{cfg.out / cells[i]}.records());
    }
    write_manifest(cfg.out, cells, cell_done);
    return stats;
}

namespace {

struct ParsedTransferSource {
    std::vector<Ticket> tickets;
    ParamSet<float> theta0;
};

ParsedTransferSource load_transfer_source(const std::filesystem::path& runs_dir,
                                          const std::string& domain, std::uint64_t seed,
                                          int rounds, const ModelConfig& model) {
    RunPaths run{runs_dir / obtain_run_id(domain, "reset", seed)};
    if (!std::filesystem::exists(run.root)) {
        throw DataError("transfer: missing obtain run " + run.root.string() +
                        " (run obtain with the reset strategy first)");
    }
    ParsedTransferSource source;
    for (int r = 1; r <= rounds; ++r) {
        if (!std::filesystem::exists(run.ticket(r))) {
            throw DataError("transfer: missing ticket " + run.ticket(r).string());
        }
        source.tickets.push_back(load_ticket(run.ticket(r)));
    }
    source.theta0 = load_theta0(run.theta0(), model);
    const std::string digest = file_digest(run.theta0());
    for (const auto& ticket : source.tickets) {
        if (ticket.theta0_digest != digest) {
            throw DataError("transfer: " + run.theta0().string() +
                            " does not match the digest referenced by round " +
                            std::to_string(ticket.round));
        }
    }
    return source;
}

// Re-reports the target domain's own reset lottery as the ticket-target
// baseline for a transfer cell.
std::vector<std::string> ticket_target_rows(const std::filesystem::path& runs_dir,
                                            const std::string& source, const std::string& target,
                                            std::uint64_t seed) {
    RunPaths run{runs_dir / obtain_run_id(target, "reset", seed)};
    if (!std::filesystem::exists(run.records())) {
        throw DataError("transfer: ticket-target requested but run " + run.root.string() +
                        " has no records");
    }
    std::vector<std::string> rows;
    std::istringstream in(read_file(run.records()));
    std::string line;
    std::getline(in, line);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 8) {
            throw DataError(run.records().string() + ":" + std::to_string(line_no) +
                            ": expected 8 fields, got " + std::to_string(fields.size()));
        }
        if (fields[0] == "0") continue;  // seed round is not a ticket
        TransferRecord record;
        record.source = source;
        record.target = target;
        record.strategy = "ticket-target";
        record.round = std::stoi(fields[0]);
        record.sparsity = std::stod(fields[1]);
        record.best_val_acc = std::stod(fields[2]);
        record.test_acc = std::stod(fields[3]);
        rows.push_back(transfer_row(record, seed));
    }
    return rows;
}

}  // namespace

CommandStats cmd_transfer(const ExperimentConfig& cfg, bool force) {
    cfg.validate();
    const auto vocab_file = cfg.resolved_vocab_path();
    if (!std::filesystem::exists(vocab_file)) {
        throw DataError("transfer: vocabulary file missing: " + vocab_file.string());
    }
    const SubwordVocab vocab = load_vocab(vocab_file);
    const std::string vocab_digest = file_digest(vocab_file);
    const auto datasets = ingest_all_domains(cfg, vocab, vocab_digest);
    const ModelConfig model = runtime_model(cfg, vocab.size());
    const auto runs_dir = cfg.resolved_runs_dir();

    auto dataset_of = [&](const std::string& name) -> const DomainDataset& {
        for (const auto& d : datasets)
            if (d.name == name) return d;
        throw ConfigError("transfer: unknown domain " + name);
    };

    std::vector<std::pair<std::string, std::string>> pairs = cfg.transfer_pairs;
    if (pairs.empty()) {
        for (const auto& [src, unused_src] : cfg.domains)
            for (const auto& [dst, unused_dst] : cfg.domains)
                if (src != dst) pairs.emplace_back(src, dst);
    }

    struct Cell {
        std::string source, target;
        std::uint64_t seed;
    };
    std::vector<Cell> cells;
    CommandStats stats;
    for (const auto& [src, dst] : pairs) {
        for (std::uint64_t seed : cfg.seeds) {
            if (!force && std::filesystem::exists(transfer_cell_path(cfg, src, dst, seed))) {
                ++stats.cells_skipped;
            } else {
                cells.push_back(Cell{src, dst, seed});
            }
        }
    }

    std::filesystem::create_directories(cfg.out);
    atomic_write_file(cfg.out / "config.resolved", serialize_config(cfg));

    run_parallel(cells.size(), effective_threads(cfg), [&](std::size_t c) {
        const Cell& cell = cells[c];
        const DomainDataset& target = dataset_of(cell.target);
        TrainConfig train = cfg.train;
        train.seed = cell.seed;

        std::vector<std::string> rows;
        ParsedTransferSource source;
        bool source_loaded = false;
        for (const auto& strategy : cfg.transfer_strategies) {
            if (strategy == "ticket-target") {
                for (auto& row : ticket_target_rows(runs_dir, cell.source, cell.target, cell.seed))
                    rows.push_back(std::move(row));
                continue;
            }
            if (!source_loaded) {
                source = load_transfer_source(runs_dir, cell.source, cell.seed,
                                              cfg.prune.total_rounds, model);
                source_loaded = true;
            }
            const auto strategy_enum = strategy == "masks-reset" ? TransferStrategy::MasksReset
                                                                 : TransferStrategy::MasksRandom;
            for (const auto& record :
                 run_transfer(source.tickets, source.theta0, target, strategy_enum, train)) {
                rows.push_back(transfer_row(record, cell.seed));
            }
        }
        std::sort(rows.begin(), rows.end());
        std::string csv = transfer_csv_header();
        for (const auto& row : rows) csv += row;
        atomic_write_file(transfer_cell_path(cfg, cell.source, cell.target, cell.seed), csv);
    });
    stats.cells_run = cells.size();

    // Aggregate cell files, ordered by (source, target, strategy, seed, round).
    std::vector<std::string> all_rows;
    for (const auto& [src, dst] : pairs) {
        for (std::uint64_t seed : cfg.seeds) {
            const auto path = transfer_cell_path(cfg, src, dst, seed);
            if (!std::filesystem::exists(path)) continue;
            std::istringstream in(read_file(path));
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line)) {
                if (!line.empty()) all_rows.push_back(line + "\n");
            }
        }
    }
    std::sort(all_rows.begin(), all_rows.end(),
              [](const std::string& a, const std::string& b) {
                  const auto fa = split_csv_line(a), fb = split_csv_line(b);
                  const auto key = [](const std::vector<std::string>& f) {
                      return std::make_tuple(f[0], f[1], f[2], std::stoull(f[7]),
                                             std::stoi(f[3]));
                  };
                  return key(fa) < key(fb);
              });
    std::string aggregate = transfer_csv_header();
    for (const auto& row : all_rows) aggregate += row;
    atomic_write_file(cfg.out / "transfer-records.csv", aggregate);

    cmd_report({cfg.out}, cfg.out, cfg.scan_window, cfg.scan_margin, cfg.scan_var_factor);
    return stats;
}

namespace {

struct GroupKey {
    std::string scope, strategy;
    int round;
    bool operator<(const GroupKey& other) const {
        return std::tie(scope, strategy, round) <
               std::tie(other.scope, other.strategy, other.round);
    }
};

struct GroupValue {
    double sparsity = 0.0;
    std::vector<double> accs;
};

void parse_records_file(const std::filesystem::path& path, bool transfer,
                        std::map<GroupKey, GroupValue>& groups) {
    std::istringstream in(read_file(path));
    std::string line;
    std::getline(in, line);
    const std::size_t expected = 8;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != expected) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(expected) + " fields, got " +
                            std::to_string(f.size()));
        }
        try {
            GroupKey key;
            GroupValue* group;
            if (transfer) {
                key = GroupKey{f[0] + "->" + f[1], f[2], std::stoi(f[3])};
                group = &groups[key];
                group->sparsity = std::stod(f[4]);
                group->accs.push_back(std::stod(f[6]));
            } else {
                key = GroupKey{f[6], f[5], std::stoi(f[0])};
                group = &groups[key];
                group->sparsity = std::stod(f[1]);
                group->accs.push_back(std::stod(f[3]));
            }
        } catch (const DataError&) {
            throw;
        } catch (const std::exception&) {
            throw DataError(path.string() + ":" + std::to_string(line_no) +
                            ": malformed numeric field");
        }
    }
}

double mean_of(const std::vector<double>& xs) {
    double sum = 0.0;
    for (double x : xs) sum += x;
    return sum / static_cast<double>(xs.size());
}

double stddev_of(const std::vector<double>& xs) {
    const double mu = mean_of(xs);
    double acc = 0.0;
    for (double x : xs) acc += (x - mu) * (x - mu);
    return std::sqrt(acc / static_cast<double>(xs.size()));
}

}  // namespace

void cmd_report(const std::vector<std::filesystem::path>& dirs,
                const std::filesystem::path& out_dir, std::size_t window, double margin,
                double var_factor) {
    std::map<GroupKey, GroupValue> groups;
    bool found = false;
    for (const auto& dir : dirs) {
        if (std::filesystem::exists(dir / "records.csv")) {
            parse_records_file(dir / "records.csv", false, groups);
            found = true;
        }
        if (std::filesystem::exists(dir / "transfer-records.csv")) {
            parse_records_file(dir / "transfer-records.csv", true, groups);
            found = true;
        }
    }
    if (!found) throw DataError("report: no records.csv or transfer-records.csv in given dirs");

    std::string summary = "scope,strategy,round,sparsity,mean_test_acc,std_test_acc,seeds\n";
    for (const auto& [key, value] : groups) {
        std::ostringstream os;
        os << key.scope << "," << key.strategy << "," << key.round << ","
           << format_fixed(value.sparsity) << "," << format_fixed(mean_of(value.accs)) << ","
           << format_fixed(stddev_of(value.accs)) << "," << value.accs.size() << "\n";
        summary += os.str();
    }
    std::filesystem::create_directories(out_dir);
    atomic_write_file(out_dir / "summary.csv", summary);

    // Phase-transition scan per scope wherever a reset/random pair exists.
    auto curve_of = [&](const std::string& scope, const std::string& strategy) {
        StrategyCurve curve;
        for (const auto& [key, value] : groups) {
            if (key.scope == scope && key.strategy == strategy && key.round >= 1) {
                curve.sparsity.push_back(value.sparsity);
                curve.accuracy.push_back(value.accs);
            }
        }
        return curve;
    };
    std::set<std::string> scopes;
    for (const auto& [key, value] : groups) scopes.insert(key.scope);

    std::string scan_csv = "scope,baseline,window,margin,var_factor,threshold_sparsity\n";
    for (const auto& scope : scopes) {
        for (const auto& [reset_name, random_name] :
             {std::pair{std::string("ticket-reset"), std::string("ticket-random")},
              std::pair{std::string("masks-reset"), std::string("masks-random")}}) {
            const StrategyCurve reset = curve_of(scope, reset_name);
            const StrategyCurve random = curve_of(scope, random_name);
            if (reset.sparsity.empty() || random.sparsity.empty()) continue;
            if (reset.sparsity.size() < window || random.sparsity.size() < window) continue;
            const auto threshold =
                phase_transition_scan(reset, random, window, margin, var_factor);
            scan_csv += scope + "," + reset_name + "-vs-" + random_name + "," +
                        std::to_string(window) + "," + format_fixed(margin) + "," +
                        format_fixed(var_factor) + "," +
                        (threshold ? format_fixed(*threshold) : std::string("none")) + "\n";
        }
    }
    atomic_write_file(out_dir / "phase-transition.csv", scan_csv);
    std::cout << "report: " << groups.size() << " (scope, strategy, round) groups -> "
              << (out_dir / "summary.csv").string() << "\n";
}

}  // namespace ticketforge
