#include <filesystem>

#include "doctest.h"
#include "ticketforge/experiment.hpp"
#include "ticketforge/io.hpp"
#include "ticketforge/ticket_store.hpp"

using namespace ticketforge;

namespace {

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name)
        : path(std::filesystem::temp_directory_path() / name) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

ExperimentConfig smoke_config(const std::filesystem::path& out) {
    ExperimentConfig cfg;
    cfg.out = out;
    cfg.seeds = {1, 2};
    cfg.threads = 2;
    cfg.data_mode = "synthetic";
    cfg.domains = {{"alpha", ""}, {"beta", ""}};
    cfg.sizes = SplitSizes{60, 30, 30};
    cfg.max_len = 24;
    cfg.vocab_size = 96;
    cfg.model.embed_dim = 8;
    cfg.model.filter_heights = {2, 3};
    cfg.model.channels = 3;
    cfg.model.mlp_hidden = 4;
    cfg.model.dropout_p = 0.1;
    cfg.prune.fraction = 0.35;
    cfg.prune.total_rounds = 2;
    cfg.train.batch_size = 16;
    cfg.train.max_epochs = 1;
    cfg.obtain_strategies = {"reset", "random"};
    cfg.transfer_pairs = {{"alpha", "beta"}};
    cfg.scan_window = 1;
    return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("experiment");

TEST_CASE("config text round-trips through serialization") {
    ExperimentConfig cfg = smoke_config("runs/demo");
    cfg.data_mode = "synthetic";
    cfg.divergence_scale_1e5 = true;
    const std::string text = serialize_config(cfg);
    const ExperimentConfig parsed = parse_config_text(text, "inline");
    CHECK(serialize_config(parsed) == text);
    CHECK(parsed.seeds == cfg.seeds);
    CHECK(parsed.model.filter_heights == cfg.model.filter_heights);
    CHECK(parsed.prune.fraction == cfg.prune.fraction);
    CHECK(parsed.transfer_pairs == cfg.transfer_pairs);
    CHECK(parsed.divergence_scale_1e5 == true);
}

TEST_CASE("a nine-cell transfer grid over five domains is expressible") {
    const std::string text =
        "[data]\n"
        "domains = B,E,M,C,H\n"
        "[transfer]\n"
        "pairs = B:E,B:M,B:C,E:B,E:H,M:C,C:H,H:B,H:E\n";
    ExperimentConfig cfg = parse_config_text(text, "inline");
    cfg.sizes = SplitSizes{20, 10, 10};
    cfg.validate();
    CHECK(cfg.transfer_pairs.size() == 9);
    CHECK(cfg.transfer_pairs[0] == std::pair<std::string, std::string>{"B", "E"});
    CHECK(cfg.transfer_pairs[8] == std::pair<std::string, std::string>{"H", "E"});

    // pairs = all expands to every ordered pair of distinct domains.
    ExperimentConfig all = parse_config_text("[data]\ndomains = B,E,M,C,H\n", "inline");
    CHECK(all.transfer_pairs.empty());  // resolved to 20 ordered pairs at run time
}

TEST_CASE("config errors are specific") {
    CHECK_THROWS_WITH_AS(parse_config_text("[experiment]\nbogus = 1\n", "inline"),
                         doctest::Contains("unknown key"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("[nope]\nx = 1\n", "inline"),
                         doctest::Contains("unknown section"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("[train]\nlr = abc\n", "inline"),
                         doctest::Contains("expected a number"), ConfigError);

    ExperimentConfig cfg = smoke_config("runs/x");
    cfg.seeds.clear();
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = smoke_config("runs/x");
    cfg.data_mode = "jsonl";
    cfg.domains = {{"B", "/nonexistent/path.jsonl"}};
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("does not exist"), ConfigError);

    cfg = smoke_config("runs/x");
    cfg.transfer_pairs = {{"alpha", "gamma"}};
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("unknown domain"), ConfigError);
}

TEST_CASE("paper preset pins the published protocol") {
    ExperimentConfig cfg;
    apply_paper_preset(cfg);
    CHECK(cfg.vocab_size == 8000);
    CHECK(cfg.vocab_coverage == 0.9995);
    CHECK(cfg.sizes.train == 20000);
    CHECK(cfg.sizes.validation == 10000);
    CHECK(cfg.sizes.test == 10000);
    CHECK(cfg.max_len == 500);
    CHECK(cfg.model.embed_dim == 417);
    CHECK(cfg.model.filter_heights == std::vector<std::size_t>{3, 4, 5});
    CHECK(cfg.model.channels == 127);
    CHECK(cfg.model.mlp_hidden == 117);
    CHECK(cfg.model.dropout_p == 0.285);
    CHECK(cfg.prune.fraction == 0.35);
    CHECK(cfg.prune.total_rounds == 20);
    CHECK(cfg.train.batch_size == 32);
    CHECK(cfg.train.max_epochs == 15);
    CHECK(cfg.train.learning_rate == 1e-3);
    CHECK(cfg.train.l2_weight == 1e-5);
}

TEST_CASE("jsonl ingestion end to end") {
    TempDir dir("ticketforge-jsonl-test");
    std::string jsonl;
    for (int i = 0; i < 60; ++i) {
        jsonl += "{\"text\": \"solid build quality works well\", \"rating\": 5}\n";
        jsonl += "{\"text\": \"broke after a week of use\", \"rating\": 1}\n";
        jsonl += "{\"text\": \"it exists and was delivered\", \"rating\": 3}\n";
    }
    atomic_write_file(dir.path / "gadgets.jsonl", jsonl);

    const auto records = read_jsonl_reviews(dir.path / "gadgets.jsonl");
    CHECK(records.size() == 180);
    CHECK(records[0].rating == 5);

    atomic_write_file(dir.path / "bad.jsonl", "{\"text\": \"no rating\"}\n");
    CHECK_THROWS_WITH_AS(read_jsonl_reviews(dir.path / "bad.jsonl"),
                         doctest::Contains("rating"), DataError);
    atomic_write_file(dir.path / "broken.jsonl", "not json at all\n");
    CHECK_THROWS_WITH_AS(read_jsonl_reviews(dir.path / "broken.jsonl"),
                         doctest::Contains(":1:"), DataError);
}

TEST_CASE("smoke grid: vocab, divergence, obtain, transfer, report, idempotence") {
    TempDir dir("ticketforge-grid-test");
    ExperimentConfig cfg = smoke_config(dir.path / "out");

    const double coverage = cmd_build_vocab(cfg);
    CHECK(coverage == 1.0);
    REQUIRE(std::filesystem::exists(cfg.resolved_vocab_path()));

    const auto matrix = cmd_divergence(cfg);
    REQUIRE(matrix.size() == 2);
    CHECK(matrix[0][0] == 0.0);
    CHECK(matrix[0][1] > 0.0);  // distinct topic pools
    CHECK(matrix[0][1] == matrix[1][0]);
    REQUIRE(std::filesystem::exists(cfg.out / "divergence.csv"));

    const auto stats = cmd_obtain(cfg);
    CHECK(stats.cells_run == 8);  // 2 domains x 2 strategies x 2 seeds
    CHECK(stats.cells_skipped == 0);

    // Run directory layout and ticket integrity.
    RunPaths run{cfg.out / obtain_run_id("alpha", "reset", 1)};
    REQUIRE(std::filesystem::exists(run.records()));
    REQUIRE(std::filesystem::exists(run.theta0()));
    REQUIRE(std::filesystem::exists(run.vocab()));
    const Ticket ticket = load_ticket(run.ticket(2));
    CHECK(ticket.round == 2);
    CHECK(ticket.source_domain == "alpha");
    CHECK(ticket.vocab_digest == file_digest(cfg.resolved_vocab_path()));
    CHECK(ticket.theta0_digest == file_digest(run.theta0()));

    // Aggregate records: header plus (1 full-model + 2 rounds x 2 strategies)
    // per (domain, seed) = 2 * 2 * 5 = 20 rows.
    const std::string aggregate = read_file(cfg.out / "records.csv");
    CHECK(std::count(aggregate.begin(), aggregate.end(), '\n') == 21);

    // Idempotence: a second obtain is a no-op with identical bytes.
    const auto again = cmd_obtain(cfg);
    CHECK(again.cells_run == 0);
    CHECK(again.cells_skipped == 8);
    CHECK(read_file(cfg.out / "records.csv") == aggregate);

    // Forced rerun reproduces the records byte for byte (determinism).
    const auto forced = cmd_obtain(cfg, true);
    CHECK(forced.cells_run == 8);
    CHECK(read_file(cfg.out / "records.csv") == aggregate);

    const auto transfer_stats = cmd_transfer(cfg);
    CHECK(transfer_stats.cells_run == 2);  // 1 pair x 2 seeds
    const std::string transfer_csv = read_file(cfg.out / "transfer-records.csv");
    // 2 seeds x (2 rounds x 3 strategies) = 12 rows + header.
    CHECK(std::count(transfer_csv.begin(), transfer_csv.end(), '\n') == 13);
    CHECK(transfer_csv.find("masks-reset") != std::string::npos);
    CHECK(transfer_csv.find("masks-random") != std::string::npos);
    CHECK(transfer_csv.find("ticket-target") != std::string::npos);

    const auto transfer_again = cmd_transfer(cfg);
    CHECK(transfer_again.cells_run == 0);
    CHECK(transfer_again.cells_skipped == 2);
    CHECK(read_file(cfg.out / "transfer-records.csv") == transfer_csv);

    cmd_report({cfg.out}, cfg.out, 1, 0.02, 2.0);
    const std::string summary = read_file(cfg.out / "summary.csv");
    CHECK(summary.find("alpha,ticket-reset") != std::string::npos);
    CHECK(summary.find("alpha->beta,masks-reset") != std::string::npos);
    REQUIRE(std::filesystem::exists(cfg.out / "phase-transition.csv"));

    // The resolved config re-validates cleanly.
    const ExperimentConfig reloaded = load_config(cfg.out / "config.resolved");
    reloaded.validate();
    CHECK(serialize_config(reloaded) == serialize_config(cfg));
}

TEST_CASE("obtain counting contract: domains x strategies x seeds, tickets per run") {
    TempDir dir("ticketforge-counting-test");
    ExperimentConfig cfg = smoke_config(dir.path / "out");
    cfg.seeds = {1, 2, 3, 4, 5};
    cfg.prune.total_rounds = 5;
    cfg.train.max_epochs = 1;

    cmd_build_vocab(cfg);
    const auto stats = cmd_obtain(cfg);
    CHECK(stats.cells_run == 2 * 2 * 5);

    std::size_t run_dirs = 0;
    for (const auto& domain : {"alpha", "beta"}) {
        for (const auto& strategy : {"reset", "random"}) {
            for (std::uint64_t seed = 1; seed <= 5; ++seed) {
                RunPaths run{cfg.out / obtain_run_id(domain, strategy, seed)};
                REQUIRE(std::filesystem::exists(run.records()));
                ++run_dirs;
                for (int round = 1; round <= 5; ++round) {
                    REQUIRE(std::filesystem::exists(run.ticket(round)));
                }
                CHECK(!std::filesystem::exists(run.ticket(6)));
            }
        }
    }
    CHECK(run_dirs == 20);

    // Aggregate rows: per (domain, seed) one shared full-model row plus
    // 5 rounds for each of the two strategies.
    const std::string aggregate = read_file(cfg.out / "records.csv");
    CHECK(std::count(aggregate.begin(), aggregate.end(), '\n') == 1 + 2 * 5 * (1 + 2 * 5));
}

TEST_CASE("transfer without the needed obtain runs names the missing run") {
    TempDir dir("ticketforge-missing-run-test");
    ExperimentConfig cfg = smoke_config(dir.path / "out");
    cfg.seeds = {1};
    cmd_build_vocab(cfg);

    cfg.transfer_strategies = {"ticket-target"};
    CHECK_THROWS_WITH_AS(cmd_transfer(cfg), doctest::Contains("beta-reset-seed1"), DataError);

    cfg.transfer_strategies = {"masks-reset"};
    CHECK_THROWS_WITH_AS(cmd_transfer(cfg), doctest::Contains("alpha-reset-seed1"), DataError);
}

TEST_CASE("report mean and stddev match an independent recomputation") {
    TempDir dir("ticketforge-report-test");
    std::string csv = records_csv_header();
    const std::vector<double> accs = {0.81, 0.84, 0.90, 0.77, 0.88};
    for (std::size_t s = 0; s < accs.size(); ++s) {
        csv += "1,0.350000,0.900000," + format_fixed(accs[s]) + ",3,ticket-reset,alpha," +
               std::to_string(s + 1) + "\n";
    }
    // A constant series has zero spread.
    for (std::size_t s = 0; s < 5; ++s) {
        csv += "1,0.350000,0.900000,0.500000,3,ticket-random,alpha," + std::to_string(s + 1) +
               "\n";
    }
    atomic_write_file(dir.path / "records.csv", csv);
    cmd_report({dir.path}, dir.path, 1, 0.02, 2.0);

    // Two-pass recomputation, written independently of the implementation.
    double mean = 0.0;
    for (double a : accs) mean += a;
    mean /= static_cast<double>(accs.size());
    double var = 0.0;
    for (double a : accs) var += (a - mean) * (a - mean);
    const double stddev = std::sqrt(var / static_cast<double>(accs.size()));

    const std::string summary = read_file(dir.path / "summary.csv");
    const std::string expected = "alpha,ticket-reset,1,0.350000," + format_fixed(mean) + "," +
                                 format_fixed(stddev) + ",5";
    CHECK(summary.find(expected) != std::string::npos);
    CHECK(summary.find("alpha,ticket-random,1,0.350000,0.500000,0.000000,5") !=
          std::string::npos);

    atomic_write_file(dir.path / "records.csv", records_csv_header() + "1,2,3\n");
    CHECK_THROWS_WITH_AS(cmd_report({dir.path}, dir.path), doctest::Contains(":2:"), DataError);
}

TEST_SUITE_END();
