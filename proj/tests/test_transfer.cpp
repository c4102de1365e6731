#include <cmath>

#include "doctest.h"
#include "ticketforge/transfer.hpp"

using namespace ticketforge;

namespace {

ModelConfig micro_config() {
    ModelConfig cfg;
    cfg.vocab_size = 16;
    cfg.embed_dim = 6;
    cfg.filter_heights = {2, 3};
    cfg.channels = 4;
    cfg.mlp_hidden = 6;
    cfg.num_classes = 2;
    cfg.max_len = 10;
    cfg.dropout_p = 0.0;
    return cfg;
}

DomainDataset marker_dataset(const ModelConfig& cfg, const std::string& name, std::size_t train_n,
                             std::size_t eval_n, std::uint64_t seed) {
    Rng rng(seed);
    auto sample = [&](int label) {
        LabeledExample ex;
        ex.label = label;
        ex.encoding.ids.resize(cfg.max_len);
        for (auto& id : ex.encoding.ids)
            id = 4 + static_cast<std::int32_t>(rng.below(cfg.vocab_size - 4));
        ex.encoding.ids[rng.below(cfg.max_len)] = label ? 2 : 3;
        ex.encoding.original_length = cfg.max_len;
        return ex;
    };
    DomainDataset d;
    d.name = name;
    d.vocab_size = cfg.vocab_size;
    d.vocab_digest = "shared-digest";
    for (std::size_t i = 0; i < train_n; ++i) d.train.push_back(sample(i % 2));
    for (std::size_t i = 0; i < eval_n; ++i) d.validation.push_back(sample(i % 2));
    for (std::size_t i = 0; i < eval_n; ++i) d.test.push_back(sample(1 - static_cast<int>(i % 2)));
    return d;
}

std::vector<Ticket> tickets_of(const LotteryResult& result, const ModelConfig& cfg,
                               const PruneConfig& prune, const std::string& domain,
                               std::uint64_t seed, const std::string& vocab_digest) {
    std::vector<Ticket> tickets;
    for (std::size_t i = 0; i < result.masks.size(); ++i) {
        Ticket t;
        t.round = static_cast<int>(i) + 1;
        t.masks = result.masks[i];
        t.theta0_digest = "theta0";
        t.model = cfg;
        t.prune = prune;
        t.vocab_digest = vocab_digest;
        t.source_domain = domain;
        t.seed = seed;
        tickets.push_back(std::move(t));
    }
    return tickets;
}

StrategyCurve curve(std::vector<double> sparsity, std::vector<std::vector<double>> acc) {
    StrategyCurve c;
    c.sparsity = std::move(sparsity);
    c.accuracy = std::move(acc);
    return c;
}

}  // namespace

TEST_SUITE_BEGIN("transfer");

TEST_CASE("transfer keeps source sparsity, masks and round counts") {
    const ModelConfig cfg = micro_config();
    const auto source = marker_dataset(cfg, "src", 96, 60, 41);
    const auto target = marker_dataset(cfg, "dst", 96, 60, 42);
    TrainConfig train;
    train.max_epochs = 2;
    train.seed = 9;
    PruneConfig prune;
    prune.fraction = 0.35;
    prune.total_rounds = 3;

    const auto lottery = run_lottery(source, cfg, prune, train, InitStrategy::Reset);
    const auto tickets = tickets_of(lottery, cfg, prune, "src", train.seed, "shared-digest");

    // Instrument training to confirm parameters stay inside the mask.
    StepObserver observer = [](const StepInfo& info) {
        REQUIRE(info.masks != nullptr);
        for (std::size_t t = 0; t < info.params->size(); ++t) {
            for (std::size_t i = 0; i < (*info.params)[t].numel(); ++i) {
                if (!(*info.masks)[t][i]) {
                    REQUIRE((*info.params)[t][i] == 0.0f);
                }
            }
        }
    };
    const auto records = run_transfer(tickets, lottery.theta0, target,
                                      TransferStrategy::MasksReset, train, &observer);
    REQUIRE(records.size() == tickets.size());  // round-count conservation
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(records[i].round == tickets[i].round);
        CHECK(records[i].sparsity ==
              doctest::Approx(sparsity_of(cfg, tickets[i].masks)).epsilon(1e-12));
        CHECK(records[i].source == "src");
        CHECK(records[i].target == "dst");
        CHECK(records[i].strategy == std::string("masks-reset"));
    }
}

TEST_CASE("masks-reset restores source theta0 on surviving positions") {
    const ModelConfig cfg = micro_config();
    Rng rng(43);
    const auto theta0 = init_params<float>(cfg, rng);
    MaskSet masks = all_ones_masks(cfg);
    for (auto& tensor : masks.tensors)
        for (auto& bit : tensor.data) bit = rng.bernoulli(0.6) ? 0 : 1;
    const auto restored = apply_init_strategy(cfg, theta0, masks, InitStrategy::Reset, 0);
    for (std::size_t t = 0; t < theta0.size(); ++t) {
        for (std::size_t i = 0; i < theta0[t].numel(); ++i) {
            if (masks[t][i]) CHECK(restored[t][i] == theta0[t][i]);
        }
    }
}

TEST_CASE("degenerate transfer onto the source reproduces the source records") {
    const ModelConfig cfg = micro_config();
    const auto source = marker_dataset(cfg, "src", 96, 60, 47);
    TrainConfig train;
    train.max_epochs = 2;
    train.seed = 13;
    PruneConfig prune;
    prune.fraction = 0.35;
    prune.total_rounds = 2;

    const auto lottery = run_lottery(source, cfg, prune, train, InitStrategy::Reset);
    const auto tickets = tickets_of(lottery, cfg, prune, "src", train.seed, "shared-digest");
    const auto records =
        run_transfer(tickets, lottery.theta0, source, TransferStrategy::MasksReset, train);
    REQUIRE(records.size() == 2);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& obtained = lottery.records[i + 1];
        CHECK(records[i].sparsity == obtained.sparsity);
        CHECK(records[i].best_val_acc == obtained.best_val_acc);
        CHECK(records[i].test_acc == obtained.test_acc);
    }
}

TEST_CASE("vocabulary digest mismatch is rejected") {
    const ModelConfig cfg = micro_config();
    const auto source = marker_dataset(cfg, "src", 64, 40, 53);
    auto target = marker_dataset(cfg, "dst", 64, 40, 54);
    target.vocab_digest = "other-digest";
    TrainConfig train;
    train.max_epochs = 1;
    PruneConfig prune;
    prune.fraction = 0.35;
    prune.total_rounds = 1;
    const auto lottery = run_lottery(source, cfg, prune, train, InitStrategy::Reset);
    const auto tickets = tickets_of(lottery, cfg, prune, "src", 1, "shared-digest");
    CHECK_THROWS_WITH_AS(
        run_transfer(tickets, lottery.theta0, target, TransferStrategy::MasksReset, train),
        doctest::Contains("share subword support"), DataError);
}

TEST_CASE("phase transition scan") {
    const std::vector<double> grid = {0.35, 0.5775, 0.7254, 0.8214, 0.8840};

    SUBCASE("identical curves trigger nothing") {
        const auto flat = curve(grid, {{0.9, 0.9}, {0.9, 0.9}, {0.9, 0.9}, {0.9, 0.9},
                                       {0.9, 0.9}});
        CHECK(!phase_transition_scan(flat, flat, 2).has_value());
    }
    SUBCASE("constructed collapse at round k is located exactly") {
        const auto reset = curve(grid, {{0.90, 0.90}, {0.90, 0.90}, {0.89, 0.90},
                                        {0.90, 0.91}, {0.89, 0.90}});
        const auto random = curve(grid, {{0.90, 0.90}, {0.89, 0.91}, {0.60, 0.80},
                                         {0.55, 0.75}, {0.50, 0.72}});
        const auto threshold = phase_transition_scan(reset, random, 2, 0.02, 2.0);
        REQUIRE(threshold.has_value());
        CHECK(*threshold == grid[2]);
    }
    SUBCASE("degenerate thresholds reduce to persistent strict dominance") {
        const auto reset = curve(grid, {{0.9}, {0.9}, {0.9}, {0.9}, {0.9}});
        const auto random = curve(grid, {{0.9}, {0.9}, {0.9}, {0.89}, {0.88}});
        const auto threshold = phase_transition_scan(reset, random, 2, 0.0, 1.0);
        REQUIRE(threshold.has_value());
        CHECK(*threshold == grid[3]);
    }
    SUBCASE("mismatched grids are rejected") {
        const auto a = curve({0.1, 0.2}, {{0.9}, {0.9}});
        const auto b = curve({0.1, 0.3}, {{0.9}, {0.9}});
        CHECK_THROWS_AS(phase_transition_scan(a, b, 1), std::invalid_argument);
        const auto c = curve({0.1}, {{0.9}});
        CHECK_THROWS_AS(phase_transition_scan(a, c, 1), std::invalid_argument);
    }
}

TEST_SUITE_END();
