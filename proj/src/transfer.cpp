#include "ticketforge/transfer.hpp"

#include <cmath>

#include "ticketforge/errors.hpp"

namespace ticketforge {

const char* transfer_strategy_name(TransferStrategy s) {
    switch (s) {
        case TransferStrategy::MasksReset: return "masks-reset";
        case TransferStrategy::MasksRandom: return "masks-random";
        case TransferStrategy::TicketTarget: return "ticket-target";
    }
    return "?";
}

std::vector<TransferRecord> run_transfer(const std::vector<Ticket>& tickets,
                                         const ParamSet<float>& source_theta0,
                                         const DomainDataset& target, TransferStrategy strategy,
                                         const TrainConfig& train, const StepObserver* observer) {
    if (strategy == TransferStrategy::TicketTarget) {
        throw std::invalid_argument(
            "run_transfer: ticket-target is reporting-only; use the target domain's own records");
    }
    if (tickets.empty()) throw DataError("run_transfer: no tickets");

    std::vector<TransferRecord> records;
    records.reserve(tickets.size());
    for (const Ticket& ticket : tickets) {
        if (ticket.vocab_digest != target.vocab_digest) {
            throw DataError("run_transfer: tickets and target must share subword support "
                            "(vocabulary digest " + ticket.vocab_digest + " vs " +
                            target.vocab_digest + ")");
        }
        const double sparsity = sparsity_of(ticket.model, ticket.masks);
        const std::uint64_t draw_seed = Rng::derive(
            train.seed, {stream::kRandomInit, static_cast<std::uint64_t>(ticket.round)});
        ParamSet<float> start = apply_init_strategy(
            ticket.model, source_theta0, ticket.masks,
            strategy == TransferStrategy::MasksReset ? InitStrategy::Reset : InitStrategy::Random,
            draw_seed);
        // No further pruning at transfer time; the source mask is final.
        TrainResult result = train_round(ticket.model, std::move(start), &ticket.masks, target,
                                         train, ticket.round, sparsity, observer);
        TransferRecord record;
        record.source = ticket.source_domain;
        record.target = target.name;
        record.strategy = transfer_strategy_name(strategy);
        record.round = ticket.round;
        record.sparsity = sparsity;
        record.best_val_acc = result.record.best_val_acc;
        record.test_acc = result.record.test_acc;
        records.push_back(std::move(record));
    }
    return records;
}

namespace {

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

std::optional<double> phase_transition_scan(const StrategyCurve& reset,
                                            const StrategyCurve& random, std::size_t window,
                                            double margin, double var_factor) {
    if (window == 0) throw std::invalid_argument("phase_transition_scan: window must be >= 1");
    if (reset.sparsity.size() != random.sparsity.size() ||
        reset.accuracy.size() != random.accuracy.size() ||
        reset.sparsity.size() != reset.accuracy.size()) {
        throw std::invalid_argument("phase_transition_scan: mismatched round grids");
    }
    const std::size_t rounds = reset.sparsity.size();
    if (rounds < window) {
        throw std::invalid_argument("phase_transition_scan: need at least `window` rounds");
    }
    for (std::size_t r = 0; r < rounds; ++r) {
        if (std::fabs(reset.sparsity[r] - random.sparsity[r]) > 1e-9) {
            throw std::invalid_argument("phase_transition_scan: sparsity grids differ at round " +
                                        std::to_string(r));
        }
    }

    auto triggered = [&](std::size_t r) {
        const double gap = mean_of(reset.accuracy[r]) - mean_of(random.accuracy[r]);
        if (!(gap > margin)) return false;
        return stddev_of(random.accuracy[r]) >= var_factor * stddev_of(reset.accuracy[r]);
    };

    for (std::size_t start = 0; start + window <= rounds; ++start) {
        bool all = true;
        for (std::size_t r = start; r < start + window; ++r) {
            if (!triggered(r)) {
                all = false;
                break;
            }
        }
        if (all) return reset.sparsity[start];
    }
    return std::nullopt;
}

}  // namespace ticketforge
