#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ticketforge/lottery.hpp"
#include "ticketforge/ticket_store.hpp"

namespace ticketforge {

enum class TransferStrategy { MasksReset, MasksRandom, TicketTarget };

struct TransferRecord {
    std::string source;
    std::string target;
    std::string strategy;
    int round = 0;
    double sparsity = 0.0;
    double best_val_acc = 0.0;
    double test_acc = 0.0;
};

// Re-trains each source-domain ticket on the target domain without any
// further sparsification. MasksReset starts from the source θ0 restricted to
// the mask; MasksRandom starts from a fresh draw restricted to the mask.
// (TicketTarget is a reporting-only baseline handled at the CLI layer.)
std::vector<TransferRecord> run_transfer(const std::vector<Ticket>& tickets,
                                         const ParamSet<float>& source_theta0,
                                         const DomainDataset& target, TransferStrategy strategy,
                                         const TrainConfig& train,
                                         const StepObserver* observer = nullptr);

const char* transfer_strategy_name(TransferStrategy s);

// Accuracy samples for one strategy, indexed [round][seed], plus the common
// sparsity grid.
struct StrategyCurve {
    std::vector<double> sparsity;               // per round
    std::vector<std::vector<double>> accuracy;  // per round, across seeds
};

// Finds the smallest sparsity from which, for `window` consecutive rounds,
// the reset curve beats the random curve by more than `margin` while the
// random curve's across-seed standard deviation is at least `var_factor`
// times the reset curve's. Returns nothing if never triggered.
std::optional<double> phase_transition_scan(const StrategyCurve& reset,
                                            const StrategyCurve& random, std::size_t window,
                                            double margin = 0.02, double var_factor = 2.0);

}  // namespace ticketforge
