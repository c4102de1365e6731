#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ticketforge/corpus.hpp"
#include "ticketforge/pruning.hpp"
#include "ticketforge/textcnn.hpp"

namespace ticketforge {

struct TrainConfig {
    std::size_t batch_size = 32;
    int max_epochs = 15;
    double learning_rate = 1e-3;
    double l2_weight = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int patience = 0;  // 0: early stopping selects the best snapshot only
    std::uint64_t seed = 1;

    void validate() const {
        if (batch_size == 0 || max_epochs < 0 || learning_rate <= 0.0 || l2_weight < 0.0 ||
            epsilon <= 0.0 || patience < 0) {
            throw ConfigError("TrainConfig: invalid value");
        }
        if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0) {
            throw ConfigError("TrainConfig: betas must be in (0,1)");
        }
    }
};

enum class InitStrategy { Reset, Random };

struct RoundRecord {
    int round = 0;
    double sparsity = 0.0;
    double best_val_acc = 0.0;
    double test_acc = 0.0;
    int stop_epoch = 0;
};

// Adam moment state, one (m, v) pair per parameter tensor.
struct AdamState {
    std::vector<Tensor<float>> m, v;
    long step = 0;
};

AdamState make_adam_state(const ModelConfig& cfg);

// One Adam update with bias correction. The coupled l2 term (l2_weight * w)
// is added to the gradient before the moment updates; gradients are then
// zeroed on frozen prefixes and masked positions, and masked parameters are
// pinned to exact zero after the step.
void adam_step(const ModelConfig& cfg, ParamSet<float>& params, std::vector<Tensor<float>> grads,
               AdamState& state, const TrainConfig& train, const MaskSet* masks);

// Test-only instrumentation hook, called after every optimizer step.
struct StepInfo {
    int round = 0;
    int epoch = 0;
    std::size_t batch = 0;
    const ParamSet<float>* params = nullptr;
    const MaskSet* masks = nullptr;
};
using StepObserver = std::function<void(const StepInfo&)>;

struct TrainResult {
    ParamSet<float> params;  // best-validation snapshot
    RoundRecord record;
};

// Trains up to max_epochs with seeded shuffling, evaluating validation
// accuracy after each epoch and keeping the best snapshot (ties go to the
// earlier epoch). Reported test accuracy belongs to that snapshot.
TrainResult train_round(const ModelConfig& cfg, ParamSet<float> start, const MaskSet* masks,
                        const DomainDataset& dataset, const TrainConfig& train, int round_index,
                        double sparsity, const StepObserver* observer = nullptr);

// Reset: m ⊙ θ0, bit-equal on survivors. Random: a fresh draw from the
// initialization distributions, then masked.
ParamSet<float> apply_init_strategy(const ModelConfig& cfg, const ParamSet<float>& theta0,
                                    const MaskSet& masks, InitStrategy strategy,
                                    std::uint64_t random_seed);

struct SeedRound {
    ParamSet<float> theta0;
    ParamSet<float> trained;
    RoundRecord record;  // the Full-Model baseline (round 0, sparsity 0)
};

SeedRound run_seed_round(const DomainDataset& dataset, const ModelConfig& cfg,
                         const TrainConfig& train, const StepObserver* observer = nullptr);

struct LotteryResult {
    ParamSet<float> theta0;
    std::vector<MaskSet> masks;        // rounds 1..r_total
    std::vector<RoundRecord> records;  // rounds 0..r_total
};

// Full iterative pipeline: seed round, then r_total cycles of prune ->
// re-initialize -> retrain. A precomputed seed round may be shared between
// strategies running on the same (dataset, seed).
LotteryResult run_lottery(const DomainDataset& dataset, const ModelConfig& cfg,
                          const PruneConfig& prune, const TrainConfig& train,
                          InitStrategy strategy, const SeedRound* cached_seed = nullptr,
                          const StepObserver* observer = nullptr);

}  // namespace ticketforge
