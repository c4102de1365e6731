#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ticketforge/tensor.hpp"
#include "ticketforge/textcnn.hpp"

namespace ticketforge {

// Two readings of the per-round keep count. The sparsity formula
// 1-(1-p)^r only holds under KeepFraction (keep (1-p)*len survivors);
// PaperLiteral keeps p*len instead.
enum class PruneRule { KeepFraction, PaperLiteral };

struct PruneConfig {
    double fraction = 0.35;  // pruned per round
    int total_rounds = 20;
    PruneRule rule = PruneRule::KeepFraction;

    void validate() const {
        if (fraction <= 0.0 || fraction >= 1.0) {
            throw ConfigError("PruneConfig: fraction must be in (0,1)");
        }
        if (total_rounds < 1) throw ConfigError("PruneConfig: total_rounds must be >= 1");
    }
};

// l0 projection: mask keeping the k largest-magnitude elements. Ties at the
// threshold resolve to the lower flat index.
std::vector<std::uint8_t> l0_project_topk(std::span<const float> values, std::size_t keep);

// One magnitude-pruning round over the trained weights: per layer, keep the
// top k_i of the currently surviving weights, never resurrecting pruned ones.
// A layer whose survivor count has hit zero is skipped with a warning.
MaskSet prune_round(const ModelConfig& cfg, const ParamSet<float>& trained, const MaskSet& prev,
                    const PruneConfig& prune);

// Fraction of prunable parameters that are exactly zero under the mask.
double sparsity_of(const ModelConfig& cfg, const MaskSet& masks);

// Closed form 1 - (1-p)^r.
double expected_sparsity(const PruneConfig& cfg, int rounds);

// Zeroes gradient entries at masked-out positions; everything else unchanged.
void mask_gradients(std::vector<Tensor<float>>& grads, const MaskSet& masks);

}  // namespace ticketforge
