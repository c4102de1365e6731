#include "ticketforge/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

namespace ticketforge {

std::vector<std::uint8_t> l0_project_topk(std::span<const float> values, std::size_t keep) {
    if (keep > values.size()) {
        throw std::invalid_argument("l0_project_topk: keep count " + std::to_string(keep) +
                                    " exceeds length " + std::to_string(values.size()));
    }
    std::vector<std::uint8_t> mask(values.size(), 0);
    if (keep == 0) return mask;
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep - 1),
                     order.end(), [&](std::size_t a, std::size_t b) {
                         const float ma = std::fabs(values[a]), mb = std::fabs(values[b]);
                         if (ma != mb) return ma > mb;
                         return a < b;
                     });
    for (std::size_t i = 0; i < keep; ++i) mask[order[i]] = 1;
    return mask;
}

namespace {

std::size_t keep_count(const PruneConfig& cfg, std::size_t survivors) {
    const double frac =
        cfg.rule == PruneRule::KeepFraction ? (1.0 - cfg.fraction) : cfg.fraction;
    const auto k = static_cast<std::size_t>(
        std::llround(frac * static_cast<double>(survivors)));
    // Keep at least one survivor so small layers (biases) outlive round 20.
    return std::min(survivors, std::max<std::size_t>(k, 1));
}

}  // namespace

MaskSet prune_round(const ModelConfig& cfg, const ParamSet<float>& trained, const MaskSet& prev,
                    const PruneConfig& prune) {
    prune.validate();
    const ModelLayout layout = make_layout(cfg);
    if (trained.size() != layout.tensors.size() || prev.size() != layout.tensors.size()) {
        throw std::invalid_argument("prune_round: parameter/mask sets do not match the model");
    }

    MaskSet next = prev;
    next.round = prev.round + 1;

    for (std::size_t layer = 0; layer < layout.layer_count; ++layer) {
        // Gather the surviving, non-frozen weights of this layer.
        std::vector<float> survivors;
        std::vector<std::pair<std::size_t, std::size_t>> positions;  // (tensor, flat)
        for (std::size_t t = 0; t < layout.tensors.size(); ++t) {
            const TensorSpec& spec = layout.tensors[t];
            if (spec.layer != layer) continue;
            if (trained[t].shape != spec.shape || prev[t].shape != spec.shape) {
                throw std::invalid_argument("prune_round: tensor " + spec.name +
                                            " does not match the model layout");
            }
            for (std::size_t i = spec.frozen_prefix; i < spec.numel(); ++i) {
                if (!prev[t][i]) continue;
                survivors.push_back(trained[t][i]);
                positions.emplace_back(t, i);
            }
        }
        if (survivors.empty()) {
            std::cerr << "prune_round: layer " << layer << " has no survivors, skipping\n";
            continue;
        }
        const std::size_t k = keep_count(prune, survivors.size());
        const auto keep_mask = l0_project_topk(survivors, k);
        for (std::size_t i = 0; i < positions.size(); ++i) {
            if (!keep_mask[i]) next[positions[i].first][positions[i].second] = 0;
        }
    }
    return next;
}

double sparsity_of(const ModelConfig& cfg, const MaskSet& masks) {
    const ModelLayout layout = make_layout(cfg);
    std::size_t prunable = 0, surviving = 0;
    for (std::size_t t = 0; t < layout.tensors.size(); ++t) {
        const TensorSpec& spec = layout.tensors[t];
        for (std::size_t i = spec.frozen_prefix; i < spec.numel(); ++i) {
            ++prunable;
            if (masks[t][i]) ++surviving;
        }
    }
    return 1.0 - static_cast<double>(surviving) / static_cast<double>(prunable);
}

double expected_sparsity(const PruneConfig& cfg, int rounds) {
    if (rounds < 0 || rounds > cfg.total_rounds) {
        throw std::invalid_argument("expected_sparsity: rounds out of range");
    }
    return 1.0 - std::pow(1.0 - cfg.fraction, rounds);
}

void mask_gradients(std::vector<Tensor<float>>& grads, const MaskSet& masks) {
    if (grads.size() != masks.size()) {
        throw std::invalid_argument("mask_gradients: gradient/mask tensor counts differ");
    }
    for (std::size_t t = 0; t < grads.size(); ++t) {
        if (grads[t].shape != masks[t].shape) {
            throw std::invalid_argument("mask_gradients: shape mismatch " +
                                        shape_string(grads[t].shape) + " vs " +
                                        shape_string(masks[t].shape));
        }
        for (std::size_t i = 0; i < grads[t].numel(); ++i) {
            if (!masks[t][i]) grads[t][i] = 0.0f;
        }
    }
}

}  // namespace ticketforge
