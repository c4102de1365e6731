#pragma once

#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ticketforge/autograd.hpp"
#include "ticketforge/corpus.hpp"
#include "ticketforge/ops.hpp"
#include "ticketforge/rng.hpp"
#include "ticketforge/tensor.hpp"

namespace ticketforge {

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t embed_dim = 0;
    std::vector<std::size_t> filter_heights = {3, 4, 5};
    std::size_t channels = 0;      // per filter height
    std::size_t mlp_hidden = 0;
    std::size_t num_classes = 2;
    std::size_t max_len = 0;
    double dropout_p = 0.0;

    std::size_t feature_width() const { return filter_heights.size() * channels; }

    void validate() const {
        if (vocab_size == 0 || embed_dim == 0 || channels == 0 || mlp_hidden == 0 ||
            num_classes < 2 || max_len == 0 || filter_heights.empty()) {
            throw ConfigError("ModelConfig: all dimensions must be positive");
        }
        for (std::size_t h : filter_heights) {
            if (h == 0 || h > max_len) {
                throw ConfigError("ModelConfig: filter height " + std::to_string(h) +
                                  " must be in [1, max_len=" + std::to_string(max_len) + "]");
            }
        }
        if (dropout_p < 0.0 || dropout_p >= 1.0) {
            throw ConfigError("ModelConfig: dropout_p must be in [0,1)");
        }
    }
};

// One entry per parameter tensor, in canonical serialization order. `layer`
// groups tensors for per-layer pruning (embedding = layer 0, one layer per
// conv height, then the two MLP layers); `frozen_prefix` marks leading flat
// elements excluded from pruning and updates (the pad embedding row).
struct TensorSpec {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t layer = 0;
    std::size_t frozen_prefix = 0;

    std::size_t numel() const { return Tensor<float>::numel_of(shape); }
};

struct ModelLayout {
    std::vector<TensorSpec> tensors;
    std::size_t layer_count = 0;

    std::size_t embedding_index() const { return 0; }
    std::size_t conv_w_index(std::size_t k) const { return 1 + 2 * k; }
    std::size_t conv_b_index(std::size_t k) const { return 2 + 2 * k; }
    std::size_t mlp_w1_index(std::size_t heights) const { return 1 + 2 * heights; }
    std::size_t mlp_b1_index(std::size_t heights) const { return 2 + 2 * heights; }
    std::size_t mlp_w2_index(std::size_t heights) const { return 3 + 2 * heights; }
    std::size_t mlp_b2_index(std::size_t heights) const { return 4 + 2 * heights; }
};

inline ModelLayout make_layout(const ModelConfig& cfg) {
    cfg.validate();
    ModelLayout layout;
    layout.tensors.push_back(
        TensorSpec{"embedding", {cfg.vocab_size, cfg.embed_dim}, 0, cfg.embed_dim});
    std::size_t layer = 1;
    for (std::size_t h : cfg.filter_heights) {
        const std::string tag = std::to_string(h);
        layout.tensors.push_back(
            TensorSpec{"conv_h" + tag + "_w", {cfg.channels, h, cfg.embed_dim}, layer, 0});
        layout.tensors.push_back(TensorSpec{"conv_h" + tag + "_b", {cfg.channels}, layer, 0});
        ++layer;
    }
    layout.tensors.push_back(
        TensorSpec{"mlp_w1", {cfg.feature_width(), cfg.mlp_hidden}, layer, 0});
    layout.tensors.push_back(TensorSpec{"mlp_b1", {cfg.mlp_hidden}, layer, 0});
    ++layer;
    layout.tensors.push_back(TensorSpec{"mlp_w2", {cfg.mlp_hidden, cfg.num_classes}, layer, 0});
    layout.tensors.push_back(TensorSpec{"mlp_b2", {cfg.num_classes}, layer, 0});
    layout.layer_count = layer + 1;
    return layout;
}

// Trainable-parameter count per layer (raw, frozen elements included).
inline std::vector<std::size_t> count_params(const ModelConfig& cfg) {
    const ModelLayout layout = make_layout(cfg);
    std::vector<std::size_t> counts(layout.layer_count, 0);
    for (const auto& spec : layout.tensors) counts[spec.layer] += spec.numel();
    return counts;
}

inline std::size_t total_params(const ModelConfig& cfg) {
    const auto counts = count_params(cfg);
    return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

// Prunable counts exclude frozen prefixes.
inline std::vector<std::size_t> prunable_counts(const ModelConfig& cfg) {
    const ModelLayout layout = make_layout(cfg);
    std::vector<std::size_t> counts(layout.layer_count, 0);
    for (const auto& spec : layout.tensors) counts[spec.layer] += spec.numel() - spec.frozen_prefix;
    return counts;
}

inline std::size_t prunable_total(const ModelConfig& cfg) {
    const auto counts = prunable_counts(cfg);
    return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

template <typename T>
struct ParamSet {
    std::vector<Tensor<T>> tensors;  // aligned with ModelLayout order

    const Tensor<T>& operator[](std::size_t i) const { return tensors[i]; }
    Tensor<T>& operator[](std::size_t i) { return tensors[i]; }
    std::size_t size() const { return tensors.size(); }
};

struct MaskSet {
    std::vector<Tensor<std::uint8_t>> tensors;
    int round = 0;

    const Tensor<std::uint8_t>& operator[](std::size_t i) const { return tensors[i]; }
    Tensor<std::uint8_t>& operator[](std::size_t i) { return tensors[i]; }
    std::size_t size() const { return tensors.size(); }
};

inline MaskSet all_ones_masks(const ModelConfig& cfg) {
    MaskSet masks;
    for (const auto& spec : make_layout(cfg).tensors) {
        masks.tensors.push_back(Tensor<std::uint8_t>(spec.shape, 1));
    }
    return masks;
}

// He initialization bound: b = sqrt(6 / ((1 + a^2) * fan_in)).
inline double he_bound(double a, std::size_t fan_in) {
    if (fan_in == 0) throw std::invalid_argument("he_bound: fan_in must be >= 1");
    return std::sqrt(6.0 / ((1.0 + a * a) * static_cast<double>(fan_in)));
}

// Embeddings from a unit Gaussian; conv and MLP weights uniform in the He
// bound for their fan-in; biases zero.
template <typename T>
ParamSet<T> init_params(const ModelConfig& cfg, Rng& rng) {
    const ModelLayout layout = make_layout(cfg);
    ParamSet<T> params;
    params.tensors.reserve(layout.tensors.size());
    for (const auto& spec : layout.tensors) params.tensors.push_back(Tensor<T>(spec.shape));

    Tensor<T>& embedding = params[layout.embedding_index()];
    for (auto& v : embedding.data) v = static_cast<T>(rng.normal());

    for (std::size_t k = 0; k < cfg.filter_heights.size(); ++k) {
        const double bound = he_bound(0.0, cfg.filter_heights[k] * cfg.embed_dim);
        for (auto& v : params[layout.conv_w_index(k)].data)
            v = static_cast<T>(rng.uniform(-bound, bound));
    }
    const std::size_t heights = cfg.filter_heights.size();
    const double b1 = he_bound(0.0, cfg.feature_width());
    for (auto& v : params[layout.mlp_w1_index(heights)].data)
        v = static_cast<T>(rng.uniform(-b1, b1));
    const double b2 = he_bound(0.0, cfg.mlp_hidden);
    for (auto& v : params[layout.mlp_w2_index(heights)].data)
        v = static_cast<T>(rng.uniform(-b2, b2));
    return params;
}

// Effective parameters under a mask: masked positions become exactly zero,
// surviving positions keep their bit pattern.
template <typename T>
ParamSet<T> apply_mask(const ParamSet<T>& params, const MaskSet& masks) {
    if (params.size() != masks.size()) {
        throw std::invalid_argument("apply_mask: mask set does not match parameter set");
    }
    ParamSet<T> out = params;
    for (std::size_t t = 0; t < out.size(); ++t) {
        if (params[t].shape != masks[t].shape) {
            throw std::invalid_argument("apply_mask: shape mismatch on tensor " +
                                        std::to_string(t) + ": " +
                                        shape_string(params[t].shape) + " vs " +
                                        shape_string(masks[t].shape));
        }
        for (std::size_t i = 0; i < out[t].numel(); ++i) {
            if (!masks[t][i]) out[t][i] = T{};
        }
    }
    return out;
}

template <typename T>
struct StepResult {
    GradTape<T> tape;
    std::vector<typename GradTape<T>::Index> param_leaves;  // layout order
    typename GradTape<T>::Index loss = 0;
    Tensor<T> logits;  // [batch, classes], detached
};

namespace detail {

template <typename T>
typename GradTape<T>::Index model_logits(GradTape<T>& tape, const ModelConfig& cfg,
                                         const ModelLayout& layout,
                                         std::span<const typename GradTape<T>::Index> leaves,
                                         const SeqEncoding& sample, Mode mode, Rng* rng) {
    using Index = typename GradTape<T>::Index;
    const std::size_t heights = cfg.filter_heights.size();
    Index x = tape.embedding_rows(leaves[layout.embedding_index()],
                                  std::vector<std::int32_t>(sample.ids.begin(), sample.ids.end()));
    if (mode == Mode::Train && cfg.dropout_p > 0.0) {
        x = tape.dropout(x, cfg.dropout_p, *rng);
    }
    std::vector<Index> pooled;
    pooled.reserve(heights);
    for (std::size_t k = 0; k < heights; ++k) {
        const Index fmap = tape.conv1d(x, leaves[layout.conv_w_index(k)],
                                       leaves[layout.conv_b_index(k)], Activation::ReLU);
        pooled.push_back(tape.max_pool_rows(fmap));
    }
    const Index features = tape.concat(pooled);
    const Index hidden = tape.relu(tape.affine(features, leaves[layout.mlp_w1_index(heights)],
                                               leaves[layout.mlp_b1_index(heights)]));
    return tape.affine(hidden, leaves[layout.mlp_w2_index(heights)],
                       leaves[layout.mlp_b2_index(heights)]);
}

}  // namespace detail

// Differentiable batch forward ending in the mean cross-entropy loss.
// Masked parameters enter as exact zeros; gradients w.r.t. the original
// parameters are recovered by masking the returned gradients (see pruning).
template <typename T>
StepResult<T> forward_loss(const ModelConfig& cfg, const ParamSet<T>& params,
                           const MaskSet* masks, std::span<const LabeledExample> batch,
                           Mode mode, Rng* rng) {
    cfg.validate();
    if (batch.empty()) throw std::invalid_argument("forward_loss: empty batch");
    const ModelLayout layout = make_layout(cfg);
    const ParamSet<T>* effective = &params;
    ParamSet<T> masked;
    if (masks) {
        masked = apply_mask(params, *masks);
        effective = &masked;
    }

    StepResult<T> step;
    using Index = typename GradTape<T>::Index;
    step.param_leaves.reserve(effective->size());
    for (const auto& tensor : effective->tensors) {
        step.param_leaves.push_back(step.tape.leaf(tensor));
    }

    std::vector<Index> losses;
    losses.reserve(batch.size());
    step.logits = Tensor<T>({batch.size(), cfg.num_classes});
    for (std::size_t s = 0; s < batch.size(); ++s) {
        if (batch[s].encoding.ids.size() != cfg.max_len) {
            throw std::invalid_argument("forward_loss: encoding length " +
                                        std::to_string(batch[s].encoding.ids.size()) +
                                        " does not match max_len " + std::to_string(cfg.max_len));
        }
        const Index logits = detail::model_logits(step.tape, cfg, layout, step.param_leaves,
                                                  batch[s].encoding, mode, rng);
        for (std::size_t c = 0; c < cfg.num_classes; ++c)
            step.logits.at(s, c) = step.tape.value(logits)[c];
        losses.push_back(
            step.tape.softmax_cross_entropy(logits, static_cast<std::size_t>(batch[s].label)));
    }
    step.loss = step.tape.mean(losses);
    return step;
}

// Tape-free eval forward; deterministic (no dropout).
template <typename T>
Tensor<T> forward_eval(const ModelConfig& cfg, const ParamSet<T>& params, const MaskSet* masks,
                       std::span<const LabeledExample> batch) {
    cfg.validate();
    const ModelLayout layout = make_layout(cfg);
    const ParamSet<T>* effective = &params;
    ParamSet<T> masked;
    if (masks) {
        masked = apply_mask(params, *masks);
        effective = &masked;
    }
    const std::size_t heights = cfg.filter_heights.size();
    const Tensor<T>& embedding = (*effective)[layout.embedding_index()];

    Tensor<T> logits({batch.size(), cfg.num_classes});
    Tensor<T> x({cfg.max_len, cfg.embed_dim});
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const auto& ids = batch[s].encoding.ids;
        if (ids.size() != cfg.max_len) {
            throw std::invalid_argument("forward_eval: encoding length " +
                                        std::to_string(ids.size()) + " does not match max_len " +
                                        std::to_string(cfg.max_len));
        }
        for (std::size_t i = 0; i < cfg.max_len; ++i)
            for (std::size_t c = 0; c < cfg.embed_dim; ++c)
                x.at(i, c) = embedding.at(static_cast<std::size_t>(ids[i]), c);

        std::vector<T> features;
        features.reserve(cfg.feature_width());
        for (std::size_t k = 0; k < heights; ++k) {
            const Tensor<T>& w = (*effective)[layout.conv_w_index(k)];
            const Tensor<T>& b = (*effective)[layout.conv_b_index(k)];
            const std::size_t h = cfg.filter_heights[k];
            const std::size_t m = cfg.max_len - h + 1;
            for (std::size_t c = 0; c < cfg.channels; ++c) {
                T best{};
                bool first = true;
                for (std::size_t i = 0; i < m; ++i) {
                    T acc = b[c];
                    for (std::size_t r = 0; r < h; ++r)
                        for (std::size_t col = 0; col < cfg.embed_dim; ++col)
                            acc += x.at(i + r, col) * w.at(c, r, col);
                    acc = apply_activation(acc, Activation::ReLU);
                    if (first || acc > best) best = acc, first = false;
                }
                features.push_back(best);
            }
        }

        const Tensor<T>& w1 = (*effective)[layout.mlp_w1_index(heights)];
        const Tensor<T>& b1 = (*effective)[layout.mlp_b1_index(heights)];
        std::vector<T> hidden(cfg.mlp_hidden);
        for (std::size_t j = 0; j < cfg.mlp_hidden; ++j) {
            T acc = b1[j];
            for (std::size_t i = 0; i < features.size(); ++i) acc += features[i] * w1.at(i, j);
            hidden[j] = apply_activation(acc, Activation::ReLU);
        }
        const Tensor<T>& w2 = (*effective)[layout.mlp_w2_index(heights)];
        const Tensor<T>& b2 = (*effective)[layout.mlp_b2_index(heights)];
        for (std::size_t c = 0; c < cfg.num_classes; ++c) {
            T acc = b2[c];
            for (std::size_t j = 0; j < cfg.mlp_hidden; ++j) acc += hidden[j] * w2.at(j, c);
            logits.at(s, c) = acc;
        }
    }
    return logits;
}

// Argmax prediction accuracy; ties resolve to the lower class index.
template <typename T>
double evaluate_accuracy(const ModelConfig& cfg, const ParamSet<T>& params, const MaskSet* masks,
                         std::span<const LabeledExample> examples) {
    if (examples.empty()) throw std::invalid_argument("evaluate_accuracy: empty split");
    std::size_t correct = 0;
    constexpr std::size_t kChunk = 64;
    for (std::size_t at = 0; at < examples.size(); at += kChunk) {
        const std::size_t n = std::min(kChunk, examples.size() - at);
        const Tensor<T> logits = forward_eval(cfg, params, masks, examples.subspan(at, n));
        for (std::size_t s = 0; s < n; ++s) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < cfg.num_classes; ++c)
                if (logits.at(s, c) > logits.at(s, best)) best = c;
            if (static_cast<int>(best) == examples[at + s].label) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(examples.size());
}

}  // namespace ticketforge
