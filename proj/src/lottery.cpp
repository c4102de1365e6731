#include "ticketforge/lottery.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ticketforge {

AdamState make_adam_state(const ModelConfig& cfg) {
    AdamState state;
    for (const auto& spec : make_layout(cfg).tensors) {
        state.m.push_back(Tensor<float>(spec.shape));
        state.v.push_back(Tensor<float>(spec.shape));
    }
    return state;
}

void adam_step(const ModelConfig& cfg, ParamSet<float>& params, std::vector<Tensor<float>> grads,
               AdamState& state, const TrainConfig& train, const MaskSet* masks) {
    const ModelLayout layout = make_layout(cfg);
    if (grads.size() != params.size()) {
        throw std::invalid_argument("adam_step: gradient count does not match parameters");
    }

    for (std::size_t t = 0; t < grads.size(); ++t) {
        for (std::size_t i = 0; i < grads[t].numel(); ++i) {
            if (!std::isfinite(grads[t][i])) {
                throw NumericError("adam_step: non-finite gradient in " +
                                   layout.tensors[t].name + " at flat index " +
                                   std::to_string(i));
            }
            grads[t][i] += static_cast<float>(train.l2_weight) * params[t][i];
        }
        // Frozen prefix (pad embedding row) never updates.
        for (std::size_t i = 0; i < layout.tensors[t].frozen_prefix; ++i) grads[t][i] = 0.0f;
    }
    if (masks) mask_gradients(grads, *masks);

    state.step += 1;
    const double bc1 = 1.0 - std::pow(train.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(train.beta2, static_cast<double>(state.step));
    for (std::size_t t = 0; t < grads.size(); ++t) {
        Tensor<float>& m = state.m[t];
        Tensor<float>& v = state.v[t];
        for (std::size_t i = 0; i < grads[t].numel(); ++i) {
            const float g = grads[t][i];
            m[i] = static_cast<float>(train.beta1) * m[i] +
                   static_cast<float>(1.0 - train.beta1) * g;
            v[i] = static_cast<float>(train.beta2) * v[i] +
                   static_cast<float>(1.0 - train.beta2) * g * g;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            params[t][i] -= static_cast<float>(train.learning_rate * m_hat /
                                               (std::sqrt(v_hat) + train.epsilon));
        }
    }
    if (masks) {
        for (std::size_t t = 0; t < params.size(); ++t) {
            for (std::size_t i = 0; i < params[t].numel(); ++i) {
                if (!(*masks)[t][i]) params[t][i] = 0.0f;
            }
        }
    }
}

namespace {

std::vector<Tensor<float>> collect_grads(const StepResult<float>& step) {
    std::vector<Tensor<float>> grads;
    grads.reserve(step.param_leaves.size());
    for (auto leaf : step.param_leaves) grads.push_back(step.tape.grad(leaf));
    return grads;
}

}  // namespace

TrainResult train_round(const ModelConfig& cfg, ParamSet<float> start, const MaskSet* masks,
                        const DomainDataset& dataset, const TrainConfig& train, int round_index,
                        double sparsity, const StepObserver* observer) {
    cfg.validate();
    train.validate();
    if (dataset.train.empty() || dataset.validation.empty() || dataset.test.empty()) {
        throw DataError("train_round: dataset " + dataset.name + " has an empty split");
    }

    ParamSet<float> params = std::move(start);
    ParamSet<float> best = params;
    double best_val = evaluate_accuracy(cfg, params, nullptr, std::span(dataset.validation));
    int best_epoch = 0;

    AdamState adam = make_adam_state(cfg);
    std::vector<std::size_t> order(dataset.train.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= train.max_epochs; ++epoch) {
        Rng shuffle_rng(Rng::derive(train.seed, {stream::kShuffle,
                                                 static_cast<std::uint64_t>(round_index),
                                                 static_cast<std::uint64_t>(epoch)}));
        shuffle_rng.shuffle(order);
        Rng dropout_rng(Rng::derive(train.seed, {stream::kDropout,
                                                 static_cast<std::uint64_t>(round_index),
                                                 static_cast<std::uint64_t>(epoch)}));

        std::vector<LabeledExample> batch;
        for (std::size_t at = 0; at < order.size(); at += train.batch_size) {
            const std::size_t n = std::min(train.batch_size, order.size() - at);
            batch.clear();
            for (std::size_t i = 0; i < n; ++i) batch.push_back(dataset.train[order[at + i]]);

            StepResult<float> step =
                forward_loss(cfg, params, nullptr, std::span(batch), Mode::Train, &dropout_rng);
            const float loss = step.tape.value(step.loss)[0];
            if (!std::isfinite(loss)) {
                throw NumericError("train_round: non-finite loss in round " +
                                   std::to_string(round_index) + ", epoch " +
                                   std::to_string(epoch));
            }
            step.tape.backward(step.loss);
            adam_step(cfg, params, collect_grads(step), adam, train, masks);

            if (observer && *observer) {
                (*observer)(StepInfo{round_index, epoch, at / train.batch_size, &params, masks});
            }
        }

        const double val = evaluate_accuracy(cfg, params, nullptr, std::span(dataset.validation));
        if (val > best_val) {
            best_val = val;
            best = params;
            best_epoch = epoch;
        }
        if (train.patience > 0 && epoch - best_epoch >= train.patience) break;
    }

    TrainResult result{std::move(best), RoundRecord{}};
    result.record.round = round_index;
    result.record.sparsity = sparsity;
    result.record.best_val_acc = best_val;
    result.record.test_acc =
        evaluate_accuracy(cfg, result.params, nullptr, std::span(dataset.test));
    result.record.stop_epoch = best_epoch;
    return result;
}

ParamSet<float> apply_init_strategy(const ModelConfig& cfg, const ParamSet<float>& theta0,
                                    const MaskSet& masks, InitStrategy strategy,
                                    std::uint64_t random_seed) {
    if (strategy == InitStrategy::Reset) {
        return apply_mask(theta0, masks);
    }
    Rng rng(random_seed);
    ParamSet<float> fresh = init_params<float>(cfg, rng);
    return apply_mask(fresh, masks);
}

SeedRound run_seed_round(const DomainDataset& dataset, const ModelConfig& cfg,
                         const TrainConfig& train, const StepObserver* observer) {
    Rng init_rng(Rng::derive(train.seed, {stream::kInit}));
    SeedRound seed;
    seed.theta0 = init_params<float>(cfg, init_rng);
    TrainResult result =
        train_round(cfg, seed.theta0, nullptr, dataset, train, 0, 0.0, observer);
    seed.trained = std::move(result.params);
    seed.record = result.record;
    return seed;
}

LotteryResult run_lottery(const DomainDataset& dataset, const ModelConfig& cfg,
                          const PruneConfig& prune, const TrainConfig& train,
                          InitStrategy strategy, const SeedRound* cached_seed,
                          const StepObserver* observer) {
    prune.validate();
    SeedRound local;
    if (!cached_seed) {
        local = run_seed_round(dataset, cfg, train, observer);
        cached_seed = &local;
    }

    LotteryResult result;
    result.theta0 = cached_seed->theta0;
    result.records.push_back(cached_seed->record);

    MaskSet mask = all_ones_masks(cfg);
    mask.round = 0;
    ParamSet<float> trained = cached_seed->trained;
    for (int round = 1; round <= prune.total_rounds; ++round) {
        mask = prune_round(cfg, trained, mask, prune);
        const double sparsity = sparsity_of(cfg, mask);
        const std::uint64_t draw_seed =
            Rng::derive(train.seed, {stream::kRandomInit, static_cast<std::uint64_t>(round)});
        ParamSet<float> start =
            apply_init_strategy(cfg, result.theta0, mask, strategy, draw_seed);
        TrainResult round_result =
            train_round(cfg, std::move(start), &mask, dataset, train, round, sparsity, observer);
        trained = std::move(round_result.params);
        result.records.push_back(round_result.record);
        result.masks.push_back(mask);
    }
    return result;
}

}  // namespace ticketforge
