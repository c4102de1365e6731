#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ticketforge/rng.hpp"
#include "ticketforge/tensor.hpp"

namespace ticketforge {

enum class Activation { Identity, ReLU };
enum class Mode { Train, Eval };

// <A,B>_F = sum_ij A_ij B_ij over two rank-2 tensors of equal shape.
template <typename T>
T frobenius_inner(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw std::invalid_argument("frobenius_inner: expected rank-2 tensors, got " +
                                    shape_string(a.shape) + " and " + shape_string(b.shape));
    }
    require_same_shape(a, b, "frobenius_inner");
    T acc = T{};
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a[i] * b[i];
    return acc;
}

template <typename T>
T apply_activation(T x, Activation f) {
    return (f == Activation::ReLU && x < T{}) ? T{} : x;
}

// Single-filter 1-D convolution over rows: out_i = f(<x[i:i+h), w> + bias)
// for i in [0, n-h], i.e. output length n-h+1. No stride, padding or dilation.
template <typename T>
Tensor<T> conv1d_forward(const Tensor<T>& x, const Tensor<T>& w, T bias, Activation f) {
    if (x.rank() != 2 || w.rank() != 2 || x.shape[1] != w.shape[1]) {
        throw std::invalid_argument("conv1d_forward: incompatible shapes " +
                                    shape_string(x.shape) + " vs " + shape_string(w.shape));
    }
    const std::size_t n = x.shape[0], h = w.shape[0], d = x.shape[1];
    if (n < h) {
        throw std::invalid_argument("conv1d_forward: sequence shorter than filter (n=" +
                                    std::to_string(n) + ", h=" + std::to_string(h) + ")");
    }
    Tensor<T> out({n - h + 1});
    for (std::size_t i = 0; i + h <= n; ++i) {
        T acc = bias;
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t c = 0; c < d; ++c) acc += x.at(i + r, c) * w.at(r, c);
        out[i] = apply_activation(acc, f);
    }
    return out;
}

// 1-max pooling; ties resolve to the first maximal index so the backward
// pass is deterministic.
template <typename T>
std::size_t argmax_first(std::span<const T> v) {
    if (v.empty()) throw std::invalid_argument("max_pool1: empty input");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

template <typename T>
T max_pool1(const Tensor<T>& c) {
    return c.data[argmax_first(std::span<const T>(c.data))];
}

// Inverted dropout: zero with probability p and scale survivors by 1/(1-p)
// in train mode; identity in eval mode.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Mode mode, Rng& rng) {
    if (p < 0.0 || p >= 1.0) {
        throw std::invalid_argument("dropout: p must be in [0,1), got " + std::to_string(p));
    }
    if (mode == Mode::Eval || p == 0.0) return x;
    Tensor<T> out(x.shape);
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    for (std::size_t i = 0; i < x.numel(); ++i) {
        out[i] = rng.bernoulli(p) ? T{} : x[i] * scale;
    }
    return out;
}

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
    const T max_logit = *std::max_element(logits.begin(), logits.end());
    std::vector<T> probs(logits.size());
    T denom = T{};
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] - max_logit);
        denom += probs[i];
    }
    for (auto& p : probs) p /= denom;
    return probs;
}

// -log softmax(logits)[label], max-subtracted for stability.
template <typename T>
T softmax_cross_entropy(const Tensor<T>& logits, std::size_t label) {
    if (logits.rank() != 1 || logits.numel() < 2) {
        throw std::invalid_argument("softmax_cross_entropy: expected >=2 logits, got " +
                                    shape_string(logits.shape));
    }
    if (label >= logits.numel()) {
        throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(label) +
                                    " out of range for " + std::to_string(logits.numel()) +
                                    " classes");
    }
    const T max_logit = *std::max_element(logits.data.begin(), logits.data.end());
    T denom = T{};
    for (std::size_t i = 0; i < logits.numel(); ++i) denom += std::exp(logits[i] - max_logit);
    return std::log(denom) - (logits[label] - max_logit);
}

// d loss / d logits = softmax(logits) - onehot(label).
template <typename T>
Tensor<T> softmax_cross_entropy_grad(const Tensor<T>& logits, std::size_t label) {
    Tensor<T> grad(logits.shape);
    auto probs = softmax(std::span<const T>(logits.data));
    for (std::size_t i = 0; i < probs.size(); ++i) grad[i] = probs[i];
    grad[label] -= T{1};
    return grad;
}

}  // namespace ticketforge
