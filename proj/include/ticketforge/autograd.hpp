#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "ticketforge/ops.hpp"
#include "ticketforge/tensor.hpp"

namespace ticketforge {

// Reverse-mode tape. A forward pass appends one node per primitive together
// with the adjoint needed to push gradients back to its inputs; backward()
// replays the adjoints in reverse and may run exactly once per tape.
template <typename T>
class GradTape {
public:
    using Index = std::uint32_t;

    Index leaf(Tensor<T> value) { return push(std::move(value)); }

    const Tensor<T>& value(Index i) const { return nodes_[i].value; }
    const Tensor<T>& grad(Index i) const { return nodes_[i].grad; }
    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    void backward(Index loss) {
        if (consumed_) throw std::logic_error("GradTape: tape already consumed by backward()");
        if (nodes_[loss].value.numel() != 1) {
            throw std::invalid_argument("GradTape: backward target must be a scalar");
        }
        consumed_ = true;
        for (auto& node : nodes_) node.grad = Tensor<T>(node.value.shape);
        nodes_[loss].grad[0] = T{1};
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)(*this);
    }

    // ---- primitives -------------------------------------------------------

    // Gather rows of a [V,d] table; pad/unk ids index like any other row.
    Index embedding_rows(Index table, std::vector<std::int32_t> ids) {
        const Tensor<T>& tab = value(table);
        const std::size_t d = tab.shape[1];
        Tensor<T> out({ids.size(), d});
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t c = 0; c < d; ++c) out.at(i, c) = tab.at(ids[i], c);
        const Index result = push(std::move(out));
        steps_.push_back([table, result, ids = std::move(ids), d](GradTape& t) {
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (std::size_t c = 0; c < d; ++c)
                    t.nodes_[table].grad.at(ids[i], c) += t.nodes_[result].grad.at(i, c);
        });
        return result;
    }

    Index dropout(Index x, double p, Rng& rng) {
        if (p < 0.0 || p >= 1.0) {
            throw std::invalid_argument("dropout: p must be in [0,1), got " + std::to_string(p));
        }
        const Tensor<T>& in = value(x);
        Tensor<T> out(in.shape);
        std::vector<std::uint8_t> kept(in.numel());
        const T scale = static_cast<T>(1.0 / (1.0 - p));
        for (std::size_t i = 0; i < in.numel(); ++i) {
            kept[i] = rng.bernoulli(p) ? 0 : 1;
            out[i] = kept[i] ? in[i] * scale : T{};
        }
        const Index result = push(std::move(out));
        steps_.push_back([x, result, kept = std::move(kept), scale](GradTape& t) {
            for (std::size_t i = 0; i < kept.size(); ++i)
                if (kept[i]) t.nodes_[x].grad[i] += t.nodes_[result].grad[i] * scale;
        });
        return result;
    }

    // Multi-channel convolution with fused activation:
    // x [n,d], w [C,h,d], bias [C] -> out [C, n-h+1].
    Index conv1d(Index x, Index w, Index bias, Activation act) {
        const Tensor<T>& in = value(x);
        const Tensor<T>& filt = value(w);
        const std::size_t n = in.shape[0], d = in.shape[1];
        const std::size_t channels = filt.shape[0], h = filt.shape[1];
        if (filt.shape[2] != d) {
            throw std::invalid_argument("conv1d: filter width " + shape_string(filt.shape) +
                                        " does not match input " + shape_string(in.shape));
        }
        if (n < h) {
            throw std::invalid_argument("conv1d: sequence shorter than filter (n=" +
                                        std::to_string(n) + ", h=" + std::to_string(h) + ")");
        }
        const std::size_t m = n - h + 1;
        Tensor<T> out({channels, m});
        std::vector<std::uint8_t> active(channels * m, 1);
        for (std::size_t c = 0; c < channels; ++c) {
            for (std::size_t i = 0; i < m; ++i) {
                T acc = value(bias)[c];
                for (std::size_t r = 0; r < h; ++r)
                    for (std::size_t k = 0; k < d; ++k) acc += in.at(i + r, k) * filt.at(c, r, k);
                if (act == Activation::ReLU && acc < T{}) {
                    active[c * m + i] = 0;
                    acc = T{};
                }
                out.at(c, i) = acc;
            }
        }
        const Index result = push(std::move(out));
        steps_.push_back([x, w, bias, result, active = std::move(active), channels, h, d,
                          m](GradTape& t) {
            const Tensor<T>& in = t.nodes_[x].value;
            const Tensor<T>& filt = t.nodes_[w].value;
            const Tensor<T>& gout = t.nodes_[result].grad;
            for (std::size_t c = 0; c < channels; ++c) {
                for (std::size_t i = 0; i < m; ++i) {
                    if (!active[c * m + i]) continue;
                    const T g = gout.at(c, i);
                    if (g == T{}) continue;
                    t.nodes_[bias].grad[c] += g;
                    for (std::size_t r = 0; r < h; ++r) {
                        for (std::size_t k = 0; k < d; ++k) {
                            t.nodes_[w].grad.at(c, r, k) += g * in.at(i + r, k);
                            t.nodes_[x].grad.at(i + r, k) += g * filt.at(c, r, k);
                        }
                    }
                }
            }
        });
        return result;
    }

    // Per-row max of [C,m] -> [C]; gradient flows to the first argmax only.
    Index max_pool_rows(Index x) {
        const Tensor<T>& in = value(x);
        const std::size_t channels = in.shape[0], m = in.shape[1];
        if (m == 0) throw std::invalid_argument("max_pool_rows: empty rows");
        Tensor<T> out({channels});
        std::vector<std::size_t> arg(channels);
        for (std::size_t c = 0; c < channels; ++c) {
            std::span<const T> row(in.data.data() + c * m, m);
            arg[c] = argmax_first(row);
            out[c] = row[arg[c]];
        }
        const Index result = push(std::move(out));
        steps_.push_back([x, result, arg = std::move(arg), m](GradTape& t) {
            for (std::size_t c = 0; c < arg.size(); ++c)
                t.nodes_[x].grad[c * m + arg[c]] += t.nodes_[result].grad[c];
        });
        return result;
    }

    Index concat(std::span<const Index> parts) {
        std::size_t total = 0;
        for (Index p : parts) total += value(p).numel();
        Tensor<T> out({total});
        std::size_t offset = 0;
        for (Index p : parts) {
            const Tensor<T>& v = value(p);
            std::copy(v.data.begin(), v.data.end(), out.data.begin() + offset);
            offset += v.numel();
        }
        const Index result = push(std::move(out));
        std::vector<Index> owned(parts.begin(), parts.end());
        steps_.push_back([result, owned = std::move(owned)](GradTape& t) {
            std::size_t offset = 0;
            for (Index p : owned) {
                Tensor<T>& gin = t.nodes_[p].grad;
                for (std::size_t i = 0; i < gin.numel(); ++i)
                    gin[i] += t.nodes_[result].grad[offset + i];
                offset += gin.numel();
            }
        });
        return result;
    }

    // y_j = sum_i x_i * w_ij + b_j with w stored [in, out].
    Index affine(Index x, Index w, Index bias) {
        const Tensor<T>& in = value(x);
        const Tensor<T>& weight = value(w);
        const std::size_t fan_in = weight.shape[0], fan_out = weight.shape[1];
        if (in.numel() != fan_in) {
            throw std::invalid_argument("affine: input " + shape_string(in.shape) +
                                        " does not match weight " + shape_string(weight.shape));
        }
        Tensor<T> out({fan_out});
        for (std::size_t j = 0; j < fan_out; ++j) {
            T acc = value(bias)[j];
            for (std::size_t i = 0; i < fan_in; ++i) acc += in[i] * weight.at(i, j);
            out[j] = acc;
        }
        const Index result = push(std::move(out));
        steps_.push_back([x, w, bias, result, fan_in, fan_out](GradTape& t) {
            const Tensor<T>& in = t.nodes_[x].value;
            const Tensor<T>& weight = t.nodes_[w].value;
            const Tensor<T>& gout = t.nodes_[result].grad;
            for (std::size_t j = 0; j < fan_out; ++j) {
                const T g = gout[j];
                if (g == T{}) continue;
                t.nodes_[bias].grad[j] += g;
                for (std::size_t i = 0; i < fan_in; ++i) {
                    t.nodes_[w].grad.at(i, j) += g * in[i];
                    t.nodes_[x].grad[i] += g * weight.at(i, j);
                }
            }
        });
        return result;
    }

    Index relu(Index x) {
        const Tensor<T>& in = value(x);
        Tensor<T> out(in.shape);
        std::vector<std::uint8_t> active(in.numel());
        for (std::size_t i = 0; i < in.numel(); ++i) {
            active[i] = in[i] > T{} ? 1 : 0;
            out[i] = active[i] ? in[i] : T{};
        }
        const Index result = push(std::move(out));
        steps_.push_back([x, result, active = std::move(active)](GradTape& t) {
            for (std::size_t i = 0; i < active.size(); ++i)
                if (active[i]) t.nodes_[x].grad[i] += t.nodes_[result].grad[i];
        });
        return result;
    }

    Index softmax_cross_entropy(Index logits, std::size_t label) {
        const Tensor<T>& in = value(logits);
        Tensor<T> out({1});
        out[0] = ticketforge::softmax_cross_entropy(in, label);
        auto probs = softmax(std::span<const T>(in.data));
        const Index result = push(std::move(out));
        steps_.push_back([logits, result, probs = std::move(probs), label](GradTape& t) {
            const T g = t.nodes_[result].grad[0];
            for (std::size_t i = 0; i < probs.size(); ++i) {
                t.nodes_[logits].grad[i] += g * (probs[i] - (i == label ? T{1} : T{}));
            }
        });
        return result;
    }

    Index sum(Index x) {
        const Tensor<T>& in = value(x);
        Tensor<T> out({1});
        for (std::size_t i = 0; i < in.numel(); ++i) out[0] += in[i];
        const Index result = push(std::move(out));
        steps_.push_back([x, result](GradTape& t) {
            const T g = t.nodes_[result].grad[0];
            for (std::size_t i = 0; i < t.nodes_[x].grad.numel(); ++i) t.nodes_[x].grad[i] += g;
        });
        return result;
    }

    Index frobenius_inner(Index a, Index b) {
        Tensor<T> out({1});
        out[0] = ticketforge::frobenius_inner(value(a), value(b));
        const Index result = push(std::move(out));
        steps_.push_back([a, b, result](GradTape& t) {
            const T g = t.nodes_[result].grad[0];
            for (std::size_t i = 0; i < t.nodes_[a].grad.numel(); ++i) {
                t.nodes_[a].grad[i] += g * t.nodes_[b].value[i];
                t.nodes_[b].grad[i] += g * t.nodes_[a].value[i];
            }
        });
        return result;
    }

    // Mean of scalar nodes, used to average per-sample losses over a batch.
    Index mean(std::span<const Index> scalars) {
        if (scalars.empty()) throw std::invalid_argument("mean: no inputs");
        Tensor<T> out({1});
        for (Index s : scalars) out[0] += value(s)[0];
        out[0] /= static_cast<T>(scalars.size());
        const Index result = push(std::move(out));
        std::vector<Index> owned(scalars.begin(), scalars.end());
        steps_.push_back([result, owned = std::move(owned)](GradTape& t) {
            const T g = t.nodes_[result].grad[0] / static_cast<T>(owned.size());
            for (Index s : owned) t.nodes_[s].grad[0] += g;
        });
        return result;
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
    };

    Index push(Tensor<T> value) {
        nodes_.push_back(Node{std::move(value), Tensor<T>{}});
        return static_cast<Index>(nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
    std::vector<std::function<void(GradTape&)>> steps_;
    bool consumed_ = false;
};

}  // namespace ticketforge
