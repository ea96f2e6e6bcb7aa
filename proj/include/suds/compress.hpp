#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

#include "suds/model_grad.hpp"

namespace suds::compress {

using model::ModelParams;
using model::ModelSpec;
using model::Tensor;
using model::TensorSet;

// FLOPs budget: the compressed model may keep at most alpha of the baseline.
struct CompressionBudget {
    Real alpha = 0.5;
    std::uint64_t baseline_flops = 0;

    Real max_flops() const { return alpha * static_cast<Real>(baseline_flops); }

    void validate() const {
        if (!(alpha > 0.0 && alpha < 1.0)) {
            throw std::invalid_argument("alpha must be in (0, 1)");
        }
        if (max_flops() < 1.0) throw std::invalid_argument("budget below one FLOP");
    }
};

enum class LayerKind { Conv = 0, Lstm = 1, Dense = 2 };

struct PrunableLayer {
    LayerKind kind;
    int index;         // conv layer index or dense layer index; 0 for lstm
    std::string name;  // matches the flops table entry
    int units;
};

// The layers the search may prune, in walk order: conv filters, LSTM cells,
// dense hidden units. Attention and squeeze-excite projections resize
// passively; the classifier output layer is never pruned.
inline std::vector<PrunableLayer> prunable_layers(const ModelSpec& sp) {
    std::vector<PrunableLayer> out;
    for (std::size_t l = 0; l < sp.conv.size(); ++l) {
        out.push_back({LayerKind::Conv, static_cast<int>(l), "conv" + std::to_string(l),
                       sp.conv[l].filters});
    }
    out.push_back({LayerKind::Lstm, 0, "lstm", sp.lstm_cells});
    for (std::size_t j = 0; j < sp.dense.size(); ++j) {
        out.push_back({LayerKind::Dense, static_cast<int>(j), "dense" + std::to_string(j),
                       sp.dense[j]});
    }
    return out;
}

// One pruning ratio per prunable layer, each in [0, 1).
struct SparsityVector {
    std::vector<Real> s;

    void validate() const {
        for (Real v : s) {
            if (!(v >= 0.0 && v < 1.0)) {
                throw std::invalid_argument("sparsity ratio outside [0, 1)");
            }
        }
    }
};

inline int units_kept(int units, Real s) {
    return units - static_cast<int>(std::floor(s * static_cast<Real>(units)));
}

// Dimension-only pruning of one prunable layer; used for fast FLOPs checks.
inline ModelSpec prune_spec_layer(ModelSpec sp, std::size_t prunable_idx, Real s) {
    const auto layers = prunable_layers(sp);
    if (prunable_idx >= layers.size()) throw std::out_of_range("prunable index");
    if (!(s >= 0.0 && s < 1.0)) throw std::invalid_argument("sparsity ratio outside [0, 1)");
    const auto& pl = layers[prunable_idx];
    const int keep = units_kept(pl.units, s);
    switch (pl.kind) {
        case LayerKind::Conv: sp.conv[static_cast<std::size_t>(pl.index)].filters = keep; break;
        case LayerKind::Lstm: sp.lstm_cells = keep; break;
        case LayerKind::Dense: sp.dense[static_cast<std::size_t>(pl.index)] = keep; break;
    }
    return sp;
}

inline ModelSpec prune_spec(ModelSpec sp, const SparsityVector& sv) {
    sv.validate();
    const std::size_t n = prunable_layers(sp).size();
    if (sv.s.size() != n) {
        throw std::invalid_argument("sparsity vector length " + std::to_string(sv.s.size()) +
                                    " != prunable layers " + std::to_string(n));
    }
    for (std::size_t i = 0; i < n; ++i) sp = prune_spec_layer(sp, i, sv.s[i]);
    return sp;
}

namespace detail {

// Units kept after removing the floor(s*units) smallest-L2 ones, ascending
// original order; ties break toward keeping the later index.
inline std::vector<int> survivors_by_norm(const std::vector<Real>& norms, Real s) {
    const int units = static_cast<int>(norms.size());
    const int remove = static_cast<int>(std::floor(s * static_cast<Real>(units)));
    std::vector<int> order(norms.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return norms[static_cast<std::size_t>(a)] < norms[static_cast<std::size_t>(b)];
    });
    std::vector<int> keep(order.begin() + remove, order.end());
    std::sort(keep.begin(), keep.end());
    return keep;
}

inline std::vector<Real> conv_filter_norms(const ModelParams& p, int l) {
    const Tensor& w = p.w.at("conv" + std::to_string(l) + ".w");
    const int filters = w.shape[0];
    const std::size_t row = static_cast<std::size_t>(w.shape[1]) * w.shape[2];
    std::vector<Real> norms(static_cast<std::size_t>(filters), 0.0);
    for (int f = 0; f < filters; ++f) {
        Real acc = 0.0;
        for (std::size_t i = 0; i < row; ++i) {
            const Real v = w.v[static_cast<std::size_t>(f) * row + i];
            acc += v * v;
        }
        norms[static_cast<std::size_t>(f)] = std::sqrt(acc);
    }
    return norms;
}

inline std::vector<Real> lstm_cell_norms(const ModelParams& p) {
    const Tensor& wx = p.w.at("lstm.wx");
    const Tensor& wh = p.w.at("lstm.wh");
    const int H = wh.shape[1];
    const int in_dim = wx.shape[1];
    std::vector<Real> norms(static_cast<std::size_t>(H), 0.0);
    for (int j = 0; j < H; ++j) {
        Real acc = 0.0;
        for (int g = 0; g < 4; ++g) {
            const std::size_t r = static_cast<std::size_t>(g) * H + j;
            for (int d = 0; d < in_dim; ++d) {
                const Real v = wx.v[r * in_dim + d];
                acc += v * v;
            }
            for (int k = 0; k < H; ++k) {
                const Real v = wh.v[r * H + k];
                acc += v * v;
            }
        }
        norms[static_cast<std::size_t>(j)] = std::sqrt(acc);
    }
    return norms;
}

inline std::vector<Real> dense_unit_norms(const ModelParams& p, int j) {
    const Tensor& w = p.w.at("dense" + std::to_string(j) + ".w");
    const int out = w.shape[0];
    const int in = w.shape[1];
    std::vector<Real> norms(static_cast<std::size_t>(out), 0.0);
    for (int o = 0; o < out; ++o) {
        Real acc = 0.0;
        for (int i = 0; i < in; ++i) {
            const Real v = w.v[static_cast<std::size_t>(o) * in + i];
            acc += v * v;
        }
        norms[static_cast<std::size_t>(o)] = std::sqrt(acc);
    }
    return norms;
}

}  // namespace detail

// Removes floor(s*units) output units with the smallest L2 weight magnitude
// from one prunable layer, adjusting every downstream consumer's shapes
// (following conv input channels, squeeze-excite projections, the activation
// vector slice of the first head layer, the next dense layer). The classifier
// output stays intact.
inline ModelParams prune_layer(const ModelParams& params, std::size_t prunable_idx, Real s) {
    if (!(s >= 0.0 && s < 1.0)) throw std::invalid_argument("sparsity ratio outside [0, 1)");
    const ModelSpec& sp = params.spec;
    const auto layers = prunable_layers(sp);
    if (prunable_idx >= layers.size()) throw std::out_of_range("prunable index");
    const auto& pl = layers[prunable_idx];

    std::vector<Real> norms;
    switch (pl.kind) {
        case LayerKind::Conv: norms = detail::conv_filter_norms(params, pl.index); break;
        case LayerKind::Lstm: norms = detail::lstm_cell_norms(params); break;
        case LayerKind::Dense: norms = detail::dense_unit_norms(params, pl.index); break;
    }
    const std::vector<int> keep = detail::survivors_by_norm(norms, s);

    ModelSpec nsp = prune_spec_layer(sp, prunable_idx, s);
    nsp.validate();

    ModelParams out;
    out.spec = nsp;
    out.version = params.version;

    const int C_old = sp.cnn_out_dim();
    const bool is_last_conv =
        pl.kind == LayerKind::Conv && pl.index == static_cast<int>(sp.conv.size()) - 1;

    for (const auto& [name, shape] : model::tensor_layout(nsp)) {
        const Tensor& src = params.w.at(name);
        Tensor dst = Tensor::zeros(shape);

        // row keep map (first dimension) and column keep map (second/input)
        std::vector<int> rows(static_cast<std::size_t>(shape[0]));
        std::iota(rows.begin(), rows.end(), 0);
        bool rows_mapped = false, cols_mapped = false;
        std::vector<int> cols;

        const std::string conv_self = "conv" + std::to_string(pl.index);
        const std::string conv_next = "conv" + std::to_string(pl.index + 1);
        const std::string dense_self = "dense" + std::to_string(pl.index);
        const std::string dense_next = "dense" + std::to_string(pl.index + 1);
        const std::string head_first =
            sp.dense.empty() ? "head" : "dense0";  // consumes the activation vector

        if (pl.kind == LayerKind::Conv) {
            if (name == conv_self + ".w" || name == conv_self + ".b") {
                rows = keep;
                rows_mapped = true;
            } else if (name == conv_next + ".w") {
                cols = keep;
                cols_mapped = true;
            } else if (is_last_conv) {
                if (name == "se.w1") {
                    cols = keep;
                    cols_mapped = true;
                } else if (name == "se.w2" || name == "se.b2") {
                    rows = keep;
                    rows_mapped = true;
                } else if (name == head_first + ".w") {
                    // activation vector = [cnn_out; lstm h]
                    cols = keep;
                    for (int j = 0; j < sp.lstm_cells; ++j) cols.push_back(C_old + j);
                    cols_mapped = true;
                }
            }
        } else if (pl.kind == LayerKind::Lstm) {
            const int H_old = sp.lstm_cells;
            if (name == "lstm.wx" || name == "lstm.b") {
                rows.clear();
                for (int g = 0; g < 4; ++g) {
                    for (int j : keep) rows.push_back(g * H_old + j);
                }
                rows_mapped = true;
            } else if (name == "lstm.wh") {
                rows.clear();
                for (int g = 0; g < 4; ++g) {
                    for (int j : keep) rows.push_back(g * H_old + j);
                }
                rows_mapped = true;
                cols = keep;
                cols_mapped = true;
            } else if (name == head_first + ".w") {
                cols.clear();
                for (int c = 0; c < C_old; ++c) cols.push_back(c);
                for (int j : keep) cols.push_back(C_old + j);
                cols_mapped = true;
            }
        } else {  // Dense
            const bool next_is_head = pl.index == static_cast<int>(sp.dense.size()) - 1;
            const std::string next_w = next_is_head ? "head.w" : dense_next + ".w";
            if (name == dense_self + ".w" || name == dense_self + ".b") {
                rows = keep;
                rows_mapped = true;
            } else if (name == next_w) {
                cols = keep;
                cols_mapped = true;
            }
        }

        if (!rows_mapped && !cols_mapped) {
            if (src.v.size() != dst.v.size()) {
                throw std::logic_error("prune_layer: unexpected shape change for " + name);
            }
            dst.v = src.v;
        } else {
            // copy with maps; tensors are 1-D (rows), 2-D (rows x cols) or
            // 3-D conv weights (rows x cols x kernel)
            const int n_rows = shape[0];
            const int src_cols = src.shape.size() > 1 ? src.shape[1] : 1;
            const int dst_cols = shape.size() > 1 ? shape[1] : 1;
            const int tail = shape.size() > 2 ? shape[2] : 1;
            if (!cols_mapped) {
                cols.resize(static_cast<std::size_t>(dst_cols));
                std::iota(cols.begin(), cols.end(), 0);
            }
            for (int rr = 0; rr < n_rows; ++rr) {
                const int sr = rows[static_cast<std::size_t>(rr)];
                for (int cc2 = 0; cc2 < dst_cols; ++cc2) {
                    const int scc = cols[static_cast<std::size_t>(cc2)];
                    for (int t = 0; t < tail; ++t) {
                        dst.v[(static_cast<std::size_t>(rr) * dst_cols + cc2) * tail + t] =
                            src.v[(static_cast<std::size_t>(sr) * src_cols + scc) * tail + t];
                    }
                }
            }
        }
        out.w.items.push_back({name, std::move(dst)});
    }
    return out;
}

// Prunes every layer per the sparsity vector, walking in prunable order.
inline ModelParams prune_model(const ModelParams& params, const SparsityVector& sv) {
    sv.validate();
    const std::size_t n = prunable_layers(params.spec).size();
    if (sv.s.size() != n) {
        throw std::invalid_argument("sparsity vector length " + std::to_string(sv.s.size()) +
                                    " != prunable layers " + std::to_string(n));
    }
    ModelParams cur = params;
    for (std::size_t i = 0; i < n; ++i) cur = prune_layer(cur, i, sv.s[i]);
    return cur;
}

// ---------------------------------------------------------------------------
// Layer embeddings and the actor/critic agent.
// ---------------------------------------------------------------------------

// Normalized description of one prunable layer mid-walk; every component is
// in [0, 1].
struct LayerEmbedding {
    Real layer_index = 0.0;       // idx / (P - 1)
    Real layer_kind = 0.0;        // conv 0, lstm 0.5, dense 1
    Real layer_flops = 0.0;       // this layer's FLOPs / N
    Real flops_reduced = 0.0;     // FLOPs already removed / N
    Real flops_remaining = 0.0;   // FLOPs of later layers / N

    std::vector<Real> to_vector() const {
        return {layer_index, layer_kind, layer_flops, flops_reduced, flops_remaining};
    }
    static constexpr int kDim = 5;
};

// Embedding of prunable layer idx under the (possibly partially pruned)
// current spec. flops_remaining counts every accounting-table entry after
// this layer's own entry, classifier included.
inline LayerEmbedding layer_embedding(const ModelSpec& cur, std::size_t prunable_idx,
                                      std::uint64_t baseline_flops,
                                      std::uint64_t reduced_so_far) {
    const auto layers = prunable_layers(cur);
    if (prunable_idx >= layers.size()) throw std::out_of_range("prunable index");
    const auto& pl = layers[prunable_idx];
    const model::FlopsTable table = model::count_flops(cur);
    const Real N = static_cast<Real>(baseline_flops);

    LayerEmbedding e;
    e.layer_index = layers.size() > 1
                        ? static_cast<Real>(prunable_idx) / static_cast<Real>(layers.size() - 1)
                        : 0.0;
    e.layer_kind = static_cast<Real>(static_cast<int>(pl.kind)) / 2.0;
    std::uint64_t remaining = 0;
    bool after = false;
    for (const auto& entry : table.layers) {
        if (after) remaining += entry.flops;
        if (entry.name == pl.name) {
            e.layer_flops = static_cast<Real>(entry.flops) / N;
            after = true;
        }
    }
    e.flops_remaining = static_cast<Real>(remaining) / N;
    e.flops_reduced = static_cast<Real>(reduced_so_far) / N;
    return e;
}

// Two-hidden-layer MLP (300 units each) stored as a named tensor set so the
// shared Adam step applies. Output is a single linear unit.
inline TensorSet make_mlp(int in_dim, int hidden, Rng* rng) {
    TensorSet p;
    auto add = [&](const char* name, std::vector<int> shape, std::size_t fan_in) {
        Tensor t = Tensor::zeros(std::move(shape));
        if (rng && fan_in > 0) {
            const Real a = 1.0 / std::sqrt(static_cast<Real>(fan_in));
            for (Real& v : t.v) v = rng->uniform(-a, a);
        }
        p.items.push_back({name, std::move(t)});
    };
    add("w1", {hidden, in_dim}, static_cast<std::size_t>(in_dim));
    add("b1", {hidden}, 0);
    add("w2", {hidden, hidden}, static_cast<std::size_t>(hidden));
    add("b2", {hidden}, 0);
    add("w3", {1, hidden}, static_cast<std::size_t>(hidden));
    add("b3", {1}, 0);
    return p;
}

struct MlpCache {
    std::vector<Real> x, a1, a2;
};

inline Real mlp_forward(const TensorSet& p, const std::vector<Real>& x,
                        MlpCache* cache = nullptr) {
    const Tensor& w1 = p.at("w1");
    const int hidden = w1.shape[0];
    const int in_dim = w1.shape[1];
    if (static_cast<int>(x.size()) != in_dim) {
        throw std::invalid_argument("mlp input dim mismatch: expected " + std::to_string(in_dim) +
                                    ", got " + std::to_string(x.size()));
    }
    std::vector<Real> a1(static_cast<std::size_t>(hidden));
    for (int o = 0; o < hidden; ++o) {
        Real acc = p.at("b1").v[static_cast<std::size_t>(o)];
        for (int i = 0; i < in_dim; ++i) {
            acc += w1.v[static_cast<std::size_t>(o) * in_dim + i] * x[static_cast<std::size_t>(i)];
        }
        a1[static_cast<std::size_t>(o)] = acc > 0.0 ? acc : 0.0;
    }
    const Tensor& w2 = p.at("w2");
    std::vector<Real> a2(static_cast<std::size_t>(hidden));
    for (int o = 0; o < hidden; ++o) {
        Real acc = p.at("b2").v[static_cast<std::size_t>(o)];
        for (int i = 0; i < hidden; ++i) {
            acc += w2.v[static_cast<std::size_t>(o) * hidden + i] * a1[static_cast<std::size_t>(i)];
        }
        a2[static_cast<std::size_t>(o)] = acc > 0.0 ? acc : 0.0;
    }
    const Tensor& w3 = p.at("w3");
    Real out = p.at("b3").v[0];
    for (int i = 0; i < hidden; ++i) out += w3.v[static_cast<std::size_t>(i)] * a2[static_cast<std::size_t>(i)];
    if (cache) {
        cache->x = x;
        cache->a1 = std::move(a1);
        cache->a2 = std::move(a2);
    }
    return out;
}

// Accumulates gradients for dout at the cached point; optionally returns the
// input gradient.
inline void mlp_backward(const TensorSet& p, const MlpCache& c, Real dout, TensorSet& g,
                         std::vector<Real>* dx = nullptr) {
    const Tensor& w2 = p.at("w2");
    const Tensor& w3 = p.at("w3");
    const int hidden = w2.shape[0];
    const int in_dim = static_cast<int>(c.x.size());

    std::vector<Real> da2(static_cast<std::size_t>(hidden));
    Tensor& gw3 = g.at("w3");
    g.at("b3").v[0] += dout;
    for (int i = 0; i < hidden; ++i) {
        gw3.v[static_cast<std::size_t>(i)] += dout * c.a2[static_cast<std::size_t>(i)];
        da2[static_cast<std::size_t>(i)] = dout * w3.v[static_cast<std::size_t>(i)];
    }
    std::vector<Real> da1(static_cast<std::size_t>(hidden), 0.0);
    Tensor& gw2 = g.at("w2");
    Tensor& gb2 = g.at("b2");
    for (int o = 0; o < hidden; ++o) {
        if (c.a2[static_cast<std::size_t>(o)] <= 0.0) continue;
        const Real d = da2[static_cast<std::size_t>(o)];
        gb2.v[static_cast<std::size_t>(o)] += d;
        for (int i = 0; i < hidden; ++i) {
            gw2.v[static_cast<std::size_t>(o) * hidden + i] += d * c.a1[static_cast<std::size_t>(i)];
            da1[static_cast<std::size_t>(i)] += d * w2.v[static_cast<std::size_t>(o) * hidden + i];
        }
    }
    const Tensor& w1 = p.at("w1");
    Tensor& gw1 = g.at("w1");
    Tensor& gb1 = g.at("b1");
    if (dx) dx->assign(static_cast<std::size_t>(in_dim), 0.0);
    for (int o = 0; o < hidden; ++o) {
        if (c.a1[static_cast<std::size_t>(o)] <= 0.0) continue;
        const Real d = da1[static_cast<std::size_t>(o)];
        gb1.v[static_cast<std::size_t>(o)] += d;
        for (int i = 0; i < in_dim; ++i) {
            gw1.v[static_cast<std::size_t>(o) * in_dim + i] += d * c.x[static_cast<std::size_t>(i)];
            if (dx) (*dx)[static_cast<std::size_t>(i)] += d * w1.v[static_cast<std::size_t>(o) * in_dim + i];
        }
    }
}

// Actor (embedding -> sparsity) and critic (sparsity vector -> predicted
// validation loss), each 2 x 300 hidden units.
struct AgentParams {
    TensorSet actor;
    TensorSet critic;
    int sparsity_dim = 0;

    static AgentParams make(int sparsity_dim, std::uint64_t seed, bool zero_init,
                            int hidden = 300) {
        AgentParams a;
        a.sparsity_dim = sparsity_dim;
        if (zero_init) {
            a.actor = make_mlp(LayerEmbedding::kDim, hidden, nullptr);
            a.critic = make_mlp(sparsity_dim, hidden, nullptr);
        } else {
            Rng rng(mix_seed(seed, 0x6167656e74ULL));
            a.actor = make_mlp(LayerEmbedding::kDim, hidden, &rng);
            a.critic = make_mlp(sparsity_dim, hidden, &rng);
        }
        return a;
    }
};

// Sigmoid-bounded sparsity, clipped to [0, s_max].
inline Real actor_forward(const AgentParams& agent, const LayerEmbedding& e, Real s_max = 0.8,
                          MlpCache* cache = nullptr) {
    const Real raw = mlp_forward(agent.actor, e.to_vector(), cache);
    const Real sg = 1.0 / (1.0 + std::exp(-raw));
    return std::min(sg, s_max);
}

// Eq-style search loss: mean squared error between the measured target and
// the critic prediction, scaled by the natural log of the candidate's FLOPs.
inline Real compression_loss(Real y, Real critic_out, Real total_flops) {
    if (total_flops < 1.0) {
        throw std::invalid_argument("total_flops must be >= 1 (log domain)");
    }
    const Real err = y - critic_out;
    return err * err * std::log(total_flops);
}

// ---------------------------------------------------------------------------
// The search.
// ---------------------------------------------------------------------------

struct SearchConfig {
    int iters = 100;
    std::uint64_t seed = 0;
    Real s_max = 0.8;
    Real sigma0 = 0.3;       // exploration noise, decays linearly to 0
    Real nudge_step = 0.05;  // deterministic budget-enforcement bump
    Real agent_lr = 1e-3;
    int agent_hidden = 300;
    bool zero_init_agent = false;
    std::vector<Real> discrete_levels;  // when set, actions snap to this grid
};

struct TraceRow {
    int iteration = 0;
    Real loss = 0.0;  // compression_loss of the iteration
    Real val_accuracy = 0.0;
    std::uint64_t flops = 0;
    bool feasible = true;  // proposal met the budget before any nudging
};

struct SearchResult {
    SparsityVector best_s;
    ModelParams best_params;
    Real best_val_ce = std::numeric_limits<Real>::infinity();
    Real best_val_acc = 0.0;
    std::uint64_t best_flops = 0;
    std::vector<TraceRow> trace;
    AgentParams agent{};
};

namespace detail {

inline Real snap_to_grid(Real s, const std::vector<Real>& levels) {
    Real best = levels.front();
    Real best_d = std::abs(s - best);
    for (Real l : levels) {
        const Real d = std::abs(s - l);
        if (d < best_d) {
            best_d = d;
            best = l;
        }
    }
    return best;
}

// Next level above s, or s when already at the top.
inline Real grid_step_up(Real s, const std::vector<Real>& levels) {
    Real best = s;
    Real best_d = std::numeric_limits<Real>::infinity();
    for (Real l : levels) {
        if (l > s + 1e-12 && l - s < best_d) {
            best_d = l - s;
            best = l;
        }
    }
    return best;
}

}  // namespace detail

// Reinforcement-learning compression search. Each iteration walks the
// prunable layers, embeds each one under the partially pruned spec, lets the
// actor (plus decaying exploration noise) pick a sparsity, prunes, then
// measures the candidate on the held-out batch. Candidates over budget are
// nudged up by a fixed schedule until feasible. The actor and critic minimize
// compression_loss with Adam; the best candidate by validation cross-entropy
// is returned. Deterministic for a fixed seed.
inline SearchResult search(const ModelParams& base, const model::TrainingBatch& held_out,
                           const CompressionBudget& budget, const SearchConfig& cfg = {}) {
    budget.validate();
    if (cfg.iters < 1) throw std::invalid_argument("iters must be >= 1");
    if (held_out.empty()) throw std::invalid_argument("empty held-out batch");
    const auto layers = prunable_layers(base.spec);
    const std::size_t P = layers.size();
    const Real cap = cfg.discrete_levels.empty()
                         ? cfg.s_max
                         : *std::max_element(cfg.discrete_levels.begin(),
                                             cfg.discrete_levels.end());

    // feasibility: even maximal pruning must fit the budget
    {
        SparsityVector all_cap;
        all_cap.s.assign(P, cap);
        const std::uint64_t floor_flops =
            model::count_flops(prune_spec(base.spec, all_cap)).total;
        if (static_cast<Real>(floor_flops) > budget.max_flops()) {
            throw std::runtime_error("infeasible budget");
        }
    }

    AgentParams agent = AgentParams::make(static_cast<int>(P), cfg.seed, cfg.zero_init_agent,
                                          cfg.agent_hidden);
    model::AdamState actor_adam = model::AdamState::make(agent.actor);
    model::AdamState critic_adam = model::AdamState::make(agent.critic);
    Rng noise(mix_seed(cfg.seed, 0x736561726368ULL));

    SearchResult result;
    const std::uint64_t N = budget.baseline_flops;

    for (int it = 0; it < cfg.iters; ++it) {
        const Real sigma =
            cfg.iters > 0 ? cfg.sigma0 * (1.0 - static_cast<Real>(it) / cfg.iters) : 0.0;

        // walk the layers with the executed (noisy) actions
        std::vector<MlpCache> actor_caches(P);
        std::vector<Real> s_det(P);
        SparsityVector s_exec;
        s_exec.s.resize(P);
        ModelSpec cur = base.spec;
        std::uint64_t reduced = 0;
        for (std::size_t i = 0; i < P; ++i) {
            const LayerEmbedding e = layer_embedding(cur, i, N, reduced);
            s_det[i] = actor_forward(agent, e, cfg.s_max, &actor_caches[i]);
            Real s = s_det[i];
            if (sigma > 0.0) s += noise.normal(0.0, sigma);
            s = std::clamp(s, 0.0, cfg.s_max);
            if (!cfg.discrete_levels.empty()) s = detail::snap_to_grid(s, cfg.discrete_levels);
            s_exec.s[i] = s;
            cur = prune_spec_layer(cur, i, s);
            reduced = N - model::count_flops(cur).total;
        }

        // budget enforcement: bump every ratio by the schedule until feasible
        bool feasible = static_cast<Real>(model::count_flops(cur).total) <= budget.max_flops();
        SparsityVector s_final = s_exec;
        int guard = 0;
        while (static_cast<Real>(model::count_flops(prune_spec(base.spec, s_final)).total) >
               budget.max_flops()) {
            bool changed = false;
            for (std::size_t i = 0; i < P; ++i) {
                const Real before = s_final.s[i];
                s_final.s[i] = cfg.discrete_levels.empty()
                                   ? std::min(cap, s_final.s[i] + cfg.nudge_step)
                                   : detail::grid_step_up(s_final.s[i], cfg.discrete_levels);
                changed = changed || s_final.s[i] != before;
            }
            if (!changed || ++guard > 1000) throw std::runtime_error("infeasible budget");
        }

        const ModelParams candidate = prune_model(base, s_final);
        const std::uint64_t cand_flops = model::count_flops(candidate.spec).total;
        const Real y = model::batch_loss(candidate, held_out);
        const Real acc = model::batch_accuracy(candidate, held_out);
        if (!std::isfinite(y)) throw std::runtime_error("non-finite candidate loss");

        // agent update on the differentiable path (critic of the noiseless
        // actor actions)
        MlpCache critic_cache;
        const Real c_pred = mlp_forward(agent.critic, s_det, &critic_cache);
        const Real loss = compression_loss(y, c_pred, static_cast<Real>(cand_flops));
        const Real dpred = -2.0 * (y - c_pred) * std::log(static_cast<Real>(cand_flops));
        TensorSet critic_g = model::zeros_like(agent.critic);
        std::vector<Real> ds;
        mlp_backward(agent.critic, critic_cache, dpred, critic_g, &ds);
        TensorSet actor_g = model::zeros_like(agent.actor);
        for (std::size_t i = 0; i < P; ++i) {
            // clip at s_max kills the gradient; otherwise chain the sigmoid
            const Real raw_sig = s_det[i];
            if (raw_sig >= cfg.s_max) continue;
            const Real dsig = ds[i] * raw_sig * (1.0 - raw_sig);
            mlp_backward(agent.actor, actor_caches[i], dsig, actor_g);
        }
        model::adam_step(agent.critic, critic_g, critic_adam, cfg.agent_lr);
        model::adam_step(agent.actor, actor_g, actor_adam, cfg.agent_lr);

        result.trace.push_back({it, loss, acc, cand_flops, feasible});

        const bool better =
            y < result.best_val_ce ||
            (y == result.best_val_ce && cand_flops < result.best_flops);
        if (better) {
            result.best_val_ce = y;
            result.best_val_acc = acc;
            result.best_flops = cand_flops;
            result.best_s = s_final;
            result.best_params = candidate;
        }
    }
    result.agent = std::move(agent);
    return result;
}

// Prunes per the final sparsity vector and optionally fine-tunes the
// surviving weights (default: none, surviving weights bit-equal).
inline ModelParams finalize(const ModelParams& base, const SparsityVector& s,
                            const model::TrainingBatch& dataset, int fine_tune_epochs = 0,
                            Real lr = 1e-3, std::uint64_t seed = 0) {
    ModelParams pruned = prune_model(base, s);
    if (fine_tune_epochs <= 0) return pruned;
    model::TrainHyper hyper;
    hyper.lr = lr;
    hyper.epochs = fine_tune_epochs;
    hyper.seed = seed;
    return model::fine_tune(std::move(pruned), dataset, hyper);
}

}  // namespace suds::compress
