#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "suds/common.hpp"
#include "suds/signal.hpp"

namespace suds::model {

struct ConvLayerSpec {
    int kernel = 3;   // odd tap count along the flat feature axis
    int filters = 1;  // output channels
};

// Structural description of the hybrid classifier. The window's feature
// vector and the previous window's activation vector are concatenated into a
// flat axis of input_len() positions; the CNN branch convolves along it and
// the RNN branch attends over it position by position.
struct ModelSpec {
    int feature_dim = 81;  // 9 channels x (4 stats + 5 ecdf) by default
    std::vector<ConvLayerSpec> conv{{3, 128}, {5, 256}, {7, 512}};
    int se_reduction = 4;
    int se_hidden = 0;  // derived once from the unpruned filter count; kept fixed under pruning
    int lstm_cells = 50;
    std::vector<int> dense{250, 250, 250};
    int num_classes = 10;

    int cnn_out_dim() const { return conv.back().filters; }
    int activation_dim() const { return cnn_out_dim() + lstm_cells; }
    int input_len() const { return feature_dim + activation_dim(); }

    void normalize() {
        if (se_hidden <= 0) se_hidden = std::max(1, cnn_out_dim() / se_reduction);
    }

    void validate() const {
        if (feature_dim < 1) throw std::invalid_argument("feature_dim must be >= 1");
        if (conv.empty()) throw std::invalid_argument("need at least one conv layer");
        for (const auto& c : conv) {
            if (c.filters < 1) throw std::invalid_argument("conv filters must be >= 1");
            if (c.kernel < 1 || c.kernel % 2 == 0) {
                throw std::invalid_argument("conv kernel must be odd and >= 1");
            }
        }
        if (se_hidden < 1) throw std::invalid_argument("se_hidden must be >= 1 (call normalize)");
        if (lstm_cells < 1) throw std::invalid_argument("lstm_cells must be >= 1");
        for (int d : dense) {
            if (d < 1) throw std::invalid_argument("dense widths must be >= 1");
        }
        if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
    }

    bool operator==(const ModelSpec& o) const {
        if (feature_dim != o.feature_dim || se_reduction != o.se_reduction ||
            se_hidden != o.se_hidden || lstm_cells != o.lstm_cells || dense != o.dense ||
            num_classes != o.num_classes || conv.size() != o.conv.size()) {
            return false;
        }
        for (std::size_t i = 0; i < conv.size(); ++i) {
            if (conv[i].kernel != o.conv[i].kernel || conv[i].filters != o.conv[i].filters) {
                return false;
            }
        }
        return true;
    }
};

struct Tensor {
    std::vector<int> shape;
    std::vector<Real> v;

    static Tensor zeros(std::vector<int> s) {
        Tensor t;
        t.shape = std::move(s);
        std::size_t n = 1;
        for (int d : t.shape) n *= static_cast<std::size_t>(d);
        t.v.assign(n, 0.0);
        return t;
    }
    std::size_t size() const { return v.size(); }
};

struct NamedTensor {
    std::string name;
    Tensor t;
};

struct TensorSet {
    std::vector<NamedTensor> items;

    Tensor& at(std::string_view name) {
        for (auto& it : items) {
            if (it.name == name) return it.t;
        }
        throw std::out_of_range("no tensor named " + std::string(name));
    }
    const Tensor& at(std::string_view name) const {
        return const_cast<TensorSet*>(this)->at(name);
    }
};

inline TensorSet zeros_like(const TensorSet& src) {
    TensorSet out;
    out.items.reserve(src.items.size());
    for (const auto& it : src.items) {
        out.items.push_back({it.name, Tensor::zeros(it.t.shape)});
    }
    return out;
}

// Tensor names and shapes in declaration order. LSTM gate rows are stacked
// i, f, g, o; dense weights are row-major (out x in).
inline std::vector<std::pair<std::string, std::vector<int>>> tensor_layout(const ModelSpec& sp) {
    std::vector<std::pair<std::string, std::vector<int>>> out;
    int in_ch = 1;
    for (std::size_t l = 0; l < sp.conv.size(); ++l) {
        const auto& c = sp.conv[l];
        out.push_back({"conv" + std::to_string(l) + ".w", {c.filters, in_ch, c.kernel}});
        out.push_back({"conv" + std::to_string(l) + ".b", {c.filters}});
        in_ch = c.filters;
    }
    const int C = sp.cnn_out_dim();
    const int r = sp.se_hidden;
    out.push_back({"se.w1", {r, C}});
    out.push_back({"se.b1", {r}});
    out.push_back({"se.w2", {C, r}});
    out.push_back({"se.b2", {C}});
    out.push_back({"attn.wq", {1}});
    out.push_back({"attn.wk", {1}});
    out.push_back({"attn.wv", {1}});
    const int H = sp.lstm_cells;
    out.push_back({"lstm.wx", {4 * H, 1}});
    out.push_back({"lstm.wh", {4 * H, H}});
    out.push_back({"lstm.b", {4 * H}});
    int in = sp.activation_dim();
    for (std::size_t j = 0; j < sp.dense.size(); ++j) {
        out.push_back({"dense" + std::to_string(j) + ".w", {sp.dense[j], in}});
        out.push_back({"dense" + std::to_string(j) + ".b", {sp.dense[j]}});
        in = sp.dense[j];
    }
    out.push_back({"head.w", {sp.num_classes, in}});
    out.push_back({"head.b", {sp.num_classes}});
    return out;
}

struct ModelParams {
    ModelSpec spec;
    TensorSet w;
    int version = 1;
};

namespace detail {

inline bool is_bias_name(const std::string& name) {
    const std::size_t dot = name.rfind('.');
    return dot != std::string::npos && dot + 1 < name.size() && name[dot + 1] == 'b';
}

inline std::size_t fan_in_of(const std::string& name, const std::vector<int>& shape,
                             const ModelSpec& sp) {
    if (is_bias_name(name) || name.starts_with("attn.")) return 1;
    if (name.starts_with("conv")) {
        return static_cast<std::size_t>(shape[1]) * static_cast<std::size_t>(shape[2]);
    }
    if (name.starts_with("lstm.")) return static_cast<std::size_t>(1 + sp.lstm_cells);
    return static_cast<std::size_t>(shape[1]);  // se / dense / head: out x in
}

inline void check_finite(const std::vector<Real>& v, const std::string& stage) {
    for (Real x : v) {
        if (!std::isfinite(x)) {
            throw std::runtime_error("numeric overflow in " + stage);
        }
    }
}

inline Real sigmoid(Real x) { return 1.0 / (1.0 + std::exp(-x)); }

// Stable softmax: shift by max, exponentiate, normalize by multiplying with
// the reciprocal of the sum.
inline void softmax_inplace(Real* x, std::size_t n) {
    Real m = x[0];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
    Real sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - m);
        sum += x[i];
    }
    const Real inv = 1.0 / sum;
    for (std::size_t i = 0; i < n; ++i) x[i] *= inv;
}

}  // namespace detail

// Seeded uniform fan-in init: weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
// biases zero. Same seed gives bit-identical parameters.
inline ModelParams init_params(ModelSpec spec, std::uint64_t seed) {
    spec.normalize();
    spec.validate();
    ModelParams p;
    p.spec = spec;
    Rng rng(mix_seed(seed, 0x6d6f64656cULL));
    for (auto& [name, shape] : tensor_layout(spec)) {
        Tensor t = Tensor::zeros(shape);
        if (!detail::is_bias_name(name)) {
            const Real a =
                1.0 / std::sqrt(static_cast<Real>(detail::fan_in_of(name, shape, spec)));
            for (Real& x : t.v) x = rng.uniform(-a, a);
        }
        p.w.items.push_back({name, std::move(t)});
    }
    return p;
}

// ---------------------------------------------------------------------------
// Layer operations. A FeatureMap is channels x positions, row-major.
// ---------------------------------------------------------------------------

struct FeatureMap {
    int channels = 0;
    int positions = 0;
    std::vector<Real> v;  // v[c * positions + p]

    static FeatureMap zeros(int channels, int positions) {
        FeatureMap f;
        f.channels = channels;
        f.positions = positions;
        f.v.assign(static_cast<std::size_t>(channels) * positions, 0.0);
        return f;
    }
    Real& at(int c, int p) { return v[static_cast<std::size_t>(c) * positions + p]; }
    Real at(int c, int p) const { return v[static_cast<std::size_t>(c) * positions + p]; }
};

// 1-D convolution along the position axis (zero-extended same padding),
// bias add, ReLU. Weights are {filters, in_channels, kernel}.
inline FeatureMap conv_block(const FeatureMap& in, const Tensor& w, const Tensor& b) {
    if (w.shape.size() != 3 || w.shape[1] != in.channels) {
        throw std::invalid_argument(
            "conv shape mismatch: expected in_channels " +
            std::to_string(w.shape.size() == 3 ? w.shape[1] : -1) + ", got " +
            std::to_string(in.channels));
    }
    const int filters = w.shape[0];
    const int kernel = w.shape[2];
    if (static_cast<int>(b.size()) != filters) {
        throw std::invalid_argument("conv bias mismatch: expected " + std::to_string(filters) +
                                    ", got " + std::to_string(b.size()));
    }
    const int D = in.positions;
    const int off = (kernel - 1) / 2;
    FeatureMap out = FeatureMap::zeros(filters, D);
    for (int f = 0; f < filters; ++f) {
        for (int p = 0; p < D; ++p) {
            Real acc = 0.0;
            for (int c = 0; c < in.channels; ++c) {
                const Real* wrow = &w.v[(static_cast<std::size_t>(f) * in.channels + c) * kernel];
                const Real* xrow = &in.v[static_cast<std::size_t>(c) * D];
                for (int t = 0; t < kernel; ++t) {
                    const int src = p + t - off;
                    if (src >= 0 && src < D) acc += wrow[t] * xrow[src];
                }
            }
            acc += b.v[static_cast<std::size_t>(f)];
            out.at(f, p) = acc > 0.0 ? acc : 0.0;
        }
    }
    return out;
}

struct SqueezeExciteCache {
    std::vector<Real> m;  // channel means
    std::vector<Real> u;  // hidden activations (post-ReLU)
    std::vector<Real> g;  // sigmoid gates
};

// Global average per channel -> bottleneck dense (ReLU) -> expand dense
// (sigmoid) -> per-channel rescale of the input map.
inline FeatureMap squeeze_excite(const FeatureMap& in, const Tensor& w1, const Tensor& b1,
                                 const Tensor& w2, const Tensor& b2,
                                 SqueezeExciteCache* cache = nullptr) {
    const int C = in.channels;
    const int D = in.positions;
    if (w1.shape.size() != 2 || w1.shape[1] != C || w2.shape.size() != 2 || w2.shape[0] != C ||
        w1.shape[0] != w2.shape[1]) {
        throw std::invalid_argument("squeeze-excite shape mismatch: channels " +
                                    std::to_string(C));
    }
    const int r = w1.shape[0];
    const Real invD = 1.0 / static_cast<Real>(D);
    std::vector<Real> m(static_cast<std::size_t>(C));
    for (int c = 0; c < C; ++c) {
        Real s = 0.0;
        for (int p = 0; p < D; ++p) s += in.at(c, p);
        m[static_cast<std::size_t>(c)] = s * invD;
    }
    std::vector<Real> u(static_cast<std::size_t>(r));
    for (int j = 0; j < r; ++j) {
        Real acc = 0.0;
        for (int c = 0; c < C; ++c) acc += w1.v[static_cast<std::size_t>(j) * C + c] * m[c];
        acc += b1.v[static_cast<std::size_t>(j)];
        u[static_cast<std::size_t>(j)] = acc > 0.0 ? acc : 0.0;
    }
    std::vector<Real> g(static_cast<std::size_t>(C));
    for (int c = 0; c < C; ++c) {
        Real acc = 0.0;
        for (int j = 0; j < r; ++j) acc += w2.v[static_cast<std::size_t>(c) * r + j] * u[j];
        acc += b2.v[static_cast<std::size_t>(c)];
        g[static_cast<std::size_t>(c)] = detail::sigmoid(acc);
    }
    FeatureMap out = FeatureMap::zeros(C, D);
    for (int c = 0; c < C; ++c) {
        for (int p = 0; p < D; ++p) out.at(c, p) = in.at(c, p) * g[static_cast<std::size_t>(c)];
    }
    if (cache) {
        cache->m = std::move(m);
        cache->u = std::move(u);
        cache->g = std::move(g);
    }
    return out;
}

struct AttentionCache {
    std::vector<Real> q, k, v;
    std::vector<Real> w;  // row-softmaxed weights, n x n
};

// Scaled dot-product self-attention over a scalar sequence with learned
// scalar query/key/value projections; each output position is the
// attention-weighted mix of the value projections. Attention weights per
// position sum to 1.
inline std::vector<Real> self_attention(const std::vector<Real>& seq, Real wq, Real wk, Real wv,
                                        AttentionCache* cache = nullptr) {
    if (seq.empty()) throw std::invalid_argument("self_attention: empty sequence");
    const std::size_t n = seq.size();
    std::vector<Real> q(n), k(n), v(n);
    for (std::size_t i = 0; i < n; ++i) {
        q[i] = wq * seq[i];
        k[i] = wk * seq[i];
        v[i] = wv * seq[i];
    }
    const Real inv_sqrt_d = 1.0;  // projection dim is 1
    std::vector<Real> w(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        Real* row = &w[i * n];
        for (std::size_t j = 0; j < n; ++j) row[j] = (q[i] * k[j]) * inv_sqrt_d;
        detail::softmax_inplace(row, n);
    }
    std::vector<Real> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        Real acc = 0.0;
        const Real* row = &w[i * n];
        for (std::size_t j = 0; j < n; ++j) acc += row[j] * v[j];
        out[i] = acc;
    }
    if (cache) {
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->w = std::move(w);
    }
    return out;
}

// Standard LSTM cell update. Weights: wx {4H, in_dim}, wh {4H, H}, b {4H},
// gate rows stacked i, f, g, o. h and c are updated in place; gates_out, when
// given, receives the 4H post-activation gate values.
inline void lstm_step(const std::vector<Real>& x, const Tensor& wx, const Tensor& wh,
                      const Tensor& b, std::vector<Real>& h, std::vector<Real>& c,
                      Real* gates_out = nullptr) {
    const int H = static_cast<int>(h.size());
    const int in_dim = wx.shape.size() == 2 ? wx.shape[1] : 1;
    if (wx.shape[0] != 4 * H || static_cast<int>(x.size()) != in_dim ||
        static_cast<int>(c.size()) != H) {
        throw std::invalid_argument("lstm shape mismatch: expected x dim " +
                                    std::to_string(in_dim) + ", cells " + std::to_string(H));
    }
    std::vector<Real> pre(static_cast<std::size_t>(4) * H);
    for (int gi = 0; gi < 4 * H; ++gi) {
        Real acc = 0.0;
        const Real* wxrow = &wx.v[static_cast<std::size_t>(gi) * in_dim];
        for (int d = 0; d < in_dim; ++d) acc += wxrow[d] * x[static_cast<std::size_t>(d)];
        const Real* whrow = &wh.v[static_cast<std::size_t>(gi) * H];
        for (int j = 0; j < H; ++j) acc += whrow[j] * h[static_cast<std::size_t>(j)];
        acc += b.v[static_cast<std::size_t>(gi)];
        pre[static_cast<std::size_t>(gi)] = acc;
    }
    for (int j = 0; j < H; ++j) {
        const Real ig = detail::sigmoid(pre[static_cast<std::size_t>(j)]);
        const Real fg = detail::sigmoid(pre[static_cast<std::size_t>(H + j)]);
        const Real gg = std::tanh(pre[static_cast<std::size_t>(2 * H + j)]);
        const Real og = detail::sigmoid(pre[static_cast<std::size_t>(3 * H + j)]);
        const Real cn = fg * c[static_cast<std::size_t>(j)] + ig * gg;
        c[static_cast<std::size_t>(j)] = cn;
        h[static_cast<std::size_t>(j)] = og * std::tanh(cn);
        if (gates_out) {
            gates_out[j] = ig;
            gates_out[H + j] = fg;
            gates_out[2 * H + j] = gg;
            gates_out[3 * H + j] = og;
        }
    }
}

// ---------------------------------------------------------------------------
// Full window forward pass.
// ---------------------------------------------------------------------------

// Per-window classifier output; probabilities sum to 1.
struct StepProbs {
    std::vector<Real> probs;

    int argmax() const {
        int best = 0;
        for (std::size_t i = 1; i < probs.size(); ++i) {
            if (probs[i] > probs[best]) best = static_cast<int>(i);
        }
        return best;
    }
};

// Everything carried from one window to the next: the activation vector
// (CNN output ++ LSTM hidden) that joins the next window's input, plus the
// LSTM cell state. Reset to zero at every event boundary.
struct RecurrentState {
    std::vector<Real> activation;
    std::vector<Real> h;
    std::vector<Real> c;

    static RecurrentState initial(const ModelSpec& sp) {
        RecurrentState s;
        s.activation.assign(static_cast<std::size_t>(sp.activation_dim()), 0.0);
        s.h.assign(static_cast<std::size_t>(sp.lstm_cells), 0.0);
        s.c.assign(static_cast<std::size_t>(sp.lstm_cells), 0.0);
        return s;
    }
};

// Intermediates recorded during a window's forward pass, consumed by the
// backward pass in model_grad.hpp.
struct WindowCache {
    std::vector<Real> input;                  // D
    std::vector<std::vector<Real>> conv_act;  // per layer, filters*D post-relu
    std::vector<Real> se_m, se_u, se_g;       // C, r, C
    std::vector<Real> cnn_out;                // C
    std::vector<Real> att_q, att_k, att_v;    // D
    std::vector<Real> att_w;                  // D*D row-softmaxed weights
    std::vector<Real> att_out;                // D
    std::vector<Real> lstm_h, lstm_c;         // (D+1)*H, row 0 = incoming state
    std::vector<Real> lstm_gates;             // D*4H post-activation, i f g o
    std::vector<Real> act_vec;                // A
    std::vector<std::vector<Real>> head_in;   // input of each dense layer + classifier
    std::vector<Real> probs;                  // num_classes
};

// One window of the hybrid network. input = concat(features, prev
// activation); CNN branch: conv stack -> squeeze-excite -> average pool; RNN
// branch: self-attention -> LSTM over the attended positions. Their outputs
// concatenate into the new activation vector, and the dense head maps it to
// step probabilities. Pure: equal inputs give bit-equal outputs.
inline std::pair<StepProbs, RecurrentState> forward(const ModelParams& params,
                                                    const signal::FeatureVector& features,
                                                    const RecurrentState& prev,
                                                    WindowCache* cache = nullptr) {
    const ModelSpec& sp = params.spec;
    const int F = sp.feature_dim;
    const int A = sp.activation_dim();
    const int D = sp.input_len();
    const int H = sp.lstm_cells;

    if (static_cast<int>(features.values.size()) != F) {
        throw std::invalid_argument("feature dim mismatch: expected " + std::to_string(F) +
                                    ", got " + std::to_string(features.values.size()));
    }
    if (static_cast<int>(prev.activation.size()) != A || static_cast<int>(prev.h.size()) != H) {
        throw std::invalid_argument("activation state dim mismatch: expected " +
                                    std::to_string(A) + "+" + std::to_string(H));
    }

    std::vector<Real> z;
    z.reserve(static_cast<std::size_t>(D));
    z.insert(z.end(), features.values.begin(), features.values.end());
    z.insert(z.end(), prev.activation.begin(), prev.activation.end());

    // CNN branch
    FeatureMap fmap;
    fmap.channels = 1;
    fmap.positions = D;
    fmap.v = z;
    std::vector<std::vector<Real>> conv_acts;
    for (std::size_t l = 0; l < sp.conv.size(); ++l) {
        fmap = conv_block(fmap, params.w.at("conv" + std::to_string(l) + ".w"),
                          params.w.at("conv" + std::to_string(l) + ".b"));
        detail::check_finite(fmap.v, "conv" + std::to_string(l));
        conv_acts.push_back(fmap.v);
    }
    SqueezeExciteCache se_cache;
    FeatureMap se_map = squeeze_excite(fmap, params.w.at("se.w1"), params.w.at("se.b1"),
                                       params.w.at("se.w2"), params.w.at("se.b2"), &se_cache);
    detail::check_finite(se_map.v, "squeeze_excite");

    const int C = se_map.channels;
    const Real invD = 1.0 / static_cast<Real>(D);
    std::vector<Real> cnn_out(static_cast<std::size_t>(C), 0.0);
    for (int c = 0; c < C; ++c) {
        Real s = 0.0;
        for (int p = 0; p < D; ++p) s += se_map.at(c, p);
        cnn_out[static_cast<std::size_t>(c)] = s * invD;
    }
    detail::check_finite(cnn_out, "avg_pool");

    // RNN branch
    AttentionCache att_cache;
    const std::vector<Real> att =
        self_attention(z, params.w.at("attn.wq").v[0], params.w.at("attn.wk").v[0],
                       params.w.at("attn.wv").v[0], cache ? &att_cache : nullptr);
    detail::check_finite(att, "attention");

    const Tensor& wx = params.w.at("lstm.wx");
    const Tensor& wh = params.w.at("lstm.wh");
    const Tensor& lb = params.w.at("lstm.b");
    std::vector<Real> h = prev.h;
    std::vector<Real> cst = prev.c;
    std::vector<Real> h_hist, c_hist, gate_hist;
    if (cache) {
        h_hist.reserve(static_cast<std::size_t>(D + 1) * H);
        c_hist.reserve(static_cast<std::size_t>(D + 1) * H);
        gate_hist.assign(static_cast<std::size_t>(D) * 4 * H, 0.0);
        h_hist.insert(h_hist.end(), h.begin(), h.end());
        c_hist.insert(c_hist.end(), cst.begin(), cst.end());
    }
    std::vector<Real> xin(1);
    for (int p = 0; p < D; ++p) {
        xin[0] = att[static_cast<std::size_t>(p)];
        lstm_step(xin, wx, wh, lb, h, cst,
                  cache ? &gate_hist[static_cast<std::size_t>(p) * 4 * H] : nullptr);
        if (cache) {
            h_hist.insert(h_hist.end(), h.begin(), h.end());
            c_hist.insert(c_hist.end(), cst.begin(), cst.end());
        }
    }
    detail::check_finite(h, "lstm");

    // activation vector and dense head
    std::vector<Real> act_vec;
    act_vec.reserve(static_cast<std::size_t>(A));
    act_vec.insert(act_vec.end(), cnn_out.begin(), cnn_out.end());
    act_vec.insert(act_vec.end(), h.begin(), h.end());

    std::vector<std::vector<Real>> head_in;
    std::vector<Real> y = act_vec;
    for (std::size_t j = 0; j < sp.dense.size(); ++j) {
        const Tensor& dw = params.w.at("dense" + std::to_string(j) + ".w");
        const Tensor& db = params.w.at("dense" + std::to_string(j) + ".b");
        const int out_n = sp.dense[j];
        const int in_n = static_cast<int>(y.size());
        if (cache) head_in.push_back(y);
        std::vector<Real> nxt(static_cast<std::size_t>(out_n));
        for (int o = 0; o < out_n; ++o) {
            Real acc = 0.0;
            const Real* row = &dw.v[static_cast<std::size_t>(o) * in_n];
            for (int i = 0; i < in_n; ++i) acc += row[i] * y[static_cast<std::size_t>(i)];
            acc += db.v[static_cast<std::size_t>(o)];
            nxt[static_cast<std::size_t>(o)] = acc > 0.0 ? acc : 0.0;
        }
        detail::check_finite(nxt, "dense" + std::to_string(j));
        y = std::move(nxt);
    }
    if (cache) head_in.push_back(y);
    const Tensor& hw = params.w.at("head.w");
    const Tensor& hb = params.w.at("head.b");
    const int in_n = static_cast<int>(y.size());
    std::vector<Real> logits(static_cast<std::size_t>(sp.num_classes));
    for (int o = 0; o < sp.num_classes; ++o) {
        Real acc = 0.0;
        const Real* row = &hw.v[static_cast<std::size_t>(o) * in_n];
        for (int i = 0; i < in_n; ++i) acc += row[i] * y[static_cast<std::size_t>(i)];
        acc += hb.v[static_cast<std::size_t>(o)];
        logits[static_cast<std::size_t>(o)] = acc;
    }
    detail::check_finite(logits, "classifier");
    detail::softmax_inplace(logits.data(), logits.size());

    StepProbs probs{std::move(logits)};
    RecurrentState next;
    next.activation = act_vec;
    next.h = h;
    next.c = cst;

    if (cache) {
        cache->input = std::move(z);
        cache->conv_act = std::move(conv_acts);
        cache->se_m = std::move(se_cache.m);
        cache->se_u = std::move(se_cache.u);
        cache->se_g = std::move(se_cache.g);
        cache->cnn_out = std::move(cnn_out);
        cache->att_q = std::move(att_cache.q);
        cache->att_k = std::move(att_cache.k);
        cache->att_v = std::move(att_cache.v);
        cache->att_w = std::move(att_cache.w);
        cache->att_out = att;
        cache->lstm_h = std::move(h_hist);
        cache->lstm_c = std::move(c_hist);
        cache->lstm_gates = std::move(gate_hist);
        cache->act_vec = std::move(act_vec);
        cache->head_in = std::move(head_in);
        cache->probs = probs.probs;
    }
    return {std::move(probs), std::move(next)};
}

// Runs a whole event, threading the recurrent state from a zero initial
// state; equals folding forward() window by window.
inline std::vector<StepProbs> forward_sequence(const ModelParams& params,
                                               const std::vector<signal::FeatureVector>& xs) {
    RecurrentState st = RecurrentState::initial(params.spec);
    std::vector<StepProbs> out;
    out.reserve(xs.size());
    for (const auto& x : xs) {
        auto [p, next] = forward(params, x, st);
        out.push_back(std::move(p));
        st = std::move(next);
    }
    return out;
}

// ---------------------------------------------------------------------------
// FLOP accounting. One window forward pass, multiply-adds counted as 2 FLOPs.
// Counting conventions (mirrored by the instrumented test oracle):
//   * convolution uses zero-extended same padding, so every output position
//     costs kernel*in_ch MACs plus 1 bias add;
//   * dense-style layers cost 2*in*out + out;
//   * means cost n adds + 1 multiply by 1/n;
//   * softmax over n costs 3n (shift subs, sum adds, normalize muls);
//   * attention scores cost 2 muls each (q*k then scale); output rows are
//     MACs; projections cost 1 mul per position each;
//   * LSTM per step: 4 gates of (2 + 2H + 1 per cell) plus 3H for the cell
//     update and H for the output gate product;
//   * ReLU, sigmoid, tanh, exp, max and divisions are not multiply/adds and
//     count 0.
// ---------------------------------------------------------------------------

struct FlopsEntry {
    std::string name;
    std::uint64_t flops = 0;
};

struct FlopsTable {
    std::vector<FlopsEntry> layers;
    std::uint64_t total = 0;

    std::uint64_t at(std::string_view name) const {
        for (const auto& e : layers) {
            if (e.name == name) return e.flops;
        }
        throw std::out_of_range("no flops entry named " + std::string(name));
    }
};

inline FlopsTable count_flops(const ModelSpec& spec) {
    ModelSpec sp = spec;
    sp.normalize();
    sp.validate();
    const std::uint64_t D = static_cast<std::uint64_t>(sp.input_len());
    const std::uint64_t H = static_cast<std::uint64_t>(sp.lstm_cells);
    const std::uint64_t C = static_cast<std::uint64_t>(sp.cnn_out_dim());
    const std::uint64_t r = static_cast<std::uint64_t>(sp.se_hidden);

    FlopsTable t;
    std::uint64_t in_ch = 1;
    for (std::size_t l = 0; l < sp.conv.size(); ++l) {
        const std::uint64_t kf = static_cast<std::uint64_t>(sp.conv[l].kernel);
        const std::uint64_t f = static_cast<std::uint64_t>(sp.conv[l].filters);
        t.layers.push_back({"conv" + std::to_string(l), f * D * (2 * kf * in_ch + 1)});
        in_ch = f;
    }
    // squeeze (mean) + fc1 + fc2 + scale
    t.layers.push_back(
        {"squeeze_excite", C * (D + 1) + (2 * C * r + r) + (2 * r * C + C) + C * D});
    t.layers.push_back({"avg_pool", C * (D + 1)});
    // projections + scores (2 muls each) + row softmax (3D each) + output MACs
    t.layers.push_back({"attention", 3 * D + 7 * D * D});
    t.layers.push_back({"lstm", D * (8 * H * H + 16 * H)});
    std::uint64_t in = static_cast<std::uint64_t>(sp.activation_dim());
    for (std::size_t j = 0; j < sp.dense.size(); ++j) {
        const std::uint64_t out = static_cast<std::uint64_t>(sp.dense[j]);
        t.layers.push_back({"dense" + std::to_string(j), 2 * in * out + out});
        in = out;
    }
    const std::uint64_t nc = static_cast<std::uint64_t>(sp.num_classes);
    t.layers.push_back({"classifier", 2 * in * nc + nc + 3 * nc});
    for (const auto& e : t.layers) t.total += e.flops;
    return t;
}

// ---------------------------------------------------------------------------
// Labeled window sequences (one sequence per handwashing event).
// ---------------------------------------------------------------------------

struct LabeledSequence {
    std::vector<signal::FeatureVector> x;
    std::vector<int> y;  // class indices, 0-based

    void validate() const {
        if (x.size() != y.size()) {
            throw std::invalid_argument("sequence features and labels must align");
        }
    }
};

using TrainingBatch = std::vector<LabeledSequence>;

}  // namespace suds::model
