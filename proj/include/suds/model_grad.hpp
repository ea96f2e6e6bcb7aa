#pragma once

#include <algorithm>
#include <cmath>
#include <set>

#include "suds/model.hpp"

namespace suds::model {

inline Real cross_entropy(const StepProbs& p, int label) {
    if (label < 0 || label >= static_cast<int>(p.probs.size())) {
        throw std::invalid_argument("label out of range: " + std::to_string(label));
    }
    return -std::log(std::max(p.probs[static_cast<std::size_t>(label)], 1e-300));
}

// Mean cross-entropy over every window of every sequence.
inline Real batch_loss(const ModelParams& params, const TrainingBatch& batch) {
    Real total = 0.0;
    std::size_t windows = 0;
    for (const auto& seq : batch) {
        seq.validate();
        RecurrentState st = RecurrentState::initial(params.spec);
        for (std::size_t w = 0; w < seq.x.size(); ++w) {
            auto [p, next] = forward(params, seq.x[w], st);
            total += cross_entropy(p, seq.y[w]);
            st = std::move(next);
            ++windows;
        }
    }
    if (windows == 0) throw std::invalid_argument("empty batch");
    return total / static_cast<Real>(windows);
}

// Window-level accuracy over every sequence of the batch.
inline Real batch_accuracy(const ModelParams& params, const TrainingBatch& batch) {
    std::size_t correct = 0, total = 0;
    for (const auto& seq : batch) {
        seq.validate();
        const auto probs = forward_sequence(params, seq.x);
        for (std::size_t w = 0; w < probs.size(); ++w) {
            if (probs[w].argmax() == seq.y[w]) ++correct;
            ++total;
        }
    }
    if (total == 0) throw std::invalid_argument("empty batch");
    return static_cast<Real>(correct) / static_cast<Real>(total);
}

namespace detail {

// Backward pass of one window given the gradient flowing into its activation
// vector from the head and the next window, plus the LSTM state carries.
// Returns the gradient w.r.t. the previous activation vector and fills the
// incoming LSTM state gradients.
inline std::vector<Real> backward_window(const ModelParams& params, const WindowCache& cc,
                                         int label, Real scale,
                                         const std::vector<Real>& dact_from_next,
                                         std::vector<Real>& dh_carry, std::vector<Real>& dc_carry,
                                         TensorSet& g) {
    const ModelSpec& sp = params.spec;
    const int F = sp.feature_dim;
    const int A = sp.activation_dim();
    const int D = sp.input_len();
    const int H = sp.lstm_cells;
    const int C = sp.cnn_out_dim();
    const int r = sp.se_hidden;
    const Real invD = 1.0 / static_cast<Real>(D);

    // softmax + cross-entropy
    std::vector<Real> dy(cc.probs);
    for (Real& x : dy) x *= scale;
    dy[static_cast<std::size_t>(label)] -= scale;

    // classifier
    const Tensor& hw = params.w.at("head.w");
    Tensor& ghw = g.at("head.w");
    Tensor& ghb = g.at("head.b");
    const std::vector<Real>& hin = cc.head_in.back();
    const int hin_n = static_cast<int>(hin.size());
    std::vector<Real> dprev(static_cast<std::size_t>(hin_n), 0.0);
    for (int o = 0; o < sp.num_classes; ++o) {
        const Real d = dy[static_cast<std::size_t>(o)];
        ghb.v[static_cast<std::size_t>(o)] += d;
        Real* grow = &ghw.v[static_cast<std::size_t>(o) * hin_n];
        const Real* wrow = &hw.v[static_cast<std::size_t>(o) * hin_n];
        for (int i = 0; i < hin_n; ++i) {
            grow[i] += d * hin[static_cast<std::size_t>(i)];
            dprev[static_cast<std::size_t>(i)] += d * wrow[i];
        }
    }

    // dense stack, reverse order; relu mask is output > 0
    for (int j = static_cast<int>(sp.dense.size()) - 1; j >= 0; --j) {
        const std::vector<Real>& in = cc.head_in[static_cast<std::size_t>(j)];
        const std::vector<Real>& out = cc.head_in[static_cast<std::size_t>(j) + 1];
        const int out_n = static_cast<int>(out.size());
        const int in_n = static_cast<int>(in.size());
        const Tensor& dw = params.w.at("dense" + std::to_string(j) + ".w");
        Tensor& gdw = g.at("dense" + std::to_string(j) + ".w");
        Tensor& gdb = g.at("dense" + std::to_string(j) + ".b");
        std::vector<Real> dnext(static_cast<std::size_t>(in_n), 0.0);
        for (int o = 0; o < out_n; ++o) {
            if (out[static_cast<std::size_t>(o)] <= 0.0) continue;
            const Real d = dprev[static_cast<std::size_t>(o)];
            gdb.v[static_cast<std::size_t>(o)] += d;
            Real* grow = &gdw.v[static_cast<std::size_t>(o) * in_n];
            const Real* wrow = &dw.v[static_cast<std::size_t>(o) * in_n];
            for (int i = 0; i < in_n; ++i) {
                grow[i] += d * in[static_cast<std::size_t>(i)];
                dnext[static_cast<std::size_t>(i)] += d * wrow[i];
            }
        }
        dprev = std::move(dnext);
    }

    // dprev is now d(act_vec) from the head; add the next window's feedback
    std::vector<Real> dact = std::move(dprev);
    if (!dact_from_next.empty()) {
        for (int i = 0; i < A; ++i) dact[static_cast<std::size_t>(i)] += dact_from_next[static_cast<std::size_t>(i)];
    }
    std::vector<Real> dcnn_out(dact.begin(), dact.begin() + C);
    std::vector<Real> dh(dact.begin() + C, dact.end());
    for (int j = 0; j < H; ++j) dh[static_cast<std::size_t>(j)] += dh_carry[static_cast<std::size_t>(j)];
    std::vector<Real> dc = dc_carry;

    // LSTM backward through the D positions
    const Tensor& wx = params.w.at("lstm.wx");
    const Tensor& wh = params.w.at("lstm.wh");
    Tensor& gwx = g.at("lstm.wx");
    Tensor& gwh = g.at("lstm.wh");
    Tensor& glb = g.at("lstm.b");
    std::vector<Real> datt(static_cast<std::size_t>(D), 0.0);
    std::vector<Real> dpre(static_cast<std::size_t>(4) * H);
    for (int t = D - 1; t >= 0; --t) {
        const Real* gt = &cc.lstm_gates[static_cast<std::size_t>(t) * 4 * H];
        const Real* c_t = &cc.lstm_c[static_cast<std::size_t>(t + 1) * H];
        const Real* c_tm1 = &cc.lstm_c[static_cast<std::size_t>(t) * H];
        const Real* h_tm1 = &cc.lstm_h[static_cast<std::size_t>(t) * H];
        for (int j = 0; j < H; ++j) {
            const Real ig = gt[j];
            const Real fg = gt[H + j];
            const Real gg = gt[2 * H + j];
            const Real og = gt[3 * H + j];
            const Real tc = std::tanh(c_t[j]);
            const Real dhj = dh[static_cast<std::size_t>(j)];
            const Real dcj = dc[static_cast<std::size_t>(j)] + dhj * og * (1.0 - tc * tc);
            const Real d_i = dcj * gg;
            const Real d_f = dcj * c_tm1[j];
            const Real d_g = dcj * ig;
            const Real d_o = dhj * tc;
            dpre[static_cast<std::size_t>(j)] = d_i * ig * (1.0 - ig);
            dpre[static_cast<std::size_t>(H + j)] = d_f * fg * (1.0 - fg);
            dpre[static_cast<std::size_t>(2 * H + j)] = d_g * (1.0 - gg * gg);
            dpre[static_cast<std::size_t>(3 * H + j)] = d_o * og * (1.0 - og);
            dc[static_cast<std::size_t>(j)] = dcj * fg;
        }
        const Real x_t = cc.att_out[static_cast<std::size_t>(t)];
        Real dx = 0.0;
        std::fill(dh.begin(), dh.end(), 0.0);
        for (int gi = 0; gi < 4 * H; ++gi) {
            const Real d = dpre[static_cast<std::size_t>(gi)];
            if (d == 0.0) continue;
            gwx.v[static_cast<std::size_t>(gi)] += d * x_t;
            glb.v[static_cast<std::size_t>(gi)] += d;
            dx += d * wx.v[static_cast<std::size_t>(gi)];
            Real* gwrow = &gwh.v[static_cast<std::size_t>(gi) * H];
            const Real* wrow = &wh.v[static_cast<std::size_t>(gi) * H];
            for (int j = 0; j < H; ++j) {
                gwrow[j] += d * h_tm1[j];
                dh[static_cast<std::size_t>(j)] += d * wrow[j];
            }
        }
        datt[static_cast<std::size_t>(t)] = dx;
    }
    dh_carry = dh;  // gradient w.r.t. the incoming (previous window) h
    dc_carry = dc;

    // attention backward
    const Real wqv = params.w.at("attn.wq").v[0];
    const Real wkv = params.w.at("attn.wk").v[0];
    const Real wvv = params.w.at("attn.wv").v[0];
    const Real inv_sqrt_d = 1.0;
    std::vector<Real> dz(static_cast<std::size_t>(D), 0.0);
    std::vector<Real> dq(static_cast<std::size_t>(D), 0.0);
    std::vector<Real> dk(static_cast<std::size_t>(D), 0.0);
    std::vector<Real> dv(static_cast<std::size_t>(D), 0.0);
    for (int i = 0; i < D; ++i) {
        const Real douti = datt[static_cast<std::size_t>(i)];
        const Real* arow = &cc.att_w[static_cast<std::size_t>(i) * D];
        // dv and row-wise softmax backward
        Real dot = 0.0;
        for (int j = 0; j < D; ++j) {
            const Real da = douti * cc.att_v[static_cast<std::size_t>(j)];
            dot += arow[j] * da;
            dv[static_cast<std::size_t>(j)] += douti * arow[j];
        }
        Real dqi = 0.0;
        const Real qi = cc.att_q[static_cast<std::size_t>(i)];
        for (int j = 0; j < D; ++j) {
            const Real da = douti * cc.att_v[static_cast<std::size_t>(j)];
            const Real ds = arow[j] * (da - dot) * inv_sqrt_d;
            dqi += ds * cc.att_k[static_cast<std::size_t>(j)];
            dk[static_cast<std::size_t>(j)] += ds * qi;
        }
        dq[static_cast<std::size_t>(i)] = dqi;
    }
    Real gwq = 0.0, gwk = 0.0, gwv = 0.0;
    for (int i = 0; i < D; ++i) {
        const Real zi = cc.input[static_cast<std::size_t>(i)];
        gwq += dq[static_cast<std::size_t>(i)] * zi;
        gwk += dk[static_cast<std::size_t>(i)] * zi;
        gwv += dv[static_cast<std::size_t>(i)] * zi;
        dz[static_cast<std::size_t>(i)] += dq[static_cast<std::size_t>(i)] * wqv +
                                           dk[static_cast<std::size_t>(i)] * wkv +
                                           dv[static_cast<std::size_t>(i)] * wvv;
    }
    g.at("attn.wq").v[0] += gwq;
    g.at("attn.wk").v[0] += gwk;
    g.at("attn.wv").v[0] += gwv;

    // average pool backward into the squeeze-excite output
    std::vector<Real> dse(static_cast<std::size_t>(C) * D);
    for (int c = 0; c < C; ++c) {
        const Real d = dcnn_out[static_cast<std::size_t>(c)] * invD;
        for (int p = 0; p < D; ++p) dse[static_cast<std::size_t>(c) * D + p] = d;
    }

    // squeeze-excite backward
    const std::vector<Real>& xlast = cc.conv_act.back();
    const Tensor& w1 = params.w.at("se.w1");
    const Tensor& w2 = params.w.at("se.w2");
    Tensor& gw1 = g.at("se.w1");
    Tensor& gb1 = g.at("se.b1");
    Tensor& gw2 = g.at("se.w2");
    Tensor& gb2 = g.at("se.b2");
    std::vector<Real> dxlast(static_cast<std::size_t>(C) * D, 0.0);
    std::vector<Real> dgate(static_cast<std::size_t>(C), 0.0);
    for (int c = 0; c < C; ++c) {
        const Real gc = cc.se_g[static_cast<std::size_t>(c)];
        Real acc = 0.0;
        for (int p = 0; p < D; ++p) {
            const std::size_t idx = static_cast<std::size_t>(c) * D + p;
            dxlast[idx] += dse[idx] * gc;
            acc += dse[idx] * xlast[idx];
        }
        dgate[static_cast<std::size_t>(c)] = acc;
    }
    std::vector<Real> du(static_cast<std::size_t>(r), 0.0);
    for (int c = 0; c < C; ++c) {
        const Real gc = cc.se_g[static_cast<std::size_t>(c)];
        const Real de = dgate[static_cast<std::size_t>(c)] * gc * (1.0 - gc);
        gb2.v[static_cast<std::size_t>(c)] += de;
        Real* grow = &gw2.v[static_cast<std::size_t>(c) * r];
        const Real* wrow = &w2.v[static_cast<std::size_t>(c) * r];
        for (int j = 0; j < r; ++j) {
            grow[j] += de * cc.se_u[static_cast<std::size_t>(j)];
            du[static_cast<std::size_t>(j)] += de * wrow[j];
        }
    }
    std::vector<Real> dm(static_cast<std::size_t>(C), 0.0);
    for (int j = 0; j < r; ++j) {
        if (cc.se_u[static_cast<std::size_t>(j)] <= 0.0) continue;
        const Real d = du[static_cast<std::size_t>(j)];
        gb1.v[static_cast<std::size_t>(j)] += d;
        Real* grow = &gw1.v[static_cast<std::size_t>(j) * C];
        const Real* wrow = &w1.v[static_cast<std::size_t>(j) * C];
        for (int c = 0; c < C; ++c) {
            grow[c] += d * cc.se_m[static_cast<std::size_t>(c)];
            dm[static_cast<std::size_t>(c)] += d * wrow[c];
        }
    }
    for (int c = 0; c < C; ++c) {
        const Real d = dm[static_cast<std::size_t>(c)] * invD;
        for (int p = 0; p < D; ++p) dxlast[static_cast<std::size_t>(c) * D + p] += d;
    }

    // conv stack backward
    std::vector<Real> dact_l = std::move(dxlast);
    for (int l = static_cast<int>(sp.conv.size()) - 1; l >= 0; --l) {
        const auto& cl = sp.conv[static_cast<std::size_t>(l)];
        const int in_ch = l == 0 ? 1 : sp.conv[static_cast<std::size_t>(l - 1)].filters;
        const std::vector<Real>& act = cc.conv_act[static_cast<std::size_t>(l)];
        const std::vector<Real>& in =
            l == 0 ? cc.input : cc.conv_act[static_cast<std::size_t>(l - 1)];
        const Tensor& w = params.w.at("conv" + std::to_string(l) + ".w");
        Tensor& gw = g.at("conv" + std::to_string(l) + ".w");
        Tensor& gb = g.at("conv" + std::to_string(l) + ".b");
        const int off = (cl.kernel - 1) / 2;
        std::vector<Real> din(static_cast<std::size_t>(in_ch) * D, 0.0);
        for (int f = 0; f < cl.filters; ++f) {
            for (int p = 0; p < D; ++p) {
                if (act[static_cast<std::size_t>(f) * D + p] <= 0.0) continue;
                const Real d = dact_l[static_cast<std::size_t>(f) * D + p];
                if (d == 0.0) continue;
                gb.v[static_cast<std::size_t>(f)] += d;
                for (int c = 0; c < in_ch; ++c) {
                    const std::size_t wbase =
                        (static_cast<std::size_t>(f) * in_ch + c) * cl.kernel;
                    for (int t = 0; t < cl.kernel; ++t) {
                        const int src = p + t - off;
                        if (src < 0 || src >= D) continue;
                        gw.v[wbase + t] += d * in[static_cast<std::size_t>(c) * D + src];
                        din[static_cast<std::size_t>(c) * D + src] += d * w.v[wbase + t];
                    }
                }
            }
        }
        dact_l = std::move(din);
    }
    for (int i = 0; i < D; ++i) dz[static_cast<std::size_t>(i)] += dact_l[static_cast<std::size_t>(i)];

    // gradient w.r.t. the previous window's activation vector
    return std::vector<Real>(dz.begin() + F, dz.end());
}

}  // namespace detail

// Gradient of the mean cross-entropy over the batch, backpropagated through
// the window-to-window recurrence (activation vector and LSTM state) and
// truncated at event boundaries. Optionally reports the loss it derived.
inline TensorSet gradients(const ModelParams& params, const TrainingBatch& batch,
                           Real* loss_out = nullptr) {
    if (batch.empty()) throw std::invalid_argument("empty batch");
    std::size_t total_windows = 0;
    for (const auto& seq : batch) {
        seq.validate();
        total_windows += seq.x.size();
    }
    if (total_windows == 0) throw std::invalid_argument("empty batch");
    const Real scale = 1.0 / static_cast<Real>(total_windows);

    TensorSet g = zeros_like(params.w);
    const int H = params.spec.lstm_cells;
    Real loss = 0.0;
    for (const auto& seq : batch) {
        const std::size_t n = seq.x.size();
        std::vector<WindowCache> caches(n);
        RecurrentState st = RecurrentState::initial(params.spec);
        for (std::size_t w = 0; w < n; ++w) {
            auto [p, next] = forward(params, seq.x[w], st, &caches[w]);
            loss += cross_entropy(p, seq.y[w]) * scale;
            st = std::move(next);
        }
        std::vector<Real> dact_next;  // empty for the last window
        std::vector<Real> dh(static_cast<std::size_t>(H), 0.0);
        std::vector<Real> dc(static_cast<std::size_t>(H), 0.0);
        for (std::size_t w = n; w-- > 0;) {
            dact_next = detail::backward_window(params, caches[w], seq.y[w], scale, dact_next,
                                                dh, dc, g);
        }
    }
    if (loss_out) *loss_out = loss;
    return g;
}

struct AdamState {
    TensorSet m, v;
    long step = 0;

    static AdamState make(const TensorSet& like) { return {zeros_like(like), zeros_like(like), 0}; }
};

inline void adam_step(TensorSet& params, const TensorSet& grads, AdamState& st, Real lr,
                      Real beta1 = 0.9, Real beta2 = 0.999, Real eps = 1e-8) {
    ++st.step;
    const Real bc1 = 1.0 - std::pow(beta1, static_cast<Real>(st.step));
    const Real bc2 = 1.0 - std::pow(beta2, static_cast<Real>(st.step));
    for (std::size_t t = 0; t < params.items.size(); ++t) {
        auto& pv = params.items[t].t.v;
        const auto& gv = grads.items[t].t.v;
        auto& mv = st.m.items[t].t.v;
        auto& vv = st.v.items[t].t.v;
        for (std::size_t i = 0; i < pv.size(); ++i) {
            mv[i] = beta1 * mv[i] + (1.0 - beta1) * gv[i];
            vv[i] = beta2 * vv[i] + (1.0 - beta2) * gv[i] * gv[i];
            const Real mh = mv[i] / bc1;
            const Real vh = vv[i] / bc2;
            pv[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
}

struct TrainHyper {
    Real lr = 1e-3;
    int epochs = 10;
    std::uint64_t seed = 0;
    int batch_sequences = 1;  // sequences per Adam step
};

// Seeded Adam training over mean cross-entropy. Sequences are visited in a
// seeded shuffled order each epoch; the returned parameters are the
// best-loss epoch snapshot, so the final training loss never exceeds the
// initial one. Same seed, same bits.
inline ModelParams train(const ModelSpec& spec, const TrainingBatch& dataset,
                         const TrainHyper& hyper, std::vector<Real>* loss_history = nullptr) {
    if (dataset.empty()) throw std::invalid_argument("empty dataset");
    std::set<int> classes;
    for (const auto& seq : dataset) {
        seq.validate();
        classes.insert(seq.y.begin(), seq.y.end());
    }
    if (classes.size() < 2) throw std::runtime_error("degenerate dataset");

    ModelParams params = init_params(spec, hyper.seed);
    Real best_loss = batch_loss(params, dataset);
    if (loss_history) loss_history->push_back(best_loss);
    ModelParams best = params;
    if (hyper.epochs <= 0) return best;

    AdamState adam = AdamState::make(params.w);
    Rng order_rng(mix_seed(hyper.seed, 0x747261696eULL));
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const std::size_t bs = std::max(1, hyper.batch_sequences);

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        order_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += bs) {
            TrainingBatch mini;
            for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) {
                mini.push_back(dataset[order[i]]);
            }
            const TensorSet g = gradients(params, mini);
            adam_step(params.w, g, adam, hyper.lr);
        }
        const Real cur = batch_loss(params, dataset);
        if (loss_history) loss_history->push_back(cur);
        if (cur < best_loss) {
            best_loss = cur;
            best = params;
        }
    }
    return best;
}

// Continues Adam training from the given parameters (pruned models keep
// their surviving weights as the starting point). Best-loss snapshot rule as
// in train().
inline ModelParams fine_tune(ModelParams params, const TrainingBatch& dataset,
                             const TrainHyper& hyper) {
    if (dataset.empty()) throw std::invalid_argument("empty dataset");
    Real best_loss = batch_loss(params, dataset);
    ModelParams best = params;
    if (hyper.epochs <= 0) return best;
    AdamState adam = AdamState::make(params.w);
    Rng order_rng(mix_seed(hyper.seed, 0x66696e65ULL));
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const std::size_t bs = std::max(1, hyper.batch_sequences);
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        order_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += bs) {
            TrainingBatch mini;
            for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) {
                mini.push_back(dataset[order[i]]);
            }
            const TensorSet g = gradients(params, mini);
            adam_step(params.w, g, adam, hyper.lr);
        }
        const Real cur = batch_loss(params, dataset);
        if (cur < best_loss) {
            best_loss = cur;
            best = params;
        }
    }
    return best;
}

}  // namespace suds::model
