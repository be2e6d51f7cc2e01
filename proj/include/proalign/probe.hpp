// Downstream predictor on slide embeddings: a linear layer or one-hidden-layer
// ReLU MLP, softmax cross-entropy loss, trained with decoupled-weight-decay
// Adam (beta1 0.9, beta2 0.999, eps 1e-8). Parameters are kept in 64-bit;
// serialization stores them in PAEM payload layout (float32 little-endian).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "proalign/core.hpp"
#include "proalign/metrics.hpp"
#include "proalign/rng.hpp"
#include "proalign/tensor_io.hpp"

namespace proalign {

enum class ProbeKind { linear, mlp };

inline std::string to_string(ProbeKind k) { return k == ProbeKind::linear ? "linear" : "mlp"; }

struct ProbeConfig {
    ProbeKind kind = ProbeKind::linear;
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 256;  // MLP only
    std::size_t n_classes = 2;
    double learning_rate = 1e-4;
    double weight_decay = 1e-5;
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
};

struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v;

    static Tensor zeros(std::size_t rows, std::size_t cols) {
        return Tensor{rows, cols, std::vector<double>(rows * cols, 0.0)};
    }

    double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

// Linear: params = {W (C x in), b (1 x C)}
// MLP:    params = {W1 (H x in), b1 (1 x H), W2 (C x H), b2 (1 x C)}
struct ProbeModel {
    ProbeConfig cfg;
    std::vector<Tensor> params;
    std::vector<Tensor> moment1;
    std::vector<Tensor> moment2;
    std::uint64_t step = 0;
};

struct Gradients {
    std::vector<Tensor> g;  // shapes mirror ProbeModel::params
};

inline void validate_probe_config(const ProbeConfig& cfg) {
    if (cfg.input_dim < 1) raise(Errc::bad_config, "probe: input_dim must be >= 1");
    if (cfg.n_classes < 2) raise(Errc::bad_config, "probe: n_classes must be >= 2");
    if (cfg.kind == ProbeKind::mlp && cfg.hidden_dim < 1) raise(Errc::bad_config, "probe: hidden_dim must be >= 1");
    if (!(cfg.learning_rate > 0.0)) raise(Errc::bad_config, "probe: learning_rate must be > 0");
    if (cfg.weight_decay < 0.0) raise(Errc::bad_config, "probe: weight_decay must be >= 0");
    if (cfg.batch_size < 1) raise(Errc::bad_config, "probe: batch_size must be >= 1");
}

// Seeded uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)); biases zero.
inline ProbeModel init_probe(const ProbeConfig& cfg) {
    validate_probe_config(cfg);
    ProbeModel model;
    model.cfg = cfg;
    Rng rng(cfg.seed);
    auto glorot = [&](std::size_t out, std::size_t in) {
        Tensor t = Tensor::zeros(out, in);
        const double a = std::sqrt(6.0 / static_cast<double>(in + out));
        for (double& v : t.v) v = (2.0 * rng.next_unit() - 1.0) * a;
        return t;
    };
    if (cfg.kind == ProbeKind::linear) {
        model.params.push_back(glorot(cfg.n_classes, cfg.input_dim));
        model.params.push_back(Tensor::zeros(1, cfg.n_classes));
    } else {
        model.params.push_back(glorot(cfg.hidden_dim, cfg.input_dim));
        model.params.push_back(Tensor::zeros(1, cfg.hidden_dim));
        model.params.push_back(glorot(cfg.n_classes, cfg.hidden_dim));
        model.params.push_back(Tensor::zeros(1, cfg.n_classes));
    }
    for (const Tensor& p : model.params) {
        model.moment1.push_back(Tensor::zeros(p.rows, p.cols));
        model.moment2.push_back(Tensor::zeros(p.rows, p.cols));
    }
    return model;
}

namespace detail {

inline void affine(const Tensor& W, const Tensor& b, const double* x, double* out) {
    for (std::size_t r = 0; r < W.rows; ++r) {
        double acc = b.v[r];
        const double* w = W.v.data() + r * W.cols;
        for (std::size_t c = 0; c < W.cols; ++c) acc += w[c] * x[c];
        out[r] = acc;
    }
}

inline void stable_softmax(std::vector<double>& logits) {
    double max_logit = logits[0];
    for (double v : logits) max_logit = std::max(max_logit, v);
    double sum = 0.0;
    for (double& v : logits) {
        v = std::exp(v - max_logit);
        sum += v;
    }
    for (double& v : logits) v /= sum;
}

struct ForwardState {
    std::vector<double> input;
    std::vector<double> hidden_pre;   // MLP only
    std::vector<double> hidden_post;  // MLP only
    std::vector<double> probs;
};

inline ForwardState forward_pass(const ProbeModel& model, std::span<const float> x) {
    if (x.size() != model.cfg.input_dim) {
        raise(Errc::dim_mismatch, "probe forward: input has dim " + std::to_string(x.size()) + ", expected " +
                                      std::to_string(model.cfg.input_dim));
    }
    ForwardState st;
    st.input.assign(x.begin(), x.end());
    if (model.cfg.kind == ProbeKind::linear) {
        st.probs.resize(model.cfg.n_classes);
        affine(model.params[0], model.params[1], st.input.data(), st.probs.data());
    } else {
        st.hidden_pre.resize(model.cfg.hidden_dim);
        affine(model.params[0], model.params[1], st.input.data(), st.hidden_pre.data());
        st.hidden_post = st.hidden_pre;
        for (double& v : st.hidden_post) v = std::max(0.0, v);
        st.probs.resize(model.cfg.n_classes);
        affine(model.params[2], model.params[3], st.hidden_post.data(), st.probs.data());
    }
    stable_softmax(st.probs);
    return st;
}

}  // namespace detail

inline std::vector<double> forward(const ProbeModel& model, std::span<const float> x) {
    return detail::forward_pass(model, x).probs;
}

// Mean cross-entropy over the batch plus gradients by backpropagation.
inline std::pair<double, Gradients> loss_and_grad(const ProbeModel& model, const EmbeddingMatrix& X,
                                                  const std::vector<int>& labels,
                                                  std::span<const std::size_t> batch) {
    if (batch.empty()) raise(Errc::bad_config, "loss_and_grad: empty batch");
    Gradients grads;
    for (const Tensor& p : model.params) grads.g.push_back(Tensor::zeros(p.rows, p.cols));

    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (std::size_t idx : batch) {
        const int label = labels[idx];
        if (label < 0 || static_cast<std::size_t>(label) >= model.cfg.n_classes) {
            raise(Errc::bad_label, "loss_and_grad: label " + std::to_string(label) + " for " +
                                       std::to_string(model.cfg.n_classes) + " classes");
        }
        detail::ForwardState st = detail::forward_pass(model, X.row(idx));
        const double p_label = std::max(st.probs[static_cast<std::size_t>(label)], 1e-300);
        loss += -std::log(p_label) * inv_batch;

        // dL/dlogit = (p - onehot) / batch
        std::vector<double> dlogits = st.probs;
        dlogits[static_cast<std::size_t>(label)] -= 1.0;
        for (double& v : dlogits) v *= inv_batch;

        if (model.cfg.kind == ProbeKind::linear) {
            Tensor& gW = grads.g[0];
            Tensor& gb = grads.g[1];
            for (std::size_t r = 0; r < gW.rows; ++r) {
                for (std::size_t c = 0; c < gW.cols; ++c) gW.at(r, c) += dlogits[r] * st.input[c];
                gb.v[r] += dlogits[r];
            }
        } else {
            Tensor& gW1 = grads.g[0];
            Tensor& gb1 = grads.g[1];
            Tensor& gW2 = grads.g[2];
            Tensor& gb2 = grads.g[3];
            const Tensor& W2 = model.params[2];
            std::vector<double> dhidden(model.cfg.hidden_dim, 0.0);
            for (std::size_t r = 0; r < gW2.rows; ++r) {
                for (std::size_t c = 0; c < gW2.cols; ++c) {
                    gW2.at(r, c) += dlogits[r] * st.hidden_post[c];
                    dhidden[c] += dlogits[r] * W2.at(r, c);
                }
                gb2.v[r] += dlogits[r];
            }
            for (std::size_t h = 0; h < dhidden.size(); ++h) {
                if (st.hidden_pre[h] <= 0.0) dhidden[h] = 0.0;  // ReLU gate
            }
            for (std::size_t r = 0; r < gW1.rows; ++r) {
                for (std::size_t c = 0; c < gW1.cols; ++c) gW1.at(r, c) += dhidden[r] * st.input[c];
                gb1.v[r] += dhidden[r];
            }
        }
    }
    return {loss, grads};
}

// Decoupled update: theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
inline void adamw_step(ProbeModel& model, const Gradients& grads) {
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double eps = 1e-8;

    for (const Tensor& g : grads.g) {
        for (double v : g.v) {
            if (!std::isfinite(v)) raise(Errc::non_finite_gradient, "adamw_step: gradient is not finite");
        }
    }
    model.step += 1;
    const double t = static_cast<double>(model.step);
    const double bias1 = 1.0 - std::pow(beta1, t);
    const double bias2 = 1.0 - std::pow(beta2, t);
    const double lr = model.cfg.learning_rate;
    const double wd = model.cfg.weight_decay;
    for (std::size_t p = 0; p < model.params.size(); ++p) {
        Tensor& theta = model.params[p];
        Tensor& m = model.moment1[p];
        Tensor& v = model.moment2[p];
        const Tensor& g = grads.g[p];
        for (std::size_t i = 0; i < theta.v.size(); ++i) {
            m.v[i] = beta1 * m.v[i] + (1.0 - beta1) * g.v[i];
            v.v[i] = beta2 * v.v[i] + (1.0 - beta2) * g.v[i] * g.v[i];
            const double m_hat = m.v[i] / bias1;
            const double v_hat = v.v[i] / bias2;
            theta.v[i] -= lr * (m_hat / (std::sqrt(v_hat) + eps) + wd * theta.v[i]);
            if (!std::isfinite(theta.v[i])) {
                raise(Errc::non_finite_value, "adamw_step: parameter became non-finite");
            }
        }
    }
}

inline std::vector<int> predict(const ProbeModel& model, const EmbeddingMatrix& X) {
    std::vector<int> out;
    out.reserve(X.rows);
    for (std::size_t i = 0; i < X.rows; ++i) {
        const std::vector<double> probs = forward(model, X.row(i));
        std::size_t best = 0;
        for (std::size_t c = 1; c < probs.size(); ++c) {
            if (probs[c] > probs[best]) best = c;  // ties toward the smaller class
        }
        out.push_back(static_cast<int>(best));
    }
    return out;
}

struct EpochStat {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_balanced_accuracy = 0.0;
};

struct TrainResult {
    ProbeModel model;                 // parameters of the best-val epoch
    std::vector<EpochStat> log;
    std::size_t best_epoch = 0;       // 0 means the untrained initial model
};

// Minibatch AdamW with per-epoch seeded shuffling; keeps the parameters of
// the epoch with the best validation balanced accuracy (ties -> earlier).
inline TrainResult train_probe(const EmbeddingMatrix& train_x, const std::vector<int>& train_y,
                               const EmbeddingMatrix& val_x, const std::vector<int>& val_y,
                               const ProbeConfig& cfg) {
    if (train_x.rows == 0 || train_x.rows != train_y.size()) {
        raise(Errc::length_mismatch, "train_probe: train split has " + std::to_string(train_x.rows) +
                                         " embeddings and " + std::to_string(train_y.size()) + " labels");
    }
    if (val_x.rows != val_y.size()) {
        raise(Errc::length_mismatch, "train_probe: val split has " + std::to_string(val_x.rows) +
                                         " embeddings and " + std::to_string(val_y.size()) + " labels");
    }
    if (cfg.epochs > 0 && val_x.rows == 0) {
        raise(Errc::bad_config, "train_probe: model selection needs a nonempty val split");
    }

    TrainResult result;
    result.model = init_probe(cfg);
    if (cfg.epochs == 0) return result;

    Rng shuffle_rng(mix_seed(cfg.seed, 0x73687566ull));
    std::vector<std::size_t> order(train_x.rows);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<Tensor> best_params = result.model.params;
    double best_val = -1.0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t len = std::min(cfg.batch_size, order.size() - start);
            const std::span<const std::size_t> batch(order.data() + start, len);
            auto [loss, grads] = loss_and_grad(result.model, train_x, train_y, batch);
            adamw_step(result.model, grads);
            epoch_loss += loss * static_cast<double>(len);
        }
        epoch_loss /= static_cast<double>(order.size());

        const std::vector<int> val_preds = predict(result.model, val_x);
        const double val_bacc = balanced_accuracy(confusion_matrix(val_y, val_preds, cfg.n_classes));
        result.log.push_back(EpochStat{epoch, epoch_loss, val_bacc});
        if (val_bacc > best_val) {
            best_val = val_bacc;
            best_params = result.model.params;
            result.best_epoch = epoch;
        }
    }
    result.model.params = best_params;
    return result;
}

inline constexpr std::uint32_t kProbeFormatVersion = 1;

inline void save_probe(const ProbeModel& model, const std::filesystem::path& path) {
    std::string bytes;
    bytes += "PRBM";
    detail::put_u32(bytes, kProbeFormatVersion);
    detail::put_u32(bytes, model.cfg.kind == ProbeKind::linear ? 0u : 1u);
    detail::put_u64(bytes, model.cfg.input_dim);
    detail::put_u64(bytes, model.cfg.hidden_dim);
    detail::put_u64(bytes, model.cfg.n_classes);
    detail::put_u64(bytes, std::bit_cast<std::uint64_t>(model.cfg.learning_rate));
    detail::put_u64(bytes, std::bit_cast<std::uint64_t>(model.cfg.weight_decay));
    detail::put_u64(bytes, model.cfg.epochs);
    detail::put_u64(bytes, model.cfg.batch_size);
    detail::put_u64(bytes, model.cfg.seed);
    detail::put_u32(bytes, static_cast<std::uint32_t>(model.params.size()));
    for (const Tensor& p : model.params) {
        detail::put_u64(bytes, p.rows);
        detail::put_u64(bytes, p.cols);
        for (double v : p.v) detail::put_f32(bytes, static_cast<float>(v));
    }
    detail::write_file_bytes(path, bytes);
}

inline ProbeModel load_probe(const std::filesystem::path& path) {
    const std::string bytes = detail::read_file_bytes(path);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    auto need = [&](std::size_t offset, std::size_t len) {
        if (bytes.size() < offset + len) raise(Errc::truncated_payload, path.string() + ": probe file too short");
    };
    need(0, 8);
    if (std::memcmp(p, "PRBM", 4) != 0) raise(Errc::bad_magic, path.string() + ": magic is not PRBM");
    if (detail::get_u32(p + 4) != kProbeFormatVersion) {
        raise(Errc::unsupported_version, path.string() + ": probe format version");
    }
    need(8, 4 + 8 * 8 + 4);
    ProbeModel model;
    std::size_t off = 8;
    model.cfg.kind = detail::get_u32(p + off) == 0 ? ProbeKind::linear : ProbeKind::mlp;
    off += 4;
    model.cfg.input_dim = static_cast<std::size_t>(detail::get_u64(p + off));
    off += 8;
    model.cfg.hidden_dim = static_cast<std::size_t>(detail::get_u64(p + off));
    off += 8;
    model.cfg.n_classes = static_cast<std::size_t>(detail::get_u64(p + off));
    off += 8;
    model.cfg.learning_rate = std::bit_cast<double>(detail::get_u64(p + off));
    off += 8;
    model.cfg.weight_decay = std::bit_cast<double>(detail::get_u64(p + off));
    off += 8;
    model.cfg.epochs = static_cast<std::size_t>(detail::get_u64(p + off));
    off += 8;
    model.cfg.batch_size = static_cast<std::size_t>(detail::get_u64(p + off));
    off += 8;
    model.cfg.seed = detail::get_u64(p + off);
    off += 8;
    const std::uint32_t n_tensors = detail::get_u32(p + off);
    off += 4;
    for (std::uint32_t t = 0; t < n_tensors; ++t) {
        need(off, 16);
        const std::size_t rows = static_cast<std::size_t>(detail::get_u64(p + off));
        const std::size_t cols = static_cast<std::size_t>(detail::get_u64(p + off + 8));
        off += 16;
        need(off, 4 * rows * cols);
        Tensor tensor = Tensor::zeros(rows, cols);
        for (std::size_t i = 0; i < rows * cols; ++i) {
            tensor.v[i] = static_cast<double>(detail::get_f32(p + off + 4 * i));
        }
        off += 4 * rows * cols;
        model.params.push_back(std::move(tensor));
    }
    if (off != bytes.size()) raise(Errc::truncated_payload, path.string() + ": trailing bytes in probe file");
    for (const Tensor& t : model.params) {
        model.moment1.push_back(Tensor::zeros(t.rows, t.cols));
        model.moment2.push_back(Tensor::zeros(t.rows, t.cols));
    }
    return model;
}

}  // namespace proalign
