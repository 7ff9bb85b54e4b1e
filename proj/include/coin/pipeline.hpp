#pragma once

#include <chrono>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "coin/datagen.hpp"
#include "coin/diffcore.hpp"
#include "coin/errors.hpp"
#include "coin/losses.hpp"
#include "coin/metrics.hpp"
#include "coin/model.hpp"
#include "coin/rng.hpp"

namespace coin {

enum class Method { CE, SCL, COIN };

inline std::string method_name(Method m) {
    switch (m) {
        case Method::CE: return "CE";
        case Method::SCL: return "SCL";
        case Method::COIN: return "COIN";
    }
    return "?";
}

inline Method method_from_name(const std::string& name) {
    if (name == "CE") return Method::CE;
    if (name == "SCL") return Method::SCL;
    if (name == "COIN") return Method::COIN;
    throw ValidationError("method: unknown name '" + name + "' (expected CE, SCL or COIN)");
}

// All scalars of the training procedure. alpha splits the epoch budget; it is
// ignored (treated as 0) for methods SCL and CE.
struct TrainConfig {
    Method method = Method::COIN;
    int epochs = 100;                 // N
    double stage_split = 0.7;         // alpha
    double learning_rate = 0.05;      // eta
    double temperature = 0.3;         // tau
    double contrastive_weight = 0.1;  // lambda
    int batch_size = 128;
    std::uint64_t seed = 1;

    void validate() const {
        if (epochs < 1) throw ValidationError("train.epochs: must be >= 1");
        if (stage_split < 0.0 || stage_split > 1.0)
            throw ValidationError("train.alpha: must be in [0, 1]");
        if (!(learning_rate > 0.0)) throw ValidationError("train.eta: must be > 0");
        if (!(temperature > 0.0)) throw ValidationError("train.tau: must be > 0");
        if (contrastive_weight < 0.0) throw ValidationError("train.lambda: must be >= 0");
        if (batch_size < 2) throw ValidationError("train.batch_size: must be >= 2");
    }

    int init_epochs() const {
        return method == Method::COIN ? static_cast<int>(std::floor(stage_split * epochs)) : 0;
    }
};

struct PretrainConfig {
    int epochs = 30;
    double temperature = 0.5;  // tau_ssl
    double learning_rate = 0.05;
    int batch_size = 128;
    AugmentConfig augment;

    void validate() const {
        if (epochs < 0) throw ValidationError("pretrain.epochs: must be >= 0");
        if (!(temperature > 0.0)) throw ValidationError("pretrain.tau: must be > 0");
        if (!(learning_rate > 0.0)) throw ValidationError("pretrain.eta: must be > 0");
        if (batch_size < 2) throw ValidationError("pretrain.batch_size: must be >= 2");
        augment.validate();
    }
};

enum class Stage { Init, Finetune };

inline const char* stage_name(Stage s) { return s == Stage::Init ? "init" : "finetune"; }

// S_Dbw can be computed on encoder features z (default) or projected v.
enum class FeatureLayer { Z, V };

struct EpochRecord {
    int epoch = 0;  // 1-based
    Stage stage = Stage::Finetune;
    double train_loss = 0.0;
    double train_acc = 0.0;  // during init this uses the frozen classifier
    double test_acc = 0.0;
    SDbwResult test_sdbw;
};

struct RunReport {
    std::vector<EpochRecord> per_epoch;
    double wall_time_seconds = 0.0;  // training loops only, evaluation excluded
    double final_test_acc = 0.0;
    SDbwResult final_sdbw;
};

namespace detail {

// One full-permutation shuffle per epoch; tail batch dropped when < 2 rows
// (the contrastive loss needs pairs).
inline std::vector<std::vector<int>> epoch_batches(int n, int batch_size, Rng& rng) {
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<std::vector<int>> batches;
    for (int s = 0; s < n; s += batch_size) {
        int e = std::min(n, s + batch_size);
        if (e - s < 2) break;
        batches.emplace_back(order.begin() + s, order.begin() + e);
    }
    return batches;
}

inline Matrix gather_rows(const Matrix& m, std::span<const int> idx) {
    Matrix out(static_cast<int>(idx.size()), m.cols());
    for (size_t i = 0; i < idx.size(); ++i) {
        const double* src = m.row(idx[i]);
        std::copy(src, src + m.cols(), out.row(static_cast<int>(i)));
    }
    return out;
}

inline std::vector<int> gather_labels(std::span<const int> labels, std::span<const int> idx) {
    std::vector<int> out(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) out[i] = labels[idx[i]];
    return out;
}

inline void apply_sgd(LayerStack& stack, const StackGradients& grads, double eta) {
    size_t li = 0;
    for (Layer& layer : stack) {
        if (layer.kind != LayerKind::Linear) continue;
        const LinearGrad& g = grads.linear[li++];
        for (size_t e = 0; e < layer.linear.weight.size(); ++e)
            layer.linear.weight.data()[e] -= eta * g.weight.data()[e];
        for (size_t e = 0; e < layer.linear.bias.size(); ++e)
            layer.linear.bias[e] -= eta * g.bias[e];
    }
}

// Contrastive-only step: updates encoder and projector, never the classifier.
inline double init_step(ModelParams& params, const Matrix& xb, std::span<const int> yb,
                        const TrainConfig& cfg) {
    ForwardTrace tf, tg;
    Matrix z = encode(params, xb, &tf);
    Matrix v = project(params, z, &tg);
    LossResult con = sup_con_loss(v, yb, cfg.temperature);
    StackGradients gg = backward_stack(params.projector, tg, con.grad);
    StackGradients gf = backward_stack(params.encoder, tf, gg.input);
    apply_sgd(params.encoder, gf, cfg.learning_rate);
    apply_sgd(params.projector, gg, cfg.learning_rate);
    return con.value;
}

// Joint step: L_ce + lambda * L_con_sup, updating all three groups. lambda 0
// leaves the projector untouched (its gradient is exactly zero).
inline double finetune_step(ModelParams& params, const Matrix& xb, std::span<const int> yb,
                            const TrainConfig& cfg, double lambda) {
    ForwardTrace tf;
    Matrix z = encode(params, xb, &tf);
    Matrix logits = classify(params, z);

    LossResult ce = cross_entropy(logits, yb);
    double loss = ce.value;

    // dz from the classifier path
    Matrix dz(z.rows(), z.cols());
    const Matrix& wh = params.classifier.weight;
    for (int r = 0; r < z.rows(); ++r) {
        const double* gl = ce.grad.row(r);
        double* dzr = dz.row(r);
        for (int k = 0; k < z.cols(); ++k) {
            const double* whk = wh.row(k);
            double s = 0.0;
            for (int j = 0; j < wh.cols(); ++j) s += gl[j] * whk[j];
            dzr[k] = s;
        }
    }

    StackGradients gg;
    bool with_con = lambda > 0.0;
    if (with_con) {
        ForwardTrace tg;
        Matrix v = project(params, z, &tg);
        LossResult con = sup_con_loss(v, yb, cfg.temperature);
        loss += lambda * con.value;
        gg = backward_stack(params.projector, tg, lambda * con.grad);
        dz = dz + gg.input;
    }

    StackGradients gf = backward_stack(params.encoder, tf, dz);

    // classifier grads: W_h += z^T ce.grad, b_h += colsum(ce.grad)
    Matrix gwh(wh.rows(), wh.cols());
    std::vector<double> gbh(params.classifier.bias.size(), 0.0);
    for (int r = 0; r < z.rows(); ++r) {
        const double* zr = z.row(r);
        const double* gl = ce.grad.row(r);
        for (int k = 0; k < z.cols(); ++k) {
            if (zr[k] == 0.0) continue;
            double* gw = gwh.row(k);
            for (int j = 0; j < wh.cols(); ++j) gw[j] += zr[k] * gl[j];
        }
        for (int j = 0; j < wh.cols(); ++j) gbh[j] += gl[j];
    }

    apply_sgd(params.encoder, gf, cfg.learning_rate);
    if (with_con) apply_sgd(params.projector, gg, cfg.learning_rate);
    for (size_t e = 0; e < gwh.size(); ++e)
        params.classifier.weight.data()[e] -= cfg.learning_rate * gwh.data()[e];
    for (size_t e = 0; e < gbh.size(); ++e)
        params.classifier.bias[e] -= cfg.learning_rate * gbh[e];
    return loss;
}

}  // namespace detail

// Toy instance-discrimination pretraining: two augmented views per instance,
// the partner view is the sole positive, the other 2(n-1) view embeddings are
// negatives. This is the supervised contrastive loss with a unique label per
// instance. Updates encoder and projector only.
//
// Draw order per batch: the two views of each instance are drawn
// consecutively (first view, then second), instances in batch order; the
// batch matrix stacks all first views, then all second views.
inline ModelParams pretrain_ssl(ModelParams params, const Matrix& features,
                                const PretrainConfig& cfg, Rng& rng) {
    cfg.validate();
    TrainConfig step_cfg;
    step_cfg.temperature = cfg.temperature;
    step_cfg.learning_rate = cfg.learning_rate;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto batches = detail::epoch_batches(features.rows(), cfg.batch_size, rng);
        for (const auto& batch : batches) {
            const int nb = static_cast<int>(batch.size());
            Matrix views(2 * nb, features.cols());
            std::vector<int> instance_ids(2 * nb);
            for (int i = 0; i < nb; ++i) {
                std::span<const double> x(features.row(batch[i]),
                                          static_cast<size_t>(features.cols()));
                std::vector<double> a = augment(x, cfg.augment, rng);
                std::vector<double> b = augment(x, cfg.augment, rng);
                std::copy(a.begin(), a.end(), views.row(i));
                std::copy(b.begin(), b.end(), views.row(nb + i));
                instance_ids[i] = i;
                instance_ids[nb + i] = i;
            }
            detail::init_step(params, views, instance_ids, step_cfg);
        }
    }
    return params;
}

// Contrastive initialization stage: Algorithm lines that update {w_f, w_g}
// only; the classifier is untouched bit for bit.
inline ModelParams coin_init_stage(ModelParams params, const Dataset& train, int epochs,
                                   const TrainConfig& cfg, Rng& rng) {
    cfg.validate();
    for (int epoch = 0; epoch < epochs; ++epoch) {
        auto batches = detail::epoch_batches(train.size(), cfg.batch_size, rng);
        for (const auto& batch : batches) {
            Matrix xb = detail::gather_rows(train.features, batch);
            std::vector<int> yb = detail::gather_labels(train.labels, batch);
            detail::init_step(params, xb, yb, cfg);
        }
    }
    return params;
}

// Fine-tuning stage: joint objective, all three parameter groups updated.
// Method CE forces lambda to 0.
inline ModelParams finetune_stage(ModelParams params, const Dataset& train, int epochs,
                                  const TrainConfig& cfg, Rng& rng) {
    cfg.validate();
    double lambda = cfg.method == Method::CE ? 0.0 : cfg.contrastive_weight;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        auto batches = detail::epoch_batches(train.size(), cfg.batch_size, rng);
        for (const auto& batch : batches) {
            Matrix xb = detail::gather_rows(train.features, batch);
            std::vector<int> yb = detail::gather_labels(train.labels, batch);
            detail::finetune_step(params, xb, yb, cfg, lambda);
        }
    }
    return params;
}

struct EvalResult {
    double accuracy = 0.0;
    SDbwResult sdbw;
};

inline EvalResult evaluate(const ModelParams& params, const Dataset& ds, FeatureLayer layer) {
    Matrix z = encode(params, ds.features);
    EvalResult out;
    out.accuracy = top1_accuracy(classify(params, z), ds.labels);
    out.sdbw = layer == FeatureLayer::Z ? s_dbw(z, ds.labels) : s_dbw(project(params, z), ds.labels);
    return out;
}

// The full two-stage pipeline on pre-split data: floor(alpha*N) init epochs
// for COIN (0 for SCL/CE), the remainder fine-tuning; exactly N epoch records
// either way. Training randomness comes from `rng`; a zero-length init stage
// consumes none of it. Per-epoch evaluation is excluded from the timing.
inline RunReport run_training(ModelParams& params, const Dataset& train, const Dataset& test,
                              const TrainConfig& cfg, Rng& rng,
                              FeatureLayer sdbw_layer = FeatureLayer::Z) {
    cfg.validate();
    const int n_init = cfg.init_epochs();
    const double lambda = cfg.method == Method::CE ? 0.0 : cfg.contrastive_weight;

    RunReport report;
    report.per_epoch.reserve(cfg.epochs);
    using clock = std::chrono::steady_clock;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const Stage stage = epoch <= n_init ? Stage::Init : Stage::Finetune;
        double loss_sum = 0.0;
        int batch_count = 0;

        auto t0 = clock::now();
        auto batches = detail::epoch_batches(train.size(), cfg.batch_size, rng);
        for (const auto& batch : batches) {
            Matrix xb = detail::gather_rows(train.features, batch);
            std::vector<int> yb = detail::gather_labels(train.labels, batch);
            loss_sum += stage == Stage::Init ? detail::init_step(params, xb, yb, cfg)
                                             : detail::finetune_step(params, xb, yb, cfg, lambda);
            ++batch_count;
        }
        report.wall_time_seconds += std::chrono::duration<double>(clock::now() - t0).count();

        EpochRecord rec;
        rec.epoch = epoch;
        rec.stage = stage;
        rec.train_loss = batch_count ? loss_sum / batch_count : 0.0;
        rec.train_acc = top1_accuracy(classify(params, encode(params, train.features)), train.labels);
        EvalResult ev = evaluate(params, test, sdbw_layer);
        rec.test_acc = ev.accuracy;
        rec.test_sdbw = ev.sdbw;
        report.per_epoch.push_back(rec);
    }

    report.final_test_acc = report.per_epoch.back().test_acc;
    report.final_sdbw = report.per_epoch.back().test_sdbw;
    return report;
}

}  // namespace coin
