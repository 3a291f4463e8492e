#include "nodpred/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "nodpred/bounded_queue.hpp"
#include "nodpred/error.hpp"

namespace nodpred {

using autodiff::Tape;
using autodiff::Var;

LossWeights LossWeights::for_classes(int nod_classes) {
    LossWeights w;
    w.pos_weight = nod_classes == 2 ? 3.0 : 5.0;
    return w;
}

void LossWeights::validate() const {
    for (double v : {w_vad, w_vap, w_bc, pos_weight, bc_pos_weight}) {
        if (!(v >= 0.0) || !std::isfinite(v)) fail(ErrorKind::Config, "loss weights must be finite and >= 0");
    }
}

namespace {

double neg_log(double p) { return -std::log(std::max(p, kLogEps)); }

void check_probs(std::span<const double> probs) {
    for (double p : probs) {
        if (!(p >= 0.0 && p <= 1.0)) fail(ErrorKind::Range, "probabilities must lie in [0, 1]");
    }
}

}  // namespace

double loss_nod(std::span<const double> probs, int true_class, double pos_weight) {
    check_probs(probs);
    if (true_class < 0 || static_cast<std::size_t>(true_class) >= probs.size()) {
        fail(ErrorKind::Range, "true class outside the probability vector");
    }
    const double w = true_class == 0 ? 1.0 : pos_weight;
    return w * neg_log(probs[static_cast<std::size_t>(true_class)]);
}

double loss_nod(const std::vector<std::vector<double>>& probs, const std::vector<int>& classes, double pos_weight) {
    if (probs.size() != classes.size()) fail(ErrorKind::Shape, "one class per frame required");
    if (probs.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) total += loss_nod(probs[i], classes[i], pos_weight);
    return total / static_cast<double>(probs.size());
}

double loss_total_st(double l_nod, double l_vad, double l_vap, const LossWeights& w) {
    return l_nod + w.w_vad * l_vad + w.w_vap * l_vap;
}

double loss_total_mt(double l_nod, double l_vad, double l_vap, double l_bc, const LossWeights& w) {
    return loss_total_st(l_nod, l_vad, l_vap, w) + w.w_bc * l_bc;
}

double loss_vad(const std::vector<std::array<double, 2>>& probs,
                const std::vector<std::array<std::uint8_t, 2>>& labels) {
    if (probs.size() != labels.size()) fail(ErrorKind::Shape, "one label pair per frame required");
    if (probs.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        check_probs(probs[i]);
        for (std::size_t c = 0; c < 2; ++c) total += neg_log(labels[i][c] ? probs[i][c] : 1.0 - probs[i][c]);
    }
    return total / static_cast<double>(2 * probs.size());
}

double loss_vap(const std::vector<std::vector<double>>& probs, const std::vector<int>& states) {
    if (probs.size() != states.size()) fail(ErrorKind::Shape, "one state per frame required");
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (states[i] < 0) continue;
        check_probs(probs[i]);
        if (static_cast<std::size_t>(states[i]) >= probs[i].size()) fail(ErrorKind::Range, "state outside distribution");
        total += neg_log(probs[i][static_cast<std::size_t>(states[i])]);
        ++counted;
    }
    return counted ? total / static_cast<double>(counted) : 0.0;
}

double loss_bc(const std::vector<double>& p_bc, const std::vector<std::uint8_t>& labels, double pos_weight) {
    if (p_bc.size() != labels.size()) fail(ErrorKind::Shape, "one label per frame required");
    if (p_bc.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < p_bc.size(); ++i) {
        const std::array<double, 2> o{1.0 - p_bc[i], p_bc[i]};
        total += loss_nod(o, labels[i] ? 1 : 0, pos_weight);
    }
    return total / static_cast<double>(p_bc.size());
}

std::string_view to_string(Stage s) noexcept { return s == Stage::Pretrain ? "pretrain" : "finetune"; }

Stage stage_from_string(const std::string& s) {
    if (s == "pretrain") return Stage::Pretrain;
    if (s == "finetune") return Stage::Finetune;
    fail(ErrorKind::Config, "stage must be pretrain or finetune, got '" + s + "'");
}

namespace {

std::size_t usable_frames(const Dialogue& d, const ModelConfig& cfg) {
    const std::size_t spf = cfg.samples_per_frame();
    const std::size_t audio_frames = std::min(d.audio.user.size(), d.audio.system.size()) / spf;
    return std::min(d.labels.vad_user.size(), audio_frames);
}

}  // namespace

std::vector<TrainingWindow> make_windows(const std::vector<Dialogue>& dialogues, const ModelConfig& cfg) {
    const std::size_t f = cfg.window_frames();
    const std::size_t hop = std::max<std::size_t>(1, f / 2);
    std::vector<TrainingWindow> out;
    for (std::size_t i = 0; i < dialogues.size(); ++i) {
        const std::size_t n = usable_frames(dialogues[i], cfg);
        if (n == 0) continue;
        if (n <= f) {
            out.push_back({i, 0, n});
            continue;
        }
        std::size_t start = 0;
        for (; start + f <= n; start += hop) out.push_back({i, start, f});
        if (out.back().first_frame + f < n) out.push_back({i, n - f, f});
    }
    return out;
}

WindowData window_data(const Dialogue& d, const TrainingWindow& w, const ModelConfig& cfg) {
    const FrameLabels& l = d.labels;
    if (std::abs(l.frame_rate - cfg.frame_rate) > 1e-9) fail(ErrorKind::Config, "labels not at the model frame rate");
    if (w.first_frame + w.frames > usable_frames(d, cfg)) fail(ErrorKind::Range, "window beyond dialogue");
    const std::size_t spf = cfg.samples_per_frame();
    WindowData out;
    const auto a = static_cast<std::ptrdiff_t>(w.first_frame * spf);
    const auto b = static_cast<std::ptrdiff_t>((w.first_frame + w.frames) * spf);
    out.user.assign(d.audio.user.begin() + a, d.audio.user.begin() + b);
    out.system.assign(d.audio.system.begin() + a, d.audio.system.begin() + b);

    const std::vector<int> vap = vap_targets(l.vad_user, l.vad_system, cfg.vap_bins, cfg.frame_rate);
    WindowTargets& t = out.targets;
    t.vad = Matrix(w.frames, 2);
    for (std::size_t i = 0; i < w.frames; ++i) {
        const std::size_t f = w.first_frame + i;
        // missing nod or backchannel streams are simply not scored
        int nod = f < l.nod_class.size() ? l.nod_class[f] : -1;
        if (nod > 0 && cfg.nod_classes == 2) nod = 1;
        t.nod.push_back(nod);
        t.bc.push_back(f < l.backchannel.size() ? static_cast<int>(l.backchannel[f]) : -1);
        t.vad(i, 0) = l.vad_user[f];
        t.vad(i, 1) = l.vad_system[f];
        t.vap.push_back(vap[f]);
    }
    std::ostringstream name;
    name << d.name << " frames " << w.first_frame << ".." << w.first_frame + w.frames;
    out.label = name.str();
    return out;
}

LossGraph window_loss(Tape& tape, const Model& model, const HeadOutputs& heads, const WindowTargets& t, Stage stage,
                      const LossWeights& w) {
    const ModelConfig& cfg = model.config();
    const auto value = [&](Var v) { return tape.value(v)(0, 0); };
    LossGraph g;
    const Var vad = autodiff::sigmoid_cross_entropy(tape, heads.vad, t.vad, kLogEps);
    const Var vap = autodiff::softmax_cross_entropy(tape, heads.vap, t.vap, std::vector<double>(kVapStates, 1.0), kLogEps);
    g.values.vad = value(vad);
    g.values.vap = value(vap);
    if (stage == Stage::Pretrain) {
        g.total = autodiff::weighted_sum(tape, {{vad, 1.0}, {vap, 1.0}});
        g.values.total = value(g.total);
        return g;
    }
    std::vector<double> nod_weight(static_cast<std::size_t>(cfg.nod_classes), w.pos_weight);
    nod_weight[0] = 1.0;
    const Var nod = autodiff::softmax_cross_entropy(tape, heads.nod, t.nod, nod_weight, kLogEps);
    g.values.nod = value(nod);
    std::vector<std::pair<Var, double>> terms{{nod, 1.0}, {vad, w.w_vad}, {vap, w.w_vap}};
    if (heads.bc) {
        const Var bc = autodiff::softmax_cross_entropy(tape, *heads.bc, t.bc, {1.0, w.bc_pos_weight}, kLogEps);
        g.values.bc = value(bc);
        terms.emplace_back(bc, w.w_bc);
    }
    g.total = autodiff::weighted_sum(tape, terms);
    g.values.total = value(g.total);
    return g;
}

LossBreakdown compute_gradients(Model& model, const WindowData& window, Stage stage, const LossWeights& w) {
    model.parameters().zero_grad();
    Tape tape(true);
    const HeadOutputs heads = model.forward_audio(tape, window.user, window.system);
    const LossGraph g = window_loss(tape, model, heads, window.targets, stage, w);
    if (!std::isfinite(g.values.total)) return g.values;  // caller reports
    tape.backward(g.total);
    return g.values;
}

void TrainConfig::validate() const {
    weights.validate();
    if (epochs == 0) fail(ErrorKind::Config, "epochs must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) fail(ErrorKind::Config, "learning rate must be positive");
    if (!(clip_norm > 0.0)) fail(ErrorKind::Config, "clip norm must be positive");
    if (queue_capacity == 0) fail(ErrorKind::Config, "queue capacity must be >= 1");
}

double clip_gradients(autodiff::ParameterStore& store, double max_norm) {
    double sq = 0.0;
    for (std::size_t i = 0; i < store.size(); ++i) {
        for (double g : store.at(i).grad.values()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (std::size_t i = 0; i < store.size(); ++i) {
            for (double& g : store.at(i).grad.values()) g *= s;
        }
    }
    return norm;
}

namespace {

class Updater {
public:
    Updater(autodiff::ParameterStore& store, const TrainConfig& cfg) : store_(store), cfg_(cfg) {
        if (cfg.optimizer == Optimizer::Adam) {
            for (std::size_t i = 0; i < store.size(); ++i) {
                m_.emplace_back(store.at(i).value.size(), 0.0);
                v_.emplace_back(store.at(i).value.size(), 0.0);
            }
        }
    }

    void step() {
        if (cfg_.optimizer == Optimizer::Sgd) {
            for (std::size_t i = 0; i < store_.size(); ++i) {
                auto& p = store_.at(i);
                for (std::size_t k = 0; k < p.value.size(); ++k) p.value.data()[k] -= cfg_.lr * p.grad.data()[k];
            }
            return;
        }
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        ++t_;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        for (std::size_t i = 0; i < store_.size(); ++i) {
            auto& p = store_.at(i);
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t k = 0; k < p.value.size(); ++k) {
                const double g = p.grad.data()[k];
                m[k] = b1 * m[k] + (1.0 - b1) * g;
                v[k] = b2 * v[k] + (1.0 - b2) * g * g;
                p.value.data()[k] -= cfg_.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
            }
        }
    }

private:
    autodiff::ParameterStore& store_;
    const TrainConfig& cfg_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::uint64_t t_ = 0;
};

bool grads_finite(const autodiff::ParameterStore& store, std::string& bad) {
    for (std::size_t i = 0; i < store.size(); ++i) {
        for (double g : store.at(i).grad.values()) {
            if (!std::isfinite(g)) {
                bad = store.at(i).name;
                return false;
            }
        }
    }
    return true;
}

std::string describe(const LossBreakdown& l) {
    std::ostringstream s;
    s << "loss=" << l.total << " nod=" << l.nod << " vad=" << l.vad << " vap=" << l.vap << " bc=" << l.bc;
    return s.str();
}

}  // namespace

std::vector<EpochStats> train(Model& model, const std::vector<Dialogue>& dialogues, const TrainConfig& cfg,
                              const std::function<bool(const EpochStats&)>& on_epoch) {
    cfg.validate();
    if (dialogues.empty()) fail(ErrorKind::Config, "training dataset is empty");
    const ModelConfig& mc = model.config();
    const std::vector<TrainingWindow> windows = make_windows(dialogues, mc);
    if (windows.empty()) fail(ErrorKind::Config, "training dataset has no usable frames");
    for (const Dialogue& d : dialogues) {
        if (std::abs(d.labels.frame_rate - mc.frame_rate) > 1e-9) {
            fail(ErrorKind::Config, "labels of " + d.name + " are not at the model frame rate");
        }
    }

    std::ofstream log;
    if (!cfg.log_path.empty()) {
        log.open(cfg.log_path);
        if (!log) fail(ErrorKind::Io, "cannot write training log " + cfg.log_path);
        log << "epoch,stage,loss,loss_nod,loss_vad,loss_vap,loss_bc\n";
    }

    BoundedQueue<WindowData> queue(cfg.queue_capacity);
    std::exception_ptr producer_error;
    std::thread producer([&] {
        try {
            std::mt19937_64 rng(cfg.seed);
            std::vector<std::size_t> order(windows.size());
            for (std::size_t e = 0; e < cfg.epochs; ++e) {
                for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
                std::shuffle(order.begin(), order.end(), rng);
                for (std::size_t i : order) {
                    const TrainingWindow& w = windows[i];
                    if (!queue.push(window_data(dialogues[w.dialogue], w, mc))) return;
                }
            }
        } catch (...) {
            producer_error = std::current_exception();
        }
        queue.close();
    });
    struct Joiner {
        BoundedQueue<WindowData>& q;
        std::thread& t;
        ~Joiner() {
            q.close();
            if (t.joinable()) t.join();
        }
    } joiner{queue, producer};

    Updater updater(model.parameters(), cfg);
    std::vector<EpochStats> history;
    for (std::size_t e = 1; e <= cfg.epochs; ++e) {
        LossBreakdown sum;
        for (std::size_t i = 0; i < windows.size(); ++i) {
            std::optional<WindowData> w = queue.pop();
            if (!w) {
                queue.close();
                producer.join();
                if (producer_error) std::rethrow_exception(producer_error);
                fail(ErrorKind::Empty, "window stream ended early");
            }
            const LossBreakdown l = compute_gradients(model, *w, cfg.stage, cfg.weights);
            std::string bad;
            if (!std::isfinite(l.total)) {
                fail(ErrorKind::NonFinite, "epoch " + std::to_string(e) + ", " + w->label + ": " + describe(l));
            }
            if (!grads_finite(model.parameters(), bad)) {
                fail(ErrorKind::NonFinite, "epoch " + std::to_string(e) + ", " + w->label + ": gradient of " + bad +
                                               " is not finite (" + describe(l) + ")");
            }
            clip_gradients(model.parameters(), cfg.clip_norm);
            updater.step();
            sum.total += l.total;
            sum.nod += l.nod;
            sum.vad += l.vad;
            sum.vap += l.vap;
            sum.bc += l.bc;
        }
        const double n = static_cast<double>(windows.size());
        EpochStats stats{e, cfg.stage, {sum.total / n, sum.nod / n, sum.vad / n, sum.vap / n, sum.bc / n}};
        history.push_back(stats);
        if (log) {
            log << e << ',' << to_string(cfg.stage) << ',' << stats.mean.total << ',' << stats.mean.nod << ','
                << stats.mean.vad << ',' << stats.mean.vap << ',' << stats.mean.bc << '\n';
            log.flush();
        }
        if (on_epoch && !on_epoch(stats)) break;
    }
    return history;
}

LossBreakdown evaluate_loss(const Model& model, const std::vector<Dialogue>& dialogues, Stage stage,
                            const LossWeights& w) {
    const auto windows = make_windows(dialogues, model.config());
    if (windows.empty()) fail(ErrorKind::Config, "no usable frames");
    LossBreakdown sum;
    for (const TrainingWindow& win : windows) {
        const WindowData d = window_data(dialogues[win.dialogue], win, model.config());
        Tape tape(false);
        const HeadOutputs heads = model.forward_audio(tape, d.user, d.system);
        const LossBreakdown l = window_loss(tape, model, heads, d.targets, stage, w).values;
        sum.total += l.total;
        sum.nod += l.nod;
        sum.vad += l.vad;
        sum.vap += l.vap;
        sum.bc += l.bc;
    }
    const double n = static_cast<double>(windows.size());
    return {sum.total / n, sum.nod / n, sum.vad / n, sum.vap / n, sum.bc / n};
}

}  // namespace nodpred
