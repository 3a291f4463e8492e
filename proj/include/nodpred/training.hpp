#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nodpred/dataset.hpp"
#include "nodpred/model.hpp"

namespace nodpred {

inline constexpr double kLogEps = 1e-8;

struct LossWeights {
    double w_vad = 0.2;
    double w_vap = 0.2;
    double w_bc = 0.5;
    double pos_weight = 5.0;     // nod classes vs no-nod; 3 for the 2-class timing task
    double bc_pos_weight = 3.0;

    /// Defaults with pos_weight matched to the nod class count.
    static LossWeights for_classes(int nod_classes);
    void validate() const;
};

// Scalar losses on probabilities. Batch versions average over frames.
double loss_nod(std::span<const double> probs, int true_class, double pos_weight);
double loss_nod(const std::vector<std::vector<double>>& probs, const std::vector<int>& classes, double pos_weight);
double loss_total_st(double l_nod, double l_vad, double l_vap, const LossWeights& w);
double loss_total_mt(double l_nod, double l_vad, double l_vap, double l_bc, const LossWeights& w);
/// Binary cross-entropy per channel, mean over frames and both channels.
double loss_vad(const std::vector<std::array<double, 2>>& probs, const std::vector<std::array<std::uint8_t, 2>>& labels);
/// Categorical cross-entropy over the 256 states; frames labelled -1 are skipped.
double loss_vap(const std::vector<std::vector<double>>& probs, const std::vector<int>& states);
/// Two-class weighted cross-entropy on the backchannel probability.
double loss_bc(const std::vector<double>& p_bc, const std::vector<std::uint8_t>& labels, double pos_weight);

enum class Stage { Pretrain, Finetune };
std::string_view to_string(Stage s) noexcept;
Stage stage_from_string(const std::string& s);

/// Targets for one window of frames.
struct WindowTargets {
    std::vector<int> nod;  // already collapsed to the model's class count
    std::vector<int> bc;
    Matrix vad;            // frames x 2
    std::vector<int> vap;  // -1 where the future is incomplete
};

struct TrainingWindow {
    std::size_t dialogue = 0;
    std::size_t first_frame = 0;
    std::size_t frames = 0;
};

struct WindowData {
    std::vector<double> user;
    std::vector<double> system;
    WindowTargets targets;
    std::string label;  // for diagnostics
};

/// Windows of window_frames with 50% overlap; the last one is aligned to the
/// end of the dialogue. Dialogues shorter than a window give one short window.
std::vector<TrainingWindow> make_windows(const std::vector<Dialogue>& dialogues, const ModelConfig& cfg);
WindowData window_data(const Dialogue& d, const TrainingWindow& w, const ModelConfig& cfg);

struct LossBreakdown {
    double total = 0.0;
    double nod = 0.0;
    double vad = 0.0;
    double vap = 0.0;
    double bc = 0.0;
};

struct LossGraph {
    autodiff::Var total;
    LossBreakdown values;
};

/// Records the window loss on tape. Pretraining uses L_vad + L_vap only.
LossGraph window_loss(autodiff::Tape& tape, const Model& model, const HeadOutputs& heads, const WindowTargets& t,
                      Stage stage, const LossWeights& w);

/// Zeroes gradients, then fills Parameter::grad with d(loss)/d(weight) for one window.
LossBreakdown compute_gradients(Model& model, const WindowData& window, Stage stage, const LossWeights& w);

enum class Optimizer { Sgd, Adam };

struct TrainConfig {
    Stage stage = Stage::Finetune;
    std::size_t epochs = 1;
    double lr = 0.05;
    double clip_norm = 1.0;
    Optimizer optimizer = Optimizer::Sgd;
    std::uint64_t seed = 1;
    LossWeights weights{};
    std::size_t queue_capacity = 4;
    std::string log_path;  // CSV, optional

    void validate() const;
};

struct EpochStats {
    std::size_t epoch = 0;
    Stage stage = Stage::Finetune;
    LossBreakdown mean;
};

/// Rescales all gradients so their global L2 norm is at most max_norm; returns the norm before clipping.
double clip_gradients(autodiff::ParameterStore& store, double max_norm);

/// Runs the epochs. A producer thread slices windows in a seeded shuffle order
/// and hands them over through a bounded queue; this thread owns the weights.
/// Returns per-epoch mean losses. on_epoch may return false to stop early.
std::vector<EpochStats> train(Model& model, const std::vector<Dialogue>& dialogues, const TrainConfig& cfg,
                              const std::function<bool(const EpochStats&)>& on_epoch = {});

/// Mean window loss without updating anything.
LossBreakdown evaluate_loss(const Model& model, const std::vector<Dialogue>& dialogues, Stage stage,
                            const LossWeights& w);

}  // namespace nodpred
