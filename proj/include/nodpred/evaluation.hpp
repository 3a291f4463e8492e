#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "nodpred/dataset.hpp"
#include "nodpred/model.hpp"

namespace nodpred {

/// Percentages in [0, 100]. Zero denominators give 0.
struct PrfScores {
    double f1 = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

/// A frame counts as positive when its class is in `positive`.
PrfScores frame_prf(const std::vector<int>& predicted, const std::vector<int>& truth, const std::set<int>& positive);

/// Unweighted mean of each metric.
PrfScores macro_average(const std::vector<PrfScores>& per_class);

/// Scores of predicting positive on every frame.
PrfScores random_baseline(const std::vector<int>& truth, const std::set<int>& positive);
/// 2p / (1 + p) as a percentage, p the positive-frame ratio.
double random_baseline_f1(double positive_ratio);

enum class Task { Timing, Type };
Task task_from_string(const std::string& s);
std::string_view to_string(Task t) noexcept;

/// Timing: nod when P(any nod) = 1 - p_nod[0] exceeds 0.5. Type: argmax class.
int timing_decision(const std::vector<double>& p_nod);
int type_decision(const std::vector<double>& p_nod);

/// Per-dialogue frame classes (labels or decisions).
struct DialogueFrames {
    std::string dialogue;
    std::vector<int> classes;
};

struct BootstrapResult {
    std::size_t iterations = 0;
    std::vector<double> f1_a;
    std::vector<double> f1_b;
    double mean_difference = 0.0;
    double t_statistic = 0.0;
    double p_value = 1.0;
};

/// Resamples dialogues with replacement; each iteration scores both systems on
/// the same resample; one-tailed paired t-test on the F1 differences for A > B.
/// Iteration i draws from its own generator seeded by (seed, i), so results do
/// not depend on thread scheduling. All-zero differences report p = 1.
BootstrapResult bootstrap_f1_test(const std::vector<DialogueFrames>& a, const std::vector<DialogueFrames>& b,
                                  const std::vector<DialogueFrames>& truth, const std::set<int>& positive,
                                  std::size_t iterations = 1000, std::uint64_t seed = 1);

struct DialoguePredictions {
    std::string dialogue;
    std::vector<PredictionFrame> frames;
};

// One JSON object per frame: {"dialogue", "frame", "p_nod", "p_bc"?, "p_vad"}
void write_predictions_jsonl(const std::string& path, const std::vector<DialoguePredictions>& preds);
std::vector<DialoguePredictions> read_predictions_jsonl(const std::string& path);

/// Pairs predictions with labels by dialogue name, applying the task's decision rule.
/// Returns (decisions, truth) in label order; missing dialogues or length mismatch are errors.
std::pair<std::vector<DialogueFrames>, std::vector<DialogueFrames>> align_for_task(
    const std::vector<DialoguePredictions>& preds, const std::vector<NamedLabels>& labels, Task task);

struct EvalRow {
    std::string name;
    PrfScores model;
    PrfScores random;
};

struct EvalReport {
    Task task = Task::Timing;
    std::size_t frames = 0;
    std::size_t dialogues = 0;
    std::vector<EvalRow> rows;  // timing: nod; type: short, long, long_p, macro
};

EvalReport evaluate(const std::vector<DialoguePredictions>& preds, const std::vector<NamedLabels>& labels, Task task);
std::string eval_report_to_json(const EvalReport& r);
std::string bootstrap_to_json(const BootstrapResult& r);

}  // namespace nodpred
