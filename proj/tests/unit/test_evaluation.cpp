#include <omp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "nodpred/error.hpp"
#include "nodpred/evaluation.hpp"

using namespace nodpred;

namespace {

// Brute-force confusion matrix, then per-class metrics straight from the cells.
PrfScores oracle_prf(const std::vector<int>& pred, const std::vector<int>& truth, const std::set<int>& positive) {
    std::array<std::array<int, 2>, 2> cell{};  // [predicted positive][truly positive]
    for (std::size_t i = 0; i < pred.size(); ++i) {
        ++cell[positive.count(pred[i])][positive.count(truth[i])];
    }
    const double tp = cell[1][1], fp = cell[1][0], fn = cell[0][1];
    PrfScores s;
    s.precision = tp + fp > 0 ? 100.0 * tp / (tp + fp) : 0.0;
    s.recall = tp + fn > 0 ? 100.0 * tp / (tp + fn) : 0.0;
    s.f1 = s.precision + s.recall > 0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

std::vector<DialogueFrames> make_truth(std::size_t dialogues, std::size_t frames, std::mt19937_64& rng) {
    std::vector<DialogueFrames> out;
    std::bernoulli_distribution pos(0.25);
    for (std::size_t d = 0; d < dialogues; ++d) {
        DialogueFrames f{"d" + std::to_string(d), {}};
        for (std::size_t i = 0; i < frames; ++i) f.classes.push_back(pos(rng) ? 1 : 0);
        out.push_back(std::move(f));
    }
    return out;
}

}  // namespace

TEST_CASE("frame scores: identity, always-positive, hand case") {
    const std::vector<int> t{0, 1, 2, 3, 0, 0, 1, 3, 3, 0};
    for (int c = 1; c <= 3; ++c) CHECK(frame_prf(t, t, {c}).f1 == 100.0);
    CHECK(frame_prf(t, t, {1, 2, 3}).precision == 100.0);

    std::vector<int> truth(10000, 0);
    std::fill(truth.begin(), truth.begin() + 2285, 1);
    const PrfScores all = frame_prf(std::vector<int>(10000, 1), truth, {1});
    CHECK(all.precision == doctest::Approx(22.85).epsilon(1e-12));
    CHECK(all.recall == 100.0);
    CHECK(std::round(all.f1 * 100.0) / 100.0 == 37.20);

    // 10 frames: tp = 3, fp = 2, fn = 1
    const std::vector<int> p10{1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
    const std::vector<int> t10{1, 1, 1, 0, 0, 1, 0, 0, 0, 0};
    const PrfScores s = frame_prf(p10, t10, {1});
    CHECK(s.precision == doctest::Approx(60.0));
    CHECK(s.recall == doctest::Approx(75.0));
    CHECK(s.f1 == doctest::Approx(2 * 60.0 * 75.0 / 135.0));
    CHECK_THROWS_AS(frame_prf(p10, std::vector<int>(9, 0), {1}), Error);
    // nothing predicted, nothing true: all zero by convention
    const PrfScores z = frame_prf(std::vector<int>(5, 0), std::vector<int>(5, 0), {1});
    CHECK((z.f1 == 0.0 && z.precision == 0.0 && z.recall == 0.0));
}

TEST_CASE("frame scores agree with the confusion-matrix oracle") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng() % 30;
        std::vector<int> p(n), t(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = static_cast<int>(rng() % 4);
            t[i] = static_cast<int>(rng() % 4);
        }
        const std::set<int> positive = trial % 2 ? std::set<int>{1, 2, 3} : std::set<int>{static_cast<int>(1 + rng() % 3)};
        const PrfScores a = frame_prf(p, t, positive), o = oracle_prf(p, t, positive);
        REQUIRE(a.f1 == doctest::Approx(o.f1).epsilon(1e-12));
        REQUIRE(a.precision == doctest::Approx(o.precision).epsilon(1e-12));
        REQUIRE(a.recall == doctest::Approx(o.recall).epsilon(1e-12));
        REQUIRE(a.f1 >= 0.0);
        REQUIRE(a.f1 <= 100.0);
    }
}

TEST_CASE("macro average") {
    const PrfScores x{42.0, 40.0, 44.0};
    const PrfScores same = macro_average({x, x, x});
    CHECK(same.f1 == doctest::Approx(42.0));
    CHECK(same.precision == doctest::Approx(40.0));
    CHECK(macro_average({{30, 0, 0}, {40, 0, 0}, {20, 0, 0}}).f1 == doctest::Approx(30.0));
    const double reported = macro_average({{14.34, 0, 0}, {21.71, 0, 0}, {5.64, 0, 0}}).f1;
    CHECK(std::abs(reported - 13.89) < 0.01);
    const PrfScores a{10, 20, 30}, b{50, 60, 70}, c{1, 2, 3};
    CHECK(macro_average({a, b, c}).recall == doctest::Approx(macro_average({c, a, b}).recall).epsilon(1e-15));
    CHECK_THROWS_AS(macro_average({}), Error);
}

TEST_CASE("random baseline closed form") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng() % 500;
        std::vector<int> t(n);
        std::size_t pos = 0;
        const double q = static_cast<double>(rng() % 100) / 100.0;
        for (int& v : t) {
            v = std::bernoulli_distribution(q)(rng) ? 1 + static_cast<int>(rng() % 3) : 0;
            pos += v > 0;
        }
        const double p = static_cast<double>(pos) / static_cast<double>(n);
        CHECK(std::abs(random_baseline(t, {1, 2, 3}).f1 - random_baseline_f1(p)) < 1e-9);
    }
    CHECK(random_baseline_f1(0.0) == 0.0);
    CHECK(random_baseline_f1(1.0) == 100.0);
    CHECK(random_baseline(std::vector<int>(7, 0), {1}).f1 == 0.0);
    CHECK(random_baseline(std::vector<int>(7, 1), {1}).f1 == 100.0);
    CHECK(std::abs(random_baseline_f1(0.2285) - 37.20) < 0.005);
}

TEST_CASE("bootstrap significance") {
    std::mt19937_64 rng(8);
    const auto truth = make_truth(20, 300, rng);
    auto flipped = truth;
    std::bernoulli_distribution flip(0.3);
    for (auto& d : flipped) {
        for (int& c : d.classes) c = flip(rng) ? 1 - c : c;
    }
    const BootstrapResult same = bootstrap_f1_test(truth, truth, truth, {1}, 1000, 3);
    CHECK(same.p_value == 1.0);
    CHECK(same.mean_difference == 0.0);

    const BootstrapResult better = bootstrap_f1_test(truth, flipped, truth, {1}, 1000, 3);
    CHECK(better.p_value < 0.01);
    const BootstrapResult again = bootstrap_f1_test(truth, flipped, truth, {1}, 1000, 3);
    CHECK(again.f1_b == better.f1_b);
    CHECK(again.p_value == better.p_value);

    // two noisy systems: swapping maps p to 1 - p
    auto noisy = truth;
    std::bernoulli_distribution flip2(0.28);
    for (auto& d : noisy) {
        for (int& c : d.classes) c = flip2(rng) ? 1 - c : c;
    }
    const BootstrapResult ab = bootstrap_f1_test(noisy, flipped, truth, {1}, 1000, 5);
    const BootstrapResult ba = bootstrap_f1_test(flipped, noisy, truth, {1}, 1000, 5);
    CHECK(ab.p_value + ba.p_value == doctest::Approx(1.0).epsilon(1e-12));

    const int threads = omp_get_max_threads();
    omp_set_num_threads(3);
    const BootstrapResult three = bootstrap_f1_test(noisy, flipped, truth, {1}, 1000, 5);
    omp_set_num_threads(threads);
    CHECK(three.f1_a == ab.f1_a);

    const std::vector<DialogueFrames> one(truth.begin(), truth.begin() + 1);
    try {
        bootstrap_f1_test(one, one, one, {1}, 1000, 1);
        FAIL("expected insufficient data");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InsufficientData);
    }
    CHECK_THROWS_AS(bootstrap_f1_test(truth, truth, truth, {1}, 50, 1), Error);
}

TEST_CASE("predictions file and report") {
    const auto path = (std::filesystem::temp_directory_path() / "nodpred_preds.jsonl").string();
    std::vector<DialoguePredictions> preds(2);
    std::vector<NamedLabels> labels(2);
    for (int d = 0; d < 2; ++d) {
        preds[d].dialogue = "dlg" + std::to_string(d);
        labels[d].first = preds[d].dialogue;
        labels[d].second.frame_rate = 10.0;
        for (int f = 0; f < 6; ++f) {
            PredictionFrame p;
            const int cls = (f + d) % 4;
            p.p_nod.assign(4, 0.1);
            p.p_nod[static_cast<std::size_t>(cls)] = 0.7;
            p.p_bc = 0.25;
            p.p_vad = {0.5, 0.125};
            preds[d].frames.push_back(p);
            labels[d].second.nod_class.push_back(f < 3 ? cls : 0);
            labels[d].second.backchannel.push_back(0);
            labels[d].second.vad_user.push_back(0);
            labels[d].second.vad_system.push_back(0);
        }
    }
    write_predictions_jsonl(path, preds);
    const auto back = read_predictions_jsonl(path);
    REQUIRE(back.size() == 2);
    CHECK(back[1].frames[2].p_nod == preds[1].frames[2].p_nod);
    CHECK(*back[0].frames[0].p_bc == 0.25);
    CHECK(back[0].frames[0].p_vad[1] == 0.125);

    const EvalReport timing = evaluate(back, labels, Task::Timing);
    REQUIRE(timing.rows.size() == 1);
    CHECK(timing.frames == 12);
    const EvalReport type = evaluate(back, labels, Task::Type);
    REQUIRE(type.rows.size() == 4);
    CHECK(type.rows[3].name == "macro");
    CHECK(type.rows[3].model.f1 ==
          doctest::Approx((type.rows[0].model.f1 + type.rows[1].model.f1 + type.rows[2].model.f1) / 3.0));
    CHECK(eval_report_to_json(type).find("\"long_p\"") != std::string::npos);

    labels[1].second.nod_class.push_back(0);
    labels[1].second.backchannel.push_back(0);
    labels[1].second.vad_user.push_back(0);
    labels[1].second.vad_system.push_back(0);
    CHECK_THROWS_AS(evaluate(back, labels, Task::Timing), Error);
    labels[1].first = "missing";
    CHECK_THROWS_AS(evaluate(back, labels, Task::Timing), Error);
    CHECK(timing_decision({0.45, 0.2, 0.2, 0.15}) == 1);
    CHECK(type_decision({0.45, 0.2, 0.2, 0.15}) == 0);
}
