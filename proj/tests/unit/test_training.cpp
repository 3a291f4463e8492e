#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include "doctest.h"
#include "gradient_check.hpp"
#include "nodpred/bounded_queue.hpp"
#include "nodpred/error.hpp"
#include "nodpred/training.hpp"

using namespace nodpred;

namespace {

Dialogue synthetic(double seconds, std::uint64_t seed, double rate = 10.0) {
    SyntheticDialogueConfig sc;
    sc.duration = seconds;
    sc.seed = seed;
    return dialogue_from_synthetic(generate_synthetic_dialogue(sc), rate, "syn" + std::to_string(seed));
}

std::vector<Matrix> snapshot(const Model& m) {
    std::vector<Matrix> out;
    for (std::size_t i = 0; i < m.parameters().size(); ++i) out.push_back(m.parameters().at(i).value);
    return out;
}

}  // namespace

TEST_CASE("nod loss examples") {
    const std::vector<double> certain{1.0, 0.0};
    CHECK(loss_nod(certain, 0, 3.0) == 0.0);
    const std::vector<double> u4(4, 0.25), u2(2, 0.5);
    CHECK(loss_nod(u4, 1, 5.0) == doctest::Approx(5.0 * std::log(4.0)).epsilon(1e-12));
    CHECK(std::abs(loss_nod(u4, 1, 5.0) - 6.931471805599453) < 1e-9);
    CHECK(std::abs(loss_nod(u2, 1, 3.0) - 2.0794415416798357) < 1e-9);
    // zero probability at the true class is clamped
    CHECK(loss_nod(certain, 1, 1.0) == doctest::Approx(-std::log(1e-8)));
    CHECK_THROWS_AS(loss_nod(u2, 2, 1.0), Error);
}

TEST_CASE("total loss arithmetic") {
    const LossWeights w;
    CHECK(loss_total_st(1, 1, 1, w) == doctest::Approx(1.4).epsilon(1e-15));
    CHECK(loss_total_st(0, 0, 0, w) == 0.0);
    CHECK(loss_total_st(2, 0.5, 1.5, w) == doctest::Approx(2.4).epsilon(1e-15));
    CHECK(loss_total_mt(1, 1, 1, 1, w) == doctest::Approx(1.9).epsilon(1e-15));
    CHECK(loss_total_mt(0.7, 0.3, 2.2, 0, w) == loss_total_st(0.7, 0.3, 2.2, w));
    CHECK(loss_total_mt(1, 0, 0, 2, w) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(LossWeights::for_classes(2).pos_weight == 3.0);
    CHECK(LossWeights::for_classes(4).pos_weight == 5.0);
    LossWeights bad;
    bad.w_vad = -0.1;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("vad, vap and bc losses") {
    CHECK(loss_vad({{1.0, 0.0}, {0.0, 1.0}}, {{1, 0}, {0, 1}}) == 0.0);
    CHECK(loss_vad({{0.5, 0.5}, {0.5, 0.5}}, {{1, 0}, {0, 1}}) == doctest::Approx(std::log(2.0)));
    // spreadsheet-style: one term per frame and channel
    const double vad_expected =
        -(std::log(0.9) + std::log(1 - 0.2) + std::log(1 - 0.3) + std::log(0.6) + std::log(0.5) + std::log(0.99)) / 6.0;
    CHECK(loss_vad({{0.9, 0.2}, {0.3, 0.6}, {0.5, 0.99}}, {{1, 0}, {0, 1}, {1, 1}}) ==
          doctest::Approx(vad_expected).epsilon(1e-12));

    std::vector<double> onehot(256, 0.0);
    onehot[17] = 1.0;
    CHECK(loss_vap({onehot}, {17}) == 0.0);
    CHECK(loss_vap({std::vector<double>(256, 1.0 / 256)}, {3}) == doctest::Approx(std::log(256.0)));
    std::vector<double> a(256, 0.5 / 255), b(256, 0.9 / 255), c(256, 0.0);
    a[0] = 0.5;
    b[9] = 0.1;
    c[200] = 1.0;
    // third frame has no complete future and is skipped
    CHECK(loss_vap({a, b, c}, {0, 9, -1}) == doctest::Approx(-(std::log(0.5) + std::log(0.1)) / 2.0).epsilon(1e-12));
    CHECK(loss_vap({c}, {-1}) == 0.0);

    CHECK(loss_bc({0.0, 1.0}, {0, 1}, 3.0) == 0.0);
    CHECK(loss_bc({0.5}, {1}, 3.0) == doctest::Approx(3.0 * std::log(2.0)));
    CHECK(loss_bc({0.2, 0.7, 0.4}, {0, 1, 1}, 3.0) ==
          doctest::Approx(-(std::log(0.8) + 3.0 * std::log(0.7) + 3.0 * std::log(0.4)) / 3.0).epsilon(1e-12));
}

TEST_CASE("unit positive weight is plain cross-entropy and losses are non-negative") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> p(4);
        double s = 0.0;
        for (double& v : p) s += (v = u(rng));
        for (double& v : p) v /= s;
        const int y = static_cast<int>(rng() % 4);
        CHECK(loss_nod(p, y, 1.0) == -std::log(p[static_cast<std::size_t>(y)]));
        CHECK(loss_nod(p, y, 5.0) >= 0.0);
        CHECK(loss_vad({{p[0], p[1]}}, {{1, 0}}) >= 0.0);
        CHECK(loss_bc({p[2]}, {static_cast<std::uint8_t>(y % 2)}, 3.0) >= 0.0);
    }
}

TEST_CASE("zero-weight linear head gradient has the softmax closed form") {
    using namespace autodiff;
    ParameterStore store;
    Parameter& w = store.add("w", Matrix(3, 4, 0.0));
    Parameter& b = store.add("b", Matrix(1, 4, 0.0));
    const std::vector<double> x{0.5, -1.0, 2.0};
    const std::vector<int> targets{1, 0, 1, 3, -1};
    const std::vector<double> cw{1.0, 5.0, 5.0, 5.0};
    Matrix input(targets.size(), 3);
    for (std::size_t r = 0; r < input.rows(); ++r) {
        for (std::size_t c = 0; c < 3; ++c) input(r, c) = x[c];
    }
    Tape tape;
    Var logits = add_bias(tape, matmul(tape, tape.constant(input), tape.param(w)), tape.param(b));
    tape.backward(softmax_cross_entropy(tape, logits, targets, cw, 1e-8));
    // uniform softmax: dL/dz[k] = sum over counted rows of cw[y] * (1/4 - [k == y]) / counted
    std::vector<double> dz(4, 0.0);
    const double counted = 4.0;
    for (int y : targets) {
        if (y < 0) continue;
        for (std::size_t k = 0; k < 4; ++k) dz[k] += cw[static_cast<std::size_t>(y)] * (0.25 - (static_cast<int>(k) == y)) / counted;
    }
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(b.grad(0, k) == doctest::Approx(dz[k]).epsilon(1e-12));
        for (std::size_t c = 0; c < 3; ++c) CHECK(w.grad(c, k) == doctest::Approx(x[c] * dz[k]).epsilon(1e-12));
    }
}

TEST_CASE("loss weights enter gradients linearly") {
    const ModelConfig cfg = testutil::tiny_model_config();
    Model model(cfg);
    const WindowData w = testutil::random_window(cfg, 11);
    auto grads = [&](double w_vad) {
        LossWeights lw;
        lw.w_vad = w_vad;
        compute_gradients(model, w, Stage::Finetune, lw);
        std::vector<double> g;
        for (std::size_t i = 0; i < model.parameters().size(); ++i) {
            const auto& v = model.parameters().at(i).grad.values();
            g.insert(g.end(), v.begin(), v.end());
        }
        return g;
    };
    const auto g0 = grads(0.0), g1 = grads(0.2), g2 = grads(0.4);
    double scale = 0.0;
    for (double v : g1) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < g0.size(); ++i) {
        CHECK(std::abs((g2[i] - g0[i]) - 2.0 * (g1[i] - g0[i])) <= 1e-10 * scale);
    }
}

TEST_CASE("full model gradients match central differences") {
    const ModelConfig cfg = testutil::tiny_model_config();
    Model model(cfg);
    const WindowData w = testutil::random_window(cfg, 5);
    const auto r = testutil::check_model_gradients(model, w, Stage::Finetune, LossWeights::for_classes(4));
    MESSAGE(r.coordinates << " coordinates, worst " << r.worst_name << " rel " << r.worst_rel);
    CHECK(r.coordinates == model.parameters().total_values());
    CHECK(r.failures == 0);
    const auto p = testutil::check_model_gradients(model, w, Stage::Pretrain, LossWeights{});
    INFO("pretrain worst " << p.worst_name << " rel " << p.worst_rel);
    CHECK(p.failures == 0);
}

TEST_CASE("windows overlap by half and the last one is end-aligned") {
    ModelConfig cfg;  // 10 Hz, 200-frame windows
    std::vector<Dialogue> ds(3);
    const double secs[] = {30.0, 35.0, 12.0};
    for (int i = 0; i < 3; ++i) {
        ds[i].audio.user.assign(static_cast<std::size_t>(secs[i] * kAudioRate), 0.0);
        ds[i].audio.system = ds[i].audio.user;
        const auto n = frame_count_for(secs[i], 10.0);
        ds[i].labels.frame_rate = 10.0;
        ds[i].labels.nod_class.assign(n, 0);
        ds[i].labels.backchannel.assign(n, 0);
        ds[i].labels.vad_user.assign(n, 0);
        ds[i].labels.vad_system.assign(n, 0);
    }
    const auto w = make_windows(ds, cfg);
    REQUIRE(w.size() == 6);
    CHECK((w[0].dialogue == 0 && w[0].first_frame == 0 && w[0].frames == 200));
    CHECK((w[1].dialogue == 0 && w[1].first_frame == 100));
    CHECK((w[2].first_frame == 0 && w[3].first_frame == 100 && w[4].first_frame == 150 && w[4].dialogue == 1));
    CHECK((w[5].dialogue == 2 && w[5].first_frame == 0 && w[5].frames == 120));
    const WindowData d = window_data(ds[1], w[4], cfg);
    CHECK(d.user.size() == 200 * 1600);
    CHECK(d.targets.nod.size() == 200);
}

TEST_CASE("one epoch on one dialogue lowers the training loss") {
    ModelConfig cfg;
    cfg.nod_classes = 2;
    const std::vector<Dialogue> ds{synthetic(30.0, 21)};
    Model model(cfg);
    const LossWeights lw = LossWeights::for_classes(2);
    const double before = evaluate_loss(model, ds, Stage::Finetune, lw).total;
    TrainConfig tc;
    tc.weights = lw;
    const auto hist = train(model, ds, tc);
    REQUIRE(hist.size() == 1);
    const double after = evaluate_loss(model, ds, Stage::Finetune, lw).total;
    MESSAGE("loss " << before << " -> " << after);
    CHECK(after < before);
}

TEST_CASE("pretraining needs no nod labels and leaves nod and bc heads alone") {
    ModelConfig cfg;
    cfg.window_seconds = 5.0;
    Dialogue d = synthetic(12.0, 4);
    d.labels.nod_class.clear();
    d.labels.backchannel.clear();
    Model model(cfg);
    const auto before = snapshot(model);
    TrainConfig tc;
    tc.stage = Stage::Pretrain;
    tc.epochs = 2;
    train(model, {d}, tc);
    const auto after = snapshot(model);
    bool encoder_moved = false;
    for (std::size_t i = 0; i < after.size(); ++i) {
        const std::string& name = model.parameters().at(i).name;
        if (name.rfind("head.nod", 0) == 0 || name.rfind("head.bc", 0) == 0) {
            CHECK_MESSAGE(after[i] == before[i], name);
        }
        if (name == "encoder.conv1.weight") encoder_moved = after[i] != before[i];
    }
    CHECK(encoder_moved);

    // finetuning afterwards on fully labelled data
    TrainConfig ft;
    ft.epochs = 1;
    CHECK(train(model, {synthetic(12.0, 5)}, ft).size() == 1);
}

TEST_CASE("without the backchannel task there are no bc weights to touch") {
    ModelConfig cfg;
    cfg.window_seconds = 5.0;
    cfg.multitask_bc = false;
    Model model(cfg);
    for (std::size_t i = 0; i < model.parameters().size(); ++i) {
        CHECK(model.parameters().at(i).name.rfind("head.bc", 0) != 0);
    }
    const std::vector<Dialogue> ds{synthetic(6.0, 8)};
    const LossBreakdown l = evaluate_loss(model, ds, Stage::Finetune, LossWeights{});
    CHECK(l.bc == 0.0);
    CHECK(l.total == doctest::Approx(loss_total_st(l.nod, l.vad, l.vap, LossWeights{})).epsilon(1e-12));
}

TEST_CASE("training is deterministic and logs every epoch") {
    ModelConfig cfg;
    cfg.window_seconds = 5.0;
    const std::vector<Dialogue> ds{synthetic(12.0, 1), synthetic(8.0, 2)};
    const auto log = (std::filesystem::temp_directory_path() / "nodpred_train_log.csv").string();
    auto run = [&](const std::string& path) {
        Model model(cfg);
        TrainConfig tc;
        tc.epochs = 2;
        tc.seed = 9;
        tc.log_path = path;
        train(model, ds, tc);
        return snapshot(model);
    };
    const auto a = run(log);
    const auto b = run("");
    CHECK(a == b);
    std::ifstream in(log);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    REQUIRE(lines.size() == 3);
    CHECK(lines[0] == "epoch,stage,loss,loss_nod,loss_vad,loss_vap,loss_bc");
    CHECK(lines[1].rfind("1,finetune,", 0) == 0);
    CHECK(lines[2].rfind("2,finetune,", 0) == 0);
}

TEST_CASE("training errors") {
    ModelConfig cfg;
    cfg.window_seconds = 5.0;
    Model model(cfg);
    CHECK_THROWS_AS(train(model, {}, TrainConfig{}), Error);
    try {
        train(model, {}, TrainConfig{});
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Config);
    }
    TrainConfig bad;
    bad.lr = 0.0;
    CHECK_THROWS_AS(train(model, {synthetic(6.0, 3)}, bad), Error);

    model.parameters().get("head.vad.bias").value(0, 0) = std::nan("");
    try {
        train(model, {synthetic(6.0, 3)}, TrainConfig{});
        FAIL("expected a non-finite error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NonFinite);
        CHECK(std::string(e.what()).find("syn3") != std::string::npos);
    }
}

TEST_CASE("bounded queue hands over in order and drains after close") {
    BoundedQueue<int> q(2);
    std::thread producer([&] {
        for (int i = 0; i < 100; ++i) q.push(i);
        q.close();
    });
    int expected = 0;
    while (auto v = q.pop()) CHECK(*v == expected++);
    producer.join();
    CHECK(expected == 100);
    CHECK_FALSE(q.push(1));
}

TEST_CASE("synthetic dialogues: zero ratios, determinism, backchannels") {
    SyntheticDialogueConfig flat;
    flat.duration = 20.0;
    flat.nod_time_ratios = {0.0, 0.0, 0.0};
    flat.motion_noise = 0.0;
    const auto f = generate_synthetic_dialogue(flat);
    CHECK(f.nods.empty());
    CHECK(f.backchannels.empty());
    for (double v : f.motion.pitch) CHECK(v == 0.0);
    CHECK(annotate(f.motion, AnnotationConfig{}).empty());

    SyntheticDialogueConfig sc;
    sc.duration = 20.0;
    sc.seed = 42;
    const auto a = generate_synthetic_dialogue(sc), b = generate_synthetic_dialogue(sc);
    CHECK(a.audio.user == b.audio.user);
    CHECK(a.audio.system == b.audio.system);
    CHECK(a.motion.pitch == b.motion.pitch);
    CHECK(a.nods.size() == b.nods.size());
    CHECK(a.audio.user.size() == 20 * 16000);
    for (double v : a.audio.user) REQUIRE(std::abs(v) <= 1.0);

    SyntheticDialogueConfig bad;
    bad.nod_time_ratios = {0.5, 0.4, 0.2};
    CHECK_THROWS_AS(generate_synthetic_dialogue(bad), Error);
}

TEST_CASE("synthetic nod-time ratios over 30 minutes") {
    SyntheticDialogueConfig sc;
    sc.duration = 1800.0;
    sc.render_audio = false;
    sc.seed = 2024;
    const auto d = generate_synthetic_dialogue(sc);
    // measured the way labels are made: from the annotator's output
    const auto found = annotate(d.motion, AnnotationConfig{});
    const auto r = nod_time_ratios(found, sc.duration);
    MESSAGE("ratios " << r[0] << " " << r[1] << " " << r[2]);
    CHECK(std::abs(r[0] - 0.089) <= 0.015);
    CHECK(std::abs(r[1] - 0.124) <= 0.015);
    CHECK(std::abs(r[2] - 0.044) <= 0.015);
    std::size_t eligible = 0;
    for (const auto& n : d.nods) eligible += *n.type != NodType::Short;
    const double co = static_cast<double>(d.backchannels.size()) / static_cast<double>(eligible);
    CHECK(std::abs(co - 0.6) < 0.1);
}

TEST_CASE("labels and manifests round-trip") {
    const auto dir = std::filesystem::temp_directory_path() / "nodpred_dataset_test";
    std::filesystem::create_directories(dir);
    const Dialogue d = synthetic(8.0, 6);
    write_labels_jsonl((dir / "labels.jsonl").string(), {{d.name, d.labels}});
    const auto back = read_labels_jsonl((dir / "labels.jsonl").string());
    REQUIRE(back.size() == 1);
    CHECK(back[0].first == d.name);
    CHECK(back[0].second.nod_class == d.labels.nod_class);
    CHECK(back[0].second.vad_system == d.labels.vad_system);
    write_wav((dir / "d.wav").string(), d.audio);
    write_manifest((dir / "manifest.json").string(), {{d.name, "d.wav", "labels.jsonl", "", {}}});
    const auto loaded = load_dialogues((dir / "manifest.json").string(), 10.0);
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].labels.backchannel == d.labels.backchannel);
    CHECK(loaded[0].audio.user.size() == d.audio.user.size());
    CHECK_THROWS_AS(load_dialogues((dir / "manifest.json").string(), 50.0), Error);
}
