#include <cmath>
#include <random>

#include "doctest.h"
#include "nodpred/audio_frontend.hpp"
#include "nodpred/error.hpp"
#include "nodpred/streaming.hpp"
#include "nodpred/synthetic.hpp"

using namespace nodpred;

namespace {

ModelConfig small_config(double rate = 10.0) {
    ModelConfig cfg;
    cfg.frame_rate = rate;
    cfg.window_seconds = 2.0;
    cfg.dim = 16;
    cfg.heads = 2;
    cfg.ffn_dim = 32;
    cfg.cross_layers = 1;
    return cfg;
}

StreamConfig stream_config(double rate, double window) {
    StreamConfig sc;
    sc.frame_rate = rate;
    sc.window_seconds = window;
    return sc;
}

PredictionFrame frame_with(std::vector<double> p_nod, std::optional<double> p_bc = std::nullopt) {
    PredictionFrame f;
    f.p_nod = std::move(p_nod);
    f.p_bc = p_bc;
    return f;
}

// advances the session clock by one 10 Hz frame of silence
void advance(StreamSession& s) {
    const std::vector<double> z(1600, 0.0);
    s.push_audio(z, z);
}

std::vector<double> ramp(std::size_t n, double scale) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = scale * std::sin(0.001 * static_cast<double>(i));
    return v;
}

}  // namespace

TEST_CASE("cold start pads with zeros and the buffer slides") {
    const Model model(small_config());
    StreamSession s(model, stream_config(10.0, 20.0));
    const auto one = ramp(16000, 0.5);
    s.push_audio(one, one);
    auto w = s.window(Channel::User);
    REQUIRE(w.size() == 20 * 16000);
    for (std::size_t i = 0; i < 19 * 16000; ++i) REQUIRE(w[i] == 0.0);
    for (std::size_t i = 0; i < 16000; ++i) REQUIRE(w[19 * 16000 + i] == one[i]);

    const auto lots = ramp(25 * 16000, 0.3);
    s.push_audio(lots, lots);
    w = s.window(Channel::System);
    CHECK(w.size() == 20 * 16000);
    CHECK(std::equal(w.begin(), w.end(), lots.end() - 20 * 16000));
    CHECK(s.stream_time() == doctest::Approx(26.0));
}

TEST_CASE("chunking does not change the buffer") {
    const Model model(small_config());
    StreamSession a(model, stream_config(10.0, 2.0)), b(model, stream_config(10.0, 2.0)), c(model, stream_config(10.0, 2.0));
    const auto x = ramp(16000, 0.4);
    const auto y = ramp(16000, -0.2);
    a.push_audio(x, y);
    b.push_audio(std::span(x).first(8000), std::span(y).first(8000));
    b.push_audio(std::span(x).subspan(8000), std::span(y).subspan(8000));
    std::mt19937_64 rng(1);
    for (std::size_t at = 0; at < x.size();) {
        const std::size_t n = std::min<std::size_t>(1 + rng() % 777, x.size() - at);
        std::vector<double> inter;
        for (std::size_t i = at; i < at + n; ++i) {
            inter.push_back(x[i]);
            inter.push_back(y[i]);
        }
        c.push_audio(inter, 2);
        at += n;
    }
    CHECK(a.window(Channel::User) == b.window(Channel::User));
    CHECK(a.window(Channel::System) == b.window(Channel::System));
    CHECK(a.window(Channel::User) == c.window(Channel::User));
    CHECK(a.window(Channel::System) == c.window(Channel::System));
    CHECK(a.window(Channel::User).size() == 32000);
}

TEST_CASE("stream input and config errors") {
    const Model model(small_config());
    StreamSession s(model, stream_config(10.0, 2.0));
    const std::vector<double> mono(100, 0.0);
    try {
        s.push_audio(mono, 1);
        FAIL("expected format error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Format);
    }
    CHECK_THROWS_AS(s.push_audio(mono, 3), Error);
    CHECK_THROWS_AS(StreamSession(model, stream_config(50.0, 2.0)), Error);
    StreamConfig bad = stream_config(10.0, 2.0);
    bad.emit_threshold = 1.0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = stream_config(10.0, 0.0);
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("identical sessions tick identically; stride repeats outputs") {
    const Model model(small_config());
    StreamSession a(model, stream_config(10.0, 2.0)), b(model, stream_config(10.0, 2.0));
    StreamConfig strided = stream_config(10.0, 2.0);
    strided.tick_stride = 2;
    StreamSession c(model, strided);
    const auto x = ramp(1600, 0.5);
    for (int t = 0; t < 4; ++t) {
        a.push_audio(x, x);
        b.push_audio(x, x);
        c.push_audio(x, x);
        const auto pa = a.tick(), pb = b.tick(), pc = c.tick();
        CHECK(pa.p_nod == pb.p_nod);
        CHECK(pa.p_vap == pb.p_vap);
        if (t % 2 == 0) CHECK(pc.p_nod == pa.p_nod);
    }
}

TEST_CASE("ticking through a file matches the batch path") {
    for (double rate : {10.0, 50.0}) {
        const Model model(small_config(rate));
        SyntheticDialogueConfig sc;
        sc.duration = rate == 10.0 ? 12.0 : 4.0;
        sc.seed = 3;
        const auto d = generate_synthetic_dialogue(sc);
        const StreamConfig cfg = stream_config(rate, rate == 10.0 ? 5.0 : 1.0);
        const auto streamed = stream_file(model, d.audio, cfg);
        const auto batch = batch_predict(model, d.audio, cfg.window_seconds);
        REQUIRE(streamed.frames.size() == batch.size());
        double worst = 0.0;
        for (std::size_t t = 0; t < batch.size(); ++t) {
            for (std::size_t c = 0; c < batch[t].p_nod.size(); ++c) {
                worst = std::max(worst, std::abs(batch[t].p_nod[c] - streamed.frames[t].p_nod[c]));
            }
            for (std::size_t c = 0; c < 256; ++c) {
                worst = std::max(worst, std::abs(batch[t].p_vap[c] - streamed.frames[t].p_vap[c]));
            }
            worst = std::max(worst, std::abs(*batch[t].p_bc - *streamed.frames[t].p_bc));
            worst = std::max(worst, std::abs(batch[t].p_vad[1] - streamed.frames[t].p_vad[1]));
        }
        MESSAGE(rate << " Hz: max difference " << worst);
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("hysteresis rules") {
    const Model model(small_config());
    StreamConfig cfg = stream_config(10.0, 2.0);
    {
        StreamSession s(model, cfg);
        std::size_t events = 0;
        for (int t = 0; t < 100; ++t) {
            advance(s);
            events += s.emit_events(frame_with({0.55, 0.45, 0.0, 0.0}, 0.4)).size();
            events += s.emit_events(frame_with({0.3, 0.2, 0.45, 0.05}, 0.49)).size();
        }
        CHECK(events == 0);
    }
    {
        StreamSession s(model, cfg);
        std::vector<NodEvent> got;
        for (int t = 0; t < 3; ++t) {
            advance(s);
            const auto e = s.emit_events(frame_with({0.05, 0.02, 0.9, 0.03}));
            if (t < 2) CHECK(e.empty());
            got.insert(got.end(), e.begin(), e.end());
        }
        REQUIRE(got.size() == 1);
        CHECK(got[0].type == EventType::Long);
        CHECK(got[0].t == doctest::Approx(0.3));
        CHECK(got[0].p == 0.9);
    }
    {
        cfg.refractory = {1.0, 1.0, 1.0};
        StreamSession s(model, cfg);
        std::size_t events = 0;
        // surge, gap, second surge starting 0.5 s after the first
        for (int t = 0; t < 12; ++t) {
            advance(s);
            const bool high = t < 3 || (t >= 5 && t < 8);
            events += s.emit_events(frame_with(high ? std::vector<double>{0.05, 0.02, 0.9, 0.03}
                                                    : std::vector<double>{0.9, 0.05, 0.03, 0.02}))
                          .size();
        }
        CHECK(events == 1);
    }
}

TEST_CASE("no event storms on random probabilities") {
    const Model model(small_config());
    StreamConfig cfg = stream_config(10.0, 2.0);
    StreamSession s(model, cfg);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::array<std::size_t, 5> per{};
    for (int t = 0; t < 600; ++t) {
        advance(s);
        std::vector<double> p{u(rng) * 0.2, u(rng), u(rng), u(rng)};
        double sum = 0.0;
        for (double v : p) sum += v;
        for (double& v : p) v /= sum;
        // sticky classes so runs actually form
        if (t % 7 < 5) p = {0.02, 0.03, 0.05, 0.9};
        for (const NodEvent& e : s.emit_events(frame_with(p, u(rng) > 0.2 ? 0.9 : 0.1))) ++per[static_cast<std::size_t>(e.type)];
    }
    for (std::size_t k = 0; k < per.size(); ++k) CHECK(per[k] <= static_cast<std::size_t>(60.0 / 0.8));
    CHECK(per[static_cast<std::size_t>(EventType::LongP)] > 0);
}

TEST_CASE("self feedback mixes the token into listener audio") {
    const Model model(small_config());
    const auto& token = backchannel_token();
    REQUIRE(token.size() == 4800);
    const std::vector<double> zeros(3200, 0.0);
    {
        StreamSession off(model, stream_config(10.0, 2.0));
        off.push_audio(zeros, zeros);
        const auto before = off.window(Channel::System);
        off.apply_self_feedback({0.2, EventType::Backchannel, 0.9});
        off.push_audio(zeros, zeros);
        CHECK(off.window(Channel::System) == before);
    }
    StreamConfig cfg = stream_config(10.0, 2.0);
    cfg.self_feedback = true;
    StreamSession s(model, cfg);
    s.apply_self_feedback({0.0, EventType::Long, 0.9});  // nods are not mixed
    s.apply_self_feedback({0.0, EventType::Backchannel, 0.9});
    const std::vector<double> loud(2000, 0.3);
    s.push_audio(loud, loud);
    s.apply_self_feedback({0.1, EventType::Backchannel, 0.9});
    s.push_audio(std::vector<double>(8000, 0.0), std::vector<double>(8000, 0.0));
    const auto w = s.window(Channel::System);
    const std::size_t base = w.size() - 10000;
    for (std::size_t i = 0; i < 10000; ++i) {
        double expected = i < 2000 ? 0.3 : 0.0;
        if (i < token.size()) expected += token[i];
        if (i >= 2000 && i - 2000 < token.size()) expected += token[i - 2000];
        expected = std::clamp(expected, -1.0, 1.0);
        REQUIRE(w[base + i] == doctest::Approx(expected).epsilon(1e-15));
    }
    CHECK(s.window(Channel::User)[base] == 0.3);
}

TEST_CASE("rtf bookkeeping") {
    const Model model(small_config());
    StereoAudio a;
    a.user = ramp(60 * 16000, 0.2);
    a.system = ramp(60 * 16000, 0.1);
    const auto r = measure_rtf(model, a, stream_config(10.0, 2.0));
    CHECK(r.ticks == 600);
    CHECK(r.audio_seconds == doctest::Approx(60.0));
    CHECK(r.rtf > 0.0);
    CHECK(r.rtf == doctest::Approx(r.wall_seconds / r.audio_seconds));
    CHECK(r.p50_ms <= r.p95_ms);
    CHECK(r.p95_ms <= r.max_ms);
    CHECK(rtf_report_to_json(r).find("\"p95_ms\"") != std::string::npos);
    StereoAudio tiny;
    tiny.user.assign(1000, 0.0);
    tiny.system.assign(1000, 0.0);
    CHECK_THROWS_AS(measure_rtf(model, tiny, stream_config(10.0, 2.0)), Error);
    CHECK(event_to_json({1.5, EventType::LongP, 0.75}) == R"({"p":0.75,"t":1.5,"type":"long_p"})");
}
