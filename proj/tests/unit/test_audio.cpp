#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <vector>

#include "doctest.h"
#include "nodpred/audio_frontend.hpp"
#include "nodpred/error.hpp"
#include "nodpred/wav.hpp"

using namespace nodpred;

namespace {

ModelConfig encoder_config(double rate, double window) {
    ModelConfig cfg;
    cfg.frame_rate = rate;
    cfg.window_seconds = window;
    return cfg;
}

std::vector<double> noise(std::size_t n, double amplitude, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-amplitude, amplitude);
    std::vector<double> x(n);
    for (double& v : x) v = u(rng);
    return x;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("frame_count") {
    CHECK(frame_count(20.0, 50.0) == 1000);
    CHECK(frame_count(10.0, 10.0) == 100);
    CHECK(frame_count(1.0, 50.0) == 50);
    CHECK(frame_count(2.5, 10.0) == 25);
    CHECK(frame_count(0.3, 10.0) == 3);
}

TEST_CASE("encode_window shape and determinism") {
    const ModelConfig cfg = encoder_config(50.0, 20.0);
    autodiff::ParameterStore store;
    std::mt19937_64 rng(1);
    AudioEncoder enc(store, cfg, rng);
    WaveformChunk chunk;
    chunk.samples.assign(cfg.window_samples(), 0.0);
    const FrameEmbedding a = enc.encode_window(chunk);
    CHECK(a.frames() == 1000);
    CHECK(a.dim() == cfg.dim);
    for (double v : a.data.values()) CHECK(std::isfinite(v));
    CHECK(enc.encode_window(chunk).data == a.data);

    autodiff::ParameterStore store2;
    std::mt19937_64 rng2(1);
    AudioEncoder enc2(store2, cfg, rng2);
    CHECK(enc2.encode_window(chunk).data == a.data);
}

TEST_CASE("encoder is causal at both frame rates") {
    std::mt19937_64 rng(3);
    for (double rate : {50.0, 10.0}) {
        const ModelConfig cfg = encoder_config(rate, 2.0);
        autodiff::ParameterStore store;
        AudioEncoder enc(store, cfg, rng);
        const std::size_t tail = cfg.samples_per_frame();  // 20 ms at 50 Hz, 100 ms at 10 Hz
        for (int trial = 0; trial < 50; ++trial) {
            WaveformChunk a;
            a.samples = noise(cfg.window_samples(), 0.5, rng);
            WaveformChunk b = a;
            const auto changed = noise(tail, 0.5, rng);
            std::copy(changed.begin(), changed.end(), b.samples.end() - static_cast<std::ptrdiff_t>(tail));
            const Matrix ea = enc.encode_window(a).data;
            const Matrix eb = enc.encode_window(b).data;
            for (std::size_t f = 0; f + 1 < ea.rows(); ++f) {
                for (std::size_t c = 0; c < ea.cols(); ++c) REQUIRE(ea(f, c) == eb(f, c));
            }
            bool last_differs = false;
            for (std::size_t c = 0; c < ea.cols(); ++c) last_differs |= ea(ea.rows() - 1, c) != eb(ea.rows() - 1, c);
            CHECK(last_differs);
        }
    }
}

TEST_CASE("encoder responds to energy") {
    const ModelConfig cfg = encoder_config(10.0, 1.0);
    autodiff::ParameterStore store;
    std::mt19937_64 rng(4);
    AudioEncoder enc(store, cfg, rng);
    WaveformChunk silent;
    silent.samples.assign(cfg.window_samples(), 0.0);
    WaveformChunk speech;
    speech.samples = noise(cfg.window_samples(), 1.0, rng);
    for (std::size_t i = 0; i < speech.samples.size(); ++i) {
        speech.samples[i] *= 0.3 * (0.6 + 0.4 * std::sin(2.0 * 3.14159 * 4.0 * static_cast<double>(i) / kAudioRate));
    }
    CHECK_FALSE(enc.encode_window(silent).data == enc.encode_window(speech).data);
}

TEST_CASE("encode_window input contract") {
    const ModelConfig cfg = encoder_config(10.0, 1.0);
    autodiff::ParameterStore store;
    std::mt19937_64 rng(5);
    AudioEncoder enc(store, cfg, rng);
    WaveformChunk chunk;
    chunk.samples.assign(cfg.window_samples() - 1, 0.0);
    try {
        (void)enc.encode_window(chunk);
        FAIL("expected a shape error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Shape);
    }
    chunk.samples.assign(cfg.window_samples(), 0.0);
    chunk.samples[10] = 1.5;
    CHECK_THROWS_AS((void)enc.encode_window(chunk), Error);
    chunk.samples[10] = 0.0;
    chunk.sample_rate = 8000;
    CHECK_THROWS_AS((void)enc.encode_window(chunk), Error);
}

TEST_CASE("backchannel token") {
    const auto& token = backchannel_token();
    CHECK(token.size() == 4800);
    double energy = 0.0;
    for (double v : token) {
        CHECK(std::abs(v) <= 1.0);
        energy += v * v;
    }
    CHECK(energy > 1.0);
}

TEST_CASE("wav round trip and format checks") {
    std::mt19937_64 rng(6);
    StereoAudio audio;
    audio.user = noise(1600, 0.9, rng);
    audio.system = noise(1600, 0.2, rng);
    audio.user[0] = 1.0;
    audio.user[1] = -1.0;
    const std::string path = temp_path("nodpred_test.wav");
    write_wav(path, audio);
    const StereoAudio back = read_wav(path);
    REQUIRE(back.user.size() == 1600);
    CHECK(back.sample_rate == 16000);
    CHECK(back.duration() == doctest::Approx(0.1));
    for (std::size_t i = 0; i < 1600; ++i) {
        CHECK(back.user[i] == quantize_pcm16(audio.user[i]));
        CHECK(back.system[i] == quantize_pcm16(audio.system[i]));
    }

    // same header but mono
    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    std::string mono = bytes;
    mono[22] = 1;
    {
        std::ofstream out(temp_path("nodpred_mono.wav"), std::ios::binary);
        out << mono;
    }
    try {
        (void)read_wav(temp_path("nodpred_mono.wav"));
        FAIL("expected a format error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Format);
    }
    std::string slow = bytes;
    slow[24] = static_cast<char>(0x40);  // 8000 Hz
    slow[25] = static_cast<char>(0x1f);
    {
        std::ofstream out(temp_path("nodpred_8k.wav"), std::ios::binary);
        out << slow;
    }
    try {
        (void)read_wav(temp_path("nodpred_8k.wav"));
        FAIL("expected an unsupported-rate error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::UnsupportedRate);
    }
    CHECK_THROWS_AS((void)read_wav(temp_path("nodpred_missing.wav")), Error);
}
