#include "nodpred/audio_frontend.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "nodpred/error.hpp"

namespace nodpred {

using autodiff::Tape;
using autodiff::Var;

void WaveformChunk::validate() const {
    if (sample_rate != kAudioRate) {
        fail(ErrorKind::UnsupportedRate, "audio must be 16000 Hz, got " + std::to_string(sample_rate));
    }
    for (double s : samples) {
        if (!std::isfinite(s) || s < -1.0 || s > 1.0) fail(ErrorKind::Range, "audio samples must be finite and within [-1, 1]");
    }
}

std::size_t frame_count(double window_seconds, double frame_rate) {
    return static_cast<std::size_t>(std::floor(window_seconds * frame_rate + 1e-9));
}

Matrix init_weight(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng, double gain) {
    std::normal_distribution<double> n(0.0, gain / std::sqrt(static_cast<double>(fan_in)));
    Matrix w(fan_in, fan_out);
    for (double& v : w.values()) v = n(rng);
    return w;
}

namespace {

constexpr std::size_t kStride1 = 20;
constexpr std::size_t kStride2 = 4;
constexpr std::size_t kStride3 = 4;
static_assert(kStride1 * kStride2 * kStride3 == kEncoderHop);

}  // namespace

AudioEncoder::AudioEncoder(autodiff::ParameterStore& store, const ModelConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg) {
    cfg_.validate();
    const std::size_t c1 = cfg.encoder_channels1;
    const std::size_t c2 = cfg.encoder_channels2;
    // raw audio is small in amplitude; the first stage gets a larger gain
    w1_ = &store.add("encoder.conv1.weight", init_weight(kStride1, c1, rng, 8.0));
    b1_ = &store.add("encoder.conv1.bias", Matrix(1, c1));
    w2_ = &store.add("encoder.conv2.weight", init_weight(kStride2 * c1, c2, rng));
    b2_ = &store.add("encoder.conv2.bias", Matrix(1, c2));
    w3_ = &store.add("encoder.conv3.weight", init_weight(kStride3 * c2, cfg.dim, rng));
    b3_ = &store.add("encoder.conv3.bias", Matrix(1, cfg.dim));
    gain_ = &store.add("encoder.norm.gain", Matrix(1, cfg.dim, 1.0));
    shift_ = &store.add("encoder.norm.shift", Matrix(1, cfg.dim));
}

Var AudioEncoder::encode(Tape& tape, std::span<const double> samples) const {
    const std::size_t per_frame = cfg_.samples_per_frame();
    if (samples.empty() || samples.size() % per_frame != 0) {
        fail(ErrorKind::Shape, "encoder input must be a whole number of frames (" + std::to_string(per_frame) +
                                   " samples each), got " + std::to_string(samples.size()));
    }
    const std::size_t blocks = samples.size() / kEncoderHop;
    Var x = tape.constant(Matrix(blocks * kStride2 * kStride3, kStride1,
                                 std::vector<double>(samples.begin(), samples.end())));
    using namespace autodiff;
    x = gelu(tape, add_bias(tape, matmul(tape, x, tape.param(*w1_)), tape.param(*b1_)));
    x = reshape(tape, x, blocks * kStride3, kStride2 * cfg_.encoder_channels1);
    x = gelu(tape, add_bias(tape, matmul(tape, x, tape.param(*w2_)), tape.param(*b2_)));
    x = reshape(tape, x, blocks, kStride3 * cfg_.encoder_channels2);
    x = add_bias(tape, matmul(tape, x, tape.param(*w3_)), tape.param(*b3_));
    x = layer_norm(tape, x, tape.param(*gain_), tape.param(*shift_));
    return pool_rows(tape, x, cfg_.pool_factor());
}

FrameEmbedding AudioEncoder::encode_window(const WaveformChunk& chunk) const {
    chunk.validate();
    if (chunk.samples.size() != cfg_.window_samples()) {
        fail(ErrorKind::Shape, "window needs " + std::to_string(cfg_.window_samples()) + " samples, got " +
                                   std::to_string(chunk.samples.size()));
    }
    Tape tape(false);
    const Var out = encode(tape, chunk.samples);
    return FrameEmbedding{cfg_.frame_rate, tape.value(out)};
}

const std::vector<double>& backchannel_token() {
    static const std::vector<double> token = [] {
        // two syllables of a 140 Hz voiced buzz with a falling second pitch
        const std::size_t n = kAudioRate * 3 / 10;
        std::vector<double> w(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double t = static_cast<double>(i) / kAudioRate;
            const bool second = t >= 0.15;
            const double local = second ? t - 0.15 : t;
            const double env = std::sin(std::numbers::pi * local / 0.15);
            const double f0 = second ? 140.0 - 60.0 * local : 140.0;
            double v = 0.0;
            for (int h = 1; h <= 5; ++h) v += std::sin(2.0 * std::numbers::pi * f0 * h * local) / h;
            w[i] = 0.3 * env * env * v / 2.3;
        }
        return w;
    }();
    return token;
}

}  // namespace nodpred
