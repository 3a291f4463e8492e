#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "nodpred/autodiff.hpp"
#include "nodpred/matrix.hpp"
#include "nodpred/model_config.hpp"

namespace nodpred {

enum class Channel { User = 0, System = 1 };

struct WaveformChunk {
    int sample_rate = kAudioRate;
    std::vector<double> samples;  // within [-1, 1]
    Channel channel = Channel::User;

    void validate() const;
};

struct FrameEmbedding {
    double frame_rate = 0.0;
    Matrix data;  // frames x dim

    std::size_t frames() const noexcept { return data.rows(); }
    std::size_t dim() const noexcept { return data.cols(); }
};

/// floor(window_seconds * frame_rate), tolerant of binary rounding (2.5 s at 10 Hz is 25).
std::size_t frame_count(double window_seconds, double frame_rate);

/// Causal strided-convolution encoder. Kernel equals stride at every stage
/// (20, 4, 4 samples of the previous stage), so a 50 Hz frame sees exactly its
/// own 20 ms block of audio. The stack is followed by layer norm and, at
/// 10 Hz, an average over 5 consecutive frames.
class AudioEncoder {
public:
    /// Registers "encoder.*" parameters, randomly initialized from rng.
    AudioEncoder(autodiff::ParameterStore& store, const ModelConfig& cfg, std::mt19937_64& rng);

    /// Embeds samples whose length is a whole number of model frames.
    autodiff::Var encode(autodiff::Tape& tape, std::span<const double> samples) const;

    /// Inference on exactly one window; the chunk must hold cfg.window_samples() samples.
    FrameEmbedding encode_window(const WaveformChunk& chunk) const;

private:
    ModelConfig cfg_;
    const autodiff::Parameter* w1_;
    const autodiff::Parameter* b1_;
    const autodiff::Parameter* w2_;
    const autodiff::Parameter* b2_;
    const autodiff::Parameter* w3_;
    const autodiff::Parameter* b3_;
    const autodiff::Parameter* gain_;
    const autodiff::Parameter* shift_;
};

/// The fixed 300 ms listener token ("uh-huh"-like voiced burst) used for
/// backchannel self-feedback and in synthetic dialogues.
const std::vector<double>& backchannel_token();

/// Fan-in scaled normal initialization shared by all learned layers.
Matrix init_weight(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng, double gain = 1.0);

}  // namespace nodpred
