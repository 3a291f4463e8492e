#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace nodpred {

inline constexpr int kAudioRate = 16000;
/// Encoder frames are produced at 50 Hz; 10 Hz operation pools them by 5.
inline constexpr double kEncoderRate = 50.0;
inline constexpr std::size_t kEncoderHop = 320;  // samples per 50 Hz frame
inline constexpr std::size_t kVapStates = 256;

struct ModelConfig {
    double frame_rate = 10.0;      // 50 or 10
    double window_seconds = 20.0;
    std::size_t dim = 64;
    std::size_t self_layers = 1;
    std::size_t cross_layers = 3;
    std::size_t heads = 4;
    std::size_t ffn_dim = 128;
    std::size_t nod_classes = 4;   // 2 = timing task, 4 = type task
    bool monaural = false;
    bool multitask_bc = true;
    std::vector<int> vap_bins{200, 400, 600, 800};  // ms, per channel
    std::size_t encoder_channels1 = 8;
    std::size_t encoder_channels2 = 16;
    std::uint64_t seed = 1;

    void validate() const;

    /// Encoder frames averaged into one model frame.
    std::size_t pool_factor() const;
    std::size_t window_frames() const;
    std::size_t window_samples() const;
    std::size_t samples_per_frame() const;
    /// Model frames covered by the VAP horizon (2 s).
    std::size_t vap_horizon_frames() const;
};

}  // namespace nodpred
