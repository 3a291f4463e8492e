#pragma once

#include <string>
#include <vector>

namespace nodpred {

/// Two-channel dialogue audio: channel 0 = user (speaker), channel 1 = system (listener).
struct StereoAudio {
    int sample_rate = 16000;
    std::vector<double> user;
    std::vector<double> system;

    double duration() const noexcept { return static_cast<double>(user.size()) / sample_rate; }
};

/// Reads 16-bit PCM. Anything other than 2 channels is a format error; a rate
/// other than 16 kHz is an unsupported-rate error.
StereoAudio read_wav(const std::string& path);
void write_wav(const std::string& path, const StereoAudio& audio);

/// Rounds to 16-bit PCM and back, which is what a write/read cycle does to samples.
double quantize_pcm16(double x) noexcept;

}  // namespace nodpred
