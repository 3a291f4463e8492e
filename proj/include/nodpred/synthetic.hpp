#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "nodpred/motion.hpp"
#include "nodpred/wav.hpp"

namespace nodpred {

/// Stand-in for a recorded dialogue: the user (speaker) talks in bursts of
/// amplitude-modulated noise, the system (listener) nods near burst ends and
/// sometimes answers with a short backchannel token.
struct SyntheticDialogueConfig {
    double duration = 30.0;                                    // s
    std::array<double, 3> nod_time_ratios{0.089, 0.124, 0.044};  // short, long, long_p
    double bc_cooccur_prob = 0.6;                              // long / long_p nods with a token
    double burst_min = 1.0;                                    // s of continuous speech
    double burst_max = 2.6;
    double pause_min = 0.4;                                    // s between bursts
    double pause_max = 1.2;
    double cue_lead = 0.3;  // s the closing cue (slower, fading, darker speech) precedes a nod's shifted label
    double motion_rate = 200.0;
    double motion_noise = 0.0005;  // rad
    bool render_audio = true;
    std::uint64_t seed = 1;

    void validate() const;
};

struct SyntheticDialogue {
    StereoAudio audio;  // empty when render_audio is off
    MotionTrace motion;
    std::vector<NodSegment> nods;  // where the annotator should find them, typed
    std::vector<TimeInterval> backchannels;
    std::vector<TimeInterval> user_speech;
    std::vector<TimeInterval> system_speech;
};

SyntheticDialogue generate_synthetic_dialogue(const SyntheticDialogueConfig& cfg);

/// Fraction of the dialogue covered by each nod type (short, long, long_p).
std::array<double, 3> nod_time_ratios(const std::vector<NodSegment>& nods, double duration);

}  // namespace nodpred
