#pragma once

#include <string>
#include <utility>
#include <vector>

#include "nodpred/motion.hpp"
#include "nodpred/synthetic.hpp"
#include "nodpred/wav.hpp"

namespace nodpred {

/// One stereo recording with frame labels at the model frame rate.
struct Dialogue {
    std::string name;
    StereoAudio audio;
    FrameLabels labels;
};

using NamedLabels = std::pair<std::string, FrameLabels>;

/// Label pipeline: annotate the listener's head motion, shift nods and
/// backchannels earlier by the label offset, rasterize with the speech intervals.
FrameLabels labels_from_motion(const MotionTrace& motion, const std::vector<TimeInterval>& backchannels,
                               const std::vector<TimeInterval>& user_speech,
                               const std::vector<TimeInterval>& system_speech, double frame_rate, double duration,
                               const AnnotationConfig& cfg = {});

Dialogue dialogue_from_synthetic(const SyntheticDialogue& d, double frame_rate, const std::string& name);

/// Per-frame speech activity from RMS energy in each frame.
std::vector<std::uint8_t> energy_vad(const std::vector<double>& samples, double frame_rate, double threshold = 0.02);
std::vector<TimeInterval> active_intervals(const std::vector<std::uint8_t>& flags, double frame_rate);

// One JSON object per dialogue:
// {"dialogue", "frame_rate", "nod_class": [...], "backchannel": [...], "vad_user": [...], "vad_system": [...]}
void write_labels_jsonl(const std::string& path, const std::vector<NamedLabels>& labels);
std::vector<NamedLabels> read_labels_jsonl(const std::string& path);

struct ManifestEntry {
    std::string name;
    std::string wav;
    std::string labels;  // labels JSONL, or
    std::string motion;  // motion CSV plus backchannel intervals
    std::vector<TimeInterval> backchannels;
};

/// {"dialogues": [{"name", "wav", "labels"} | {"name", "wav", "motion", "backchannels": [[s, e], ...]}]}
/// Relative paths resolve against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<Dialogue> load_dialogues(const std::string& manifest_path, double frame_rate);

}  // namespace nodpred
