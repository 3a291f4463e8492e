#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nodpred {

/// Uniformly sampled head-pitch signal. Radians, positive = head up.
struct MotionTrace {
    double sample_rate = 100.0;
    double start_time = 0.0;
    std::vector<double> pitch;

    double time_at(std::size_t i) const { return start_time + static_cast<double>(i) / sample_rate; }
    /// Time from the first sample to one period past the last.
    double duration() const { return static_cast<double>(pitch.size()) / sample_rate; }
    void validate() const;
};

enum class NodType { Short, Long, LongP };

inline constexpr int kNoNod = 0;
inline constexpr int kTypeClasses = 4;  // no-nod, short, long, long_p

/// Class index used in 4-class frame labels (no-nod is 0).
int nod_class_index(NodType type) noexcept;
NodType nod_type_from_class(int cls);
std::string_view to_string(NodType type) noexcept;
NodType parse_nod_type(std::string_view name);

struct NodSegment {
    double start = 0.0;
    double end = 0.0;
    std::optional<NodType> type;  // unset until classified
    double amplitude = 0.0;

    double duration() const { return end - start; }
};

struct TimeInterval {
    double start = 0.0;
    double end = 0.0;
};

/// Per-frame ground truth. nod_class holds the 4-class labels; the timing
/// task collapses them with `timing_classes`.
struct FrameLabels {
    double frame_rate = 50.0;
    std::vector<int> nod_class;
    std::vector<std::uint8_t> backchannel;
    std::vector<std::uint8_t> vad_user;
    std::vector<std::uint8_t> vad_system;

    std::size_t frames() const noexcept { return nod_class.size(); }
    void validate(int num_classes = kTypeClasses) const;
};

/// Maps 4-class labels to the 2-class timing task (any nod -> 1).
std::vector<int> timing_classes(const std::vector<int>& type_classes);

struct AnnotationConfig {
    std::size_t smooth_window = 7;  // frames at 100 Hz
    double grad_on = 0.15;          // rad/s, downward rate that opens a segment
    double grad_off = 0.08;         // rad/s, |rate| below this counts as still
    double min_duration = 0.1;      // s
    double merge_gap = 0.08;        // s of |rate| < grad_off that closes a span; closer spans merge
    double tail_min_run = 0.05;     // s, shorter trailing activity runs are trimmed
    std::size_t gradient_span = 3;  // frames each side of the central difference
    double amp_split = 0.04;        // rad, short below
    double swingup_min = 0.015;     // rad
    double swingup_lookback = 0.3;  // s before the segment opens
    double offset = 0.5;            // s, labels shifted earlier by this much

    void validate() const;
};

inline constexpr double kAnnotationRate = 100.0;

/// Linear interpolation onto a 100 Hz grid starting at the first sample.
MotionTrace downsample(const MotionTrace& trace);

/// Centered moving average; the window shrinks symmetrically at the edges.
MotionTrace smooth(const MotionTrace& trace, std::size_t window);

/// Pitch rate in rad/s by central difference over +-span samples.
std::vector<double> pitch_rate(const MotionTrace& trace, std::size_t span);

/// Hysteresis segmentation of downward strokes. A span opens when the
/// downward rate exceeds grad_on and closes after merge_gap of
/// |rate| < grad_off. Trailing activity runs shorter than tail_min_run are
/// trimmed, spans separated by less than merge_gap are joined, and those
/// shorter than min_duration dropped. Input must be the smoothed
/// 100 Hz trace. Returned segments are untyped, disjoint, and time-ordered.
std::vector<NodSegment> detect_nod_segments(const MotionTrace& trace, const AnnotationConfig& cfg);

/// Size of the largest upward excursion in the lookback window before the segment opens.
double swingup_excursion(const NodSegment& segment, const MotionTrace& trace, const AnnotationConfig& cfg);

NodType classify_nod_type(const NodSegment& segment, const MotionTrace& trace, const AnnotationConfig& cfg);

/// Full procedure: downsample, smooth, detect, classify.
std::vector<NodSegment> annotate(const MotionTrace& trace, const AnnotationConfig& cfg);

/// Shifts every segment earlier by `offset` seconds, clipping at t = 0 and
/// dropping segments that end up empty.
std::vector<NodSegment> offset_segments(const std::vector<NodSegment>& segments, double offset);
std::vector<TimeInterval> offset_intervals(const std::vector<TimeInterval>& intervals, double offset);

/// A frame takes a segment's class when its center lies in [start, end).
/// Overlaps resolve LongP > Long > Short.
FrameLabels rasterize_frame_labels(const std::vector<NodSegment>& nods,
                                   const std::vector<TimeInterval>& backchannels,
                                   const std::vector<TimeInterval>& vad_user,
                                   const std::vector<TimeInterval>& vad_system, double frame_rate,
                                   double duration);

std::size_t frame_count_for(double duration, double frame_rate);

// CSV with header `time_s,pitch_rad`.
MotionTrace read_motion_csv(const std::string& path);
void write_motion_csv(const std::string& path, const MotionTrace& trace);

}  // namespace nodpred
