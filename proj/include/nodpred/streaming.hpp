#pragma once

#include <array>
#include <cstddef>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nodpred/model.hpp"
#include "nodpred/motion.hpp"
#include "nodpred/wav.hpp"

namespace nodpred {

struct StreamConfig {
    double frame_rate = 10.0;
    double window_seconds = 20.0;
    double emit_threshold = 0.5;
    std::size_t min_consecutive = 3;
    std::array<double, 3> refractory{0.8, 1.2, 1.5};  // s, short / long / long_p
    double bc_refractory = 1.5;                       // s
    bool self_feedback = false;
    std::size_t tick_stride = 1;  // run the model every k-th tick, repeat the last output otherwise

    void validate() const;
};

inline constexpr std::array<double, 5> kStreamWindows{20.0, 10.0, 5.0, 2.5, 1.0};

/// Nod events carry the predicted type; the 2-class timing model emits Nod.
enum class EventType { Short, Long, LongP, Nod, Backchannel };
std::string_view to_string(EventType t) noexcept;

struct NodEvent {
    double t = 0.0;  // stream clock, s
    EventType type = EventType::Nod;
    double p = 0.0;
};

std::string event_to_json(const NodEvent& e);

/// One live stream. push_audio and tick may run on different threads
/// (one producer, one consumer); the model is shared read-only.
class StreamSession {
public:
    StreamSession(const Model& model, const StreamConfig& cfg);

    const StreamConfig& config() const noexcept { return cfg_; }

    /// Interleaved samples; anything but 2 channels is a format error.
    void push_audio(std::span<const double> interleaved, int channels);
    void push_audio(std::span<const double> user, std::span<const double> system);

    /// Seconds of audio received so far.
    double stream_time() const;
    /// Current window of one channel, oldest sample first, zero-padded at cold start.
    std::vector<double> window(Channel ch) const;

    /// Prediction for the latest frame of the current window.
    PredictionFrame tick();

    /// Hysteresis: threshold, consecutive ticks, refractory. Call once per tick.
    std::vector<NodEvent> emit_events(const PredictionFrame& frame);

    /// Mixes the backchannel token into incoming listener audio from now on.
    /// No effect unless self_feedback is on and the event is a backchannel.
    void apply_self_feedback(const NodEvent& event);

private:
    struct Ring {
        std::vector<double> data;
        std::size_t head = 0;  // next write
        void push(double v) {
            data[head] = v;
            head = (head + 1) % data.size();
        }
        std::vector<double> ordered() const;
    };
    struct Injection {
        std::size_t pos = 0;
    };

    void push_locked(std::span<const double> user, std::span<const double> system, std::size_t stride);

    const Model& model_;
    StreamConfig cfg_;
    mutable std::mutex mu_;
    Ring user_;
    Ring system_;
    std::size_t received_ = 0;
    std::vector<Injection> injections_;

    std::size_t ticks_ = 0;
    std::optional<PredictionFrame> last_;

    // emission state
    int run_class_ = -1;
    std::size_t run_length_ = 0;
    bool run_fired_ = false;
    std::optional<NodEvent> last_nod_;
    std::size_t bc_run_ = 0;
    bool bc_fired_ = false;
    std::optional<double> last_bc_;
};

/// Offline path: encodes the whole file once and runs the transformer on each
/// frame's window of embeddings (silence-padded at the start). Frame t matches
/// the tick issued after t + 1 frames have been pushed.
std::vector<PredictionFrame> batch_predict(const Model& model, const StereoAudio& audio, double window_seconds);

struct RtfReport {
    double audio_seconds = 0.0;  // processed audio, all repeats
    double wall_seconds = 0.0;
    double rtf = 0.0;
    double p50_ms = 0.0;
    double p95_ms = 0.0;
    double max_ms = 0.0;
    std::size_t ticks = 0;
    double window_seconds = 0.0;
};

std::string rtf_report_to_json(const RtfReport& r);

/// Pushes the file frame by frame and ticks back-to-back; only tick time counts.
RtfReport measure_rtf(const Model& model, const StereoAudio& audio, const StreamConfig& cfg, std::size_t repeat = 1);

/// Streams a file through a session; returns every tick's prediction and the events.
struct StreamResult {
    std::vector<PredictionFrame> frames;
    std::vector<NodEvent> events;
};
StreamResult stream_file(const Model& model, const StereoAudio& audio, const StreamConfig& cfg);

}  // namespace nodpred
