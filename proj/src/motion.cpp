#include "nodpred/motion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "nodpred/error.hpp"
#include "nodpred/text.hpp"

namespace nodpred {

namespace {

constexpr double kTimeEps = 1e-9;

std::size_t seconds_to_frames(double seconds, double rate) {
    return static_cast<std::size_t>(std::llround(seconds * rate));
}

}  // namespace

void MotionTrace::validate() const {
    if (!(sample_rate > 0.0) || !std::isfinite(sample_rate)) fail(ErrorKind::Range, "motion trace sample rate must be positive");
    if (pitch.empty()) fail(ErrorKind::Range, "motion trace is empty");
    for (double v : pitch) {
        if (!std::isfinite(v)) fail(ErrorKind::Range, "motion trace contains a non-finite value");
    }
}

int nod_class_index(NodType type) noexcept {
    switch (type) {
        case NodType::Short: return 1;
        case NodType::Long: return 2;
        case NodType::LongP: return 3;
    }
    return 0;
}

NodType nod_type_from_class(int cls) {
    switch (cls) {
        case 1: return NodType::Short;
        case 2: return NodType::Long;
        case 3: return NodType::LongP;
        default: fail(ErrorKind::Range, "class " + std::to_string(cls) + " is not a nod type");
    }
}

std::string_view to_string(NodType type) noexcept {
    switch (type) {
        case NodType::Short: return "short";
        case NodType::Long: return "long";
        case NodType::LongP: return "long_p";
    }
    return "unknown";
}

NodType parse_nod_type(std::string_view name) {
    if (name == "short") return NodType::Short;
    if (name == "long") return NodType::Long;
    if (name == "long_p") return NodType::LongP;
    fail(ErrorKind::Format, "unknown nod type '" + std::string(name) + "'");
}

void FrameLabels::validate(int num_classes) const {
    if (!(frame_rate > 0.0)) fail(ErrorKind::Range, "frame rate must be positive");
    const std::size_t n = nod_class.size();
    if (backchannel.size() != n || vad_user.size() != n || vad_system.size() != n) {
        fail(ErrorKind::Shape, "frame label sequences differ in length");
    }
    for (int c : nod_class) {
        if (c < 0 || c >= num_classes) fail(ErrorKind::Range, "nod class out of range");
    }
}

std::vector<int> timing_classes(const std::vector<int>& type_classes) {
    std::vector<int> out(type_classes.size());
    std::transform(type_classes.begin(), type_classes.end(), out.begin(),
                   [](int c) { return c > 0 ? 1 : 0; });
    return out;
}

void AnnotationConfig::validate() const {
    if (smooth_window == 0 || smooth_window % 2 == 0) fail(ErrorKind::Config, "smooth_window must be odd and >= 1");
    if (!(grad_off > 0.0) || !(grad_on > grad_off)) fail(ErrorKind::Config, "need grad_on > grad_off > 0");
    if (!(amp_split > 0.0)) fail(ErrorKind::Config, "amp_split must be positive");
    if (!(offset >= 0.0)) fail(ErrorKind::Config, "offset must be non-negative");
    if (min_duration < 0.0 || merge_gap < 0.0 || swingup_min < 0.0 || swingup_lookback < 0.0 || tail_min_run < 0.0) {
        fail(ErrorKind::Config, "durations and thresholds must be non-negative");
    }
    if (gradient_span == 0) fail(ErrorKind::Config, "gradient_span must be >= 1");
}

MotionTrace downsample(const MotionTrace& trace) {
    trace.validate();
    if (trace.sample_rate < kAnnotationRate - kTimeEps) {
        fail(ErrorKind::UnsupportedRate, "motion trace rate " + std::to_string(trace.sample_rate) +
                                             " Hz is below " + std::to_string(kAnnotationRate) + " Hz");
    }
    if (std::abs(trace.sample_rate - kAnnotationRate) < kTimeEps) return trace;

    const std::size_t n = trace.pitch.size();
    const double span = static_cast<double>(n - 1) / trace.sample_rate;
    const auto out_n = static_cast<std::size_t>(std::floor(span * kAnnotationRate + kTimeEps)) + 1;
    MotionTrace out;
    out.sample_rate = kAnnotationRate;
    out.start_time = trace.start_time;
    out.pitch.resize(out_n);
    for (std::size_t k = 0; k < out_n; ++k) {
        const double pos = static_cast<double>(k) * trace.sample_rate / kAnnotationRate;
        auto lo = static_cast<std::size_t>(std::floor(pos + kTimeEps));
        lo = std::min(lo, n - 1);
        const double frac = std::max(0.0, pos - static_cast<double>(lo));
        if (lo + 1 >= n || frac < kTimeEps) {
            out.pitch[k] = trace.pitch[lo];
        } else {
            out.pitch[k] = trace.pitch[lo] + frac * (trace.pitch[lo + 1] - trace.pitch[lo]);
        }
    }
    return out;
}

MotionTrace smooth(const MotionTrace& trace, std::size_t window) {
    trace.validate();
    if (window == 0 || window % 2 == 0) fail(ErrorKind::Config, "smoothing window must be odd and >= 1");
    if (window > trace.pitch.size()) fail(ErrorKind::Config, "smoothing window exceeds trace length");
    const std::size_t n = trace.pitch.size();
    const std::size_t half = window / 2;
    MotionTrace out = trace;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t reach = std::min({half, i, n - 1 - i});
        double sum = 0.0;
        for (std::size_t j = i - reach; j <= i + reach; ++j) sum += trace.pitch[j];
        out.pitch[i] = sum / static_cast<double>(2 * reach + 1);
    }
    return out;
}

std::vector<double> pitch_rate(const MotionTrace& trace, std::size_t span) {
    const std::size_t n = trace.pitch.size();
    std::vector<double> rate(n, 0.0);
    if (n < 2) return rate;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i >= span ? i - span : 0;
        const std::size_t hi = std::min(i + span, n - 1);
        rate[i] = (trace.pitch[hi] - trace.pitch[lo]) * trace.sample_rate / static_cast<double>(hi - lo);
    }
    return rate;
}

std::vector<NodSegment> detect_nod_segments(const MotionTrace& trace, const AnnotationConfig& cfg) {
    cfg.validate();
    trace.validate();
    const std::vector<double> rate = pitch_rate(trace, cfg.gradient_span);
    const std::size_t n = rate.size();
    const std::size_t merge_frames = std::max<std::size_t>(1, seconds_to_frames(cfg.merge_gap, trace.sample_rate));
    const std::size_t tail_frames = seconds_to_frames(cfg.tail_min_run, trace.sample_rate);

    struct Span {
        std::size_t begin;
        std::size_t end;  // one past the last active frame
    };
    std::vector<Span> spans;
    bool open = false;
    std::size_t begin = 0;
    std::size_t last_active = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!open) {
            if (-rate[i] > cfg.grad_on) {
                open = true;
                begin = i;
                last_active = i;
            }
            continue;
        }
        if (std::abs(rate[i]) >= cfg.grad_off) {
            last_active = i;
        } else if (i - last_active >= merge_frames) {
            spans.push_back({begin, last_active + 1});
            open = false;
        }
    }
    if (open) spans.push_back({begin, last_active + 1});

    // Drop short bursts of activity trailing the stroke; the return movement
    // is one long active run, flicker around grad_off is not.
    auto active = [&](std::size_t i) { return std::abs(rate[i]) >= cfg.grad_off; };
    for (Span& s : spans) {
        while (tail_frames > 0) {
            std::size_t run_start = s.end - 1;
            while (run_start > s.begin && active(run_start - 1)) --run_start;
            if (s.end - run_start >= tail_frames || run_start == s.begin) break;
            std::size_t prev = run_start - 1;
            while (prev > s.begin && !active(prev)) --prev;
            if (!active(prev)) break;
            s.end = prev + 1;
        }
    }

    std::vector<Span> merged;
    for (const Span& s : spans) {
        if (!merged.empty() && s.begin - merged.back().end < merge_frames) {
            merged.back().end = s.end;
        } else {
            merged.push_back(s);
        }
    }

    std::vector<NodSegment> out;
    for (const Span& s : merged) {
        NodSegment seg;
        // boundaries sit at the threshold crossings, interpolated between frames
        const double period = 1.0 / trace.sample_rate;
        seg.start = trace.time_at(s.begin);
        if (s.begin > 0) {
            const double before = -rate[s.begin - 1];
            const double after = -rate[s.begin];
            seg.start -= period * (after - cfg.grad_on) / (after - before);
        }
        const std::size_t last = s.end - 1;
        seg.end = trace.time_at(last);
        if (last + 1 < n) {
            const double inside = std::abs(rate[last]);
            const double outside = std::abs(rate[last + 1]);
            seg.end += period * (inside - cfg.grad_off) / (inside - outside);
        }
        if (seg.end - seg.start < cfg.min_duration - kTimeEps) continue;
        const auto [lo, hi] = std::minmax_element(trace.pitch.begin() + static_cast<std::ptrdiff_t>(s.begin),
                                                  trace.pitch.begin() + static_cast<std::ptrdiff_t>(s.end));
        seg.amplitude = *hi - *lo;
        if (!(seg.amplitude > 0.0)) continue;
        out.push_back(seg);
    }
    return out;
}

namespace {

std::pair<std::size_t, std::size_t> segment_indices(const NodSegment& segment, const MotionTrace& trace) {
    const double first = trace.start_time;
    const double last = trace.start_time + trace.duration();
    if (segment.start < first - kTimeEps || segment.end > last + kTimeEps || !(segment.start < segment.end)) {
        fail(ErrorKind::Range, "segment lies outside the trace");
    }
    const auto begin = static_cast<std::size_t>(std::llround((segment.start - first) * trace.sample_rate));
    auto end = static_cast<std::size_t>(std::llround((segment.end - first) * trace.sample_rate));
    end = std::clamp(end, begin + 1, trace.pitch.size());
    return {begin, end};
}

}  // namespace

double swingup_excursion(const NodSegment& segment, const MotionTrace& trace, const AnnotationConfig& cfg) {
    const auto [begin, end] = segment_indices(segment, trace);
    (void)end;
    const std::size_t back = seconds_to_frames(cfg.swingup_lookback, trace.sample_rate);
    const std::size_t from = begin >= back ? begin - back : 0;
    double low = trace.pitch[from];
    double best = 0.0;
    for (std::size_t j = from; j <= begin && j < trace.pitch.size(); ++j) {
        low = std::min(low, trace.pitch[j]);
        best = std::max(best, trace.pitch[j] - low);
    }
    return best;
}

NodType classify_nod_type(const NodSegment& segment, const MotionTrace& trace, const AnnotationConfig& cfg) {
    const auto [begin, end] = segment_indices(segment, trace);
    double amplitude = segment.amplitude;
    if (!(amplitude > 0.0)) {
        const auto [lo, hi] = std::minmax_element(trace.pitch.begin() + static_cast<std::ptrdiff_t>(begin),
                                                  trace.pitch.begin() + static_cast<std::ptrdiff_t>(end));
        amplitude = *hi - *lo;
    }
    if (amplitude < cfg.amp_split) return NodType::Short;
    return swingup_excursion(segment, trace, cfg) >= cfg.swingup_min ? NodType::LongP : NodType::Long;
}

std::vector<NodSegment> annotate(const MotionTrace& trace, const AnnotationConfig& cfg) {
    cfg.validate();
    const MotionTrace resampled = downsample(trace);
    std::size_t window = cfg.smooth_window;
    if (window > resampled.pitch.size()) window = resampled.pitch.size() - (resampled.pitch.size() % 2 == 0 ? 1 : 0);
    const MotionTrace smoothed = smooth(resampled, window);
    std::vector<NodSegment> segments = detect_nod_segments(smoothed, cfg);
    for (NodSegment& s : segments) s.type = classify_nod_type(s, smoothed, cfg);
    return segments;
}

std::vector<NodSegment> offset_segments(const std::vector<NodSegment>& segments, double offset) {
    if (!(offset >= 0.0)) fail(ErrorKind::Range, "offset must be non-negative");
    std::vector<NodSegment> out;
    out.reserve(segments.size());
    for (NodSegment s : segments) {
        s.start = std::max(0.0, s.start - offset);
        s.end -= offset;
        if (s.end <= s.start) continue;
        out.push_back(s);
    }
    return out;
}

std::vector<TimeInterval> offset_intervals(const std::vector<TimeInterval>& intervals, double offset) {
    if (!(offset >= 0.0)) fail(ErrorKind::Range, "offset must be non-negative");
    std::vector<TimeInterval> out;
    for (TimeInterval s : intervals) {
        s.start = std::max(0.0, s.start - offset);
        s.end -= offset;
        if (s.end <= s.start) continue;
        out.push_back(s);
    }
    return out;
}

std::size_t frame_count_for(double duration, double frame_rate) {
    if (duration < 0.0) fail(ErrorKind::Range, "duration must be non-negative");
    if (!(frame_rate > 0.0)) fail(ErrorKind::Range, "frame rate must be positive");
    return static_cast<std::size_t>(std::floor(duration * frame_rate + kTimeEps));
}

namespace {

// Inclusive frame index range whose centers lie in [start, end).
std::pair<std::size_t, std::size_t> frames_covering(double start, double end, double rate, std::size_t n) {
    // center_i = (i + 0.5) / rate  >= start  <=>  i >= start * rate - 0.5
    const double lo = std::ceil(start * rate - 0.5 - kTimeEps);
    // center_i < end  <=>  i < end * rate - 0.5
    const double hi = std::ceil(end * rate - 0.5 - kTimeEps) - 1.0;
    const auto first = static_cast<std::size_t>(std::max(0.0, lo));
    if (hi < 0.0 || first >= n) return {1, 0};
    const auto last = std::min(static_cast<std::size_t>(hi), n - 1);
    return {first, last};
}

void mark(std::vector<std::uint8_t>& frames, const std::vector<TimeInterval>& intervals, double rate) {
    for (const TimeInterval& s : intervals) {
        const auto [first, last] = frames_covering(s.start, s.end, rate, frames.size());
        for (std::size_t i = first; i <= last && first <= last; ++i) frames[i] = 1;
    }
}

}  // namespace

FrameLabels rasterize_frame_labels(const std::vector<NodSegment>& nods,
                                   const std::vector<TimeInterval>& backchannels,
                                   const std::vector<TimeInterval>& vad_user,
                                   const std::vector<TimeInterval>& vad_system, double frame_rate,
                                   double duration) {
    const std::size_t n = frame_count_for(duration, frame_rate);
    FrameLabels labels;
    labels.frame_rate = frame_rate;
    labels.nod_class.assign(n, kNoNod);
    labels.backchannel.assign(n, 0);
    labels.vad_user.assign(n, 0);
    labels.vad_system.assign(n, 0);
    for (const NodSegment& s : nods) {
        if (!s.type) fail(ErrorKind::Config, "cannot rasterize an unclassified nod segment");
        const int cls = nod_class_index(*s.type);
        const auto [first, last] = frames_covering(s.start, s.end, frame_rate, n);
        for (std::size_t i = first; i <= last && first <= last; ++i) {
            labels.nod_class[i] = std::max(labels.nod_class[i], cls);
        }
    }
    mark(labels.backchannel, backchannels, frame_rate);
    mark(labels.vad_user, vad_user, frame_rate);
    mark(labels.vad_system, vad_system, frame_rate);
    return labels;
}

MotionTrace read_motion_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open motion trace '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) fail(ErrorKind::Format, "motion trace '" + path + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "time_s,pitch_rad") fail(ErrorKind::Format, "motion trace header must be 'time_s,pitch_rad'");
    std::vector<double> times;
    MotionTrace trace;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) fail(ErrorKind::Format, path + ":" + std::to_string(lineno) + ": expected two columns");
        try {
            std::size_t used = 0;
            const double t = std::stod(line.substr(0, comma), &used);
            const double p = std::stod(line.substr(comma + 1));
            times.push_back(t);
            trace.pitch.push_back(p);
        } catch (const std::exception&) {
            fail(ErrorKind::Format, path + ":" + std::to_string(lineno) + ": malformed number");
        }
    }
    if (times.size() < 2) fail(ErrorKind::Format, "motion trace needs at least two samples");
    for (std::size_t i = 1; i < times.size(); ++i) {
        if (!(times[i] > times[i - 1])) fail(ErrorKind::Format, "motion trace time column must increase");
    }
    const double period = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
    for (std::size_t i = 1; i < times.size(); ++i) {
        if (std::abs((times[i] - times[i - 1]) - period) > 0.1 * period) {
            fail(ErrorKind::Format, "motion trace is not uniformly sampled near t=" + std::to_string(times[i]));
        }
    }
    trace.sample_rate = 1.0 / period;
    // snap to the nominal integer rate when the time column was rounded
    const double nominal = std::round(trace.sample_rate);
    if (std::abs(trace.sample_rate - nominal) < 1e-6 * nominal) trace.sample_rate = nominal;
    trace.start_time = times.front();
    trace.validate();
    return trace;
}

void write_motion_csv(const std::string& path, const MotionTrace& trace) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write '" + path + "'");
    out << "time_s,pitch_rad\n";
    for (std::size_t i = 0; i < trace.pitch.size(); ++i) {
        out << format_double(trace.time_at(i)) << ',' << format_double(trace.pitch[i]) << '\n';
    }
}

}  // namespace nodpred
