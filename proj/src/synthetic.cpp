#include "nodpred/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>

#include "nodpred/audio_frontend.hpp"
#include "nodpred/error.hpp"

namespace nodpred {

void SyntheticDialogueConfig::validate() const {
    if (!(duration > 0.0)) fail(ErrorKind::Config, "synthetic duration must be positive");
    double sum = 0.0;
    for (double r : nod_time_ratios) {
        if (r < 0.0) fail(ErrorKind::Config, "nod time ratios must be non-negative");
        sum += r;
    }
    if (sum >= 1.0) fail(ErrorKind::Config, "nod time ratios must sum below 1");
    if (bc_cooccur_prob < 0.0 || bc_cooccur_prob > 1.0) fail(ErrorKind::Config, "bc_cooccur_prob must be in [0, 1]");
    if (!(burst_min > 0.0) || burst_max < burst_min || !(pause_min > 0.0) || pause_max < pause_min) {
        fail(ErrorKind::Config, "burst and pause ranges must be positive and ordered");
    }
    if (cue_lead < 0.0 || !(motion_rate >= 100.0) || motion_noise < 0.0) {
        fail(ErrorKind::Config, "cue_lead, motion_rate (>= 100 Hz) or motion_noise out of range");
    }
}

namespace {

struct Gesture {
    double onset;
    NodType type;
    double amplitude;
    double stroke;
    int repeats;
    double prerise;
    double prerise_stroke;

    double dip_start() const { return onset + prerise_stroke; }
    double end() const { return dip_start() + stroke * repeats; }
};

// Offset into a raised-cosine stroke at which |rate| first reaches threshold.
double crossing(double threshold, double amplitude, double stroke) {
    const double peak = std::numbers::pi * amplitude / stroke;
    return stroke / (2.0 * std::numbers::pi) * std::asin(std::min(1.0, threshold / peak));
}

// Span the gradient annotator reports for a clean gesture (default thresholds).
NodSegment expected_segment(const Gesture& g) {
    const AnnotationConfig a;
    NodSegment s;
    s.start = g.dip_start() + crossing(a.grad_on, g.amplitude, g.stroke);
    // the swing-up comes back down fast enough to open the span already
    if (g.prerise > 0.0 && std::numbers::pi * g.prerise / g.prerise_stroke > a.grad_on) {
        s.start = g.onset + 0.5 * g.prerise_stroke + crossing(a.grad_on, g.prerise, g.prerise_stroke);
    }
    s.end = g.end() - crossing(a.grad_off, g.amplitude, g.stroke);
    s.type = g.type;
    s.amplitude = g.amplitude;
    return s;
}

double gesture_value(const Gesture& g, double t) {
    double tau = t - g.onset;
    if (tau < 0.0) return 0.0;
    if (g.prerise > 0.0) {
        if (tau < g.prerise_stroke) {
            return 0.5 * g.prerise * (1.0 - std::cos(2.0 * std::numbers::pi * tau / g.prerise_stroke));
        }
        tau -= g.prerise_stroke;
    }
    if (tau >= g.stroke * g.repeats) return 0.0;
    return -0.5 * g.amplitude * (1.0 - std::cos(2.0 * std::numbers::pi * tau / g.stroke));
}

Gesture draw_gesture(NodType type, double wanted_seconds, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Gesture g{};
    g.type = type;
    int max_repeats = 2;
    switch (type) {
        case NodType::Short:
            g.amplitude = 0.016 + 0.004 * u(rng);
            g.stroke = 0.16 + 0.04 * u(rng);
            max_repeats = 3;
            break;
        case NodType::Long:
            g.amplitude = 0.08 + 0.04 * u(rng);
            g.stroke = 0.35 + 0.2 * u(rng);
            break;
        case NodType::LongP:
            g.amplitude = 0.08 + 0.04 * u(rng);
            g.stroke = 0.35 + 0.2 * u(rng);
            g.prerise = 0.03 + 0.01 * u(rng);
            g.prerise_stroke = 0.2 + 0.1 * u(rng);
            break;
    }
    // repeats fill the time the type is behind on
    g.repeats = 1;
    for (int r = 2; r <= max_repeats; ++r) {
        g.repeats = r;
        if (expected_segment(g).end - expected_segment(g).start > wanted_seconds) {
            g.repeats = r - 1;
            break;
        }
    }
    return g;
}

// One-pole low-pass coefficient of the closing cue; the spectral tilt hints at the nod type.
double cue_color(NodType type) {
    switch (type) {
        case NodType::Short: return 0.5;
        case NodType::Long: return 0.25;
        case NodType::LongP: return 0.1;
    }
    return 1.0;
}

struct Burst {
    double start;
    double end;
    std::optional<NodType> cue;
    double cue_start = 0.0;
};

void render_burst(const Burst& b, std::vector<double>& out, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> noise(-1.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double syllable = 4.0 + 2.0 * u(rng);
    const double phase = 2.0 * std::numbers::pi * u(rng);
    const double level = 0.18 + 0.1 * u(rng);
    const auto first = static_cast<std::size_t>(b.start * kAudioRate);
    const auto last = std::min(out.size(), static_cast<std::size_t>(b.end * kAudioRate));
    double low = 0.0;
    double cycles = 0.0;
    for (std::size_t i = first; i < last; ++i) {
        const double t = static_cast<double>(i) / kAudioRate;
        double rate = syllable;
        double gain = level;
        double alpha = 1.0;
        if (b.cue && t >= b.cue_start) {
            const double k = (t - b.cue_start) / (b.end - b.cue_start);
            rate = syllable * (1.0 - 0.5 * k);
            gain = level * (1.0 - 0.5 * k);
            alpha = cue_color(*b.cue);
        }
        cycles += rate / kAudioRate;
        const double env = 0.3 + 0.7 * std::pow(std::sin(std::numbers::pi * cycles + phase), 2.0);
        const double ramp = std::min({1.0, (t - b.start) / 0.01, (b.end - t) / 0.01});
        low += alpha * (noise(rng) - low);
        out[i] = std::clamp(gain * env * ramp * low / std::sqrt(alpha), -1.0, 1.0);
    }
}

}  // namespace

SyntheticDialogue generate_synthetic_dialogue(const SyntheticDialogueConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

    const double offset = AnnotationConfig{}.offset;
    std::vector<Burst> bursts;
    std::vector<Gesture> gestures;
    std::array<double, 3> realized{0.0, 0.0, 0.0};
    double busy_until = 0.0;
    double t = uniform(0.2, 1.0);
    while (t + cfg.burst_min < cfg.duration - 0.5) {
        Burst b{t, t + uniform(cfg.burst_min, cfg.burst_max), std::nullopt};
        const double pause = uniform(cfg.pause_min, cfg.pause_max);
        const double horizon = std::min(cfg.duration, b.end + pause);
        // the type furthest behind its target share gets this burst
        std::size_t best = 0;
        double deficit = -1.0;
        for (std::size_t k = 0; k < 3; ++k) {
            const double d = cfg.nod_time_ratios[k] * horizon - realized[k];
            if (cfg.nod_time_ratios[k] > 0.0 && d > deficit) {
                deficit = d;
                best = k;
            }
        }
        if (deficit > 0.1) {
            const auto type = static_cast<NodType>(best);
            Gesture g = draw_gesture(type, deficit, rng);
            g.onset = 0.0;
            const NodSegment rel = expected_segment(g);
            const double span = rel.end - rel.start;
            // the nod settles `offset` after the speaker stops; the closing
            // cue opens cue_lead before the shifted label does
            const double end = std::max(b.end, b.start + span + cfg.cue_lead + 0.3);
            g.onset = end + offset - rel.end;
            if (g.onset > busy_until + 0.4 && end + offset + 0.3 < cfg.duration) {
                b.end = end;
                b.cue = type;
                b.cue_start = end - span - cfg.cue_lead;
                realized[best] += span;
                gestures.push_back(g);
                busy_until = g.end();
            }
        }
        bursts.push_back(b);
        t = b.end + pause;
    }

    SyntheticDialogue out;
    for (const Burst& b : bursts) out.user_speech.push_back({b.start, b.end});
    for (const Gesture& g : gestures) {
        out.nods.push_back(expected_segment(g));
        if (g.type != NodType::Short && u(rng) < cfg.bc_cooccur_prob) {
            const double start = g.dip_start() + uniform(0.0, 0.15);
            out.backchannels.push_back({start, std::min(start + 0.3, cfg.duration)});
        }
    }
    out.system_speech = out.backchannels;

    out.motion.sample_rate = cfg.motion_rate;
    out.motion.start_time = 0.0;
    const auto samples = static_cast<std::size_t>(std::floor(cfg.duration * cfg.motion_rate));
    out.motion.pitch.resize(samples);
    std::normal_distribution<double> jitter(0.0, 1.0);
    std::size_t next = 0;
    for (std::size_t i = 0; i < samples; ++i) {
        const double time = static_cast<double>(i) / cfg.motion_rate;
        while (next < gestures.size() && gestures[next].end() < time) ++next;
        double v = 0.0;
        for (std::size_t k = next; k < gestures.size() && gestures[k].onset <= time; ++k) v += gesture_value(gestures[k], time);
        out.motion.pitch[i] = v + cfg.motion_noise * jitter(rng);
    }

    if (cfg.render_audio) {
        const auto n = static_cast<std::size_t>(std::floor(cfg.duration * kAudioRate));
        out.audio.user.assign(n, 0.0);
        out.audio.system.assign(n, 0.0);
        for (const Burst& b : bursts) render_burst(b, out.audio.user, rng);
        const auto& token = backchannel_token();
        for (const TimeInterval& bc : out.backchannels) {
            const auto first = static_cast<std::size_t>(bc.start * kAudioRate);
            for (std::size_t i = 0; i < token.size() && first + i < n; ++i) out.audio.system[first + i] = token[i];
        }
    }
    return out;
}

std::array<double, 3> nod_time_ratios(const std::vector<NodSegment>& nods, double duration) {
    if (!(duration > 0.0)) fail(ErrorKind::Range, "duration must be positive");
    std::array<double, 3> r{0.0, 0.0, 0.0};
    for (const NodSegment& s : nods) {
        if (!s.type) fail(ErrorKind::Config, "nod segment has no type");
        r[static_cast<std::size_t>(*s.type)] += s.end - s.start;
    }
    for (double& v : r) v /= duration;
    return r;
}

}  // namespace nodpred
