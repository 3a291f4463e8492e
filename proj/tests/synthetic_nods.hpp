#pragma once

// Test-only synthetic head-pitch shapes and a brute-force crossing oracle.
// Deliberately independent of src/: the oracle evaluates the continuous
// shape on a fine grid, box-smooths it in continuous time, and reads the
// threshold crossings off a dense numerical gradient.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "nodpred/motion.hpp"

namespace testing_nods {

struct Dip {
    double onset = 0.0;           // s, start of the first movement
    double amplitude = 0.08;      // rad, depth of each downward stroke
    double stroke = 0.5;          // s, duration of one raised-cosine dip
    int repeats = 1;              // strokes back to back
    double prerise = 0.0;         // rad, upward swing before the first stroke
    double prerise_stroke = 0.25; // s

    double end() const {
        return onset + (prerise > 0.0 ? prerise_stroke : 0.0) + stroke * repeats;
    }
};

inline double shape_value(const std::vector<Dip>& dips, double t) {
    double v = 0.0;
    for (const Dip& d : dips) {
        double tau = t - d.onset;
        if (tau < 0.0) continue;
        if (d.prerise > 0.0) {
            if (tau < d.prerise_stroke) {
                v += 0.5 * d.prerise * (1.0 - std::cos(2.0 * std::numbers::pi * tau / d.prerise_stroke));
                continue;
            }
            tau -= d.prerise_stroke;
        }
        if (tau < d.stroke * d.repeats) {
            v -= 0.5 * d.amplitude * (1.0 - std::cos(2.0 * std::numbers::pi * tau / d.stroke));
        }
    }
    return v;
}

struct Truth {
    double start;
    double end;
};

/// Crossing times on the clean shape: box-smooth over `smooth_seconds`,
/// take the rate as a symmetric difference over +-`diff_half` seconds, then
/// start = first time the downward rate exceeds grad_on and end = last time
/// |rate| >= grad_off, searched around `dip`.
inline Truth oracle_crossings(const std::vector<Dip>& dips, const Dip& dip, double grad_on,
                              double grad_off, double smooth_seconds, double diff_half) {
    constexpr double step = 1e-4;
    const double from = dip.onset - 0.3;
    const double to = dip.end() + 0.3;
    const auto n = static_cast<std::size_t>((to - from) / step) + 1;
    std::vector<double> prefix(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        prefix[i + 1] = prefix[i] + shape_value(dips, from + (static_cast<double>(i) + 0.5) * step);
    }
    const auto box = static_cast<std::size_t>(std::lround(smooth_seconds / step));
    const auto lag = static_cast<std::size_t>(std::lround(diff_half / step));
    // smoothed value centered at sample i uses samples [i - box/2, i + box/2)
    auto smoothed = [&](std::size_t i) {
        return (prefix[i + box / 2] - prefix[i - box / 2]) / static_cast<double>(2 * (box / 2));
    };
    Truth truth{-1.0, -1.0};
    const std::size_t margin = box / 2 + lag + 1;
    for (std::size_t i = margin; i + margin < n; ++i) {
        const double rate = (smoothed(i + lag) - smoothed(i - lag)) / (2.0 * static_cast<double>(lag) * step);
        const double t = from + static_cast<double>(i) * step;
        if (truth.start < 0.0 && -rate > grad_on) truth.start = t;
        if (truth.start >= 0.0 && std::abs(rate) >= grad_off) truth.end = t;
    }
    return truth;
}

inline nodpred::MotionTrace render(const std::vector<Dip>& dips, double rate, double duration,
                                   double noise_sigma, std::mt19937_64& rng) {
    nodpred::MotionTrace trace;
    trace.sample_rate = rate;
    trace.start_time = 0.0;
    const auto n = static_cast<std::size_t>(std::llround(duration * rate));
    std::normal_distribution<double> noise(0.0, 1.0);
    trace.pitch.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        trace.pitch[i] = shape_value(dips, static_cast<double>(i) / rate) + noise_sigma * noise(rng);
    }
    return trace;
}

enum class Kind { Short, Long, LongP };

/// Random dip of a given kind with type margins of at least 2x the default
/// thresholds (amplitude <= 0.02 or >= 0.08 rad; swing-up >= 0.03 rad).
inline Dip random_dip(Kind kind, double onset, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Dip d;
    d.onset = onset;
    switch (kind) {
        case Kind::Short:
            d.amplitude = 0.018 + 0.002 * u(rng);
            d.stroke = 0.16 + 0.04 * u(rng);
            d.repeats = 1 + static_cast<int>(u(rng) * 3.0);
            break;
        case Kind::Long:
            d.amplitude = 0.08 + 0.04 * u(rng);
            d.stroke = 0.35 + 0.2 * u(rng);
            d.repeats = 1 + static_cast<int>(u(rng) * 2.0);
            break;
        case Kind::LongP:
            d.amplitude = 0.08 + 0.04 * u(rng);
            d.stroke = 0.35 + 0.2 * u(rng);
            d.repeats = 1 + static_cast<int>(u(rng) * 2.0);
            d.prerise = 0.03 + 0.01 * u(rng);
            d.prerise_stroke = 0.2 + 0.1 * u(rng);
            break;
    }
    return d;
}

}  // namespace testing_nods
