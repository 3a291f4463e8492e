#include "nodpred/streaming.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "json.hpp"
#include "nodpred/audio_frontend.hpp"
#include "nodpred/error.hpp"

namespace nodpred {

using json = nlohmann::json;

void StreamConfig::validate() const {
    if (frame_rate != 50.0 && frame_rate != 10.0) fail(ErrorKind::UnsupportedRate, "stream rate must be 50 or 10");
    const double frames = window_seconds * frame_rate;
    if (!(window_seconds > 0.0) || std::abs(frames - std::round(frames)) > 1e-9) {
        fail(ErrorKind::Config, "window_seconds must be positive and a whole number of frames");
    }
    if (!(emit_threshold > 0.0 && emit_threshold < 1.0)) fail(ErrorKind::Config, "emit_threshold must be in (0, 1)");
    if (min_consecutive == 0) fail(ErrorKind::Config, "min_consecutive must be >= 1");
    for (double r : refractory) {
        if (!(r >= 0.0)) fail(ErrorKind::Config, "refractory periods must be >= 0");
    }
    if (!(bc_refractory >= 0.0)) fail(ErrorKind::Config, "bc_refractory must be >= 0");
    if (tick_stride == 0) fail(ErrorKind::Config, "tick_stride must be >= 1");
}

std::string_view to_string(EventType t) noexcept {
    switch (t) {
        case EventType::Short: return "short";
        case EventType::Long: return "long";
        case EventType::LongP: return "long_p";
        case EventType::Nod: return "nod";
        case EventType::Backchannel: return "backchannel";
    }
    return "?";
}

std::string event_to_json(const NodEvent& e) {
    return json{{"t", e.t}, {"type", std::string(to_string(e.type))}, {"p", e.p}}.dump();
}

std::vector<double> StreamSession::Ring::ordered() const {
    std::vector<double> out(data.size());
    const auto split = static_cast<std::ptrdiff_t>(head);
    std::copy(data.begin() + split, data.end(), out.begin());
    std::copy(data.begin(), data.begin() + split, out.begin() + (static_cast<std::ptrdiff_t>(data.size()) - split));
    return out;
}

StreamSession::StreamSession(const Model& model, const StreamConfig& cfg) : model_(model), cfg_(cfg) {
    cfg_.validate();
    if (model.config().frame_rate != cfg_.frame_rate) {
        fail(ErrorKind::Config, "stream frame rate differs from the model's");
    }
    const std::size_t frames = frame_count(cfg_.window_seconds, cfg_.frame_rate);
    const std::size_t n = frames * model.config().samples_per_frame();
    user_.data.assign(n, 0.0);
    system_.data.assign(n, 0.0);
}

void StreamSession::push_audio(std::span<const double> interleaved, int channels) {
    if (channels != 2) fail(ErrorKind::Format, "stream audio must have 2 channels, got " + std::to_string(channels));
    if (interleaved.size() % 2 != 0) fail(ErrorKind::Format, "interleaved stereo needs an even sample count");
    std::lock_guard lock(mu_);
    push_locked(interleaved, interleaved.subspan(1), 2);
}

void StreamSession::push_audio(std::span<const double> user, std::span<const double> system) {
    if (user.size() != system.size()) fail(ErrorKind::Format, "channel lengths differ");
    std::lock_guard lock(mu_);
    push_locked(user, system, 1);
}

void StreamSession::push_locked(std::span<const double> user, std::span<const double> system, std::size_t stride) {
    const auto& token = backchannel_token();
    const std::size_t n = (user.size() + stride - 1) / stride;
    for (std::size_t i = 0; i < n; ++i) {
        user_.push(user[i * stride]);
        double s = system[i * stride];
        if (!injections_.empty()) {
            for (Injection& inj : injections_) s += token[inj.pos++];
            s = std::clamp(s, -1.0, 1.0);
            std::erase_if(injections_, [&](const Injection& inj) { return inj.pos >= token.size(); });
        }
        system_.push(s);
    }
    received_ += n;
}

double StreamSession::stream_time() const {
    std::lock_guard lock(mu_);
    return static_cast<double>(received_) / kAudioRate;
}

std::vector<double> StreamSession::window(Channel ch) const {
    std::lock_guard lock(mu_);
    return ch == Channel::User ? user_.ordered() : system_.ordered();
}

PredictionFrame StreamSession::tick() {
    const std::size_t k = ticks_++;
    if (last_ && k % cfg_.tick_stride != 0) return *last_;
    std::vector<double> u, s;
    {
        std::lock_guard lock(mu_);
        u = user_.ordered();
        s = system_.ordered();
    }
    last_ = model_.predict_window(u, s);
    return *last_;
}

std::vector<NodEvent> StreamSession::emit_events(const PredictionFrame& frame) {
    std::vector<NodEvent> out;
    const double t = stream_time();
    const auto& p = frame.p_nod;
    const auto best = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    if (best > 0 && p[static_cast<std::size_t>(best)] > cfg_.emit_threshold) {
        if (best != run_class_) {
            run_class_ = best;
            run_length_ = 0;
            run_fired_ = false;
        }
        ++run_length_;
    } else {
        run_class_ = -1;
        run_length_ = 0;
        run_fired_ = false;
    }
    auto refractory = [&](EventType type) {
        return type == EventType::Nod ? cfg_.refractory[0] : cfg_.refractory[static_cast<std::size_t>(type)];
    };
    if (run_class_ > 0 && run_length_ >= cfg_.min_consecutive && !run_fired_) {
        const bool blocked = last_nod_ && t - last_nod_->t < refractory(last_nod_->type) - 1e-9;
        if (!blocked) {
            const EventType type = p.size() == 2 ? EventType::Nod : static_cast<EventType>(run_class_ - 1);
            NodEvent e{t, type, p[static_cast<std::size_t>(run_class_)]};
            out.push_back(e);
            last_nod_ = e;
            run_fired_ = true;
        }
    }
    if (frame.p_bc) {
        if (*frame.p_bc > cfg_.emit_threshold) {
            ++bc_run_;
        } else {
            bc_run_ = 0;
            bc_fired_ = false;
        }
        if (bc_run_ >= cfg_.min_consecutive && !bc_fired_ && !(last_bc_ && t - *last_bc_ < cfg_.bc_refractory - 1e-9)) {
            out.push_back({t, EventType::Backchannel, *frame.p_bc});
            last_bc_ = t;
            bc_fired_ = true;
        }
    }
    return out;
}

void StreamSession::apply_self_feedback(const NodEvent& event) {
    if (!cfg_.self_feedback || event.type != EventType::Backchannel) return;
    std::lock_guard lock(mu_);
    injections_.push_back({});
}

std::vector<PredictionFrame> batch_predict(const Model& model, const StereoAudio& audio, double window_seconds) {
    const ModelConfig& cfg = model.config();
    const std::size_t spf = cfg.samples_per_frame();
    const std::size_t n = std::min(audio.user.size(), audio.system.size()) / spf;
    if (n == 0) fail(ErrorKind::Range, "audio is shorter than one frame");
    const std::size_t f = frame_count(window_seconds, cfg.frame_rate);
    if (f == 0) fail(ErrorKind::Config, "window shorter than one frame");

    autodiff::Tape enc(false);
    const std::span<const double> user(audio.user.data(), n * spf);
    const std::span<const double> system(audio.system.data(), n * spf);
    const std::vector<double> silence(spf, 0.0);
    const Matrix eu = enc.value(model.encoder().encode(enc, user));
    const Matrix es = cfg.monaural ? eu : enc.value(model.encoder().encode(enc, system));
    const Matrix pad = enc.value(model.encoder().encode(enc, silence));
    const std::size_t dim = eu.cols();

    std::vector<PredictionFrame> out(n);
    for (std::size_t t = 0; t < n; ++t) {
        Matrix wu(f, dim), ws(f, dim);
        for (std::size_t r = 0; r < f; ++r) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + 1 + r) - static_cast<std::ptrdiff_t>(f);
            const auto ru = src < 0 ? pad.row(0) : eu.row(static_cast<std::size_t>(src));
            const auto rs = src < 0 ? pad.row(0) : es.row(static_cast<std::size_t>(src));
            std::copy(ru.begin(), ru.end(), wu.row(r).begin());
            std::copy(rs.begin(), rs.end(), ws.row(r).begin());
        }
        autodiff::Tape tape(false);
        const auto u = tape.constant(std::move(wu));
        const auto s = tape.constant(std::move(ws));
        out[t] = model.to_frames(tape, model.forward(tape, u, s, true)).back();
    }
    return out;
}

std::string rtf_report_to_json(const RtfReport& r) {
    return json{{"audio_seconds", r.audio_seconds}, {"wall_seconds", r.wall_seconds}, {"rtf", r.rtf},
                {"p50_ms", r.p50_ms},           {"p95_ms", r.p95_ms},             {"max_ms", r.max_ms},
                {"ticks", r.ticks},             {"window_seconds", r.window_seconds}}
        .dump();
}

RtfReport measure_rtf(const Model& model, const StereoAudio& audio, const StreamConfig& cfg, std::size_t repeat) {
    const std::size_t spf = model.config().samples_per_frame();
    const std::size_t n = std::min(audio.user.size(), audio.system.size()) / spf;
    if (n == 0) fail(ErrorKind::Range, "audio is shorter than one frame");
    if (repeat == 0) fail(ErrorKind::Config, "repeat must be >= 1");
    std::vector<double> latencies;
    double wall = 0.0;
    for (std::size_t r = 0; r < repeat; ++r) {
        StreamSession session(model, cfg);
        for (std::size_t t = 0; t < n; ++t) {
            const auto a = static_cast<std::ptrdiff_t>(t * spf);
            session.push_audio(std::span<const double>(audio.user.data() + a, spf),
                               std::span<const double>(audio.system.data() + a, spf));
            const auto start = std::chrono::steady_clock::now();
            session.tick();
            const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            wall += dt;
            latencies.push_back(dt * 1000.0);
        }
    }
    std::sort(latencies.begin(), latencies.end());
    auto pct = [&](double q) {
        const auto i = static_cast<std::size_t>(std::ceil(q * static_cast<double>(latencies.size()))) - 1;
        return latencies[std::min(i, latencies.size() - 1)];
    };
    RtfReport rep;
    rep.ticks = latencies.size();
    rep.audio_seconds = static_cast<double>(rep.ticks) / cfg.frame_rate;
    rep.wall_seconds = wall;
    rep.rtf = wall / rep.audio_seconds;
    rep.p50_ms = pct(0.50);
    rep.p95_ms = pct(0.95);
    rep.max_ms = latencies.back();
    rep.window_seconds = cfg.window_seconds;
    return rep;
}

StreamResult stream_file(const Model& model, const StereoAudio& audio, const StreamConfig& cfg) {
    const std::size_t spf = model.config().samples_per_frame();
    const std::size_t n = std::min(audio.user.size(), audio.system.size()) / spf;
    if (n == 0) fail(ErrorKind::Range, "audio is shorter than one frame");
    StreamSession session(model, cfg);
    StreamResult out;
    for (std::size_t t = 0; t < n; ++t) {
        const auto a = static_cast<std::ptrdiff_t>(t * spf);
        session.push_audio(std::span<const double>(audio.user.data() + a, spf),
                           std::span<const double>(audio.system.data() + a, spf));
        out.frames.push_back(session.tick());
        for (const NodEvent& e : session.emit_events(out.frames.back())) {
            out.events.push_back(e);
            session.apply_self_feedback(e);
        }
    }
    return out;
}

}  // namespace nodpred
