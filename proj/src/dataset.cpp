#include "nodpred/dataset.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <algorithm>

#include "json.hpp"
#include "nodpred/audio_frontend.hpp"
#include "nodpred/error.hpp"

namespace nodpred {

using json = nlohmann::json;

FrameLabels labels_from_motion(const MotionTrace& motion, const std::vector<TimeInterval>& backchannels,
                               const std::vector<TimeInterval>& user_speech,
                               const std::vector<TimeInterval>& system_speech, double frame_rate, double duration,
                               const AnnotationConfig& cfg) {
    const auto nods = offset_segments(annotate(motion, cfg), cfg.offset);
    const auto bc = offset_intervals(backchannels, cfg.offset);
    return rasterize_frame_labels(nods, bc, user_speech, system_speech, frame_rate, duration);
}

Dialogue dialogue_from_synthetic(const SyntheticDialogue& d, double frame_rate, const std::string& name) {
    if (d.audio.user.empty()) fail(ErrorKind::Config, "synthetic dialogue was generated without audio");
    Dialogue out;
    out.name = name;
    out.audio = d.audio;
    out.labels = labels_from_motion(d.motion, d.backchannels, d.user_speech, d.system_speech, frame_rate,
                                    d.audio.duration());
    return out;
}

std::vector<std::uint8_t> energy_vad(const std::vector<double>& samples, double frame_rate, double threshold) {
    const auto hop = static_cast<std::size_t>(std::lround(kAudioRate / frame_rate));
    std::vector<std::uint8_t> flags(samples.size() / hop, 0);
    for (std::size_t f = 0; f < flags.size(); ++f) {
        double e = 0.0;
        for (std::size_t i = f * hop; i < (f + 1) * hop; ++i) e += samples[i] * samples[i];
        flags[f] = std::sqrt(e / static_cast<double>(hop)) > threshold ? 1 : 0;
    }
    return flags;
}

std::vector<TimeInterval> active_intervals(const std::vector<std::uint8_t>& flags, double frame_rate) {
    std::vector<TimeInterval> out;
    for (std::size_t i = 0; i < flags.size();) {
        if (!flags[i]) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < flags.size() && flags[j]) ++j;
        out.push_back({static_cast<double>(i) / frame_rate, static_cast<double>(j) / frame_rate});
        i = j;
    }
    return out;
}

void write_labels_jsonl(const std::string& path, const std::vector<NamedLabels>& labels) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write " + path);
    for (const auto& [name, l] : labels) {
        l.validate();
        const json j{{"dialogue", name},
                     {"frame_rate", l.frame_rate},
                     {"nod_class", l.nod_class},
                     {"backchannel", l.backchannel},
                     {"vad_user", l.vad_user},
                     {"vad_system", l.vad_system}};
        out << j.dump() << '\n';
    }
    if (!out) fail(ErrorKind::Io, "write failed: " + path);
}

std::vector<NamedLabels> read_labels_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open " + path);
    std::vector<NamedLabels> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            FrameLabels l;
            l.frame_rate = j.at("frame_rate").get<double>();
            l.nod_class = j.at("nod_class").get<std::vector<int>>();
            l.backchannel = j.at("backchannel").get<std::vector<std::uint8_t>>();
            l.vad_user = j.at("vad_user").get<std::vector<std::uint8_t>>();
            l.vad_system = j.at("vad_system").get<std::vector<std::uint8_t>>();
            l.validate();
            out.emplace_back(j.at("dialogue").get<std::string>(), std::move(l));
        } catch (const json::exception& e) {
            fail(ErrorKind::Format, path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open manifest " + path);
    const auto base = std::filesystem::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
        if (p.empty()) return p;
        const std::filesystem::path fp(p);
        return fp.is_absolute() ? p : (base / fp).string();
    };
    std::vector<ManifestEntry> out;
    try {
        const json j = json::parse(in);
        for (const json& d : j.at("dialogues")) {
            ManifestEntry e;
            e.name = d.at("name").get<std::string>();
            e.wav = resolve(d.at("wav").get<std::string>());
            e.labels = resolve(d.value("labels", std::string{}));
            e.motion = resolve(d.value("motion", std::string{}));
            if (d.contains("backchannels")) {
                for (const json& iv : d.at("backchannels")) e.backchannels.push_back({iv.at(0), iv.at(1)});
            }
            if (e.labels.empty() == e.motion.empty()) {
                fail(ErrorKind::Format, "dialogue " + e.name + " needs exactly one of labels or motion");
            }
            out.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::Format, "manifest " + path + ": " + e.what());
    }
    return out;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    json list = json::array();
    for (const ManifestEntry& e : entries) {
        json d{{"name", e.name}, {"wav", e.wav}};
        if (!e.labels.empty()) d["labels"] = e.labels;
        if (!e.motion.empty()) {
            d["motion"] = e.motion;
            json bc = json::array();
            for (const TimeInterval& iv : e.backchannels) bc.push_back({iv.start, iv.end});
            d["backchannels"] = bc;
        }
        list.push_back(d);
    }
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write " + path);
    out << json{{"dialogues", list}}.dump(2) << '\n';
}

std::vector<Dialogue> load_dialogues(const std::string& manifest_path, double frame_rate) {
    std::vector<Dialogue> out;
    for (const ManifestEntry& e : read_manifest(manifest_path)) {
        Dialogue d;
        d.name = e.name;
        d.audio = read_wav(e.wav);
        if (!e.labels.empty()) {
            auto all = read_labels_jsonl(e.labels);
            auto it = std::find_if(all.begin(), all.end(), [&](const NamedLabels& l) { return l.first == e.name; });
            if (it == all.end()) fail(ErrorKind::Format, "no labels for dialogue " + e.name + " in " + e.labels);
            d.labels = std::move(it->second);
        } else {
            const auto user = active_intervals(energy_vad(d.audio.user, frame_rate), frame_rate);
            const auto system = active_intervals(energy_vad(d.audio.system, frame_rate), frame_rate);
            d.labels = labels_from_motion(read_motion_csv(e.motion), e.backchannels, user, system, frame_rate,
                                          d.audio.duration());
        }
        if (std::abs(d.labels.frame_rate - frame_rate) > 1e-9) {
            fail(ErrorKind::Config, "labels of " + e.name + " are not at the model frame rate");
        }
        out.push_back(std::move(d));
    }
    return out;
}

}  // namespace nodpred
