#include "nodpred/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "nodpred/error.hpp"
#include "nodpred/text.hpp"

namespace nodpred {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::string str(double v) { return format_double(v); }

}  // namespace

RunConfig::RunConfig() {
    const ModelConfig m;
    const AnnotationConfig a;
    const TrainConfig t;
    const StreamConfig s;
    const SyntheticDialogueConfig y;
    values_ = {
        {"seed", "1"},
        {"model.frame_rate", str(m.frame_rate)},
        {"model.window_seconds", str(m.window_seconds)},
        {"model.dim", std::to_string(m.dim)},
        {"model.self_layers", std::to_string(m.self_layers)},
        {"model.cross_layers", std::to_string(m.cross_layers)},
        {"model.heads", std::to_string(m.heads)},
        {"model.ffn_dim", std::to_string(m.ffn_dim)},
        {"model.nod_classes", std::to_string(m.nod_classes)},
        {"model.monaural", m.monaural ? "true" : "false"},
        {"model.multitask_bc", m.multitask_bc ? "true" : "false"},
        {"model.vap_bins", "200,400,600,800"},
        {"model.encoder_channels1", std::to_string(m.encoder_channels1)},
        {"model.encoder_channels2", std::to_string(m.encoder_channels2)},
        {"annotate.smooth_window", std::to_string(a.smooth_window)},
        {"annotate.grad_on", str(a.grad_on)},
        {"annotate.grad_off", str(a.grad_off)},
        {"annotate.min_duration", str(a.min_duration)},
        {"annotate.merge_gap", str(a.merge_gap)},
        {"annotate.tail_min_run", str(a.tail_min_run)},
        {"annotate.gradient_span", std::to_string(a.gradient_span)},
        {"annotate.amp_split", str(a.amp_split)},
        {"annotate.swingup_min", str(a.swingup_min)},
        {"annotate.swingup_lookback", str(a.swingup_lookback)},
        {"annotate.offset", str(a.offset)},
        {"train.stage", "finetune"},
        {"train.epochs", std::to_string(t.epochs)},
        {"train.lr", str(t.lr)},
        {"train.clip_norm", str(t.clip_norm)},
        {"train.optimizer", "sgd"},
        {"train.w_vad", str(t.weights.w_vad)},
        {"train.w_vap", str(t.weights.w_vap)},
        {"train.w_bc", str(t.weights.w_bc)},
        {"train.pos_weight", "auto"},
        {"train.bc_pos_weight", str(t.weights.bc_pos_weight)},
        {"train.queue_capacity", std::to_string(t.queue_capacity)},
        {"stream.window_seconds", str(s.window_seconds)},
        {"stream.emit_threshold", str(s.emit_threshold)},
        {"stream.min_consecutive", std::to_string(s.min_consecutive)},
        {"stream.refractory_short", str(s.refractory[0])},
        {"stream.refractory_long", str(s.refractory[1])},
        {"stream.refractory_long_p", str(s.refractory[2])},
        {"stream.bc_refractory", str(s.bc_refractory)},
        {"stream.self_feedback", s.self_feedback ? "true" : "false"},
        {"stream.tick_stride", std::to_string(s.tick_stride)},
        {"synth.count", "10"},
        {"synth.duration", str(y.duration)},
        {"synth.ratio_short", str(y.nod_time_ratios[0])},
        {"synth.ratio_long", str(y.nod_time_ratios[1])},
        {"synth.ratio_long_p", str(y.nod_time_ratios[2])},
        {"synth.bc_cooccur_prob", str(y.bc_cooccur_prob)},
        {"synth.burst_min", str(y.burst_min)},
        {"synth.burst_max", str(y.burst_max)},
        {"synth.pause_min", str(y.pause_min)},
        {"synth.pause_max", str(y.pause_max)},
        {"synth.cue_lead", str(y.cue_lead)},
        {"synth.motion_rate", str(y.motion_rate)},
        {"synth.motion_noise", str(y.motion_noise)},
        {"sigtest.iterations", "1000"},
    };
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    load_text(ss.str(), path);
}

void RunConfig::load_text(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            fail(ErrorKind::Config, origin + ":" + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        if (!values_.contains(key)) {
            fail(ErrorKind::Config, origin + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
        values_[key] = trim(line.substr(eq + 1));
    }
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (!values_.contains(key)) fail(ErrorKind::Config, "unknown key '" + key + "'");
    values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) fail(ErrorKind::Config, "unknown key '" + key + "'");
    return it->second;
}

double RunConfig::get_double(const std::string& key) const {
    const std::string& v = get(key);
    double out = 0.0;
    const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || end != v.data() + v.size()) fail(ErrorKind::Config, key + ": not a number: '" + v + "'");
    return out;
}

long long RunConfig::get_int(const std::string& key) const {
    const std::string& v = get(key);
    long long out = 0;
    const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || end != v.data() + v.size()) fail(ErrorKind::Config, key + ": not an integer: '" + v + "'");
    return out;
}

bool RunConfig::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail(ErrorKind::Config, key + ": expected true or false, got '" + v + "'");
}

std::uint64_t RunConfig::seed() const {
    const long long s = get_int("seed");
    if (s < 0) fail(ErrorKind::Config, "seed must be non-negative");
    return static_cast<std::uint64_t>(s);
}

namespace {

std::size_t positive_size(const RunConfig& c, const std::string& key) {
    const long long v = c.get_int(key);
    if (v < 0) fail(ErrorKind::Config, key + " must be non-negative");
    return static_cast<std::size_t>(v);
}

}  // namespace

ModelConfig RunConfig::model() const {
    ModelConfig m;
    m.frame_rate = get_double("model.frame_rate");
    m.window_seconds = get_double("model.window_seconds");
    m.dim = positive_size(*this, "model.dim");
    m.self_layers = positive_size(*this, "model.self_layers");
    m.cross_layers = positive_size(*this, "model.cross_layers");
    m.heads = positive_size(*this, "model.heads");
    m.ffn_dim = positive_size(*this, "model.ffn_dim");
    m.nod_classes = static_cast<int>(get_int("model.nod_classes"));
    m.monaural = get_bool("model.monaural");
    m.multitask_bc = get_bool("model.multitask_bc");
    m.vap_bins.clear();
    std::istringstream bins(get("model.vap_bins"));
    std::string item;
    while (std::getline(bins, item, ',')) {
        item = trim(item);
        int ms = 0;
        const auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), ms);
        if (ec != std::errc() || end != item.data() + item.size()) {
            fail(ErrorKind::Config, "model.vap_bins: not an integer list: '" + get("model.vap_bins") + "'");
        }
        m.vap_bins.push_back(ms);
    }
    m.encoder_channels1 = positive_size(*this, "model.encoder_channels1");
    m.encoder_channels2 = positive_size(*this, "model.encoder_channels2");
    m.seed = seed();
    m.validate();
    return m;
}

AnnotationConfig RunConfig::annotation() const {
    AnnotationConfig a;
    a.smooth_window = positive_size(*this, "annotate.smooth_window");
    a.grad_on = get_double("annotate.grad_on");
    a.grad_off = get_double("annotate.grad_off");
    a.min_duration = get_double("annotate.min_duration");
    a.merge_gap = get_double("annotate.merge_gap");
    a.tail_min_run = get_double("annotate.tail_min_run");
    a.gradient_span = positive_size(*this, "annotate.gradient_span");
    a.amp_split = get_double("annotate.amp_split");
    a.swingup_min = get_double("annotate.swingup_min");
    a.swingup_lookback = get_double("annotate.swingup_lookback");
    a.offset = get_double("annotate.offset");
    a.validate();
    return a;
}

TrainConfig RunConfig::training() const {
    TrainConfig t;
    t.stage = stage_from_string(get("train.stage"));
    t.epochs = positive_size(*this, "train.epochs");
    t.lr = get_double("train.lr");
    t.clip_norm = get_double("train.clip_norm");
    const std::string& opt = get("train.optimizer");
    if (opt == "sgd") {
        t.optimizer = Optimizer::Sgd;
    } else if (opt == "adam") {
        t.optimizer = Optimizer::Adam;
    } else {
        fail(ErrorKind::Config, "train.optimizer must be sgd or adam");
    }
    t.seed = seed();
    t.weights = LossWeights::for_classes(static_cast<int>(get_int("model.nod_classes")));
    t.weights.w_vad = get_double("train.w_vad");
    t.weights.w_vap = get_double("train.w_vap");
    t.weights.w_bc = get_double("train.w_bc");
    if (get("train.pos_weight") != "auto") t.weights.pos_weight = get_double("train.pos_weight");
    t.weights.bc_pos_weight = get_double("train.bc_pos_weight");
    t.queue_capacity = positive_size(*this, "train.queue_capacity");
    t.validate();
    return t;
}

StreamConfig RunConfig::stream() const {
    StreamConfig s;
    s.frame_rate = get_double("model.frame_rate");
    s.window_seconds = get_double("stream.window_seconds");
    s.emit_threshold = get_double("stream.emit_threshold");
    s.min_consecutive = positive_size(*this, "stream.min_consecutive");
    s.refractory = {get_double("stream.refractory_short"), get_double("stream.refractory_long"),
                    get_double("stream.refractory_long_p")};
    s.bc_refractory = get_double("stream.bc_refractory");
    s.self_feedback = get_bool("stream.self_feedback");
    s.tick_stride = positive_size(*this, "stream.tick_stride");
    s.validate();
    return s;
}

SyntheticDialogueConfig RunConfig::synthetic() const {
    SyntheticDialogueConfig y;
    y.duration = get_double("synth.duration");
    y.nod_time_ratios = {get_double("synth.ratio_short"), get_double("synth.ratio_long"),
                         get_double("synth.ratio_long_p")};
    y.bc_cooccur_prob = get_double("synth.bc_cooccur_prob");
    y.burst_min = get_double("synth.burst_min");
    y.burst_max = get_double("synth.burst_max");
    y.pause_min = get_double("synth.pause_min");
    y.pause_max = get_double("synth.pause_max");
    y.cue_lead = get_double("synth.cue_lead");
    y.motion_rate = get_double("synth.motion_rate");
    y.motion_noise = get_double("synth.motion_noise");
    y.seed = seed();
    y.validate();
    return y;
}

std::string RunConfig::dump() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
}

}  // namespace nodpred
