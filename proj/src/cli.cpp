#include "nodpred/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <vector>

#include "CLI11.hpp"
#include "nodpred/dataset.hpp"
#include "nodpred/error.hpp"
#include "nodpred/evaluation.hpp"
#include "nodpred/model.hpp"
#include "nodpred/run_config.hpp"
#include "nodpred/streaming.hpp"
#include "nodpred/text.hpp"
#include "nodpred/training.hpp"

namespace nodpred {

namespace {

namespace fs = std::filesystem;

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;  // key=value
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config_path, "flat key = value settings file");
    app->add_option("--seed", c.seed, "global seed");
    app->add_option("--set", c.overrides, "override a setting, key=value (repeatable)");
}

RunConfig resolve(const Common& c, const std::vector<std::pair<std::string, std::string>>& flags, std::ostream& err) {
    RunConfig cfg;
    if (!c.config_path.empty()) cfg.load_file(c.config_path);
    for (const auto& [k, v] : flags) cfg.set(k, v);
    if (c.seed) cfg.set("seed", std::to_string(*c.seed));
    for (const std::string& kv : c.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) fail(ErrorKind::Usage, "--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    err << "# resolved config\n" << cfg.dump() << std::flush;
    return cfg;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) fail(ErrorKind::Io, "cannot write " + path);
    return f;
}

// segment boundaries on the 10 ms annotation grid
std::string grid_time(double t) { return format_double(std::round(t * 100.0) / 100.0); }

std::uint64_t dialogue_seed(std::uint64_t seed, std::size_t i) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (i + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::unique_ptr<Model> model_from(const std::string& ckpt, const RunConfig& cfg) {
    if (!ckpt.empty()) return load_checkpoint(ckpt);
    return std::make_unique<Model>(cfg.model());
}

int cmd_annotate(const RunConfig& cfg, const std::string& trace_path, const std::string& out_path, std::ostream& out) {
    const auto segments = annotate(read_motion_csv(trace_path), cfg.annotation());
    std::ofstream f = open_out(out_path);
    for (const NodSegment& s : segments) {
        f << "{\"start\": " << grid_time(s.start) << ", \"end\": " << grid_time(s.end) << ", \"type\": \""
          << to_string(*s.type) << "\"}\n";
    }
    out << segments.size() << " segments -> " << out_path << '\n';
    return 0;
}

int cmd_synth(const RunConfig& cfg, const std::string& dir, std::ostream& out) {
    const long long count = cfg.get_int("synth.count");
    if (count <= 0) fail(ErrorKind::Config, "synth.count must be positive");
    const ModelConfig mc = cfg.model();
    fs::create_directories(dir);
    std::vector<NamedLabels> labels;
    std::vector<ManifestEntry> entries;
    for (std::size_t i = 0; i < static_cast<std::size_t>(count); ++i) {
        SyntheticDialogueConfig sc = cfg.synthetic();
        sc.seed = dialogue_seed(cfg.seed(), i);
        const SyntheticDialogue d = generate_synthetic_dialogue(sc);
        char name[32];
        std::snprintf(name, sizeof name, "d%03zu", i);
        write_wav((fs::path(dir) / (std::string(name) + ".wav")).string(), d.audio);
        write_motion_csv((fs::path(dir) / (std::string(name) + "_motion.csv")).string(), d.motion);
        labels.emplace_back(name, labels_from_motion(d.motion, d.backchannels, d.user_speech, d.system_speech,
                                                     mc.frame_rate, d.audio.duration(), cfg.annotation()));
        entries.push_back({name, std::string(name) + ".wav", "labels.jsonl", "", {}});
    }
    write_labels_jsonl((fs::path(dir) / "labels.jsonl").string(), labels);
    write_manifest((fs::path(dir) / "manifest.json").string(), entries);
    out << count << " dialogues -> " << dir << '\n';
    return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& manifest, const std::string& init, const std::string& ckpt,
              const std::string& log, std::ostream& out) {
    std::unique_ptr<Model> model = model_from(init, cfg);
    TrainConfig tc = cfg.training();
    // an init checkpoint may disagree with model.nod_classes
    if (cfg.get("train.pos_weight") == "auto") {
        tc.weights.pos_weight = LossWeights::for_classes(model->config().nod_classes).pos_weight;
    }
    tc.log_path = log;
    const auto dialogues = load_dialogues(manifest, model->config().frame_rate);
    train(*model, dialogues, tc, [&](const EpochStats& s) {
        out << "epoch " << s.epoch << ' ' << to_string(s.stage) << " loss " << s.mean.total << " nod " << s.mean.nod
            << " vad " << s.mean.vad << " vap " << s.mean.vap << " bc " << s.mean.bc << '\n'
            << std::flush;
        return true;
    });
    save_checkpoint(ckpt, *model);
    out << "checkpoint -> " << ckpt << '\n';
    return 0;
}

int cmd_predict(const RunConfig& cfg, const std::string& ckpt, const std::string& manifest, const std::string& path,
                std::ostream& out) {
    const auto model = load_checkpoint(ckpt);
    const double window = cfg.get_double("stream.window_seconds");
    std::vector<DialoguePredictions> preds;
    for (const ManifestEntry& e : read_manifest(manifest)) {
        preds.push_back({e.name, batch_predict(*model, read_wav(e.wav), window)});
    }
    write_predictions_jsonl(path, preds);
    out << preds.size() << " dialogues -> " << path << '\n';
    return 0;
}

void emit(const std::string& text, const std::string& path, std::ostream& out) {
    if (!path.empty()) {
        std::ofstream f = open_out(path);
        f << text << '\n';
    }
    out << text << '\n';
}

int cmd_eval(const std::string& pred, const std::string& labels, const std::string& task, const std::string& path,
             std::ostream& out) {
    const EvalReport r = evaluate(read_predictions_jsonl(pred), read_labels_jsonl(labels), task_from_string(task));
    emit(eval_report_to_json(r), path, out);
    return 0;
}

int cmd_sigtest(const RunConfig& cfg, const std::string& a, const std::string& b, const std::string& labels,
                const std::string& task, const std::string& path, std::ostream& out) {
    const Task t = task_from_string(task);
    const auto truth_labels = read_labels_jsonl(labels);
    const auto [da, truth] = align_for_task(read_predictions_jsonl(a), truth_labels, t);
    const auto db = align_for_task(read_predictions_jsonl(b), truth_labels, t).first;
    const std::set<int> positive = t == Task::Timing ? std::set<int>{1} : std::set<int>{1, 2, 3};
    const long long iters = cfg.get_int("sigtest.iterations");
    if (iters <= 0) fail(ErrorKind::Config, "sigtest.iterations must be positive");
    const BootstrapResult r = bootstrap_f1_test(da, db, truth, positive, static_cast<std::size_t>(iters), cfg.seed());
    emit(bootstrap_to_json(r), path, out);
    return 0;
}

int cmd_stream(const RunConfig& cfg, const std::string& ckpt, const std::string& wav, std::optional<double> rate,
               const std::string& events_path, std::ostream& out) {
    if (wav == "mic") fail(ErrorKind::Config, "live microphone capture is not built in; pass a WAV file");
    const auto model = load_checkpoint(ckpt);
    if (rate && *rate != model->config().frame_rate) {
        fail(ErrorKind::Config, "--rate " + format_double(*rate) + " does not match the checkpoint (" +
                                    format_double(model->config().frame_rate) + " Hz)");
    }
    const StereoAudio audio = read_wav(wav);
    StreamConfig sc = cfg.stream();
    sc.frame_rate = model->config().frame_rate;
    StreamSession session(*model, sc);
    std::ofstream f;
    if (!events_path.empty()) f = open_out(events_path);
    const std::size_t spf = model->config().samples_per_frame();
    const std::size_t n = audio.user.size() / spf;
    if (n == 0) fail(ErrorKind::Range, "audio is shorter than one frame");
    for (std::size_t t = 0; t < n; ++t) {
        const auto at = static_cast<std::ptrdiff_t>(t * spf);
        session.push_audio(std::span<const double>(audio.user.data() + at, spf),
                           std::span<const double>(audio.system.data() + at, spf));
        for (const NodEvent& e : session.emit_events(session.tick())) {
            const std::string line = event_to_json(e);
            out << line << '\n' << std::flush;
            if (f) f << line << '\n';
            session.apply_self_feedback(e);
        }
    }
    return 0;
}

int cmd_bench(const RunConfig& cfg, const std::string& ckpt, const std::string& wav, std::size_t repeat,
              std::ostream& out) {
    const auto model = model_from(ckpt, cfg);
    StreamConfig sc = cfg.stream();
    sc.frame_rate = model->config().frame_rate;
    const RtfReport r = measure_rtf(*model, read_wav(wav), sc, repeat);
    out << rtf_report_to_json(r) << '\n';
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Listener nod and backchannel prediction from dialogue audio"};
    app.name("nodpred");
    app.set_version_flag("--version", std::string("nodpred ") + kVersion + " (checkpoint format " +
                                          std::to_string(kCheckpointVersion) + ")");
    app.require_subcommand(1);

    Common common;
    std::string trace, out_path, dir, manifest, init, ckpt, log, pred, pred_a, pred_b, labels, task = "timing", wav,
                                                                                             events;
    std::optional<std::size_t> count, epochs, iters;
    std::optional<double> duration, lr, rate, window;
    std::optional<std::string> stage;
    std::size_t repeat = 1;

    auto* annotate_cmd = app.add_subcommand("annotate", "segment and type nods in a head-pitch trace");
    annotate_cmd->add_option("--trace", trace, "motion CSV (time_s,pitch_rad)")->required();
    annotate_cmd->add_option("--out", out_path, "segments JSONL")->required();
    add_common(annotate_cmd, common);

    auto* synth_cmd = app.add_subcommand("synth-data", "generate a synthetic dialogue dataset");
    synth_cmd->add_option("--out", dir, "output directory")->required();
    synth_cmd->add_option("--count", count, "number of dialogues");
    synth_cmd->add_option("--duration", duration, "seconds per dialogue");
    synth_cmd->add_option("--rate", rate, "label frame rate (50 or 10)");
    add_common(synth_cmd, common);

    auto* train_cmd = app.add_subcommand("train", "pretrain or finetune a model");
    train_cmd->add_option("--manifest", manifest, "dataset manifest JSON")->required();
    train_cmd->add_option("--out", ckpt, "checkpoint to write")->required();
    train_cmd->add_option("--init", init, "start from this checkpoint");
    train_cmd->add_option("--stage", stage, "pretrain or finetune");
    train_cmd->add_option("--epochs", epochs, "epochs");
    train_cmd->add_option("--lr", lr, "learning rate");
    train_cmd->add_option("--log", log, "training log CSV");
    add_common(train_cmd, common);

    auto* predict_cmd = app.add_subcommand("predict", "frame predictions for every dialogue in a manifest");
    predict_cmd->add_option("--model", ckpt, "checkpoint")->required();
    predict_cmd->add_option("--manifest", manifest, "dataset manifest JSON")->required();
    predict_cmd->add_option("--out", out_path, "predictions JSONL")->required();
    predict_cmd->add_option("--window", window, "context window in seconds");
    add_common(predict_cmd, common);

    auto* eval_cmd = app.add_subcommand("eval", "frame-level precision, recall and F1");
    eval_cmd->add_option("--pred", pred, "predictions JSONL")->required();
    eval_cmd->add_option("--labels", labels, "labels JSONL")->required();
    eval_cmd->add_option("--task", task, "timing or type");
    eval_cmd->add_option("--out", out_path, "report JSON");
    add_common(eval_cmd, common);

    auto* sig_cmd = app.add_subcommand("sigtest", "bootstrap test that system A beats system B");
    sig_cmd->add_option("--pred-a", pred_a, "predictions JSONL of A")->required();
    sig_cmd->add_option("--pred-b", pred_b, "predictions JSONL of B")->required();
    sig_cmd->add_option("--labels", labels, "labels JSONL")->required();
    sig_cmd->add_option("--iters", iters, "bootstrap iterations");
    sig_cmd->add_option("--task", task, "timing or type");
    sig_cmd->add_option("--out", out_path, "result JSON");
    add_common(sig_cmd, common);

    auto* stream_cmd = app.add_subcommand("stream", "run the real-time loop over a file");
    stream_cmd->add_option("--model", ckpt, "checkpoint")->required();
    stream_cmd->add_option("--wav", wav, "stereo 16 kHz WAV (user left, system right)")->required();
    stream_cmd->add_option("--rate", rate, "frame rate, must match the checkpoint");
    stream_cmd->add_option("--window", window, "window seconds");
    stream_cmd->add_option("--events-out", events, "events JSONL");
    add_common(stream_cmd, common);

    auto* bench_cmd = app.add_subcommand("bench-rtf", "real-time factor and tick latency");
    bench_cmd->add_option("--model", ckpt, "checkpoint (default: fresh model from the config)");
    bench_cmd->add_option("--wav", wav, "stereo 16 kHz WAV")->required();
    bench_cmd->add_option("--repeat", repeat, "passes over the file");
    bench_cmd->add_option("--window", window, "window seconds");
    add_common(bench_cmd, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        std::vector<std::pair<std::string, std::string>> flags;
        if (count) flags.emplace_back("synth.count", std::to_string(*count));
        if (duration) flags.emplace_back("synth.duration", format_double(*duration));
        if (rate && !*stream_cmd) flags.emplace_back("model.frame_rate", format_double(*rate));
        if (stage) flags.emplace_back("train.stage", *stage);
        if (epochs) flags.emplace_back("train.epochs", std::to_string(*epochs));
        if (lr) flags.emplace_back("train.lr", format_double(*lr));
        if (window) flags.emplace_back("stream.window_seconds", format_double(*window));
        if (iters) flags.emplace_back("sigtest.iterations", std::to_string(*iters));
        const RunConfig cfg = resolve(common, flags, err);

        if (*annotate_cmd) return cmd_annotate(cfg, trace, out_path, out);
        if (*synth_cmd) return cmd_synth(cfg, dir, out);
        if (*train_cmd) return cmd_train(cfg, manifest, init, ckpt, log, out);
        if (*predict_cmd) return cmd_predict(cfg, ckpt, manifest, out_path, out);
        if (*eval_cmd) return cmd_eval(pred, labels, task, out_path, out);
        if (*sig_cmd) return cmd_sigtest(cfg, pred_a, pred_b, labels, task, out_path, out);
        if (*stream_cmd) return cmd_stream(cfg, ckpt, wav, rate, events, out);
        if (*bench_cmd) return cmd_bench(cfg, ckpt, wav, repeat, out);
        fail(ErrorKind::Usage, "no subcommand");
    } catch (const Error& e) {
        err << "nodpred: " << e.what() << '\n';
        return is_validation(e.kind()) ? 1 : 2;
    } catch (const std::exception& e) {
        err << "nodpred: " << e.what() << '\n';
        return 2;
    }
}

}  // namespace nodpred
