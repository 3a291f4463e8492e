#include "nodpred/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include <boost/math/distributions/students_t.hpp>

#include "json.hpp"
#include "nodpred/error.hpp"

namespace nodpred {

using json = nlohmann::json;

namespace {

struct Counts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
};

Counts count(const std::vector<int>& predicted, const std::vector<int>& truth, const std::set<int>& positive) {
    if (predicted.size() != truth.size()) fail(ErrorKind::Shape, "predictions and labels differ in length");
    Counts c;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool p = positive.contains(predicted[i]);
        const bool t = positive.contains(truth[i]);
        c.tp += p && t;
        c.fp += p && !t;
        c.fn += !p && t;
    }
    return c;
}

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

PrfScores scores(const Counts& c) {
    PrfScores s;
    s.precision = 100.0 * ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
    s.recall = 100.0 * ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
    s.f1 = 100.0 * ratio(2.0 * static_cast<double>(c.tp), static_cast<double>(2 * c.tp + c.fp + c.fn));
    return s;
}

}  // namespace

PrfScores frame_prf(const std::vector<int>& predicted, const std::vector<int>& truth, const std::set<int>& positive) {
    return scores(count(predicted, truth, positive));
}

PrfScores macro_average(const std::vector<PrfScores>& per_class) {
    if (per_class.empty()) fail(ErrorKind::Empty, "macro average of no classes");
    PrfScores m;
    for (const PrfScores& s : per_class) {
        m.f1 += s.f1;
        m.precision += s.precision;
        m.recall += s.recall;
    }
    const auto n = static_cast<double>(per_class.size());
    m.f1 /= n;
    m.precision /= n;
    m.recall /= n;
    return m;
}

PrfScores random_baseline(const std::vector<int>& truth, const std::set<int>& positive) {
    const int always = positive.empty() ? 0 : *positive.begin();
    return frame_prf(std::vector<int>(truth.size(), always), truth, positive);
}

double random_baseline_f1(double positive_ratio) {
    if (!(positive_ratio >= 0.0 && positive_ratio <= 1.0)) fail(ErrorKind::Range, "positive ratio must be in [0, 1]");
    return 100.0 * 2.0 * positive_ratio / (1.0 + positive_ratio);
}

Task task_from_string(const std::string& s) {
    if (s == "timing") return Task::Timing;
    if (s == "type") return Task::Type;
    fail(ErrorKind::Config, "task must be timing or type, got '" + s + "'");
}

std::string_view to_string(Task t) noexcept { return t == Task::Timing ? "timing" : "type"; }

int timing_decision(const std::vector<double>& p_nod) {
    if (p_nod.empty()) fail(ErrorKind::Shape, "empty nod distribution");
    return 1.0 - p_nod[0] > 0.5 ? 1 : 0;
}

int type_decision(const std::vector<double>& p_nod) {
    if (p_nod.empty()) fail(ErrorKind::Shape, "empty nod distribution");
    return static_cast<int>(std::max_element(p_nod.begin(), p_nod.end()) - p_nod.begin());
}

BootstrapResult bootstrap_f1_test(const std::vector<DialogueFrames>& a, const std::vector<DialogueFrames>& b,
                                  const std::vector<DialogueFrames>& truth, const std::set<int>& positive,
                                  std::size_t iterations, std::uint64_t seed) {
    const std::size_t d = truth.size();
    if (d < 2) fail(ErrorKind::InsufficientData, "bootstrap needs at least 2 dialogues, got " + std::to_string(d));
    if (a.size() != d || b.size() != d) fail(ErrorKind::Shape, "both systems must cover every dialogue");
    if (iterations < 100) fail(ErrorKind::Config, "bootstrap needs at least 100 iterations");
    std::vector<Counts> ca(d), cb(d);
    for (std::size_t i = 0; i < d; ++i) {
        if (a[i].dialogue != truth[i].dialogue || b[i].dialogue != truth[i].dialogue) {
            fail(ErrorKind::Shape, "dialogue order differs between systems and labels");
        }
        ca[i] = count(a[i].classes, truth[i].classes, positive);
        cb[i] = count(b[i].classes, truth[i].classes, positive);
    }

    BootstrapResult r;
    r.iterations = iterations;
    r.f1_a.assign(iterations, 0.0);
    r.f1_b.assign(iterations, 0.0);
    const auto n = static_cast<std::ptrdiff_t>(iterations);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t it = 0; it < n; ++it) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(it), 0x5eedu};
        std::mt19937_64 rng(seq);
        std::uniform_int_distribution<std::size_t> pick(0, d - 1);
        Counts sa, sb;
        for (std::size_t k = 0; k < d; ++k) {
            const std::size_t j = pick(rng);
            sa.tp += ca[j].tp;
            sa.fp += ca[j].fp;
            sa.fn += ca[j].fn;
            sb.tp += cb[j].tp;
            sb.fp += cb[j].fp;
            sb.fn += cb[j].fn;
        }
        r.f1_a[static_cast<std::size_t>(it)] = scores(sa).f1;
        r.f1_b[static_cast<std::size_t>(it)] = scores(sb).f1;
    }

    std::vector<double> diff(iterations);
    for (std::size_t i = 0; i < iterations; ++i) diff[i] = r.f1_a[i] - r.f1_b[i];
    const double mean = std::accumulate(diff.begin(), diff.end(), 0.0) / static_cast<double>(iterations);
    double ss = 0.0;
    for (double v : diff) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(iterations - 1));
    r.mean_difference = mean;
    if (sd == 0.0) {
        // no spread: identical systems give no evidence; a constant gap is decisive
        r.t_statistic = mean == 0.0 ? 0.0 : std::copysign(INFINITY, mean);
        r.p_value = mean > 0.0 ? 0.0 : 1.0;
        return r;
    }
    r.t_statistic = mean / (sd / std::sqrt(static_cast<double>(iterations)));
    const boost::math::students_t dist(static_cast<double>(iterations - 1));
    r.p_value = boost::math::cdf(boost::math::complement(dist, r.t_statistic));
    return r;
}

void write_predictions_jsonl(const std::string& path, const std::vector<DialoguePredictions>& preds) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write " + path);
    for (const DialoguePredictions& d : preds) {
        for (std::size_t f = 0; f < d.frames.size(); ++f) {
            const PredictionFrame& p = d.frames[f];
            json j{{"dialogue", d.dialogue}, {"frame", f}, {"p_nod", p.p_nod}, {"p_vad", p.p_vad}};
            if (p.p_bc) j["p_bc"] = *p.p_bc;
            out << j.dump() << '\n';
        }
    }
    if (!out) fail(ErrorKind::Io, "write failed: " + path);
}

std::vector<DialoguePredictions> read_predictions_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open " + path);
    std::vector<DialoguePredictions> out;
    std::map<std::string, std::size_t> index;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            const auto name = j.at("dialogue").get<std::string>();
            auto [it, fresh] = index.emplace(name, out.size());
            if (fresh) out.push_back({name, {}});
            DialoguePredictions& d = out[it->second];
            if (j.at("frame").get<std::size_t>() != d.frames.size()) {
                fail(ErrorKind::Format, "frames out of order for dialogue " + name);
            }
            PredictionFrame p;
            p.p_nod = j.at("p_nod").get<std::vector<double>>();
            if (p.p_nod.size() != 2 && p.p_nod.size() != 4) fail(ErrorKind::Format, "p_nod needs 2 or 4 entries");
            if (j.contains("p_bc")) p.p_bc = j.at("p_bc").get<double>();
            if (j.contains("p_vad")) p.p_vad = j.at("p_vad").get<std::array<double, 2>>();
            d.frames.push_back(std::move(p));
        } catch (const json::exception& e) {
            fail(ErrorKind::Format, path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::pair<std::vector<DialogueFrames>, std::vector<DialogueFrames>> align_for_task(
    const std::vector<DialoguePredictions>& preds, const std::vector<NamedLabels>& labels, Task task) {
    std::map<std::string, const DialoguePredictions*> by_name;
    for (const auto& p : preds) by_name[p.dialogue] = &p;
    std::vector<DialogueFrames> decided, truth;
    for (const auto& [name, l] : labels) {
        const auto it = by_name.find(name);
        if (it == by_name.end()) fail(ErrorKind::Shape, "no predictions for dialogue " + name);
        const auto& frames = it->second->frames;
        if (frames.size() != l.frames()) {
            fail(ErrorKind::Shape, "dialogue " + name + ": " + std::to_string(frames.size()) + " predicted frames vs " +
                                       std::to_string(l.frames()) + " labelled");
        }
        DialogueFrames d{name, {}}, t{name, {}};
        for (const auto& f : frames) {
            if (task == Task::Type && f.p_nod.size() != 4) fail(ErrorKind::Config, "type task needs 4-class predictions");
            d.classes.push_back(task == Task::Timing ? timing_decision(f.p_nod) : type_decision(f.p_nod));
        }
        t.classes = task == Task::Timing ? timing_classes(l.nod_class) : l.nod_class;
        decided.push_back(std::move(d));
        truth.push_back(std::move(t));
    }
    return {decided, truth};
}

EvalReport evaluate(const std::vector<DialoguePredictions>& preds, const std::vector<NamedLabels>& labels, Task task) {
    const auto [decided, truth] = align_for_task(preds, labels, task);
    std::vector<int> p, t;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        p.insert(p.end(), decided[i].classes.begin(), decided[i].classes.end());
        t.insert(t.end(), truth[i].classes.begin(), truth[i].classes.end());
    }
    EvalReport r;
    r.task = task;
    r.frames = t.size();
    r.dialogues = truth.size();
    if (task == Task::Timing) {
        r.rows.push_back({"nod", frame_prf(p, t, {1}), random_baseline(t, {1})});
        return r;
    }
    const char* names[] = {"short", "long", "long_p"};
    std::vector<PrfScores> m, b;
    for (int c = 1; c <= 3; ++c) {
        r.rows.push_back({names[c - 1], frame_prf(p, t, {c}), random_baseline(t, {c})});
        m.push_back(r.rows.back().model);
        b.push_back(r.rows.back().random);
    }
    r.rows.push_back({"macro", macro_average(m), macro_average(b)});
    return r;
}

namespace {

json prf_json(const PrfScores& s) { return json{{"f1", s.f1}, {"precision", s.precision}, {"recall", s.recall}}; }

}  // namespace

std::string eval_report_to_json(const EvalReport& r) {
    json rows = json::array();
    for (const EvalRow& row : r.rows) {
        rows.push_back(json{{"class", row.name}, {"model", prf_json(row.model)}, {"random", prf_json(row.random)}});
    }
    return json{{"task", std::string(to_string(r.task))}, {"frames", r.frames}, {"dialogues", r.dialogues}, {"rows", rows}}
        .dump(2);
}

std::string bootstrap_to_json(const BootstrapResult& r) {
    auto mean = [](const std::vector<double>& v) {
        return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    json j{{"iterations", r.iterations},
           {"mean_f1_a", mean(r.f1_a)},
           {"mean_f1_b", mean(r.f1_b)},
           {"mean_difference", r.mean_difference},
           {"p_value", r.p_value}};
    j["t_statistic"] = std::isfinite(r.t_statistic) ? json(r.t_statistic) : json(r.t_statistic > 0 ? "inf" : "-inf");
    return j.dump(2);
}

}  // namespace nodpred
