#include "nodpred/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "nodpred/error.hpp"

namespace nodpred {

using autodiff::Tape;
using autodiff::Var;
using json = nlohmann::json;

namespace {

std::vector<std::size_t> bin_frames(const std::vector<int>& bins_ms, double frame_rate) {
    std::vector<std::size_t> out;
    for (int b : bins_ms) out.push_back(static_cast<std::size_t>(std::lround(b * frame_rate / 1000.0)));
    return out;
}

}  // namespace

int vap_state_encode(std::span<const std::uint8_t> user_future, std::span<const std::uint8_t> system_future,
                     const std::vector<int>& bins_ms, double frame_rate) {
    if (bins_ms.size() != 4) fail(ErrorKind::Config, "vap needs four bins");
    const auto widths = bin_frames(bins_ms, frame_rate);
    std::size_t horizon = 0;
    for (std::size_t w : widths) horizon += w;
    if (user_future.size() < horizon || system_future.size() < horizon) {
        fail(ErrorKind::Horizon, "vap state needs " + std::to_string(horizon) + " future frames");
    }
    int index = 0;
    const std::span<const std::uint8_t> channels[2] = {user_future, system_future};
    for (int c = 0; c < 2; ++c) {
        std::size_t begin = 0;
        for (std::size_t b = 0; b < widths.size(); ++b) {
            std::size_t active = 0;
            for (std::size_t i = begin; i < begin + widths[b]; ++i) active += channels[c][i] != 0;
            if (2 * active >= widths[b]) index |= 1 << (c * 4 + static_cast<int>(b));
            begin += widths[b];
        }
    }
    return index;
}

std::array<bool, 8> vap_state_decode(int index) {
    if (index < 0 || index >= static_cast<int>(kVapStates)) fail(ErrorKind::Range, "vap state out of range");
    std::array<bool, 8> bits{};
    for (int i = 0; i < 8; ++i) bits[static_cast<std::size_t>(i)] = (index >> i) & 1;
    return bits;
}

std::vector<int> vap_targets(const std::vector<std::uint8_t>& vad_user, const std::vector<std::uint8_t>& vad_system,
                             const std::vector<int>& bins_ms, double frame_rate) {
    if (vad_user.size() != vad_system.size()) fail(ErrorKind::Shape, "vad channels differ in length");
    const std::size_t n = vad_user.size();
    std::size_t horizon = 0;
    for (std::size_t w : bin_frames(bins_ms, frame_rate)) horizon += w;
    std::vector<int> out(n, -1);
    for (std::size_t t = 0; t + horizon < n; ++t) {
        out[t] = vap_state_encode(std::span(vad_user).subspan(t + 1), std::span(vad_system).subspan(t + 1), bins_ms,
                                  frame_rate);
    }
    return out;
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed);
    encoder_ = std::make_unique<AudioEncoder>(store_, cfg_, rng);
    const std::size_t depth = cfg_.self_layers + (cfg_.monaural ? 0 : cfg_.cross_layers);
    const double out_gain = 1.0 / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(depth, 1)));
    for (std::size_t i = 0; i < cfg_.self_layers; ++i) {
        self_blocks_.push_back(make_block("self." + std::to_string(i), false, rng, out_gain));
    }
    if (!cfg_.monaural) {
        for (std::size_t i = 0; i < cfg_.cross_layers; ++i) {
            cross_blocks_.push_back(make_block("cross." + std::to_string(i), true, rng, out_gain));
        }
    }
    final_norm_ = make_norm("final_norm");
    const std::size_t width = cfg_.monaural ? cfg_.dim : 2 * cfg_.dim;
    nod_head_ = make_linear("head.nod", width, cfg_.nod_classes, rng, 0.1);
    if (cfg_.multitask_bc) bc_head_ = make_linear("head.bc", width, 2, rng, 0.1);
    vad_head_ = make_linear("head.vad", width, 2, rng, 0.1);
    vap_head_ = make_linear("head.vap", width, kVapStates, rng, 0.1);
    for (std::size_t h = 0; h < cfg_.heads; ++h) {
        slopes_.push_back(std::exp2(-8.0 * static_cast<double>(h + 1) / static_cast<double>(cfg_.heads)));
    }
}

Model::Attention Model::make_attention(const std::string& prefix, std::mt19937_64& rng, double out_gain) {
    const std::size_t d = cfg_.dim;
    Attention a{};
    a.wq = &store_.add(prefix + ".wq", init_weight(d, d, rng));
    a.bq = &store_.add(prefix + ".bq", Matrix(1, d));
    a.wkv = &store_.add(prefix + ".wkv", init_weight(d, 2 * d, rng));
    a.bkv = &store_.add(prefix + ".bkv", Matrix(1, 2 * d));
    a.wo = &store_.add(prefix + ".wo", init_weight(d, d, rng, out_gain));
    a.bo = &store_.add(prefix + ".bo", Matrix(1, d));
    return a;
}

Model::Norm Model::make_norm(const std::string& prefix) {
    return Norm{&store_.add(prefix + ".gain", Matrix(1, cfg_.dim, 1.0)), &store_.add(prefix + ".shift", Matrix(1, cfg_.dim))};
}

Model::Block Model::make_block(const std::string& prefix, bool cross, std::mt19937_64& rng, double out_gain) {
    Block b{};
    b.norm_self = make_norm(prefix + ".norm_self");
    b.self_attn = make_attention(prefix + ".self_attn", rng, out_gain);
    if (cross) {
        b.norm_cross = make_norm(prefix + ".norm_cross");
        b.cross_attn = make_attention(prefix + ".cross_attn", rng, out_gain);
    }
    b.norm_ffn = make_norm(prefix + ".norm_ffn");
    b.w1 = &store_.add(prefix + ".ffn.w1", init_weight(cfg_.dim, cfg_.ffn_dim, rng));
    b.b1 = &store_.add(prefix + ".ffn.b1", Matrix(1, cfg_.ffn_dim));
    b.w2 = &store_.add(prefix + ".ffn.w2", init_weight(cfg_.ffn_dim, cfg_.dim, rng, out_gain));
    b.b2 = &store_.add(prefix + ".ffn.b2", Matrix(1, cfg_.dim));
    return b;
}

Model::Linear Model::make_linear(const std::string& prefix, std::size_t in, std::size_t out, std::mt19937_64& rng,
                                 double gain) {
    return Linear{&store_.add(prefix + ".weight", init_weight(in, out, rng, gain)),
                  &store_.add(prefix + ".bias", Matrix(1, out))};
}

Var Model::norm(Tape& tape, const Norm& n, Var x) const {
    return autodiff::layer_norm(tape, x, tape.param(*n.gain), tape.param(*n.shift));
}

Var Model::linear(Tape& tape, const Linear& l, Var x) const {
    return autodiff::add_bias(tape, autodiff::matmul(tape, x, tape.param(*l.w)), tape.param(*l.b));
}

Var Model::attend(Tape& tape, const Attention& a, Var x, Var memory) const {
    using namespace autodiff;
    const std::size_t d = cfg_.dim;
    Var q = add_bias(tape, matmul(tape, x, tape.param(*a.wq)), tape.param(*a.bq));
    Var kv = add_bias(tape, matmul(tape, memory, tape.param(*a.wkv)), tape.param(*a.bkv));
    Var y = attention(tape, q, slice_cols(tape, kv, 0, d), slice_cols(tape, kv, d, d), cfg_.heads, slopes_, true);
    return add_bias(tape, matmul(tape, y, tape.param(*a.wo)), tape.param(*a.bo));
}

// Pre-norm residual block: self-attention, optional cross-attention to the
// other channel's block input, then a GELU feed-forward. With last_only the
// block output is computed for the final frame alone; keys still span the
// whole window.
Var Model::run_block(Tape& tape, const Block& b, Var x, std::optional<Var> other, bool last_only) const {
    using namespace autodiff;
    const std::size_t frames = tape.value(x).rows();
    Var h = norm(tape, b.norm_self, x);
    Var hq = h;
    if (last_only) {
        x = slice_rows(tape, x, frames - 1, 1);
        hq = slice_rows(tape, h, frames - 1, 1);
    }
    x = add(tape, x, attend(tape, b.self_attn, hq, h));
    if (b.cross_attn) {
        Var q = norm(tape, *b.norm_cross, x);
        Var mem = norm(tape, *b.norm_cross, *other);
        x = add(tape, x, attend(tape, *b.cross_attn, q, mem));
    }
    h = norm(tape, b.norm_ffn, x);
    h = gelu(tape, add_bias(tape, matmul(tape, h, tape.param(*b.w1)), tape.param(*b.b1)));
    return add(tape, x, add_bias(tape, matmul(tape, h, tape.param(*b.w2)), tape.param(*b.b2)));
}

HeadOutputs Model::forward(Tape& tape, Var user_emb, Var system_emb, bool last_only) const {
    const Matrix& u = tape.value(user_emb);
    const Matrix& s = tape.value(system_emb);
    if (u.cols() != cfg_.dim) fail(ErrorKind::Shape, "user embedding width does not match model dim");
    if (u.rows() == 0) fail(ErrorKind::Empty, "no frames to predict");
    if (!cfg_.monaural && !u.same_shape(s)) fail(ErrorKind::Shape, "user and system embeddings differ in shape");

    Var user = user_emb;
    Var system = system_emb;
    const std::size_t self_count = self_blocks_.size();
    for (std::size_t i = 0; i < self_count; ++i) {
        const bool trim = last_only && cross_blocks_.empty() && i + 1 == self_count;
        user = run_block(tape, self_blocks_[i], user, std::nullopt, trim);
        if (!cfg_.monaural) system = run_block(tape, self_blocks_[i], system, std::nullopt, trim);
    }
    for (std::size_t i = 0; i < cross_blocks_.size(); ++i) {
        const bool trim = last_only && i + 1 == cross_blocks_.size();
        Var next_user = run_block(tape, cross_blocks_[i], user, system, trim);
        system = run_block(tape, cross_blocks_[i], system, user, trim);
        user = next_user;
    }
    if (last_only && self_count + cross_blocks_.size() == 0) {
        const std::size_t frames = tape.value(user).rows();
        user = autodiff::slice_rows(tape, user, frames - 1, 1);
        if (!cfg_.monaural) system = autodiff::slice_rows(tape, system, frames - 1, 1);
    }
    Var features = norm(tape, final_norm_, user);
    if (!cfg_.monaural) features = autodiff::concat_cols(tape, features, norm(tape, final_norm_, system));

    HeadOutputs out;
    out.nod = linear(tape, nod_head_, features);
    if (bc_head_) out.bc = linear(tape, *bc_head_, features);
    out.vad = linear(tape, vad_head_, features);
    out.vap = linear(tape, vap_head_, features);
    return out;
}

HeadOutputs Model::forward_audio(Tape& tape, std::span<const double> user, std::span<const double> system,
                                 bool last_only) const {
    if (user.size() != system.size()) fail(ErrorKind::Shape, "user and system audio differ in length");
    Var u = encoder_->encode(tape, user);
    Var s = cfg_.monaural ? u : encoder_->encode(tape, system);
    return forward(tape, u, s, last_only);
}

namespace {

std::vector<double> softmax_row(std::span<const double> z) {
    const double peak = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - peak);
        total += p[i];
    }
    for (double& v : p) v /= total;
    return p;
}

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

std::vector<PredictionFrame> Model::to_frames(const Tape& tape, const HeadOutputs& heads) const {
    const Matrix& nod = tape.value(heads.nod);
    const Matrix& vad = tape.value(heads.vad);
    const Matrix& vap = tape.value(heads.vap);
    std::vector<PredictionFrame> out(nod.rows());
    for (std::size_t t = 0; t < nod.rows(); ++t) {
        PredictionFrame& f = out[t];
        f.p_nod = softmax_row(nod.row(t));
        if (heads.bc) f.p_bc = softmax_row(tape.value(*heads.bc).row(t))[1];
        f.p_vad = {sigmoid(vad(t, 0)), sigmoid(vad(t, 1))};
        f.p_vap = softmax_row(vap.row(t));
    }
    return out;
}

std::vector<PredictionFrame> Model::predict(const FrameEmbedding& user, const FrameEmbedding& system) const {
    Tape tape(false);
    Var u = tape.constant(user.data);
    Var s = tape.constant(cfg_.monaural ? user.data : system.data);
    return to_frames(tape, forward(tape, u, s));
}

PredictionFrame Model::predict_window(std::span<const double> user, std::span<const double> system) const {
    Tape tape(false);
    return to_frames(tape, forward_audio(tape, user, system, true)).back();
}

PredictionFrame predict_latest_frame(const std::vector<PredictionFrame>& frames) {
    if (frames.empty()) fail(ErrorKind::Empty, "no prediction frames");
    return frames.back();
}

std::string model_config_to_json(const ModelConfig& cfg) {
    json j;
    j["frame_rate"] = cfg.frame_rate;
    j["window_seconds"] = cfg.window_seconds;
    j["dim"] = cfg.dim;
    j["self_layers"] = cfg.self_layers;
    j["cross_layers"] = cfg.cross_layers;
    j["heads"] = cfg.heads;
    j["ffn_dim"] = cfg.ffn_dim;
    j["nod_classes"] = cfg.nod_classes;
    j["monaural"] = cfg.monaural;
    j["multitask_bc"] = cfg.multitask_bc;
    j["vap_bins"] = cfg.vap_bins;
    j["encoder_channels1"] = cfg.encoder_channels1;
    j["encoder_channels2"] = cfg.encoder_channels2;
    j["seed"] = cfg.seed;
    return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
    ModelConfig cfg;
    try {
        const json j = json::parse(text);
        cfg.frame_rate = j.at("frame_rate").get<double>();
        cfg.window_seconds = j.at("window_seconds").get<double>();
        cfg.dim = j.at("dim").get<std::size_t>();
        cfg.self_layers = j.at("self_layers").get<std::size_t>();
        cfg.cross_layers = j.at("cross_layers").get<std::size_t>();
        cfg.heads = j.at("heads").get<std::size_t>();
        cfg.ffn_dim = j.at("ffn_dim").get<std::size_t>();
        cfg.nod_classes = j.at("nod_classes").get<std::size_t>();
        cfg.monaural = j.at("monaural").get<bool>();
        cfg.multitask_bc = j.at("multitask_bc").get<bool>();
        cfg.vap_bins = j.at("vap_bins").get<std::vector<int>>();
        cfg.encoder_channels1 = j.at("encoder_channels1").get<std::size_t>();
        cfg.encoder_channels2 = j.at("encoder_channels2").get<std::size_t>();
        cfg.seed = j.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        fail(ErrorKind::Format, std::string("bad model config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

namespace {

constexpr char kMagic[8] = {'N', 'O', 'D', 'P', 'C', 'K', 'P', 'T'};
static_assert(std::endian::native == std::endian::little, "checkpoints store little-endian doubles");

}  // namespace

// Layout: 8-byte magic, u64 header length, JSON header, raw f64 tensor data.
void save_checkpoint(const std::string& path, const Model& model) {
    const autodiff::ParameterStore& store = model.parameters();
    json header;
    header["version"] = kCheckpointVersion;
    header["config"] = json::parse(model_config_to_json(model.config()));
    header["tensors"] = json::array();
    std::size_t offset = 0;
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& p = store.at(i);
        header["tensors"].push_back({{"name", p.name}, {"shape", {p.value.rows(), p.value.cols()}}, {"offset", offset}});
        offset += p.value.size();
    }
    const std::string text = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot write " + path);
    out.write(kMagic, sizeof kMagic);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& v = store.at(i).value.values();
        out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    if (!out) fail(ErrorKind::Io, "write failed for " + path);
}

std::unique_ptr<Model> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open checkpoint " + path);
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        fail(ErrorKind::Format, path + ": not a checkpoint");
    }
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + 8, sizeof len);
    if (16 + len > bytes.size()) fail(ErrorKind::Format, path + ": truncated header");
    json header;
    try {
        header = json::parse(bytes.substr(16, len));
    } catch (const json::exception& e) {
        fail(ErrorKind::Format, path + ": bad header: " + e.what());
    }
    if (!header.contains("version") || header["version"] != kCheckpointVersion) {
        fail(ErrorKind::Format, path + ": unsupported checkpoint version");
    }
    auto model = std::make_unique<Model>(model_config_from_json(header.at("config").dump()));
    const std::size_t data_begin = 16 + len;
    const std::size_t doubles = (bytes.size() - data_begin) / sizeof(double);
    autodiff::ParameterStore& store = model->parameters();
    std::size_t seen = 0;
    for (const json& t : header.at("tensors")) {
        const std::string name = t.at("name").get<std::string>();
        if (!store.contains(name)) fail(ErrorKind::Format, path + ": unexpected tensor " + name);
        auto& p = store.get(name);
        const auto shape = t.at("shape").get<std::vector<std::size_t>>();
        const auto offset = t.at("offset").get<std::size_t>();
        if (shape.size() != 2 || shape[0] != p.value.rows() || shape[1] != p.value.cols()) {
            fail(ErrorKind::Format, path + ": tensor " + name + " has the wrong shape");
        }
        if (offset + p.value.size() > doubles) fail(ErrorKind::Format, path + ": tensor data truncated");
        std::memcpy(p.value.data(), bytes.data() + data_begin + offset * sizeof(double), p.value.size() * sizeof(double));
        ++seen;
    }
    if (seen != store.size()) fail(ErrorKind::Format, path + ": checkpoint is missing tensors");
    return model;
}

}  // namespace nodpred
