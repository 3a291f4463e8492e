#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nodpred/audio_frontend.hpp"
#include "nodpred/autodiff.hpp"
#include "nodpred/model_config.hpp"

namespace nodpred {

inline constexpr int kCheckpointVersion = 1;

struct PredictionFrame {
    std::vector<double> p_nod;   // C classes, class 0 = no nod
    std::optional<double> p_bc;  // only with multitask_bc
    std::array<double, 2> p_vad{};
    std::vector<double> p_vap;   // 256 future states
};

/// Index of the joint future-activity state. user_future / system_future hold
/// per-frame activity starting at the frame after the current one and must
/// cover the 2 s horizon; extra frames are ignored. Bit (channel * 4 + bin) is
/// set when the mean activity in that bin is at least 0.5.
int vap_state_encode(std::span<const std::uint8_t> user_future, std::span<const std::uint8_t> system_future,
                     const std::vector<int>& bins_ms, double frame_rate);
std::array<bool, 8> vap_state_decode(int index);

/// Per-frame VAP targets for a whole dialogue; frames without a full 2 s
/// future get -1 and are left out of the loss.
std::vector<int> vap_targets(const std::vector<std::uint8_t>& vad_user, const std::vector<std::uint8_t>& vad_system,
                             const std::vector<int>& bins_ms, double frame_rate);

/// Logit nodes of one forward pass.
struct HeadOutputs {
    autodiff::Var nod;
    std::optional<autodiff::Var> bc;
    autodiff::Var vad;
    autodiff::Var vap;
};

/// Two-channel transformer. Each channel passes through shared self-attention
/// layers, then symmetric cross-attention layers (one weight set, applied to
/// user-attends-system and system-attends-user). Heads read the concatenation
/// of both normalized channel states. The monaural variant uses only the user
/// channel and its self-attention stack.
class Model {
public:
    explicit Model(const ModelConfig& cfg);
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const noexcept { return cfg_; }
    autodiff::ParameterStore& parameters() noexcept { return store_; }
    const autodiff::ParameterStore& parameters() const noexcept { return store_; }
    const AudioEncoder& encoder() const noexcept { return *encoder_; }

    /// Embeddings are frames x dim. With last_only, heads see just the final frame.
    HeadOutputs forward(autodiff::Tape& tape, autodiff::Var user_emb, autodiff::Var system_emb,
                        bool last_only = false) const;
    /// Encodes both channels and runs forward.
    HeadOutputs forward_audio(autodiff::Tape& tape, std::span<const double> user, std::span<const double> system,
                              bool last_only = false) const;

    std::vector<PredictionFrame> predict(const FrameEmbedding& user, const FrameEmbedding& system) const;
    /// Latest-frame prediction over one audio window (streaming path).
    PredictionFrame predict_window(std::span<const double> user, std::span<const double> system) const;

    /// Converts head logits to probabilities, one PredictionFrame per row.
    std::vector<PredictionFrame> to_frames(const autodiff::Tape& tape, const HeadOutputs& heads) const;

private:
    struct Attention {
        const autodiff::Parameter* wq;
        const autodiff::Parameter* bq;
        const autodiff::Parameter* wkv;
        const autodiff::Parameter* bkv;
        const autodiff::Parameter* wo;
        const autodiff::Parameter* bo;
    };
    struct Norm {
        const autodiff::Parameter* gain;
        const autodiff::Parameter* shift;
    };
    struct Block {
        Norm norm_self;
        Attention self_attn;
        std::optional<Norm> norm_cross;
        std::optional<Attention> cross_attn;
        Norm norm_ffn;
        const autodiff::Parameter* w1;
        const autodiff::Parameter* b1;
        const autodiff::Parameter* w2;
        const autodiff::Parameter* b2;
    };
    struct Linear {
        const autodiff::Parameter* w;
        const autodiff::Parameter* b;
    };

    Attention make_attention(const std::string& prefix, std::mt19937_64& rng, double out_gain);
    Norm make_norm(const std::string& prefix);
    Block make_block(const std::string& prefix, bool cross, std::mt19937_64& rng, double out_gain);
    Linear make_linear(const std::string& prefix, std::size_t in, std::size_t out, std::mt19937_64& rng, double gain);

    autodiff::Var attend(autodiff::Tape& tape, const Attention& a, autodiff::Var x, autodiff::Var memory) const;
    autodiff::Var run_block(autodiff::Tape& tape, const Block& b, autodiff::Var x,
                            std::optional<autodiff::Var> other, bool last_only) const;
    autodiff::Var norm(autodiff::Tape& tape, const Norm& n, autodiff::Var x) const;
    autodiff::Var linear(autodiff::Tape& tape, const Linear& l, autodiff::Var x) const;

    ModelConfig cfg_;
    autodiff::ParameterStore store_;
    std::unique_ptr<AudioEncoder> encoder_;
    std::vector<Block> self_blocks_;
    std::vector<Block> cross_blocks_;
    Norm final_norm_{};
    Linear nod_head_{};
    std::optional<Linear> bc_head_;
    Linear vad_head_{};
    Linear vap_head_{};
    std::vector<double> slopes_;
};

PredictionFrame predict_latest_frame(const std::vector<PredictionFrame>& frames);

void save_checkpoint(const std::string& path, const Model& model);
std::unique_ptr<Model> load_checkpoint(const std::string& path);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace nodpred
