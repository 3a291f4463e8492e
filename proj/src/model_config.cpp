#include "nodpred/model_config.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "nodpred/error.hpp"

namespace nodpred {

namespace {

bool integral(double x) { return std::abs(x - std::round(x)) < 1e-9; }

}  // namespace

void ModelConfig::validate() const {
    if (frame_rate != 50.0 && frame_rate != 10.0) {
        fail(ErrorKind::UnsupportedRate, "model frame_rate must be 50 or 10, got " + std::to_string(frame_rate));
    }
    if (!(window_seconds > 0.0) || !integral(window_seconds * frame_rate)) {
        fail(ErrorKind::Config, "window_seconds must be positive and a whole number of frames");
    }
    if (dim == 0 || heads == 0 || dim % heads != 0) fail(ErrorKind::Config, "dim must be divisible by heads");
    if (ffn_dim == 0 || encoder_channels1 == 0 || encoder_channels2 == 0) {
        fail(ErrorKind::Config, "layer widths must be positive");
    }
    if (nod_classes != 2 && nod_classes != 4) fail(ErrorKind::Config, "nod_classes must be 2 or 4");
    if (vap_bins.size() != 4) fail(ErrorKind::Config, "vap_bins needs four widths (256 joint states)");
    for (int b : vap_bins) {
        if (b <= 0) fail(ErrorKind::Config, "vap_bins widths must be positive");
    }
    if (std::accumulate(vap_bins.begin(), vap_bins.end(), 0) != 2000) {
        fail(ErrorKind::Config, "vap_bins must sum to 2000 ms");
    }
    for (int b : vap_bins) {
        if (!integral(b * frame_rate / 1000.0)) fail(ErrorKind::Config, "vap_bins must align to whole frames");
    }
}

std::size_t ModelConfig::pool_factor() const {
    return static_cast<std::size_t>(std::lround(kEncoderRate / frame_rate));
}

std::size_t ModelConfig::window_frames() const {
    return static_cast<std::size_t>(std::floor(window_seconds * frame_rate + 1e-9));
}

std::size_t ModelConfig::samples_per_frame() const { return kEncoderHop * pool_factor(); }

std::size_t ModelConfig::window_samples() const { return window_frames() * samples_per_frame(); }

std::size_t ModelConfig::vap_horizon_frames() const {
    return static_cast<std::size_t>(std::lround(2.0 * frame_rate));
}

}  // namespace nodpred
