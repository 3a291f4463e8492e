#include "nodpred/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "nodpred/error.hpp"

namespace nodpred {

namespace {

std::uint32_t le32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint16_t le16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

void put32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>(v >> 8));
}

std::int16_t to_pcm(double x) {
    return static_cast<std::int16_t>(std::lround(std::clamp(x, -1.0, 1.0) * 32767.0));
}

}  // namespace

double quantize_pcm16(double x) noexcept { return to_pcm(x) / 32767.0; }

StereoAudio read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path);
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        fail(ErrorKind::Format, path + ": not a RIFF/WAVE file");
    }
    std::size_t pos = 12;
    bool have_fmt = false;
    int channels = 0;
    int rate = 0;
    while (pos + 8 <= bytes.size()) {
        const std::string id(reinterpret_cast<const char*>(bytes.data() + pos), 4);
        const std::size_t size = le32(bytes.data() + pos + 4);
        const std::size_t body = pos + 8;
        if (body + size > bytes.size()) fail(ErrorKind::Format, path + ": truncated chunk '" + id + "'");
        if (id == "fmt ") {
            if (size < 16) fail(ErrorKind::Format, path + ": short fmt chunk");
            const int format = le16(bytes.data() + body);
            channels = le16(bytes.data() + body + 2);
            rate = static_cast<int>(le32(bytes.data() + body + 4));
            const int bits = le16(bytes.data() + body + 14);
            if (format != 1 || bits != 16) fail(ErrorKind::Format, path + ": only 16-bit PCM is supported");
            if (channels != 2) {
                fail(ErrorKind::Format, path + ": expected 2 channels (user, system), got " + std::to_string(channels));
            }
            if (rate != 16000) fail(ErrorKind::UnsupportedRate, path + ": expected 16000 Hz, got " + std::to_string(rate));
            have_fmt = true;
        } else if (id == "data") {
            if (!have_fmt) fail(ErrorKind::Format, path + ": data chunk before fmt");
            StereoAudio audio;
            audio.sample_rate = rate;
            const std::size_t frames = size / 4;
            audio.user.resize(frames);
            audio.system.resize(frames);
            for (std::size_t i = 0; i < frames; ++i) {
                const unsigned char* p = bytes.data() + body + 4 * i;
                audio.user[i] = static_cast<std::int16_t>(le16(p)) / 32767.0;
                audio.system[i] = static_cast<std::int16_t>(le16(p + 2)) / 32767.0;
                audio.user[i] = std::max(audio.user[i], -1.0);
                audio.system[i] = std::max(audio.system[i], -1.0);
            }
            return audio;
        }
        pos = body + size + (size & 1);
    }
    fail(ErrorKind::Format, path + ": no data chunk");
}

void write_wav(const std::string& path, const StereoAudio& audio) {
    if (audio.user.size() != audio.system.size()) fail(ErrorKind::Shape, "channels differ in length");
    const auto frames = static_cast<std::uint32_t>(audio.user.size());
    std::string out;
    out.reserve(44 + 4 * static_cast<std::size_t>(frames));
    out += "RIFF";
    put32(out, 36 + 4 * frames);
    out += "WAVEfmt ";
    put32(out, 16);
    put16(out, 1);
    put16(out, 2);
    put32(out, static_cast<std::uint32_t>(audio.sample_rate));
    put32(out, static_cast<std::uint32_t>(audio.sample_rate) * 4);
    put16(out, 4);
    put16(out, 16);
    out += "data";
    put32(out, 4 * frames);
    for (std::uint32_t i = 0; i < frames; ++i) {
        put16(out, static_cast<std::uint16_t>(to_pcm(audio.user[i])));
        put16(out, static_cast<std::uint16_t>(to_pcm(audio.system[i])));
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::Io, "cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) fail(ErrorKind::Io, "write failed for " + path);
}

}  // namespace nodpred
