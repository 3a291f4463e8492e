#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nodpred/model_config.hpp"
#include "nodpred/motion.hpp"
#include "nodpred/streaming.hpp"
#include "nodpred/synthetic.hpp"
#include "nodpred/training.hpp"

namespace nodpred {

/// Flat `key = value` settings with section prefixes (model., annotate.,
/// train., stream., synth., sigtest.) plus the global `seed`. Every key has a
/// default; files and flags may only set known keys.
class RunConfig {
public:
    RunConfig();

    /// '#' starts a comment; blank lines are skipped; later lines win.
    void load_file(const std::string& path);
    void load_text(const std::string& text, const std::string& origin = "<text>");
    void set(const std::string& key, const std::string& value);

    const std::string& get(const std::string& key) const;
    bool contains(const std::string& key) const { return values_.contains(key); }

    double get_double(const std::string& key) const;
    long long get_int(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::uint64_t seed() const;

    ModelConfig model() const;
    AnnotationConfig annotation() const;
    TrainConfig training() const;  // pos_weight "auto" follows model.nod_classes
    StreamConfig stream() const;   // frame rate follows model.frame_rate
    SyntheticDialogueConfig synthetic() const;

    /// Resolved settings, one `key = value` per line in key order.
    std::string dump() const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace nodpred
