#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hsicl/augment.hpp"
#include "hsicl/synth.hpp"
#include "hsicl/train.hpp"

namespace hsicl {

/// Ordered `key = value` document. `#` starts a comment; blank lines are
/// ignored. Keys are unique.
class KeyValueDoc {
public:
    static KeyValueDoc parse(std::string_view text, std::string_view source = "config");
    static KeyValueDoc load(const std::string& path);

    bool has(const std::string& key) const;
    /// Raw value; throws ParseError when missing.
    const std::string& get(const std::string& key) const;
    std::optional<std::string> find(const std::string& key) const;
    void set(const std::string& key, std::string value);

    double get_double(const std::string& key) const;
    std::uint64_t get_uint(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    /// Marks keys as consumed; `reject_unknown` then throws for the rest.
    void reject_unknown(const std::vector<std::string>& known) const;

    const std::vector<std::pair<std::string, std::string>>& entries() const noexcept { return entries_; }
    std::string to_text() const;

private:
    /// "source line N: key" for error messages.
    std::string where(const std::string& key) const;

    std::vector<std::pair<std::string, std::string>> entries_;
    std::string source_;
    std::vector<std::size_t> lines_;
};

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view text, std::string_view what);
std::uint64_t parse_uint(std::string_view text, std::string_view what);

/// Operator list syntax: whitespace-separated `name` or `name(key=value,...)`.
std::vector<augment::AugmentSpec> parse_op_list(std::string_view text);
std::string format_op_list(const std::vector<augment::AugmentSpec>& ops);

/// Patch extraction settings carried alongside the training config.
struct PatchConfig {
    std::size_t size = 8;
    std::size_t stride = 4;
};

SynthConfig synth_config_from(const KeyValueDoc& doc);
std::string to_text(const SynthConfig& config);

/// Everything a training or ablation run needs besides the data.
struct RunConfig {
    TrainConfig train;
    PatchConfig patches;
    std::vector<std::uint64_t> seeds{1, 2, 3};
};

RunConfig run_config_from(const KeyValueDoc& doc);
std::string to_text(const RunConfig& config);
std::string to_text(const TrainConfig& config);

/// FNV-1a of the canonical text.
std::uint64_t config_digest(const TrainConfig& config);
std::uint64_t config_digest(const RunConfig& config);

std::vector<std::uint64_t> parse_seed_list(std::string_view text);

}  // namespace hsicl
