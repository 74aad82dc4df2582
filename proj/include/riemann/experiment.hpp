#pragma once

#include "riemann/linalg.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace riemann::cli {

// Exit 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Exit 2.
struct NumericalFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class KeyKind { text, real, integer, boolean, choice, spectrum, grid };

struct KeySpec {
    std::string key;
    std::string default_value;
    KeyKind kind = KeyKind::text;
    std::vector<std::string> choices;  // KeyKind::choice
    std::string help;
};

// Keys accepted by a command ("eig", "flow", "track", "bench"), with defaults.
const std::vector<KeySpec>& command_keys(const std::string& command);

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// Flat "key = value" lines; '#' starts a comment, blank lines are skipped,
// values may be double-quoted, '-' in keys reads as '_'.
KeyValues parse_config_text(const std::string& text);

// "--key value", "--key=value", and "--flag" / "--no-flag" for boolean keys.
KeyValues parse_flag_args(const std::string& command, const std::vector<std::string>& args);

struct ExperimentConfig {
    std::string command;
    std::map<std::string, std::string> values;  // every key of the command

    const std::string& get(const std::string& key) const;
    double number(const std::string& key) const;
    long integer(const std::string& key) const;
    bool flag(const std::string& key) const;
    std::uint64_t seed() const;
    // "# riemann-opt <command>" followed by "# key=value" for every key.
    std::string header() const;
};

// Defaults, then the file, then the flags. Unknown keys and values that do not
// parse as the key's type are usage errors.
ExperimentConfig resolve_config(const std::string& command, const KeyValues& file, const KeyValues& flags);

// "a..b" integer ramp, "diag:v1,v2,..." or "file:<path>" (numbers separated
// by whitespace or commas).
Vec parse_spectrum(const std::string& spec);
// Comma-separated positive integers.
std::vector<int> parse_grid(const std::string& spec);

struct ExperimentOutput {
    std::string csv;        // header comments, column line, rows
    std::string summary;    // human-readable lines
    std::string rates_csv;  // flow only: predicted vs measured decay rates
};

// Runs config.reps independent repetitions (seeds seed, seed+1, ...) and
// concatenates them in order; with reps > 1 every row starts with the rep index.
// Throws UsageError or NumericalFailure.
ExperimentOutput run_experiment(const ExperimentConfig& config);

// The whole command line: riemann-opt {eig|flow|track|bench} [--config FILE] [--out FILE] [flags].
// Returns the exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace riemann::cli
