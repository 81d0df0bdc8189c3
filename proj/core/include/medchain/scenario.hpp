#pragma once

// Scripted runs over the simulator: a scenario is a SimConfig plus an ordered
// list of actions (register, grant, put, get, faults) and machine-checkable
// expectations evaluated at the point they appear.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "medchain/identity.hpp"
#include "medchain/sim.hpp"

namespace medchain::scenario {

class ScenarioError : public std::runtime_error {
public:
    ScenarioError(int line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

struct Action {
    int line = 0;
    std::string verb;
    std::vector<std::string> args;
    std::map<std::string, std::string> opts;
    std::string text;
};

struct Scenario {
    std::string name;
    std::string description;
    sim::SimConfig sim;
    std::vector<Action> script;
};

/// Splits a script line into words; double quotes group words and support \" and \\.
std::vector<std::string> tokenize(const std::string& line, int lineno = 0);
Scenario parse_scenario(const std::string& text);
Scenario load_scenario(const std::filesystem::path& path);

/// What the most recent client action ended with.
enum class Outcome : std::uint8_t { None, Ok, Denied, Rejected, IntegrityAlarm, NotIndexed, Undecryptable, Timeout };

const char* to_string(Outcome o);

struct ActionResult {
    int line = 0;
    std::string text;
    Outcome outcome = Outcome::None;
    ledger::TxStatus status = ledger::TxStatus::Accepted;
    std::uint64_t height = 0;
    std::uint64_t latency = 0;
    std::string detail;
};

struct ExpectResult {
    int line = 0;
    std::string text;
    bool passed = false;
    std::string detail;
};

struct Metrics {
    std::uint64_t ticks = 0;
    std::uint64_t committed_height = 0;
    std::uint64_t view_changes = 0;
    std::uint64_t requests = 0;
    std::uint64_t committed = 0;
    std::uint64_t rejected = 0;
    std::uint64_t timeouts = 0;
    std::uint64_t rate_limited = 0;
    std::uint64_t foreign_rejected = 0;
    std::uint64_t misbehavior = 0;
    double mean_latency = 0;
    std::uint64_t max_latency = 0;
    std::optional<double> baseline_latency;
    std::uint64_t messages_sent = 0;
    crypto::Digest trace_hash;
};

struct PrivacyFinding {
    std::string artifact;
    std::string what;
};

struct Report {
    std::string name;
    std::vector<ActionResult> actions;
    std::vector<ExpectResult> expectations;
    Metrics metrics;
    std::vector<PrivacyFinding> privacy;
    bool safety = true;
    bool replay_ok = true;

    bool passed() const;
};

struct RunOptions {
    std::optional<std::uint64_t> seed;
    /// Skips flood faults; used for the no-flood latency baseline.
    bool skip_floods = false;
    /// Baseline runs needed by latency-ratio expectations.
    bool compute_baseline = true;
    bool record_trace = true;
    /// Receives each trace line after the run.
    std::vector<std::string>* trace_out = nullptr;
};

Report run_scenario(const Scenario& sc, const RunOptions& opts = {});

/// Applies `count` random single-block edits to copies of `chain` and replays
/// each one; returns (edits attempted, edits the replay rejected).
std::pair<std::uint64_t, std::uint64_t> tamper_chain(const std::vector<ledger::Block>& chain, std::uint64_t count,
                                                     std::uint64_t seed);

/// Searches serialized artifacts for any of the secrets; reports each hit.
std::vector<PrivacyFinding> scan_for_secrets(const std::vector<std::pair<std::string, Bytes>>& artifacts,
                                             const std::vector<std::pair<std::string, Bytes>>& secrets);

}  // namespace medchain::scenario
