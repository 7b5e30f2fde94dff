#ifndef ZONOREACH_ANALYSIS_HPP
#define ZONOREACH_ANALYSIS_HPP

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "zonoreach/constrained_zonotope.hpp"
#include "zonoreach/hybrid_zonotope.hpp"
#include "zonoreach/network.hpp"
#include "zonoreach/property.hpp"

namespace zonoreach
{

using Clock = std::chrono::steady_clock;
using Deadline = Clock::time_point;

inline Deadline no_deadline()
{
    return Deadline::max();
}

Deadline deadline_after(double seconds);

struct AttackConfig
{
    bool enabled = true;
    std::size_t random_samples = 256;
    std::size_t corner_budget = 64;
    /// Sign-gradient iterations per restart; 0 disables the gradient attack.
    std::size_t iterations = 40;
    std::size_t restarts = 4;
    /// First step as a fraction of each input's width; halves when stuck.
    double step_fraction = 0.1;
};

struct AnalysisConfig
{
    // The box domain always runs.
    bool zonotope = true;
    bool constrained = false;
    bool hybrid = false;
    Rounding rounding = Rounding::sound;
    /// Zonotope symbol cap after each layer; 0 means unlimited.
    std::size_t max_symbols = 0;
    DualOptions dual;
    std::size_t binary_limit = hzono::default_binary_limit;
    AttackConfig attack;
    std::uint64_t seed = 0;
    /// Append z = C y and check the property on z.
    bool property_layer = true;
    /// Intersect each relational concretization with the box before nonlinear layers.
    bool intersect = true;
};

enum class Status
{
    verified,
    falsified,
    unknown,
    timeout
};

/// "true", "false", "unknown", "timeout".
std::string to_string(Status s);

struct Counterexample
{
    Eigen::VectorXd input;
    Eigen::VectorXd output;
};

struct LayerStat
{
    std::size_t node = 0;
    std::string name;
    std::string kind;
    double seconds = 0.0;
    std::size_t symbols = 0;
};

struct Stats
{
    std::size_t layers = 0;
    std::size_t symbols = 0;
    std::size_t constraints = 0;
    std::size_t subproblems = 0;
    std::size_t splits = 0;
    std::size_t max_worklist = 0;
    double seconds = 0.0;
    std::vector<LayerStat> per_layer;
};

struct Verdict
{
    Status status = Status::unknown;
    std::optional<Counterexample> counterexample;
    /// Bounds of the original network outputs when known.
    IntervalTensor output_bounds;
    Stats stats;
    std::vector<std::string> warnings;
    /// Input -> output relation per input dimension, in generator units.
    Eigen::VectorXd input_relation;
};

/// Fixed ReLU signs of one subproblem, keyed by (node, neuron) of the
/// analysed graph.
using SplitMap = std::map<std::pair<std::size_t, std::size_t>, Phase>;

/// Unstable ReLU neuron seen during a forward pass.
struct ReluNeuron
{
    std::size_t node = 0;
    std::size_t index = 0;
    double lower = 0.0;
    double upper = 0.0;
    /// Output generator mass of the symbol the relaxation introduced.
    double mass = 0.0;
};

struct ForwardResult
{
    /// Per-node bounds (box intersected with every relational domain).
    std::vector<IntervalTensor> bounds;
    IntervalTensor output;
    std::optional<Zonotope> zonotope;
    std::optional<ConstrainedZonotope> constrained;
    std::optional<HybridZonotope> hybrid;
    SymbolPool pool;
    /// Set when the constraints of the subproblem are infeasible.
    bool empty = false;
    bool timed_out = false;
    std::vector<ReluNeuron> unstable;
    /// Input -> output relation per input dimension: generator mass of the
    /// input symbol over all outputs (slope times half-width without symbols).
    Eigen::VectorXd input_relation;
    std::vector<std::string> warnings;
    Stats stats;
};

/// A verification problem prepared for repeated analysis: the original graph
/// and property (used for inference and counterexample checks) and the
/// rewritten graph and property the abstract domains run on.
class Analyzer
{
public:
    Analyzer(NetworkGraph graph, NormalizedProperty property, AnalysisConfig config);

    const NetworkGraph& graph() const { return original_; }
    const NormalizedProperty& property() const { return property_; }
    const NetworkGraph& analysed_graph() const { return analysed_; }
    const NormalizedProperty& analysed_property() const { return analysed_property_; }
    const AnalysisConfig& config() const { return config_; }

    /// Abstract forward pass over `box` (flattened input bounds).
    ForwardResult forward(const IntervalTensor& box, Deadline deadline, const SplitMap& splits = {}) const;

    /// Random samples, corners, then sign-gradient ascent on the violation.
    /// Only inputs confirmed by concrete inference are returned.
    std::optional<Counterexample> search_counterexample(const IntervalTensor& box, Deadline deadline,
                                                        std::uint64_t seed) const;

    /// True when x violates the property on the original network.
    std::optional<Counterexample> confirm(const Eigen::VectorXd& x) const;

    /// Counterexample search (when enabled), forward pass, property evaluation.
    Verdict analyse(const IntervalTensor& box, Deadline deadline) const
    {
        return analyse(box, deadline, config_.attack.enabled);
    }
    Verdict analyse(const IntervalTensor& box, Deadline deadline, bool attack) const;
    Verdict analyse(Deadline deadline) const { return analyse(property_.input_box, deadline); }

    /// Evaluates the analysed property on a forward result.
    Truth evaluate(const ForwardResult& r) const;

    /// Tries to confirm a counterexample from a point of the abstract set
    /// (midpoint or primal minimizers of the output rows).
    std::optional<Counterexample> witness(const ForwardResult& r, const IntervalTensor& box) const;

    /// Input point for a noise assignment of the output's symbols (missing
    /// input symbols stay at the box midpoint).
    Eigen::VectorXd input_point(const ForwardResult& r, const IntervalTensor& box, const Eigen::VectorXd& eps) const;

    /// Node holding the network outputs in the analysed graph.
    std::size_t output_node() const { return y_node_; }

private:
    NetworkGraph original_;
    NormalizedProperty property_;
    Predicate prove_;
    NetworkGraph analysed_;
    NormalizedProperty analysed_property_;
    Predicate analysed_prove_;
    AnalysisConfig config_;
    std::vector<std::pair<Eigen::MatrixXd, Eigen::VectorXd>> maps_;
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> gathers_;
    std::vector<std::vector<std::vector<std::size_t>>> windows_;
    std::vector<bool> live_;
    std::vector<bool> feeds_nonlinear_;
    std::size_t y_node_ = 0;
};

/// JSON result record.
std::string verdict_json(const Verdict& v, bool timing = true);

} // namespace zonoreach

#endif
