#ifndef ZONOREACH_PROPERTY_HPP
#define ZONOREACH_PROPERTY_HPP

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "zonoreach/interval.hpp"

namespace zonoreach
{

/// out.y + in.x <= threshold (or < when strict).
struct Atom
{
    Eigen::VectorXd out;
    Eigen::VectorXd in;
    double threshold = 0.0;
    bool strict = false;

    bool uses_inputs() const { return in.size() > 0 && !in.isZero(0.0); }
};

struct Predicate
{
    enum class Kind
    {
        atom,
        all,
        any,
        negation,
        constant
    };

    Kind kind = Kind::constant;
    Atom atom;
    std::vector<Predicate> children;
    bool value = true;

    static Predicate make_atom(Atom a);
    static Predicate make_all(std::vector<Predicate> children);
    static Predicate make_any(std::vector<Predicate> children);
    static Predicate make_not(Predicate p);
    static Predicate make_constant(bool v);
};

/// Three-valued (Kleene) truth.
enum class Truth
{
    no,
    yes,
    unknown
};

std::string to_string(Truth t);

enum class Goal
{
    /// The predicate must hold on the whole box.
    prove,
    /// The predicate describes a violation; its negation must hold.
    falsify_as_negation
};

struct NormalizedProperty
{
    IntervalTensor input_box;
    Predicate predicate;
    Goal goal = Goal::prove;
    std::size_t output_size = 0;

    /// The formula that must hold everywhere, in negation normal form with
    /// sorted, flattened children; equal properties give equal forms.
    Predicate prove_form() const;
    bool uses_inputs() const;
};

/// Negation normal form: negations are pushed into the atoms.
Predicate negation_normal_form(const Predicate& p);
/// NNF plus flattening of nested and/or and a canonical child order.
Predicate canonical(const Predicate& p);
bool same_predicate(const Predicate& a, const Predicate& b, double tolerance = 0.0);
bool same_property(const NormalizedProperty& a, const NormalizedProperty& b, double tolerance = 0.0);
std::string to_string(const Predicate& p);

/// Interval evaluation over output bounds (and input bounds for atoms over inputs).
Truth evaluate_predicate(const Predicate& p, const IntervalTensor& outputs, const IntervalTensor* inputs = nullptr);
bool evaluate_point(const Predicate& p, const Eigen::VectorXd& y, const Eigen::VectorXd& x);

/// How badly the point violates a predicate that should hold: > 0 (or >= 0
/// on strict atoms) means violated. and -> max, or -> min.
double violation(const Predicate& p, const Eigen::VectorXd& y, const Eigen::VectorXd& x);

/// Atom over outputs whose shape is y_i - y_j (< or <=) 0; softmax keeps these.
bool is_order_only(const Predicate& p);

/// VNN-LIB subset. `output_size` overrides the declared Y count when set.
NormalizedProperty parse_vnnlib(const std::string& text, std::optional<std::size_t> output_size = std::nullopt);

/// Native textual format; relative ball() files resolve against `base_dir`.
NormalizedProperty parse_textual(const std::string& text, const std::filesystem::path& base_dir = {},
                                 std::optional<std::size_t> output_size = std::nullopt);

/// Loads by extension: .vnnlib -> VNN-LIB, anything else -> textual.
NormalizedProperty load_property(const std::filesystem::path& path,
                                 std::optional<std::size_t> output_size = std::nullopt);

} // namespace zonoreach

#endif
