#ifndef ZONOREACH_CLI_HPP
#define ZONOREACH_CLI_HPP

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "zonoreach/network.hpp"
#include "zonoreach/property.hpp"

namespace zonoreach::cli
{

namespace exit_code
{
inline constexpr int verified = 0;
inline constexpr int falsified = 1;
inline constexpr int unknown = 2;
inline constexpr int timeout = 3;
inline constexpr int usage = 64;
inline constexpr int data = 65;
inline constexpr int internal = 70;
} // namespace exit_code

enum class SplitMode
{
    none,
    input,
    relu
};

struct RunSpec
{
    std::string network;
    std::string network_format;
    std::string property;
    std::string property_format;
    std::vector<std::string> domains = {"zono"};
    SplitMode split = SplitMode::none;
    std::size_t k = 2;
    double timeout = 300.0;
    bool sound = true;
    bool attack = true;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::string report;
    bool timing = true;
    std::size_t max_symbols = 0;
    std::size_t binary_limit = 16;

    /// Throws Error on a violated invariant (timeout <= 0, unknown domain,
    /// relu splitting without czono, k < 2, jobs == 0).
    void validate() const;
};

/// Reads a --config JSON object; keys mirror the RunSpec fields.
RunSpec spec_from_json(const std::string& text);

enum class CexResult
{
    violates,
    satisfies
};

/// Concrete inference on `x` and evaluation of the property; throws Error
/// when x lies outside the property's input box.
CexResult check_cex(const NetworkGraph& network, const NormalizedProperty& property, const Eigen::VectorXd& x);

/// The whole command line: returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

} // namespace zonoreach::cli

#endif
