#include "zonoreach/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "zonoreach/analysis.hpp"
#include "zonoreach/bab.hpp"
#include "zonoreach/error.hpp"
#include "zonoreach/formats.hpp"

namespace zonoreach::cli
{

using Eigen::VectorXd;
using nlohmann::json;

namespace
{

const char* split_name(SplitMode m)
{
    switch (m) {
    case SplitMode::input:
        return "input";
    case SplitMode::relu:
        return "relu";
    default:
        return "none";
    }
}

SplitMode parse_split(const std::string& s)
{
    if (s == "none")
        return SplitMode::none;
    if (s == "input")
        return SplitMode::input;
    if (s == "relu")
        return SplitMode::relu;
    throw Error("split must be none, input or relu, got '" + s + "'");
}

bool parse_switch(const std::string& s, const char* what)
{
    if (s == "on")
        return true;
    if (s == "off")
        return false;
    throw Error(std::string(what) + " must be on or off, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ','))
        if (!item.empty())
            out.push_back(item);
    return out;
}

std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string number(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string join(const VectorXd& v)
{
    std::string out;
    for (Eigen::Index i = 0; i < v.size(); ++i)
        out += (i ? " " : "") + number(v[i]);
    return out;
}

// A vector given inline ("0.1,0.2" or "0.1 0.2"), as a plain number file,
// or as a report whose counterexample input is used.
VectorXd parse_point(const std::string& value)
{
    std::string text = value;
    if (std::filesystem::is_regular_file(value)) {
        text = read_file(value);
        const auto first = text.find_first_not_of(" \t\r\n");
        if (first != std::string::npos && text[first] == '{') {
            const json doc = json::parse(text);
            if (!doc.contains("counterexample") || doc["counterexample"].is_null())
                throw ParseError(value + ": report has no counterexample");
            const auto& in = doc["counterexample"]["input"];
            VectorXd x(static_cast<Eigen::Index>(in.size()));
            for (std::size_t i = 0; i < in.size(); ++i)
                x[static_cast<Eigen::Index>(i)] = in[i].get<double>();
            return x;
        }
    }
    std::replace(text.begin(), text.end(), ',', ' ');
    std::istringstream in(text);
    std::vector<double> vals;
    std::string tok;
    while (in >> tok) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(tok, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != tok.size())
            throw ParseError("not a number in the counterexample vector: '" + tok + "'");
        vals.push_back(v);
    }
    if (vals.empty())
        throw ParseError("empty counterexample vector");
    return Eigen::Map<VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

NetworkGraph load_network_for(const RunSpec& spec)
{
    std::optional<NetworkFormat> format;
    if (!spec.network_format.empty()) {
        format = network_format_from_string(spec.network_format);
        if (!format)
            throw Error("unknown network format '" + spec.network_format + "'");
    }
    return load_network(spec.network, format);
}

NormalizedProperty load_property_for(const RunSpec& spec, std::size_t outputs)
{
    const std::string& f = spec.property_format;
    if (f.empty())
        return load_property(spec.property, outputs);
    if (f == "vnnlib")
        return parse_vnnlib(read_file(spec.property), outputs);
    if (f == "text")
        return parse_textual(read_file(spec.property), std::filesystem::path(spec.property).parent_path(), outputs);
    throw Error("unknown property format '" + f + "'");
}

AnalysisConfig analysis_config(const RunSpec& spec)
{
    AnalysisConfig c;
    const auto has = [&](const char* d) {
        return std::find(spec.domains.begin(), spec.domains.end(), d) != spec.domains.end();
    };
    c.zonotope = has("zono");
    c.constrained = has("czono");
    c.hybrid = has("hzono");
    c.rounding = spec.sound ? Rounding::sound : Rounding::fast;
    c.attack.enabled = spec.attack;
    c.seed = spec.seed;
    c.max_symbols = spec.max_symbols;
    c.binary_limit = spec.binary_limit;
    return c;
}

json spec_json(const RunSpec& s)
{
    return {{"network", s.network},   {"property", s.property}, {"domains", s.domains},
            {"split", split_name(s.split)}, {"k", s.k},           {"timeout", s.timeout},
            {"sound", s.sound},       {"attack", s.attack},     {"seed", s.seed},
            {"jobs", s.jobs}};
}

class UsageError : public Error
{
public:
    using Error::Error;
};

bool missing(const std::string& path)
{
    return !std::filesystem::exists(path);
}

} // namespace

void RunSpec::validate() const
{
    if (network.empty())
        throw Error("--network is required");
    if (property.empty())
        throw Error("--property is required");
    if (!(timeout > 0.0))
        throw Error("timeout must be positive");
    if (k < 2)
        throw Error("k must be at least 2");
    if (jobs == 0)
        throw Error("jobs must be at least 1");
    for (const auto& d : domains)
        if (d != "box" && d != "zono" && d != "czono" && d != "hzono")
            throw Error("unknown domain '" + d + "' (expected box, zono, czono, hzono)");
    if (split == SplitMode::relu && std::find(domains.begin(), domains.end(), "czono") == domains.end())
        throw Error("--split relu needs czono in --domains");
}

RunSpec spec_from_json(const std::string& text)
{
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    if (!doc.is_object())
        throw ParseError("config: expected a JSON object");
    RunSpec s;
    try {
        for (const auto& [key, v] : doc.items()) {
            if (key == "network")
                s.network = v.get<std::string>();
            else if (key == "network_format")
                s.network_format = v.get<std::string>();
            else if (key == "property")
                s.property = v.get<std::string>();
            else if (key == "property_format")
                s.property_format = v.get<std::string>();
            else if (key == "domains")
                s.domains = v.is_string() ? split_list(v.get<std::string>()) : v.get<std::vector<std::string>>();
            else if (key == "split")
                s.split = parse_split(v.get<std::string>());
            else if (key == "k")
                s.k = v.get<std::size_t>();
            else if (key == "timeout")
                s.timeout = v.get<double>();
            else if (key == "sound")
                s.sound = v.is_string() ? parse_switch(v.get<std::string>(), "sound") : v.get<bool>();
            else if (key == "attack")
                s.attack = v.is_string() ? parse_switch(v.get<std::string>(), "attack") : v.get<bool>();
            else if (key == "seed")
                s.seed = v.get<std::uint64_t>();
            else if (key == "jobs")
                s.jobs = v.get<std::size_t>();
            else if (key == "report")
                s.report = v.get<std::string>();
            else if (key == "timing")
                s.timing = v.get<bool>();
            else if (key == "max_symbols")
                s.max_symbols = v.get<std::size_t>();
            else if (key == "binary_limit")
                s.binary_limit = v.get<std::size_t>();
            else
                throw ParseError("config: unknown key '" + key + "'");
        }
    } catch (const json::type_error& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    return s;
}

CexResult check_cex(const NetworkGraph& network, const NormalizedProperty& property, const VectorXd& x)
{
    if (static_cast<std::size_t>(x.size()) != property.input_box.size())
        throw Error("point has " + std::to_string(x.size()) + " values, the property box has " +
                    std::to_string(property.input_box.size()));
    if (!property.input_box.contains(x))
        throw Error("point lies outside the property's input box");
    const VectorXd y = network.evaluate(x);
    return evaluate_point(property.prove_form(), y, x) ? CexResult::satisfies : CexResult::violates;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Sound reachability analysis of feed-forward networks.", "zonoreach"};
    std::string network, network_format, property, property_format, domains, split, sound, attack, report, config,
        cex;
    std::size_t k = 2, jobs = 1, max_symbols = 0, binary_limit = 16;
    double timeout = 300.0;
    std::uint64_t seed = 0;
    bool no_timing = false;

    auto* o_network = app.add_option("--network", network, "network file (.nnet, .onnx, .json)");
    auto* o_network_format = app.add_option("--network-format", network_format, "nnet, onnx or json");
    auto* o_property = app.add_option("--property", property, "property file (.vnnlib or textual)");
    auto* o_property_format = app.add_option("--property-format", property_format, "vnnlib or text");
    auto* o_domains = app.add_option("--domains", domains, "comma list of box, zono, czono, hzono");
    auto* o_split = app.add_option("--split", split, "none, input or relu");
    auto* o_k = app.add_option("--k", k, "parts per input split");
    auto* o_timeout = app.add_option("--timeout", timeout, "seconds");
    auto* o_sound = app.add_option("--sound", sound, "on or off");
    auto* o_attack = app.add_option("--attack", attack, "on or off");
    auto* o_seed = app.add_option("--seed", seed, "counterexample search seed");
    auto* o_jobs = app.add_option("--jobs", jobs, "branch-and-bound worker threads");
    auto* o_report = app.add_option("--report", report, "write the JSON report here");
    auto* o_max_symbols = app.add_option("--max-symbols", max_symbols, "zonotope symbol cap per layer (0: none)");
    auto* o_binary_limit = app.add_option("--binary-limit", binary_limit, "hybrid zonotope binary symbol limit");
    app.add_option("--check-cex", cex, "check a point (list, number file or report) instead of analysing");
    app.add_option("--config", config, "JSON file with the same keys as the flags");
    auto* o_no_timing = app.add_flag("--no-timing", no_timing, "omit timings from the report");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_code::verified;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::usage;
    }

    RunSpec spec;
    try {
        if (!config.empty()) {
            if (missing(config))
                throw UsageError("config file not found: " + config);
            spec = spec_from_json(read_file(config));
        }
        const auto given = [](const CLI::Option* o) { return o->count() > 0; };
        if (given(o_network))
            spec.network = network;
        if (given(o_network_format))
            spec.network_format = network_format;
        if (given(o_property))
            spec.property = property;
        if (given(o_property_format))
            spec.property_format = property_format;
        if (given(o_domains))
            spec.domains = split_list(domains);
        if (given(o_split))
            spec.split = parse_split(split);
        if (given(o_k))
            spec.k = k;
        if (given(o_timeout))
            spec.timeout = timeout;
        if (given(o_sound))
            spec.sound = parse_switch(sound, "--sound");
        if (given(o_attack))
            spec.attack = parse_switch(attack, "--attack");
        if (given(o_seed))
            spec.seed = seed;
        if (given(o_jobs))
            spec.jobs = jobs;
        if (given(o_report))
            spec.report = report;
        if (given(o_max_symbols))
            spec.max_symbols = max_symbols;
        if (given(o_binary_limit))
            spec.binary_limit = binary_limit;
        if (given(o_no_timing))
            spec.timing = !no_timing;
        try {
            spec.validate();
        } catch (const ParseError&) {
            throw;
        } catch (const Error& e) {
            throw UsageError(e.what());
        }
        if (missing(spec.network))
            throw UsageError("network file not found: " + spec.network);
        if (missing(spec.property))
            throw UsageError("property file not found: " + spec.property);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::usage;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return dynamic_cast<const ParseError*>(&e) ? exit_code::data : exit_code::usage;
    }

    try {
        const NetworkGraph g = load_network_for(spec);
        const NormalizedProperty p = load_property_for(spec, g.output_size());

        if (!cex.empty()) {
            const VectorXd x = parse_point(cex);
            CexResult r;
            try {
                r = check_cex(g, p, x);
            } catch (const ParseError&) {
                throw;
            } catch (const Error& e) {
                err << "error: " << e.what() << "\n";
                return exit_code::usage;
            }
            out << (r == CexResult::violates ? "violates" : "satisfies") << "\n";
            out << "output: " << join(g.evaluate(x)) << "\n";
            return r == CexResult::violates ? exit_code::falsified : exit_code::verified;
        }

        const Deadline deadline = deadline_after(spec.timeout);
        const Analyzer analyzer(g, p, analysis_config(spec));
        BabConfig bab;
        bab.k = spec.k;
        bab.jobs = spec.jobs;
        Verdict v;
        switch (spec.split) {
        case SplitMode::none:
            v = analyzer.analyse(deadline);
            break;
        case SplitMode::input:
            v = bab_input(analyzer, bab, deadline);
            break;
        case SplitMode::relu:
            v = bab_relu(analyzer, bab, deadline);
            break;
        }

        for (const auto& w : v.warnings)
            err << "warning: " << w << "\n";
        out << to_string(v.status) << "\n";
        if (v.counterexample) {
            out << "counterexample: " << join(v.counterexample->input) << "\n";
            out << "output: " << join(v.counterexample->output) << "\n";
        }
        if (!spec.report.empty()) {
            json doc = json::parse(verdict_json(v, spec.timing));
            doc["run"] = spec_json(spec);
            std::ofstream f(spec.report);
            if (!f)
                throw Error("cannot write report " + spec.report);
            f << doc.dump(2) << "\n";
        }
        switch (v.status) {
        case Status::verified:
            return exit_code::verified;
        case Status::falsified:
            return exit_code::falsified;
        case Status::timeout:
            return exit_code::timeout;
        default:
            return exit_code::unknown;
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::data;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return exit_code::internal;
    }
}

int run(int argc, char** argv)
{
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i)
        args.emplace_back(argv[i]);
    return run(args, std::cout, std::cerr);
}

} // namespace zonoreach::cli
