#include "zonoreach/property.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "zonoreach/error.hpp"

namespace zonoreach
{

using Eigen::Index;
using Eigen::VectorXd;

Predicate Predicate::make_atom(Atom a)
{
    Predicate p;
    p.kind = Kind::atom;
    p.atom = std::move(a);
    return p;
}

Predicate Predicate::make_all(std::vector<Predicate> children)
{
    Predicate p;
    p.kind = Kind::all;
    p.children = std::move(children);
    return p;
}

Predicate Predicate::make_any(std::vector<Predicate> children)
{
    Predicate p;
    p.kind = Kind::any;
    p.children = std::move(children);
    return p;
}

Predicate Predicate::make_not(Predicate c)
{
    Predicate p;
    p.kind = Kind::negation;
    p.children.push_back(std::move(c));
    return p;
}

Predicate Predicate::make_constant(bool v)
{
    Predicate p;
    p.kind = Kind::constant;
    p.value = v;
    return p;
}

std::string to_string(Truth t)
{
    switch (t) {
    case Truth::yes:
        return "true";
    case Truth::no:
        return "false";
    default:
        return "unknown";
    }
}

namespace
{

Atom negate_atom(const Atom& a)
{
    return {-a.out, a.in.size() ? VectorXd(-a.in) : VectorXd(), -a.threshold, !a.strict};
}

std::string number(double v)
{
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, ptr);
}

std::string atom_string(const Atom& a)
{
    std::string s;
    const auto terms = [&](const VectorXd& v, const char* name) {
        for (Index i = 0; i < v.size(); ++i)
            if (v[i] != 0.0) {
                if (!s.empty())
                    s += " + ";
                s += number(v[i]) + "*" + name + "[" + std::to_string(i) + "]";
            }
    };
    terms(a.out, "y");
    terms(a.in, "x");
    if (s.empty())
        s = "0";
    return s + (a.strict ? " < " : " <= ") + number(a.threshold);
}

Predicate nnf(const Predicate& p, bool negate)
{
    switch (p.kind) {
    case Predicate::Kind::constant:
        return Predicate::make_constant(negate ? !p.value : p.value);
    case Predicate::Kind::atom:
        return Predicate::make_atom(negate ? negate_atom(p.atom) : p.atom);
    case Predicate::Kind::negation:
        return nnf(p.children.at(0), !negate);
    case Predicate::Kind::all:
    case Predicate::Kind::any: {
        std::vector<Predicate> kids;
        for (const auto& c : p.children)
            kids.push_back(nnf(c, negate));
        const bool conj = (p.kind == Predicate::Kind::all) != negate;
        return conj ? Predicate::make_all(std::move(kids)) : Predicate::make_any(std::move(kids));
    }
    }
    return p;
}

Predicate trim_inputs(Predicate p)
{
    if (p.kind == Predicate::Kind::atom && !p.atom.uses_inputs())
        p.atom.in = VectorXd();
    for (auto& c : p.children)
        c = trim_inputs(std::move(c));
    return p;
}

} // namespace

Predicate negation_normal_form(const Predicate& p)
{
    return nnf(p, false);
}

Predicate canonical(const Predicate& p)
{
    Predicate n = trim_inputs(negation_normal_form(p));
    if (n.kind != Predicate::Kind::all && n.kind != Predicate::Kind::any)
        return n;
    const bool conj = n.kind == Predicate::Kind::all;
    std::vector<Predicate> flat;
    for (const auto& c : n.children) {
        Predicate cc = canonical(c);
        if (cc.kind == n.kind) {
            for (auto& g : cc.children)
                flat.push_back(std::move(g));
        } else if (cc.kind == Predicate::Kind::constant) {
            // and: true is neutral, false absorbs; or: the reverse.
            if (cc.value != conj)
                return Predicate::make_constant(cc.value);
        } else {
            flat.push_back(std::move(cc));
        }
    }
    if (flat.empty())
        return Predicate::make_constant(conj);
    if (flat.size() == 1)
        return flat.front();
    std::sort(flat.begin(), flat.end(),
              [](const Predicate& a, const Predicate& b) { return to_string(a) < to_string(b); });
    return conj ? Predicate::make_all(std::move(flat)) : Predicate::make_any(std::move(flat));
}

std::string to_string(const Predicate& p)
{
    switch (p.kind) {
    case Predicate::Kind::constant:
        return p.value ? "true" : "false";
    case Predicate::Kind::atom:
        return atom_string(p.atom);
    case Predicate::Kind::negation:
        return "not (" + to_string(p.children.at(0)) + ")";
    case Predicate::Kind::all:
    case Predicate::Kind::any: {
        std::string s = "(";
        for (std::size_t i = 0; i < p.children.size(); ++i) {
            if (i)
                s += p.kind == Predicate::Kind::all ? " and " : " or ";
            s += to_string(p.children[i]);
        }
        return s + ")";
    }
    }
    return "?";
}

bool same_predicate(const Predicate& a, const Predicate& b, double tol)
{
    const auto close = [&](const VectorXd& u, const VectorXd& v) {
        const Index n = std::max(u.size(), v.size());
        for (Index i = 0; i < n; ++i) {
            const double x = i < u.size() ? u[i] : 0.0;
            const double y = i < v.size() ? v[i] : 0.0;
            if (std::abs(x - y) > tol)
                return false;
        }
        return true;
    };
    if (a.kind != b.kind)
        return false;
    switch (a.kind) {
    case Predicate::Kind::constant:
        return a.value == b.value;
    case Predicate::Kind::atom:
        return a.atom.strict == b.atom.strict && std::abs(a.atom.threshold - b.atom.threshold) <= tol &&
               close(a.atom.out, b.atom.out) && close(a.atom.in, b.atom.in);
    default:
        if (a.children.size() != b.children.size())
            return false;
        for (std::size_t i = 0; i < a.children.size(); ++i)
            if (!same_predicate(a.children[i], b.children[i], tol))
                return false;
        return true;
    }
}

Predicate NormalizedProperty::prove_form() const
{
    return canonical(goal == Goal::prove ? predicate : Predicate::make_not(predicate));
}

namespace
{

bool predicate_uses_inputs(const Predicate& p)
{
    if (p.kind == Predicate::Kind::atom)
        return p.atom.uses_inputs();
    return std::any_of(p.children.begin(), p.children.end(), predicate_uses_inputs);
}

} // namespace

bool NormalizedProperty::uses_inputs() const
{
    return predicate_uses_inputs(predicate);
}

bool same_property(const NormalizedProperty& a, const NormalizedProperty& b, double tol)
{
    if (a.input_box.size() != b.input_box.size())
        return false;
    for (std::size_t i = 0; i < a.input_box.size(); ++i)
        if (std::abs(a.input_box.lower(i) - b.input_box.lower(i)) > tol ||
            std::abs(a.input_box.upper(i) - b.input_box.upper(i)) > tol)
            return false;
    return same_predicate(a.prove_form(), b.prove_form(), tol);
}

namespace
{

SoundScalar atom_range(const Atom& a, const IntervalTensor& outputs, const IntervalTensor* inputs)
{
    SoundScalar s = SoundScalar::point(0.0);
    const auto accumulate = [&](const VectorXd& c, const IntervalTensor& b, const char* what) {
        if (static_cast<std::size_t>(c.size()) > b.size())
            throw ShapeError(std::string("property atom refers to ") + what + " beyond the available " +
                             std::to_string(b.size()));
        for (Index i = 0; i < c.size(); ++i)
            if (c[i] != 0.0)
                s = add(s, scale(c[i], b.at(static_cast<std::size_t>(i)), Rounding::sound), Rounding::sound);
    };
    accumulate(a.out, outputs, "outputs");
    if (a.uses_inputs()) {
        if (!inputs)
            throw Error("property atom over inputs needs input bounds");
        accumulate(a.in, *inputs, "inputs");
    }
    return s;
}

double atom_value(const Atom& a, const VectorXd& y, const VectorXd& x)
{
    double v = 0.0;
    for (Index i = 0; i < a.out.size(); ++i)
        if (a.out[i] != 0.0)
            v += a.out[i] * y[i];
    if (a.uses_inputs())
        for (Index i = 0; i < a.in.size(); ++i)
            if (a.in[i] != 0.0)
                v += a.in[i] * x[i];
    return v;
}

} // namespace

Truth evaluate_predicate(const Predicate& p, const IntervalTensor& outputs, const IntervalTensor* inputs)
{
    switch (p.kind) {
    case Predicate::Kind::constant:
        return p.value ? Truth::yes : Truth::no;
    case Predicate::Kind::atom: {
        const SoundScalar r = atom_range(p.atom, outputs, inputs);
        const double t = p.atom.threshold;
        if (p.atom.strict ? r.hi < t : r.hi <= t)
            return Truth::yes;
        if (p.atom.strict ? r.lo >= t : r.lo > t)
            return Truth::no;
        return Truth::unknown;
    }
    case Predicate::Kind::negation: {
        const Truth t = evaluate_predicate(p.children.at(0), outputs, inputs);
        return t == Truth::yes ? Truth::no : t == Truth::no ? Truth::yes : Truth::unknown;
    }
    case Predicate::Kind::all: {
        Truth acc = Truth::yes;
        for (const auto& c : p.children) {
            const Truth t = evaluate_predicate(c, outputs, inputs);
            if (t == Truth::no)
                return Truth::no;
            if (t == Truth::unknown)
                acc = Truth::unknown;
        }
        return acc;
    }
    case Predicate::Kind::any: {
        Truth acc = Truth::no;
        for (const auto& c : p.children) {
            const Truth t = evaluate_predicate(c, outputs, inputs);
            if (t == Truth::yes)
                return Truth::yes;
            if (t == Truth::unknown)
                acc = Truth::unknown;
        }
        return acc;
    }
    }
    return Truth::unknown;
}

bool evaluate_point(const Predicate& p, const VectorXd& y, const VectorXd& x)
{
    switch (p.kind) {
    case Predicate::Kind::constant:
        return p.value;
    case Predicate::Kind::atom: {
        const double v = atom_value(p.atom, y, x);
        return p.atom.strict ? v < p.atom.threshold : v <= p.atom.threshold;
    }
    case Predicate::Kind::negation:
        return !evaluate_point(p.children.at(0), y, x);
    case Predicate::Kind::all:
        return std::all_of(p.children.begin(), p.children.end(),
                           [&](const Predicate& c) { return evaluate_point(c, y, x); });
    case Predicate::Kind::any:
        return std::any_of(p.children.begin(), p.children.end(),
                           [&](const Predicate& c) { return evaluate_point(c, y, x); });
    }
    return false;
}

double violation(const Predicate& p, const VectorXd& y, const VectorXd& x)
{
    const Predicate n = p.kind == Predicate::Kind::negation ? negation_normal_form(p) : p;
    switch (n.kind) {
    case Predicate::Kind::constant:
        return n.value ? -1.0 : 1.0;
    case Predicate::Kind::atom:
        return atom_value(n.atom, y, x) - n.atom.threshold;
    case Predicate::Kind::all: {
        double v = -rounding::inf;
        for (const auto& c : n.children)
            v = std::max(v, violation(c, y, x));
        return v;
    }
    case Predicate::Kind::any: {
        double v = rounding::inf;
        for (const auto& c : n.children)
            v = std::min(v, violation(c, y, x));
        return v;
    }
    default:
        return violation(negation_normal_form(n), y, x);
    }
}

bool is_order_only(const Predicate& p)
{
    if (p.kind == Predicate::Kind::constant)
        return true;
    if (p.kind != Predicate::Kind::atom)
        return std::all_of(p.children.begin(), p.children.end(), is_order_only);
    const Atom& a = p.atom;
    if (a.uses_inputs() || a.threshold != 0.0)
        return false;
    int plus = 0, minus = 0;
    for (Index i = 0; i < a.out.size(); ++i) {
        if (a.out[i] == 1.0)
            ++plus;
        else if (a.out[i] == -1.0)
            ++minus;
        else if (a.out[i] != 0.0)
            return false;
    }
    return plus == 1 && minus == 1;
}

// ---------------------------------------------------------------------------
// Shared linear-expression plumbing for both parsers.

namespace
{

struct Linear
{
    std::map<std::size_t, double> y;
    std::map<std::size_t, double> x;
    double constant = 0.0;

    Linear& operator+=(const Linear& o)
    {
        for (const auto& [i, c] : o.y)
            y[i] += c;
        for (const auto& [i, c] : o.x)
            x[i] += c;
        constant += o.constant;
        return *this;
    }
    Linear scaled(double s) const
    {
        Linear r = *this;
        for (auto& [i, c] : r.y)
            c *= s;
        for (auto& [i, c] : r.x)
            c *= s;
        r.constant *= s;
        return r;
    }
    bool is_constant() const
    {
        return std::all_of(y.begin(), y.end(), [](auto& kv) { return kv.second == 0.0; }) &&
               std::all_of(x.begin(), x.end(), [](auto& kv) { return kv.second == 0.0; });
    }
};

enum class Comparison
{
    le,
    lt,
    ge,
    gt
};

/// Sizes an atom is laid out over; grown as indices are seen.
struct Dims
{
    std::size_t inputs = 0;
    std::size_t outputs = 0;
};

/// Raw atom with sparse coefficients, densified once all dimensions are known.
struct SparseAtom
{
    Linear lhs;
    bool strict = false;
};

Atom densify(const SparseAtom& s, const Dims& dims)
{
    Atom a;
    a.out = VectorXd::Zero(static_cast<Index>(dims.outputs));
    for (const auto& [i, c] : s.lhs.y)
        a.out[static_cast<Index>(i)] += c;
    bool inputs = false;
    for (const auto& [i, c] : s.lhs.x)
        inputs = inputs || c != 0.0;
    if (inputs) {
        a.in = VectorXd::Zero(static_cast<Index>(dims.inputs));
        for (const auto& [i, c] : s.lhs.x)
            a.in[static_cast<Index>(i)] += c;
    }
    a.threshold = -s.lhs.constant;
    a.strict = s.strict;
    return a;
}

SparseAtom compare(const Linear& lhs, Comparison op, const Linear& rhs)
{
    Linear d = lhs;
    d += rhs.scaled(-1.0);
    if (op == Comparison::ge || op == Comparison::gt)
        d = d.scaled(-1.0);
    return {d, op == Comparison::lt || op == Comparison::gt};
}

/// Predicate tree whose atoms are still sparse.
struct Draft
{
    Predicate::Kind kind = Predicate::Kind::constant;
    SparseAtom atom;
    std::vector<Draft> children;
    bool value = true;
};

Predicate finish(const Draft& d, const Dims& dims)
{
    switch (d.kind) {
    case Predicate::Kind::atom:
        return Predicate::make_atom(densify(d.atom, dims));
    case Predicate::Kind::constant:
        return Predicate::make_constant(d.value);
    default: {
        std::vector<Predicate> kids;
        for (const auto& c : d.children)
            kids.push_back(finish(c, dims));
        if (d.kind == Predicate::Kind::negation)
            return Predicate::make_not(std::move(kids.at(0)));
        return d.kind == Predicate::Kind::all ? Predicate::make_all(std::move(kids))
                                              : Predicate::make_any(std::move(kids));
    }
    }
}

Draft draft_atom(SparseAtom a)
{
    Draft d;
    d.kind = Predicate::Kind::atom;
    d.atom = std::move(a);
    return d;
}

Draft draft_node(Predicate::Kind kind, std::vector<Draft> children)
{
    Draft d;
    d.kind = kind;
    d.children = std::move(children);
    return d;
}

IntervalTensor make_box(const std::vector<std::optional<double>>& lo, const std::vector<std::optional<double>>& hi)
{
    VectorXd l(static_cast<Index>(lo.size())), u(static_cast<Index>(lo.size()));
    for (std::size_t i = 0; i < lo.size(); ++i) {
        if (!lo[i] || !hi[i])
            throw ParseError("unbounded input " + std::to_string(i), 0, 0);
        if (*lo[i] > *hi[i])
            throw ParseError("empty range for input " + std::to_string(i), 0, 0);
        l[static_cast<Index>(i)] = *lo[i];
        u[static_cast<Index>(i)] = *hi[i];
    }
    return {l, u};
}

std::optional<double> parse_number(const std::string& s)
{
    double v = 0.0;
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    if (begin != end && *begin == '+')
        ++begin;
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end)
        return std::nullopt;
    return v;
}

// ---------------------------------------------------------------------------
// VNN-LIB

struct SExpr
{
    std::string atom;
    std::vector<SExpr> list;
    bool is_list = false;
    std::size_t line = 0;
    std::size_t column = 0;
};

class SExprReader
{
public:
    explicit SExprReader(const std::string& text) : text_(text) {}

    std::vector<SExpr> read_all()
    {
        std::vector<SExpr> out;
        skip();
        while (pos_ < text_.size()) {
            out.push_back(read());
            skip();
        }
        return out;
    }

private:
    void skip()
    {
        while (pos_ < text_.size()) {
            const char c = text_[pos_];
            if (c == ';') {
                while (pos_ < text_.size() && text_[pos_] != '\n')
                    advance();
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                advance();
            } else {
                break;
            }
        }
    }

    void advance()
    {
        if (text_[pos_] == '\n') {
            ++line_;
            col_ = 1;
        } else {
            ++col_;
        }
        ++pos_;
    }

    SExpr read()
    {
        SExpr e;
        e.line = line_;
        e.column = col_;
        if (text_[pos_] == ')')
            throw ParseError("unexpected ')'", line_, col_);
        if (text_[pos_] == '(') {
            e.is_list = true;
            advance();
            skip();
            while (pos_ < text_.size() && text_[pos_] != ')') {
                e.list.push_back(read());
                skip();
            }
            if (pos_ >= text_.size())
                throw ParseError("missing ')' for the list opened here", e.line, e.column);
            advance();
            return e;
        }
        while (pos_ < text_.size() && text_[pos_] != '(' && text_[pos_] != ')' && text_[pos_] != ';' &&
               !std::isspace(static_cast<unsigned char>(text_[pos_]))) {
            e.atom += text_[pos_];
            advance();
        }
        return e;
    }

    const std::string& text_;
    std::size_t pos_ = 0;
    std::size_t line_ = 1;
    std::size_t col_ = 1;
};

[[noreturn]] void fail(const SExpr& e, const std::string& what)
{
    throw ParseError(what, e.line, e.column);
}

std::optional<std::pair<char, std::size_t>> vnn_variable(const std::string& name)
{
    if (name.size() < 3 || (name[0] != 'X' && name[0] != 'Y') || name[1] != '_')
        return std::nullopt;
    std::size_t idx = 0;
    auto [ptr, ec] = std::from_chars(name.data() + 2, name.data() + name.size(), idx);
    if (ec != std::errc() || ptr != name.data() + name.size())
        return std::nullopt;
    return std::make_pair(name[0], idx);
}

class VnnlibBuilder
{
public:
    Dims dims;
    std::vector<std::optional<double>> lo, hi;
    std::vector<Draft> violation;

    void declare(const SExpr& e)
    {
        if (e.list.size() != 3 || e.list[1].is_list)
            fail(e, "declare-const expects a name and a sort");
        const auto var = vnn_variable(e.list[1].atom);
        if (!var)
            fail(e.list[1], "unknown symbol " + e.list[1].atom + " (expected X_i or Y_j)");
        if (e.list[2].is_list || e.list[2].atom != "Real")
            fail(e.list[2], "only Real variables are supported");
        if (var->first == 'X') {
            dims.inputs = std::max(dims.inputs, var->second + 1);
            declared_x_.push_back(var->second);
        } else {
            dims.outputs = std::max(dims.outputs, var->second + 1);
            declared_y_.push_back(var->second);
        }
    }

    void assert_top(const SExpr& e)
    {
        if (e.is_list && !e.list.empty() && !e.list[0].is_list && e.list[0].atom == "and") {
            for (std::size_t i = 1; i < e.list.size(); ++i)
                assert_top(e.list[i]);
            return;
        }
        if (try_bound(e))
            return;
        violation.push_back(formula(e));
    }

    void check_declared() const
    {
        for (std::size_t i = 0; i < dims.inputs; ++i)
            if (std::find(declared_x_.begin(), declared_x_.end(), i) == declared_x_.end())
                throw ParseError("X_" + std::to_string(i) + " is not declared", 0, 0);
    }

private:
    std::vector<std::size_t> declared_x_, declared_y_;

    Linear term(const SExpr& e)
    {
        Linear l;
        if (!e.is_list) {
            if (const auto v = parse_number(e.atom)) {
                l.constant = *v;
                return l;
            }
            const auto var = vnn_variable(e.atom);
            if (!var)
                fail(e, "unknown symbol " + e.atom);
            const auto& declared = var->first == 'X' ? declared_x_ : declared_y_;
            if (std::find(declared.begin(), declared.end(), var->second) == declared.end())
                fail(e, "unknown symbol " + e.atom + " (not declared)");
            (var->first == 'X' ? l.x : l.y)[var->second] = 1.0;
            return l;
        }
        if (e.list.empty() || e.list[0].is_list)
            fail(e, "expected an arithmetic term");
        const std::string& op = e.list[0].atom;
        if (op == "+") {
            for (std::size_t i = 1; i < e.list.size(); ++i)
                l += term(e.list[i]);
            return l;
        }
        if (op == "-") {
            if (e.list.size() == 2)
                return term(e.list[1]).scaled(-1.0);
            l = term(e.list.at(1));
            for (std::size_t i = 2; i < e.list.size(); ++i)
                l += term(e.list[i]).scaled(-1.0);
            return l;
        }
        if (op == "*") {
            l.constant = 1.0;
            bool have_var = false;
            for (std::size_t i = 1; i < e.list.size(); ++i) {
                const Linear f = term(e.list[i]);
                if (!f.is_constant()) {
                    if (have_var)
                        fail(e, "nonlinear term");
                    have_var = true;
                    l = f.scaled(l.constant);
                } else {
                    l = l.scaled(f.constant);
                }
            }
            return l;
        }
        fail(e, "unsupported operator " + op);
    }

    static std::optional<Comparison> comparison(const std::string& op)
    {
        if (op == "<=")
            return Comparison::le;
        if (op == "<")
            return Comparison::lt;
        if (op == ">=")
            return Comparison::ge;
        if (op == ">")
            return Comparison::gt;
        return std::nullopt;
    }

    // Single-input bound such as (<= X_0 1) or (>= 0.5 X_2).
    bool try_bound(const SExpr& e)
    {
        if (!e.is_list || e.list.size() != 3 || e.list[0].is_list)
            return false;
        const auto op = comparison(e.list[0].atom);
        if (!op)
            return false;
        const SparseAtom a = compare(term(e.list[1]), *op, term(e.list[2]));
        if (!a.lhs.y.empty() && std::any_of(a.lhs.y.begin(), a.lhs.y.end(), [](auto& kv) { return kv.second != 0.0; }))
            return false;
        std::vector<std::pair<std::size_t, double>> vars;
        for (const auto& [i, c] : a.lhs.x)
            if (c != 0.0)
                vars.emplace_back(i, c);
        if (vars.size() != 1)
            return false;
        // c x + k <= 0  ->  x <= -k / c (c > 0) or x >= -k / c (c < 0)
        const auto [i, c] = vars.front();
        const double bound = -a.lhs.constant / c;
        if (lo.size() < dims.inputs) {
            lo.resize(dims.inputs);
            hi.resize(dims.inputs);
        }
        if (c > 0)
            hi[i] = hi[i] ? std::min(*hi[i], bound) : bound;
        else
            lo[i] = lo[i] ? std::max(*lo[i], bound) : bound;
        return true;
    }

    bool only_inputs(const Draft& d) const
    {
        if (d.kind == Predicate::Kind::atom)
            return std::all_of(d.atom.lhs.y.begin(), d.atom.lhs.y.end(), [](auto& kv) { return kv.second == 0.0; });
        return !d.children.empty() &&
               std::all_of(d.children.begin(), d.children.end(), [&](const Draft& c) { return only_inputs(c); });
    }

    Draft formula(const SExpr& e)
    {
        if (!e.is_list || e.list.empty() || e.list[0].is_list)
            fail(e, "expected a formula");
        const std::string& op = e.list[0].atom;
        if (const auto cmp = comparison(op)) {
            if (e.list.size() != 3)
                fail(e, op + " expects two operands");
            return draft_atom(compare(term(e.list[1]), *cmp, term(e.list[2])));
        }
        if (op == "=") {
            if (e.list.size() != 3)
                fail(e, "= expects two operands");
            const Linear a = term(e.list[1]), b = term(e.list[2]);
            return draft_node(Predicate::Kind::all,
                              {draft_atom(compare(a, Comparison::le, b)), draft_atom(compare(a, Comparison::ge, b))});
        }
        std::vector<Draft> kids;
        for (std::size_t i = 1; i < e.list.size(); ++i)
            kids.push_back(formula(e.list[i]));
        if (op == "and")
            return draft_node(Predicate::Kind::all, std::move(kids));
        if (op == "or") {
            for (const auto& k : kids)
                if (only_inputs(k))
                    fail(e, "disjunction over input boxes is not supported; split the property into separate runs");
            return draft_node(Predicate::Kind::any, std::move(kids));
        }
        if (op == "not") {
            if (kids.size() != 1)
                fail(e, "not expects one operand");
            return draft_node(Predicate::Kind::negation, std::move(kids));
        }
        fail(e, "unsupported operator " + op);
    }
};

} // namespace

NormalizedProperty parse_vnnlib(const std::string& text, std::optional<std::size_t> output_size)
{
    SExprReader reader(text);
    const std::vector<SExpr> top = reader.read_all();
    VnnlibBuilder b;
    for (const auto& e : top) {
        if (!e.is_list || e.list.empty() || e.list[0].is_list)
            fail(e, "expected a command");
        const std::string& cmd = e.list[0].atom;
        if (cmd == "declare-const")
            b.declare(e);
        else if (cmd == "assert") {
            if (e.list.size() != 2)
                fail(e, "assert expects one formula");
            b.assert_top(e.list[1]);
        } else if (cmd == "define-fun" || cmd == "let")
            fail(e, cmd + " is not supported");
        else if (cmd == "check-sat" || cmd == "get-model" || cmd == "set-logic" || cmd == "set-info")
            continue;
        else
            fail(e, "unknown command " + cmd);
    }
    b.check_declared();
    if (b.dims.inputs == 0)
        throw ParseError("no input variables declared", 0, 0);
    b.lo.resize(b.dims.inputs);
    b.hi.resize(b.dims.inputs);
    if (output_size) {
        if (*output_size < b.dims.outputs)
            throw ParseError("property refers to Y_" + std::to_string(b.dims.outputs - 1) + " but the network has " +
                                 std::to_string(*output_size) + " outputs",
                             0, 0);
        b.dims.outputs = *output_size;
    }

    NormalizedProperty p;
    p.input_box = make_box(b.lo, b.hi);
    p.output_size = b.dims.outputs;
    p.goal = Goal::falsify_as_negation;
    std::vector<Predicate> parts;
    for (const auto& d : b.violation)
        parts.push_back(finish(d, b.dims));
    p.predicate = parts.size() == 1 ? parts.front() : Predicate::make_all(std::move(parts));
    return p;
}

// ---------------------------------------------------------------------------
// Textual format

namespace
{

struct Token
{
    enum class Kind
    {
        word,
        number,
        symbol,
        separator,
        end
    };
    Kind kind = Kind::end;
    std::string text;
    double value = 0.0;
    std::size_t line = 1;
    std::size_t column = 1;
};

std::vector<Token> tokenize(const std::string& text)
{
    std::vector<Token> out;
    std::size_t line = 1, col = 1, i = 0;
    const auto push = [&](Token::Kind k, std::string s, std::size_t l, std::size_t c, double v = 0.0) {
        out.push_back({k, std::move(s), v, l, c});
    };
    while (i < text.size()) {
        const char c = text[i];
        if (c == '#') {
            while (i < text.size() && text[i] != '\n')
                ++i, ++col;
            continue;
        }
        if (c == '\n' || c == ';') {
            push(Token::Kind::separator, std::string(1, c), line, col);
            if (c == '\n')
                ++line, col = 1;
            else
                ++col;
            ++i;
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i, ++col;
            continue;
        }
        const std::size_t start_col = col;
        if (std::isdigit(static_cast<unsigned char>(c)) || (c == '.' && i + 1 < text.size() &&
                                                            std::isdigit(static_cast<unsigned char>(text[i + 1])))) {
            std::size_t j = i;
            while (j < text.size() && (std::isdigit(static_cast<unsigned char>(text[j])) || text[j] == '.' ||
                                       text[j] == 'e' || text[j] == 'E' ||
                                       ((text[j] == '-' || text[j] == '+') && (text[j - 1] == 'e' || text[j - 1] == 'E'))))
                ++j;
            const std::string s = text.substr(i, j - i);
            const auto v = parse_number(s);
            if (!v)
                throw ParseError("malformed number '" + s + "'", line, start_col);
            push(Token::Kind::number, s, line, start_col, *v);
            col += j - i;
            i = j;
            continue;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t j = i;
            while (j < text.size() && (std::isalnum(static_cast<unsigned char>(text[j])) || text[j] == '_'))
                ++j;
            push(Token::Kind::word, text.substr(i, j - i), line, start_col);
            col += j - i;
            i = j;
            continue;
        }
        if (c == '"') {
            std::size_t j = i + 1;
            while (j < text.size() && text[j] != '"' && text[j] != '\n')
                ++j;
            if (j >= text.size() || text[j] != '"')
                throw ParseError("unterminated string", line, start_col);
            push(Token::Kind::word, text.substr(i + 1, j - i - 1), line, start_col);
            out.back().value = 1.0; // marks a quoted string
            col += j - i + 1;
            i = j + 1;
            continue;
        }
        static const char* two[] = {"<=", ">=", "==", "!="};
        bool matched = false;
        for (const char* t : two)
            if (text.compare(i, 2, t) == 0) {
                push(Token::Kind::symbol, t, line, start_col);
                i += 2;
                col += 2;
                matched = true;
                break;
            }
        if (matched)
            continue;
        if (std::string("[](),<>+-*/").find(c) != std::string::npos) {
            push(Token::Kind::symbol, std::string(1, c), line, start_col);
            ++i, ++col;
            continue;
        }
        throw ParseError(std::string("unexpected character '") + c + "'", line, col);
    }
    push(Token::Kind::end, "", line, col);
    return out;
}

class TextualParser
{
public:
    TextualParser(const std::string& text, std::filesystem::path base) : tokens_(tokenize(text)), base_(std::move(base))
    {
    }

    NormalizedProperty parse(std::optional<std::size_t> output_size)
    {
        std::optional<Goal> goal;
        std::vector<Draft> goals;
        std::optional<std::size_t> declared_outputs;
        std::vector<std::size_t> argmax_sites;
        while (peek().kind != Token::Kind::end) {
            if (peek().kind == Token::Kind::separator) {
                next();
                continue;
            }
            const Token t = next();
            if (t.kind != Token::Kind::word)
                error(t, "expected a statement");
            if (t.text == "x") {
                input_range();
            } else if (t.text == "ball") {
                ball(t);
            } else if (t.text == "outputs") {
                const Token n = expect_number();
                declared_outputs = static_cast<std::size_t>(n.value);
                if (n.value < 1 || n.value != std::floor(n.value))
                    error(n, "outputs expects a positive integer");
            } else if (t.text == "prove" || t.text == "falsify") {
                const Goal g = t.text == "prove" ? Goal::prove : Goal::falsify_as_negation;
                if (goal && *goal != g)
                    error(t, "prove and falsify cannot be mixed");
                goal = g;
                goals.push_back(expression());
            } else {
                error(t, "unknown statement '" + t.text + "'");
            }
            if (peek().kind != Token::Kind::separator && peek().kind != Token::Kind::end)
                error(peek(), "expected ';' or a new line");
        }
        if (!goal)
            throw ParseError("missing prove or falsify statement", 0, 0);

        Dims d = dims_;
        const std::optional<std::size_t> n_out = output_size ? output_size : declared_outputs;
        if (n_out) {
            if (*n_out < d.outputs)
                throw ParseError("property refers to y[" + std::to_string(d.outputs - 1) + "] but there are " +
                                     std::to_string(*n_out) + " outputs",
                                 0, 0);
            d.outputs = *n_out;
        }
        for (auto& g : goals)
            expand_argmax(g, d.outputs, n_out.has_value());

        if (lo_.size() < d.inputs) {
            lo_.resize(d.inputs);
            hi_.resize(d.inputs);
        }
        d.inputs = lo_.size();
        if (d.inputs == 0)
            throw ParseError("no input bounds given", 0, 0);
        NormalizedProperty p;
        p.input_box = make_box(lo_, hi_);
        p.goal = *goal;
        p.output_size = d.outputs;
        std::vector<Predicate> parts;
        for (const auto& g : goals)
            parts.push_back(finish(g, d));
        p.predicate = parts.size() == 1 ? parts.front() : Predicate::make_all(std::move(parts));
        return p;
    }

private:
    std::vector<Token> tokens_;
    std::size_t pos_ = 0;
    std::filesystem::path base_;
    Dims dims_;
    std::vector<std::optional<double>> lo_, hi_;

    const Token& peek() const { return tokens_[pos_]; }
    Token next() { return tokens_[pos_ < tokens_.size() - 1 ? pos_++ : pos_]; }

    [[noreturn]] static void error(const Token& t, const std::string& what)
    {
        throw ParseError(what, t.line, t.column);
    }

    bool accept(const std::string& sym)
    {
        if ((peek().kind == Token::Kind::symbol || peek().kind == Token::Kind::word) && peek().text == sym &&
            peek().value == 0.0) {
            next();
            return true;
        }
        return false;
    }

    void expect(const std::string& sym)
    {
        if (!accept(sym))
            error(peek(), "expected '" + sym + "'");
    }

    Token expect_number()
    {
        if (peek().kind != Token::Kind::number)
            error(peek(), "expected a number");
        return next();
    }

    double signed_number()
    {
        double sign = 1.0;
        while (peek().kind == Token::Kind::symbol && (peek().text == "-" || peek().text == "+")) {
            if (next().text == "-")
                sign = -sign;
        }
        return sign * expect_number().value;
    }

    std::size_t index()
    {
        expect("[");
        const Token n = expect_number();
        if (n.value < 0 || n.value != std::floor(n.value))
            error(n, "index must be a nonnegative integer");
        expect("]");
        return static_cast<std::size_t>(n.value);
    }

    void set_range(std::size_t i, double a, double b, const Token& at)
    {
        if (a > b)
            error(at, "empty interval");
        if (lo_.size() <= i) {
            lo_.resize(i + 1);
            hi_.resize(i + 1);
        }
        lo_[i] = a;
        hi_[i] = b;
        dims_.inputs = std::max(dims_.inputs, i + 1);
    }

    // x[i] in [a, b]
    void input_range()
    {
        const Token at = peek();
        const std::size_t i = index();
        if (!accept("in"))
            error(peek(), "expected 'in'");
        expect("[");
        const double a = signed_number();
        expect(",");
        const double b = signed_number();
        expect("]");
        set_range(i, a, b, at);
    }

    // ball(file, eps)
    void ball(const Token& at)
    {
        expect("(");
        const Token f = next();
        if (f.kind != Token::Kind::word)
            error(f, "expected a file name");
        expect(",");
        const double eps = signed_number();
        expect(")");
        if (eps < 0)
            error(at, "ball radius must be nonnegative");
        std::filesystem::path path(f.text);
        if (path.is_relative())
            path = base_ / path;
        std::ifstream in(path);
        if (!in)
            error(f, "cannot open " + path.string());
        std::vector<double> center;
        std::string tok;
        while (in >> tok) {
            for (char& ch : tok)
                if (ch == ',')
                    ch = ' ';
            std::istringstream parts(tok);
            std::string piece;
            while (parts >> piece) {
                const auto v = parse_number(piece);
                if (!v)
                    error(f, "malformed number '" + piece + "' in " + path.string());
                center.push_back(*v);
            }
        }
        if (center.empty())
            error(f, path.string() + " holds no values");
        for (std::size_t i = 0; i < center.size(); ++i)
            set_range(i, center[i] - eps, center[i] + eps, at);
    }

    Draft expression()
    {
        std::vector<Draft> kids{conjunction()};
        while (accept("or"))
            kids.push_back(conjunction());
        return kids.size() == 1 ? kids.front() : draft_node(Predicate::Kind::any, std::move(kids));
    }

    Draft conjunction()
    {
        std::vector<Draft> kids{unary()};
        while (accept("and"))
            kids.push_back(unary());
        return kids.size() == 1 ? kids.front() : draft_node(Predicate::Kind::all, std::move(kids));
    }

    Draft unary()
    {
        if (accept("not"))
            return draft_node(Predicate::Kind::negation, {unary()});
        if (accept("true")) {
            Draft d;
            d.value = true;
            return d;
        }
        if (accept("false")) {
            Draft d;
            d.value = false;
            return d;
        }
        if (peek().kind == Token::Kind::word && peek().text == "argmax") {
            const Token at = next();
            bool equal = true;
            if (accept("!="))
                equal = false;
            else
                expect("==");
            const Token c = expect_number();
            if (c.value < 0 || c.value != std::floor(c.value))
                error(c, "class must be a nonnegative integer");
            Draft d;
            d.kind = Predicate::Kind::constant;
            d.value = equal;
            d.atom.lhs.constant = c.value;
            d.atom.strict = true; // marks an argmax placeholder
            dims_.outputs = std::max(dims_.outputs, static_cast<std::size_t>(c.value) + 1);
            (void)at;
            return equal ? d : draft_node(Predicate::Kind::negation, {d});
        }
        // A parenthesised formula, or a comparison whose left side starts with '('.
        if (peek().kind == Token::Kind::symbol && peek().text == "(") {
            const std::size_t save = pos_;
            next();
            try {
                Draft inner = expression();
                expect(")");
                if (!is_comparison(peek()))
                    return inner;
            } catch (const ParseError&) {
            }
            pos_ = save;
        }
        const Linear lhs = linear();
        const Token op = next();
        Comparison cmp;
        if (op.text == "<=")
            cmp = Comparison::le;
        else if (op.text == "<")
            cmp = Comparison::lt;
        else if (op.text == ">=")
            cmp = Comparison::ge;
        else if (op.text == ">")
            cmp = Comparison::gt;
        else
            error(op, "expected a comparison operator");
        const Linear rhs = linear();
        return draft_atom(compare(lhs, cmp, rhs));
    }

    static bool is_comparison(const Token& t)
    {
        return t.kind == Token::Kind::symbol && (t.text == "<=" || t.text == "<" || t.text == ">=" || t.text == ">");
    }

    Linear linear()
    {
        Linear l = product();
        while (peek().kind == Token::Kind::symbol && (peek().text == "+" || peek().text == "-")) {
            const bool minus = next().text == "-";
            const Linear r = product();
            l += minus ? r.scaled(-1.0) : r;
        }
        return l;
    }

    Linear product()
    {
        Linear l = factor();
        while (peek().kind == Token::Kind::symbol && (peek().text == "*" || peek().text == "/")) {
            const Token op = next();
            const Linear r = factor();
            if (op.text == "/") {
                if (!r.is_constant() || r.constant == 0.0)
                    error(op, "division by a non-constant or zero");
                l = l.scaled(1.0 / r.constant);
            } else if (l.is_constant()) {
                l = r.scaled(l.constant);
            } else if (r.is_constant()) {
                l = l.scaled(r.constant);
            } else {
                error(op, "nonlinear term");
            }
        }
        return l;
    }

    Linear factor()
    {
        const Token t = peek();
        if (accept("-"))
            return factor().scaled(-1.0);
        if (accept("+"))
            return factor();
        if (accept("(")) {
            Linear l = linear();
            expect(")");
            return l;
        }
        if (t.kind == Token::Kind::number) {
            next();
            Linear l;
            l.constant = t.value;
            return l;
        }
        if (t.kind == Token::Kind::word && (t.text == "x" || t.text == "y")) {
            next();
            const std::size_t i = index();
            Linear l;
            if (t.text == "y") {
                l.y[i] = 1.0;
                dims_.outputs = std::max(dims_.outputs, i + 1);
            } else {
                l.x[i] = 1.0;
                dims_.inputs = std::max(dims_.inputs, i + 1);
            }
            return l;
        }
        error(t, "expected a number, x[i] or y[j]");
    }

    // argmax == c  ->  y_i - y_c < 0 for every i != c.
    void expand_argmax(Draft& d, std::size_t outputs, bool known)
    {
        if (d.kind == Predicate::Kind::constant && d.atom.strict) {
            if (!known)
                throw ParseError("argmax needs the output count: add 'outputs N' or pass a network", 0, 0);
            const auto c = static_cast<std::size_t>(d.atom.lhs.constant);
            std::vector<Draft> atoms;
            for (std::size_t i = 0; i < outputs; ++i) {
                if (i == c)
                    continue;
                SparseAtom a;
                a.lhs.y[i] = 1.0;
                a.lhs.y[c] = -1.0;
                a.strict = true;
                atoms.push_back(draft_atom(a));
            }
            d = atoms.empty() ? Draft{} : draft_node(Predicate::Kind::all, std::move(atoms));
            return;
        }
        for (auto& c : d.children)
            expand_argmax(c, outputs, known);
    }
};

} // namespace

NormalizedProperty parse_textual(const std::string& text, const std::filesystem::path& base_dir,
                                 std::optional<std::size_t> output_size)
{
    return TextualParser(text, base_dir).parse(output_size);
}

NormalizedProperty load_property(const std::filesystem::path& path, std::optional<std::size_t> output_size)
{
    std::ifstream in(path);
    if (!in)
        throw Error("cannot open property file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    if (path.extension() == ".vnnlib")
        return parse_vnnlib(ss.str(), output_size);
    return parse_textual(ss.str(), path.parent_path(), output_size);
}

} // namespace zonoreach
