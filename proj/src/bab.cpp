#include "zonoreach/bab.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>

#include "zonoreach/error.hpp"
#include "zonoreach/lp.hpp"

namespace zonoreach
{

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::optional<std::size_t> choose_dim(const VectorXd& alpha, const VectorXd& widths)
{
    std::optional<std::size_t> best;
    double best_score = 0.0;
    for (Index i = 0; i < widths.size(); ++i) {
        if (!(widths[i] > 0.0))
            continue;
        const double score = (i < alpha.size() ? alpha[i] : 0.0) * widths[i];
        if (!best || score > best_score) {
            best = static_cast<std::size_t>(i);
            best_score = score;
        }
    }
    return best;
}

double relu_fix_area(double lower, double upper)
{
    if (!(lower < 0.0 && upper > 0.0))
        return 0.0;
    return -lower * upper / (2.0 * (upper - lower));
}

std::optional<std::size_t> choose_relu(const std::vector<ReluNeuron>& candidates)
{
    std::optional<std::size_t> best;
    double best_score = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const ReluNeuron& n = candidates[i];
        const double delta = relu_fix_area(n.lower, n.upper);
        const double score = (delta + delta) * n.mass;
        const bool earlier = best && std::pair(n.node, n.index) < std::pair(candidates[*best].node, candidates[*best].index);
        if (!best || score > best_score || (score == best_score && earlier)) {
            best = i;
            best_score = score;
        }
    }
    return best;
}

namespace
{

enum class Outcome
{
    verified,
    falsified,
    unknown,
    split,
    timeout
};

template <class Task>
struct Step
{
    Outcome outcome = Outcome::unknown;
    std::vector<Task> children;
    std::optional<Counterexample> counterexample;
};

struct Summary
{
    Status status = Status::verified;
    std::optional<Counterexample> counterexample;
    std::size_t subproblems = 0;
    std::size_t splits = 0;
    std::size_t max_worklist = 0;
};

// Children are pushed in order, so the last child is analysed first.
template <class Task>
Summary run_worklist(Task root, const BabConfig& config, Deadline deadline,
                     const std::function<Step<Task>(const Task&, bool)>& process)
{
    std::vector<Task> queue{std::move(root)};
    Summary s;
    s.max_worklist = 1;
    bool unknown = false, timed_out = false, stop = false, first = true;
    std::size_t active = 0;
    std::mutex m;
    std::condition_variable cv;

    const auto worker = [&] {
        std::unique_lock lock(m);
        while (true) {
            cv.wait(lock, [&] { return stop || !queue.empty() || active == 0; });
            if (stop || (queue.empty() && active == 0))
                return;
            if (Clock::now() >= deadline ||
                (config.max_subproblems > 0 && s.subproblems >= config.max_subproblems)) {
                if (Clock::now() >= deadline)
                    timed_out = true;
                else
                    unknown = true;
                stop = true;
                cv.notify_all();
                return;
            }
            Task task = std::move(queue.back());
            queue.pop_back();
            const bool root_task = first;
            first = false;
            ++active;
            ++s.subproblems;
            lock.unlock();
            Step<Task> step = process(task, root_task);
            lock.lock();
            --active;
            switch (step.outcome) {
            case Outcome::falsified:
                if (!s.counterexample)
                    s.counterexample = std::move(step.counterexample);
                stop = true;
                break;
            case Outcome::timeout:
                timed_out = true;
                stop = true;
                break;
            case Outcome::unknown:
                unknown = true;
                break;
            case Outcome::split:
                ++s.splits;
                for (auto& c : step.children)
                    queue.push_back(std::move(c));
                s.max_worklist = std::max(s.max_worklist, queue.size());
                break;
            case Outcome::verified:
                break;
            }
            cv.notify_all();
        }
    };

    if (config.jobs <= 1) {
        worker();
    } else {
        std::vector<std::jthread> threads;
        for (std::size_t t = 0; t < config.jobs; ++t)
            threads.emplace_back(worker);
    }

    if (s.counterexample)
        s.status = Status::falsified;
    else if (timed_out)
        s.status = Status::timeout;
    else if (unknown)
        s.status = Status::unknown;
    else
        s.status = Status::verified;
    return s;
}

Verdict finish(Verdict root, const Summary& s, Clock::time_point started)
{
    root.status = s.status;
    root.counterexample = s.counterexample;
    root.stats.subproblems = s.subproblems;
    root.stats.splits = s.splits;
    root.stats.max_worklist = s.max_worklist;
    root.stats.seconds = std::chrono::duration<double>(Clock::now() - started).count();
    return root;
}

// Disjunctive normal form of a negation-normal predicate; nullopt when it
// would exceed `limit` cases.
std::optional<std::vector<std::vector<Atom>>> dnf(const Predicate& p, std::size_t limit)
{
    using Cases = std::vector<std::vector<Atom>>;
    switch (p.kind) {
    case Predicate::Kind::constant:
        return p.value ? Cases{{}} : Cases{};
    case Predicate::Kind::atom:
        return Cases{{p.atom}};
    case Predicate::Kind::any: {
        Cases out;
        for (const auto& c : p.children) {
            auto sub = dnf(c, limit);
            if (!sub)
                return std::nullopt;
            out.insert(out.end(), sub->begin(), sub->end());
            if (out.size() > limit)
                return std::nullopt;
        }
        return out;
    }
    case Predicate::Kind::all: {
        Cases out{{}};
        for (const auto& c : p.children) {
            auto sub = dnf(c, limit);
            if (!sub)
                return std::nullopt;
            Cases next;
            for (const auto& a : out)
                for (const auto& b : *sub) {
                    next.push_back(a);
                    next.back().insert(next.back().end(), b.begin(), b.end());
                    if (next.size() > limit)
                        return std::nullopt;
                }
            out = std::move(next);
        }
        return out;
    }
    case Predicate::Kind::negation:
        return dnf(negation_normal_form(p), limit);
    }
    return std::nullopt;
}

// Atom value as g.eps + c over the constrained zonotope's symbols, with
// `slack` bounding the rounding error of the body.
struct LinearAtom
{
    VectorXd g;
    double c = 0.0;
    double slack = 0.0;
    double threshold = 0.0;
};

LinearAtom linearize(const Atom& a, const ConstrainedZonotope& z, const SymbolPool& pool, const IntervalTensor& box)
{
    const Zonotope& body = z.body();
    LinearAtom out;
    const VectorXd& w = a.out;
    const Index k = std::min<Index>(w.size(), static_cast<Index>(body.dim()));
    out.g = body.generators().topRows(k).transpose() * w.head(k);
    out.c = w.head(k).dot(body.center().head(k));
    out.slack = w.head(k).cwiseAbs().dot(body.error().head(k));
    if (a.uses_inputs()) {
        const VectorXd mid = box.midpoint();
        const VectorXd half = 0.5 * box.width();
        out.c += a.in.dot(mid);
        for (std::size_t j = 0; j < body.symbols().size(); ++j) {
            const SymbolOrigin& o = pool.origin(body.symbols()[j]);
            if (o.kind == SymbolOrigin::Kind::input && static_cast<Index>(o.index) < a.in.size())
                out.g[static_cast<Index>(j)] += a.in[static_cast<Index>(o.index)] * half[static_cast<Index>(o.index)];
        }
    }
    // Everything above is rounded to nearest; a relative margin covers it.
    const double scale = out.g.cwiseAbs().sum() + std::abs(out.c) + std::abs(a.threshold);
    out.slack += 1e-12 * scale + 1e-300;
    out.threshold = a.threshold;
    return out;
}

enum class LeafResult
{
    verified,
    falsified,
    unknown
};

// No unstable neuron is left, so the constrained zonotope describes the
// reachable set up to rounding. Each violation case is an LP: a feasible
// point is a candidate counterexample, a Farkas certificate rules it out.
LeafResult decide_leaf(const Analyzer& an, const ForwardResult& r, const IntervalTensor& box,
                       std::optional<Counterexample>& cex)
{
    if (!r.constrained)
        return LeafResult::unknown;
    const ConstrainedZonotope& z = *r.constrained;
    const auto cases = dnf(negation_normal_form(Predicate::make_not(an.analysed_property().prove_form())), 4096);
    if (!cases)
        return LeafResult::unknown;
    const Index m = static_cast<Index>(z.symbols().size());
    const MatrixXd& a = z.constraint_matrix();
    const VectorXd& b = z.constraint_offset();
    bool all_ruled_out = true;

    for (const auto& conj : *cases) {
        std::vector<LinearAtom> atoms;
        for (const Atom& at : conj)
            atoms.push_back(linearize(at, z, r.pool, box));
        const Index p = static_cast<Index>(atoms.size());

        // Closed relaxation of the case: t - g.eps - c + slack >= 0.
        MatrixXd a2(a.rows() + p, m);
        VectorXd b2(a.rows() + p);
        if (a.rows() > 0) {
            a2.topRows(a.rows()) = a;
            b2.head(a.rows()) = b;
        }
        for (Index i = 0; i < p; ++i) {
            a2.row(a.rows() + i) = -atoms[static_cast<std::size_t>(i)].g.transpose();
            const auto& la = atoms[static_cast<std::size_t>(i)];
            b2[a.rows() + i] = la.threshold - la.c + la.slack;
        }
        if (certify_infeasible(a2, b2))
            continue;

        // maximize s: A eps + b >= 0, t - g.eps - c >= s for every atom.
        // Variables e = eps + 1 in [0, 2] and s' = 1 - s >= 0.
        lp::Problem prob;
        prob.cost = VectorXd::Zero(m + 1);
        prob.cost[m] = 1.0;
        const Index rows = a.rows() + p + m;
        prob.ub = MatrixXd::Zero(rows, m + 1);
        prob.ub_rhs = VectorXd::Zero(rows);
        const VectorXd ones = VectorXd::Ones(m);
        for (Index i = 0; i < a.rows(); ++i) {
            prob.ub.row(i).head(m) = -a.row(i);
            prob.ub_rhs[i] = b[i] - a.row(i).dot(ones);
        }
        for (Index i = 0; i < p; ++i) {
            const auto& la = atoms[static_cast<std::size_t>(i)];
            prob.ub.row(a.rows() + i).head(m) = la.g.transpose();
            prob.ub(a.rows() + i, m) = -1.0;
            prob.ub_rhs[a.rows() + i] = la.threshold - la.c + la.g.sum() - 1.0;
        }
        for (Index j = 0; j < m; ++j) {
            prob.ub(a.rows() + p + j, j) = 1.0;
            prob.ub_rhs[a.rows() + p + j] = 2.0;
        }
        const lp::Solution sol = lp::minimize(prob);
        if (sol.status == lp::Status::optimal) {
            const VectorXd eps = sol.x.head(m).array() - 1.0;
            if (auto c = an.confirm(an.input_point(r, box, eps))) {
                cex = std::move(c);
                return LeafResult::falsified;
            }
        }
        all_ruled_out = false;
    }
    return all_ruled_out ? LeafResult::verified : LeafResult::unknown;
}

} // namespace

Verdict bab_input(const Analyzer& analyzer, const BabConfig& config, Deadline deadline)
{
    return bab_input(analyzer, analyzer.property().input_box, config, deadline);
}

Verdict bab_input(const Analyzer& analyzer, const IntervalTensor& box, const BabConfig& config, Deadline deadline)
{
    if (config.k < 2)
        throw Error("input splitting needs k >= 2");
    const auto started = Clock::now();
    const VectorXd original_width = box.width();
    Verdict root;
    std::mutex root_mutex;

    const std::function<Step<IntervalTensor>(const IntervalTensor&, bool)> process =
        [&](const IntervalTensor& b, bool is_root) {
            Step<IntervalTensor> step;
            Verdict v = analyzer.analyse(b, deadline, is_root && analyzer.config().attack.enabled);
            if (is_root) {
                std::lock_guard lock(root_mutex);
                root = v;
            }
            switch (v.status) {
            case Status::verified:
                step.outcome = Outcome::verified;
                return step;
            case Status::falsified:
                step.outcome = Outcome::falsified;
                step.counterexample = std::move(v.counterexample);
                return step;
            case Status::timeout:
                step.outcome = Outcome::timeout;
                return step;
            case Status::unknown:
                break;
            }
            const VectorXd width = b.width();
            // Widths relative to the root box, so the choice does not depend
            // on the units of each input.
            VectorXd splittable = VectorXd::Zero(width.size());
            for (Index i = 0; i < width.size(); ++i)
                if (width[i] > config.min_width_fraction * original_width[i])
                    splittable[i] = width[i] / original_width[i];
            const auto dim = choose_dim(v.input_relation.size() ? v.input_relation : VectorXd::Ones(width.size()),
                                        splittable);
            if (!dim) {
                step.outcome = Outcome::unknown;
                return step;
            }
            const auto d = static_cast<Index>(*dim);
            const double lo = b.lower()[d], hi = b.upper()[d];
            for (std::size_t part = config.k; part-- > 0;) {
                IntervalTensor child = b;
                const double a = part == 0 ? lo : lo + (hi - lo) * static_cast<double>(part) / static_cast<double>(config.k);
                const double c = part + 1 == config.k
                                     ? hi
                                     : lo + (hi - lo) * static_cast<double>(part + 1) / static_cast<double>(config.k);
                child.set(*dim, {a, c});
                step.children.push_back(std::move(child));
            }
            step.outcome = Outcome::split;
            return step;
        };

    const Summary s = run_worklist<IntervalTensor>(box, config, deadline, process);
    return finish(std::move(root), s, started);
}

Verdict bab_relu(const Analyzer& analyzer, const BabConfig& config, Deadline deadline)
{
    return bab_relu(analyzer, analyzer.property().input_box, config, deadline);
}

Verdict bab_relu(const Analyzer& analyzer, const IntervalTensor& box, const BabConfig& config, Deadline deadline)
{
    if (!analyzer.config().constrained)
        throw Error("ReLU splitting needs the constrained zonotope domain");
    const auto started = Clock::now();
    Verdict root;
    std::mutex root_mutex;

    const std::function<Step<SplitMap>(const SplitMap&, bool)> process = [&](const SplitMap& splits, bool is_root) {
        Step<SplitMap> step;
        if (is_root && analyzer.config().attack.enabled) {
            if (auto c = analyzer.search_counterexample(box, deadline, analyzer.config().seed)) {
                step.outcome = Outcome::falsified;
                step.counterexample = std::move(c);
                return step;
            }
        }
        ForwardResult r = analyzer.forward(box, deadline, splits);
        if (is_root) {
            std::lock_guard lock(root_mutex);
            root.stats = r.stats;
            root.warnings = r.warnings;
            root.input_relation = r.input_relation;
            const std::size_t y = analyzer.output_node();
            if (!r.empty && !r.timed_out && r.bounds[y].size())
                root.output_bounds = r.bounds[y].reshaped({r.bounds[y].size()});
        }
        if (r.timed_out) {
            step.outcome = Outcome::timeout;
            return step;
        }
        if (r.empty || analyzer.evaluate(r) == Truth::yes) {
            step.outcome = Outcome::verified;
            return step;
        }
        if (auto c = analyzer.witness(r, box)) {
            step.outcome = Outcome::falsified;
            step.counterexample = std::move(c);
            return step;
        }
        const auto pick = choose_relu(r.unstable);
        if (!pick) {
            switch (decide_leaf(analyzer, r, box, step.counterexample)) {
            case LeafResult::verified:
                step.outcome = Outcome::verified;
                break;
            case LeafResult::falsified:
                step.outcome = Outcome::falsified;
                break;
            case LeafResult::unknown:
                step.outcome = Outcome::unknown;
                break;
            }
            return step;
        }
        const ReluNeuron& n = r.unstable[*pick];
        for (const Phase ph : {Phase::active, Phase::inactive}) {
            SplitMap child = splits;
            child[{n.node, n.index}] = ph;
            step.children.push_back(std::move(child));
        }
        step.outcome = Outcome::split;
        return step;
    };

    const Summary s = run_worklist<SplitMap>(SplitMap{}, config, deadline, process);
    return finish(std::move(root), s, started);
}

} // namespace zonoreach
