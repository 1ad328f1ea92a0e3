#pragma once

// Finite filtered probability space as an event tree.
//
// Every instant t_k owns two slots: "at" (the value at t_k) and "post" (the
// value on the open interval (t_k, t_{k+1})). The terminal instant has no post
// slot. Nodes are numbered breadth-first, so each level is a contiguous range
// and children of a node are contiguous too.

#include <cmath>
#include <cstdint>
#include <limits>
#include <ranges>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace ladlag {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kProbabilityTolerance = 1e-12;

struct TimeGrid {
    std::vector<double> instants;

    int periods() const { return static_cast<int>(instants.size()) - 1; }
};

class EventTree {
public:
    struct Node {
        int parent = -1;
        int level = 0;
        int first_child = 0;
        int child_count = 0;
        double prob = 1.0;       // transition probability from the parent
        double path_prob = 1.0;  // unconditional probability of the node
    };

    int size() const { return static_cast<int>(nodes_.size()); }
    int periods() const { return grid_.periods(); }
    const TimeGrid& grid() const { return grid_; }
    const Node& node(int n) const { return nodes_[static_cast<std::size_t>(n)]; }

    int parent(int n) const { return node(n).parent; }
    int level(int n) const { return node(n).level; }
    double prob(int n) const { return node(n).prob; }
    double path_prob(int n) const { return node(n).path_prob; }
    bool terminal(int n) const { return node(n).level == periods(); }

    auto children(int n) const {
        const auto& nd = node(n);
        return std::views::iota(nd.first_child, nd.first_child + nd.child_count);
    }
    auto level_nodes(int k) const {
        return std::views::iota(level_begin_[static_cast<std::size_t>(k)],
                                level_begin_[static_cast<std::size_t>(k) + 1]);
    }
    auto leaves() const { return level_nodes(periods()); }
    int level_begin(int k) const { return level_begin_[static_cast<std::size_t>(k)]; }
    int level_end(int k) const { return level_begin_[static_cast<std::size_t>(k) + 1]; }
    int leaf_count() const { return level_end(periods()) - level_begin(periods()); }

    // Ancestor of n at level k (k <= level(n)).
    int ancestor(int n, int k) const {
        while (level(n) > k) n = parent(n);
        return n;
    }

    // Root-to-node path, indexed by level.
    std::vector<int> path_to(int n) const {
        std::vector<int> path(static_cast<std::size_t>(level(n)) + 1);
        for (int m = n; m >= 0; m = parent(m)) path[static_cast<std::size_t>(level(m))] = m;
        return path;
    }

    // Probability of reaching `descendant` given `from`.
    double conditional_prob(int descendant, int from) const {
        return path_prob(descendant) / path_prob(from);
    }

    friend EventTree build_tree(TimeGrid grid, std::span<const int> branching,
                                const std::vector<std::vector<double>>& probabilities);

private:
    TimeGrid grid_;
    std::vector<Node> nodes_;
    std::vector<int> level_begin_;
};

// `probabilities` holds one list per parent in breadth-first order. A list per
// level (exactly `periods` lists) is broadcast to every parent of that level.
inline EventTree build_tree(TimeGrid grid, std::span<const int> branching,
                            const std::vector<std::vector<double>>& probabilities) {
    const int periods = grid.periods();
    if (periods < 1) throw Error(Errc::ShapeMismatch, "time grid needs at least two instants");
    for (std::size_t i = 1; i < grid.instants.size(); ++i)
        if (!(grid.instants[i] > grid.instants[i - 1]))
            throw Error(Errc::ShapeMismatch, "instants must be strictly increasing");
    if (static_cast<int>(branching.size()) != periods)
        throw Error(Errc::ShapeMismatch, "branching needs one entry per period");
    for (int b : branching)
        if (b < 1) throw Error(Errc::ShapeMismatch, "branching counts must be positive");

    EventTree tree;
    tree.grid_ = std::move(grid);
    tree.level_begin_.assign(static_cast<std::size_t>(periods) + 2, 0);
    tree.nodes_.push_back({});
    tree.level_begin_[1] = 1;
    int parent_count = 0;
    for (int k = 0; k < periods; ++k) {
        const int begin = tree.level_begin_[static_cast<std::size_t>(k)];
        const int end = tree.level_begin_[static_cast<std::size_t>(k) + 1];
        parent_count += end - begin;
        for (int n = begin; n < end; ++n) {
            const int count = branching[static_cast<std::size_t>(k)];
            tree.nodes_[static_cast<std::size_t>(n)].first_child = static_cast<int>(tree.nodes_.size());
            tree.nodes_[static_cast<std::size_t>(n)].child_count = count;
            for (int c = 0; c < count; ++c) {
                EventTree::Node child;
                child.parent = n;
                child.level = k + 1;
                tree.nodes_.push_back(child);
            }
        }
        tree.level_begin_[static_cast<std::size_t>(k) + 2] = static_cast<int>(tree.nodes_.size());
    }

    const bool per_level = static_cast<int>(probabilities.size()) == periods &&
                           parent_count != periods;
    if (!per_level && static_cast<int>(probabilities.size()) != parent_count)
        throw Error(Errc::ShapeMismatch, "probabilities need one list per parent or per level");

    for (int n = 0; n < parent_count; ++n) {
        auto& nd = tree.nodes_[static_cast<std::size_t>(n)];
        const auto& probs =
            probabilities[static_cast<std::size_t>(per_level ? nd.level : n)];
        if (static_cast<int>(probs.size()) != nd.child_count)
            throw Error(Errc::ShapeMismatch,
                        "node " + std::to_string(n) + " has " + std::to_string(nd.child_count) +
                            " children but " + std::to_string(probs.size()) + " probabilities");
        double sum = 0.0;
        for (double p : probs) {
            if (!(p > 0.0))
                throw Error(Errc::ZeroProbabilityBranch,
                            "non-positive branch probability under node " + std::to_string(n));
            sum += p;
        }
        if (std::abs(sum - 1.0) > kProbabilityTolerance)
            throw Error(Errc::NonStochasticProbabilities,
                        "probabilities under node " + std::to_string(n) + " sum to " +
                            std::to_string(sum));
        for (int c = 0; c < nd.child_count; ++c) {
            auto& child = tree.nodes_[static_cast<std::size_t>(nd.first_child + c)];
            child.prob = probs[static_cast<std::size_t>(c)];
            child.path_prob = nd.path_prob * child.prob;
        }
    }
    return tree;
}

inline EventTree build_tree(TimeGrid grid, const std::vector<int>& branching,
                            const std::vector<std::vector<double>>& probabilities) {
    return build_tree(std::move(grid), std::span<const int>(branching), probabilities);
}

// Optional process: at-value and post-value per node. post is unused at the
// terminal level. The left limit at a non-root node is the parent's post value.
struct LadlagProcess {
    std::vector<double> at;
    std::vector<double> post;

    static LadlagProcess constant(const EventTree& tree, double value) {
        return {std::vector<double>(static_cast<std::size_t>(tree.size()), value),
                std::vector<double>(static_cast<std::size_t>(tree.size()), value)};
    }

    double left_limit(const EventTree& tree, int n) const {
        const int p = tree.parent(n);
        return p < 0 ? at[0] : post[static_cast<std::size_t>(p)];
    }
};

// Predictable process: one value per parent node, used for the step from that
// node to its children (interval and next instant). Sibling-constant by layout.
struct PredictableProcess {
    std::vector<double> step;

    double at_child(const EventTree& tree, int child) const {
        return step[static_cast<std::size_t>(tree.parent(child))];
    }
};

// Process that may depend on the whole path (not adapted). Slot s of a path is
// at(t_k) for s = 2k and post(t_k) for s = 2k + 1.
struct PathProcess {
    int slots = 0;
    std::vector<double> values;  // leaf-major: values[leaf_index * slots + s]

    static constexpr int at_slot(int k) { return 2 * k; }
    static constexpr int post_slot(int k) { return 2 * k + 1; }

    static PathProcess zeros(const EventTree& tree) {
        PathProcess p;
        p.slots = 2 * tree.periods() + 1;
        p.values.assign(static_cast<std::size_t>(tree.leaf_count() * p.slots), 0.0);
        return p;
    }
    double& operator()(int leaf_index, int slot) {
        return values[static_cast<std::size_t>(leaf_index * slots + slot)];
    }
    double operator()(int leaf_index, int slot) const {
        return values[static_cast<std::size_t>(leaf_index * slots + slot)];
    }
};

// E[x | G_target], where x is given on the nodes of `source_level`. Levels in
// between are filled as a by-product; other entries are NaN.
inline std::vector<double> conditional_expectation(const EventTree& tree, std::span<const double> x,
                                                   int source_level, int target_level) {
    if (static_cast<int>(x.size()) != tree.size())
        throw Error(Errc::ShapeMismatch, "node-indexed values must cover the tree");
    if (source_level < target_level || target_level < 0 || source_level > tree.periods())
        throw Error(Errc::LevelMismatch, "source level " + std::to_string(source_level) +
                                             " below target level " + std::to_string(target_level));
    std::vector<double> out(x.size(), std::numeric_limits<double>::quiet_NaN());
    for (int n : tree.level_nodes(source_level)) out[static_cast<std::size_t>(n)] = x[static_cast<std::size_t>(n)];
    for (int k = source_level - 1; k >= target_level; --k) {
        for (int n : tree.level_nodes(k)) {
            double acc = 0.0;
            for (int c : tree.children(n)) acc += tree.prob(c) * out[static_cast<std::size_t>(c)];
            out[static_cast<std::size_t>(n)] = acc;
        }
    }
    return out;
}

// E[x_{next} | parent] for values x on the children of `n`.
inline double child_mean(const EventTree& tree, int n, std::span<const double> x) {
    double acc = 0.0;
    for (int c : tree.children(n)) acc += tree.prob(c) * x[static_cast<std::size_t>(c)];
    return acc;
}

struct Projections {
    LadlagProcess optional;
    LadlagProcess predictable;
};

// Optional projection conditions each slot on the node at its level; the
// predictable projection conditions the at-slot of level k on level k-1. On
// the open interval the filtration does not move, so both agree on post slots.
inline Projections projections(const EventTree& tree, const PathProcess& x) {
    const auto N = static_cast<std::size_t>(tree.size());
    Projections pr{{std::vector<double>(N, 0.0), std::vector<double>(N, 0.0)},
                   {std::vector<double>(N, 0.0), std::vector<double>(N, 0.0)}};
    const int first_leaf = tree.level_begin(tree.periods());
    for (int leaf : tree.leaves()) {
        const int li = leaf - first_leaf;
        const auto path = tree.path_to(leaf);
        for (int k = 0; k <= tree.periods(); ++k) {
            const int n = path[static_cast<std::size_t>(k)];
            const double w = tree.conditional_prob(leaf, n);
            pr.optional.at[static_cast<std::size_t>(n)] += w * x(li, PathProcess::at_slot(k));
            if (k < tree.periods())
                pr.optional.post[static_cast<std::size_t>(n)] += w * x(li, PathProcess::post_slot(k));
            const int anchor = k == 0 ? n : path[static_cast<std::size_t>(k) - 1];
            pr.predictable.at[static_cast<std::size_t>(n)] +=
                tree.conditional_prob(leaf, anchor) * x(li, PathProcess::at_slot(k));
        }
    }
    // The predictable at-value is sibling-constant: it was accumulated per
    // child, so sum over siblings.
    std::vector<double> pred_at(N, 0.0);
    pred_at[0] = pr.predictable.at[0];
    for (int n = 0; n < tree.size(); ++n) {
        if (tree.terminal(n)) continue;
        double s = 0.0;
        for (int c : tree.children(n)) s += pr.predictable.at[static_cast<std::size_t>(c)];
        for (int c : tree.children(n)) pred_at[static_cast<std::size_t>(c)] = s;
    }
    pr.predictable.at = std::move(pred_at);
    pr.predictable.post = pr.optional.post;
    return pr;
}

// Lift an adapted process to path form.
inline PathProcess to_path_process(const EventTree& tree, const LadlagProcess& x) {
    auto out = PathProcess::zeros(tree);
    const int first_leaf = tree.level_begin(tree.periods());
    for (int leaf : tree.leaves()) {
        const auto path = tree.path_to(leaf);
        for (int k = 0; k <= tree.periods(); ++k) {
            const auto n = static_cast<std::size_t>(path[static_cast<std::size_t>(k)]);
            out(leaf - first_leaf, PathProcess::at_slot(k)) = x.at[n];
            if (k < tree.periods()) out(leaf - first_leaf, PathProcess::post_slot(k)) = x.post[n];
        }
    }
    return out;
}

struct LeftLimits {
    PredictableProcess xi_bar;  // left-limit obstacle, per step
    PathProcess brs;            // backward running sup of xi^+ 1_{<T}, as a left limit
};

// xi_bar at t_{k+1} is the post value at t_k. brs at post(t_k) and at(t_{k+1})
// is the max of xi^+ over all slots from post(t_k) onward, excluding T; the
// value at t_0 is 0.
inline LeftLimits left_limit_process(const EventTree& tree, const LadlagProcess& xi) {
    LeftLimits out;
    out.xi_bar.step.assign(static_cast<std::size_t>(tree.size()), kNegInf);
    for (int n = 0; n < tree.size(); ++n)
        if (!tree.terminal(n)) out.xi_bar.step[static_cast<std::size_t>(n)] = xi.post[static_cast<std::size_t>(n)];

    out.brs = PathProcess::zeros(tree);
    const int N = tree.periods();
    const int first_leaf = tree.level_begin(N);
    auto pos = [](double v) { return v > 0.0 ? v : 0.0; };
    for (int leaf : tree.leaves()) {
        const auto path = tree.path_to(leaf);
        const int li = leaf - first_leaf;
        double running = 0.0;
        for (int k = N - 1; k >= 0; --k) {
            const auto n = static_cast<std::size_t>(path[static_cast<std::size_t>(k)]);
            if (k + 1 < N) running = std::max(running, pos(xi.at[static_cast<std::size_t>(path[static_cast<std::size_t>(k) + 1])]));
            running = std::max(running, pos(xi.post[n]));
            out.brs(li, PathProcess::post_slot(k)) = running;
            out.brs(li, PathProcess::at_slot(k + 1)) = running;
        }
        out.brs(li, PathProcess::at_slot(0)) = 0.0;
    }
    return out;
}

enum class StopAction : std::int8_t { Continue = 0, StopAt = 1, StopPost = 2 };

// Node-local stopping rule. Nodes never reached keep Continue, which makes the
// encoding canonical and the enumeration duplicate-free.
struct StoppingRule {
    std::vector<StopAction> action;
};

struct EnumerationLimits {
    int max_decision_nodes = 25;
    std::size_t max_rules = 2'000'000;
};

// Which slots may carry a stop decision, per node: bit 0 at, bit 1 post.
// Empty means at-slots only.
struct SlotEligibility {
    std::vector<std::uint8_t> mask;

    bool at(int n) const { return mask.empty() || (mask[static_cast<std::size_t>(n)] & 1u); }
    bool post(int n) const { return !mask.empty() && (mask[static_cast<std::size_t>(n)] & 2u); }
};

struct RuleWindow {
    std::vector<int> roots;
    int to_level = 0;
    bool start_post = false;  // the window opens at the roots' post slots
};

namespace detail {

inline void check_window(const EventTree& tree, const RuleWindow& w, const EnumerationLimits& lim) {
    int decision_nodes = 0;
    for (int r : w.roots) {
        if (tree.level(r) > w.to_level)
            throw Error(Errc::LevelMismatch, "window ends before it starts");
        std::vector<int> frontier{r};
        while (!frontier.empty()) {
            std::vector<int> next;
            for (int n : frontier) {
                if (tree.level(n) >= w.to_level) continue;
                ++decision_nodes;
                for (int c : tree.children(n)) next.push_back(c);
            }
            frontier = std::move(next);
        }
    }
    if (decision_nodes > lim.max_decision_nodes)
        throw Error(Errc::EnumerationTooLarge, std::to_string(decision_nodes) +
                                                   " decision nodes exceed the cap of " +
                                                   std::to_string(lim.max_decision_nodes));
}

inline double count_rules(const EventTree& tree, int n, const RuleWindow& w,
                          const SlotEligibility& elig, bool is_root) {
    if (tree.level(n) >= w.to_level) return 1.0;
    double own = 0.0;
    if (elig.at(n) && !(is_root && w.start_post)) own += 1.0;
    if (elig.post(n)) own += 1.0;
    double prod = 1.0;
    for (int c : tree.children(n)) prod *= count_rules(tree, c, w, elig, false);
    return own + prod;
}

inline std::vector<std::vector<std::pair<int, StopAction>>> rules_below(
    const EventTree& tree, int n, const RuleWindow& w, const SlotEligibility& elig, bool is_root) {
    using Partial = std::vector<std::pair<int, StopAction>>;
    std::vector<Partial> out;
    if (tree.level(n) >= w.to_level) {
        out.push_back({{n, StopAction::StopAt}});
        return out;
    }
    if (elig.at(n) && !(is_root && w.start_post)) out.push_back({{n, StopAction::StopAt}});
    if (elig.post(n)) out.push_back({{n, StopAction::StopPost}});
    std::vector<Partial> combos{{}};
    for (int c : tree.children(n)) {
        const auto sub = rules_below(tree, c, w, elig, false);
        std::vector<Partial> next;
        next.reserve(combos.size() * sub.size());
        for (const auto& a : combos)
            for (const auto& b : sub) {
                Partial merged = a;
                merged.insert(merged.end(), b.begin(), b.end());
                next.push_back(std::move(merged));
            }
        combos = std::move(next);
    }
    for (auto& c : combos) out.push_back(std::move(c));
    return out;
}

}  // namespace detail

// Number of rules without materializing them: r(n) = own stop options + prod r(children).
inline double count_stopping_rules(const EventTree& tree, const RuleWindow& w,
                                   const SlotEligibility& elig = {}) {
    double total = 1.0;
    for (int r : w.roots) total *= detail::count_rules(tree, r, w, elig, true);
    return total;
}

inline std::vector<StoppingRule> enumerate_stopping_rules(const EventTree& tree, const RuleWindow& w,
                                                          const SlotEligibility& elig = {},
                                                          const EnumerationLimits& lim = {}) {
    detail::check_window(tree, w, lim);
    const double count = count_stopping_rules(tree, w, elig);
    if (count > static_cast<double>(lim.max_rules))
        throw Error(Errc::EnumerationTooLarge,
                    std::to_string(count) + " stopping rules exceed the cap");
    std::vector<StoppingRule> rules{
        StoppingRule{std::vector<StopAction>(static_cast<std::size_t>(tree.size()), StopAction::Continue)}};
    for (int r : w.roots) {
        const auto sub = detail::rules_below(tree, r, w, elig, true);
        std::vector<StoppingRule> next;
        next.reserve(rules.size() * sub.size());
        for (const auto& base : rules)
            for (const auto& partial : sub) {
                StoppingRule rule = base;
                for (auto [n, a] : partial) rule.action[static_cast<std::size_t>(n)] = a;
                next.push_back(std::move(rule));
            }
        rules = std::move(next);
    }
    return rules;
}

inline std::vector<StoppingRule> enumerate_stopping_rules(const EventTree& tree, int from_level,
                                                          int to_level,
                                                          const EnumerationLimits& lim = {}) {
    if (from_level > to_level)
        throw Error(Errc::LevelMismatch, "from_level exceeds to_level");
    RuleWindow w;
    for (int n : tree.level_nodes(from_level)) w.roots.push_back(n);
    w.to_level = to_level;
    return enumerate_stopping_rules(tree, w, {}, lim);
}

}  // namespace ladlag
