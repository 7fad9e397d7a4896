#ifndef TPRL_RULES_HPP_
#define TPRL_RULES_HPP_

#include <array>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tprl/geometry.hpp"
#include "tprl/world.hpp"

namespace tprl {

struct RuleThresholds {
  double r_dense = 2.0;
  int dense_count = 1;
  double t_headway = 1.0;
  double d_min = 0.3;
};

enum class Atom : int {
  kDense = 0,
  kRight,
  kLeft,
  kInFront,
  kBehind,
  kSdFront,
  kSdRear,
  kLaneChange,
  kRightmostLane,
};

inline constexpr int kAtomCount = 9;

const char* atom_name(Atom a);

// Relational atoms read "target relative to ego": in_front means the target
// is ahead of the ego, left means the target is in a lane left of the ego.
struct AtomicValuation {
  bool dense = false;
  bool right = false;
  bool left = false;
  bool in_front = false;
  bool behind = false;
  bool sd_front = true;
  bool sd_rear = true;
  bool lane_change = false;
  bool rightmost_lane = false;

  bool get(Atom a) const;
  void set(Atom a, bool value);
};

AtomicValuation eval_atomics(const WorldState& world, const TrackMap& map,
                             const RuleThresholds& thresholds);

// LTL syntax tree. Temporal operators are representable; the per-step monitor
// only evaluates the propositional fragment.
struct Formula;
using FormulaPtr = std::shared_ptr<const Formula>;

struct Formula {
  enum class Op {
    kTrue,
    kAtom,
    kNot,
    kAnd,
    kOr,
    kImplies,
    kNext,
    kGlobally,
    kFinally,
    kUntil,
  };
  Op op = Op::kTrue;
  Atom atom = Atom::kDense;
  FormulaPtr lhs;
  FormulaPtr rhs;
};

namespace ltl {
FormulaPtr truth();
FormulaPtr atom(Atom a);
FormulaPtr negate(FormulaPtr f);
FormulaPtr conj(FormulaPtr a, FormulaPtr b);
FormulaPtr disj(FormulaPtr a, FormulaPtr b);
FormulaPtr implies(FormulaPtr a, FormulaPtr b);
FormulaPtr next(FormulaPtr f);
FormulaPtr globally(FormulaPtr f);
FormulaPtr finally(FormulaPtr f);
FormulaPtr until(FormulaPtr a, FormulaPtr b);
}  // namespace ltl

std::string to_string(const Formula& f);
bool is_propositional(const Formula& f);

// Throws std::invalid_argument on temporal operators.
bool eval_propositional(const Formula& f, const AtomicValuation& v);

// Finite-trace semantics at position `pos` (strong next: false at the last
// position).
bool eval_finite_trace(const Formula& f, std::span<const AtomicValuation> trace,
                       std::size_t pos);

// Globally(premise => conclusion).
struct Rule {
  std::string name;
  FormulaPtr premise;
  FormulaPtr conclusion;

  FormulaPtr formula() const;
};

// R1: not dense => rightmost lane. R2: lane change => safe front distance.
std::vector<Rule> default_rules();

struct RuleOutcome {
  bool premise_active = false;
  bool violated = false;
};

struct RuleVerdict {
  std::vector<RuleOutcome> outcomes;
  int step_reward = 0;
};

RuleVerdict eval_rules(const AtomicValuation& v);
RuleVerdict eval_rules(const AtomicValuation& v, const std::vector<Rule>& rules);

struct Compliance {
  std::vector<double> per_rule;
  double overall = 0.0;
  std::size_t steps = 0;
};

// Fraction of steps without violations, per rule and over all rules.
Compliance trace_compliance(std::span<const RuleVerdict> verdicts);

}  // namespace tprl

#endif  // TPRL_RULES_HPP_
