#include "tprl/rules.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tprl {

const char* atom_name(Atom a) {
  switch (a) {
    case Atom::kDense: return "dense";
    case Atom::kRight: return "right";
    case Atom::kLeft: return "left";
    case Atom::kInFront: return "in_front";
    case Atom::kBehind: return "behind";
    case Atom::kSdFront: return "sd_front";
    case Atom::kSdRear: return "sd_rear";
    case Atom::kLaneChange: return "lane_change";
    case Atom::kRightmostLane: return "rightmost_lane";
  }
  return "?";
}

bool AtomicValuation::get(Atom a) const {
  switch (a) {
    case Atom::kDense: return dense;
    case Atom::kRight: return right;
    case Atom::kLeft: return left;
    case Atom::kInFront: return in_front;
    case Atom::kBehind: return behind;
    case Atom::kSdFront: return sd_front;
    case Atom::kSdRear: return sd_rear;
    case Atom::kLaneChange: return lane_change;
    case Atom::kRightmostLane: return rightmost_lane;
  }
  return false;
}

void AtomicValuation::set(Atom a, bool value) {
  switch (a) {
    case Atom::kDense: dense = value; break;
    case Atom::kRight: right = value; break;
    case Atom::kLeft: left = value; break;
    case Atom::kInFront: in_front = value; break;
    case Atom::kBehind: behind = value; break;
    case Atom::kSdFront: sd_front = value; break;
    case Atom::kSdRear: sd_rear = value; break;
    case Atom::kLaneChange: lane_change = value; break;
    case Atom::kRightmostLane: rightmost_lane = value; break;
  }
}

namespace {

int lane_band(const TrackMap& map, double d_ref) {
  const int band = static_cast<int>(std::floor(d_ref / map.lane_width + 0.5));
  return std::clamp(band, 0, map.lane_count - 1);
}

bool straddles_boundary(const WorldState& world, const TrackMap& map) {
  const ReferencePath& ref = map.reference();
  const auto corners = footprint(world.ego).corners();
  int first = -1;
  for (const Vec2& c : corners) {
    const int band = lane_band(map, ref.project_near(c, world.ego_s, 1.0).d);
    if (first < 0) {
      first = band;
    } else if (band != first) {
      return true;
    }
  }
  return false;
}

}  // namespace

AtomicValuation eval_atomics(const WorldState& world, const TrackMap& map,
                             const RuleThresholds& thresholds) {
  AtomicValuation v;
  const int others_close =
      box_distance(footprint(world.ego), footprint(world.target)) <
              thresholds.r_dense
          ? 1
          : 0;
  v.dense = others_close >= thresholds.dense_count;

  const ReferencePath& path = map.lane(world.ego.lane);
  const FrenetCoord ego = path.project(world.ego.position());
  const FrenetCoord tgt = path.project(world.target.position());
  const double r_s = path.s_difference(tgt.s, ego.s);
  const bool same_band = std::abs(tgt.d - ego.d) < 0.5 * map.lane_width;
  v.in_front = same_band && r_s > 0.0;
  v.behind = same_band && r_s < 0.0;
  v.left = world.target.lane > world.ego.lane;
  v.right = world.target.lane < world.ego.lane;

  const double gap = bumper_gap(r_s, world.ego, world.target);
  if (v.in_front) {
    v.sd_front = gap >= world.ego.v * thresholds.t_headway + thresholds.d_min;
  }
  if (v.behind) {
    v.sd_rear = gap >= world.target.v * thresholds.t_headway + thresholds.d_min;
  }
  v.lane_change =
      world.ego.lane != world.ego_prev_lane || straddles_boundary(world, map);
  v.rightmost_lane = world.ego.lane == map.rightmost_lane_index;
  return v;
}

namespace ltl {

namespace {
FormulaPtr make(Formula::Op op, FormulaPtr lhs = nullptr, FormulaPtr rhs = nullptr) {
  auto f = std::make_shared<Formula>();
  f->op = op;
  f->lhs = std::move(lhs);
  f->rhs = std::move(rhs);
  return f;
}
}  // namespace

FormulaPtr truth() { return make(Formula::Op::kTrue); }
FormulaPtr atom(Atom a) {
  auto f = std::make_shared<Formula>();
  f->op = Formula::Op::kAtom;
  f->atom = a;
  return f;
}
FormulaPtr negate(FormulaPtr f) { return make(Formula::Op::kNot, std::move(f)); }
FormulaPtr conj(FormulaPtr a, FormulaPtr b) {
  return make(Formula::Op::kAnd, std::move(a), std::move(b));
}
FormulaPtr disj(FormulaPtr a, FormulaPtr b) {
  return make(Formula::Op::kOr, std::move(a), std::move(b));
}
FormulaPtr implies(FormulaPtr a, FormulaPtr b) {
  return make(Formula::Op::kImplies, std::move(a), std::move(b));
}
FormulaPtr next(FormulaPtr f) { return make(Formula::Op::kNext, std::move(f)); }
FormulaPtr globally(FormulaPtr f) {
  return make(Formula::Op::kGlobally, std::move(f));
}
FormulaPtr finally(FormulaPtr f) {
  return make(Formula::Op::kFinally, std::move(f));
}
FormulaPtr until(FormulaPtr a, FormulaPtr b) {
  return make(Formula::Op::kUntil, std::move(a), std::move(b));
}

}  // namespace ltl

std::string to_string(const Formula& f) {
  using Op = Formula::Op;
  switch (f.op) {
    case Op::kTrue: return "true";
    case Op::kAtom: return atom_name(f.atom);
    case Op::kNot: return "!" + to_string(*f.lhs);
    case Op::kAnd: return "(" + to_string(*f.lhs) + " & " + to_string(*f.rhs) + ")";
    case Op::kOr: return "(" + to_string(*f.lhs) + " | " + to_string(*f.rhs) + ")";
    case Op::kImplies:
      return "(" + to_string(*f.lhs) + " -> " + to_string(*f.rhs) + ")";
    case Op::kNext: return "X " + to_string(*f.lhs);
    case Op::kGlobally: return "G " + to_string(*f.lhs);
    case Op::kFinally: return "F " + to_string(*f.lhs);
    case Op::kUntil: return "(" + to_string(*f.lhs) + " U " + to_string(*f.rhs) + ")";
  }
  return "?";
}

bool is_propositional(const Formula& f) {
  using Op = Formula::Op;
  switch (f.op) {
    case Op::kTrue:
    case Op::kAtom: return true;
    case Op::kNot: return is_propositional(*f.lhs);
    case Op::kAnd:
    case Op::kOr:
    case Op::kImplies: return is_propositional(*f.lhs) && is_propositional(*f.rhs);
    default: return false;
  }
}

bool eval_propositional(const Formula& f, const AtomicValuation& v) {
  using Op = Formula::Op;
  switch (f.op) {
    case Op::kTrue: return true;
    case Op::kAtom: return v.get(f.atom);
    case Op::kNot: return !eval_propositional(*f.lhs, v);
    case Op::kAnd: return eval_propositional(*f.lhs, v) && eval_propositional(*f.rhs, v);
    case Op::kOr: return eval_propositional(*f.lhs, v) || eval_propositional(*f.rhs, v);
    case Op::kImplies:
      return !eval_propositional(*f.lhs, v) || eval_propositional(*f.rhs, v);
    default: throw std::invalid_argument("temporal operator in step-local formula");
  }
}

bool eval_finite_trace(const Formula& f, std::span<const AtomicValuation> trace,
                       std::size_t pos) {
  using Op = Formula::Op;
  if (pos >= trace.size()) throw std::out_of_range("trace position past end");
  switch (f.op) {
    case Op::kTrue: return true;
    case Op::kAtom: return trace[pos].get(f.atom);
    case Op::kNot: return !eval_finite_trace(*f.lhs, trace, pos);
    case Op::kAnd:
      return eval_finite_trace(*f.lhs, trace, pos) && eval_finite_trace(*f.rhs, trace, pos);
    case Op::kOr:
      return eval_finite_trace(*f.lhs, trace, pos) || eval_finite_trace(*f.rhs, trace, pos);
    case Op::kImplies:
      return !eval_finite_trace(*f.lhs, trace, pos) || eval_finite_trace(*f.rhs, trace, pos);
    case Op::kNext:
      return pos + 1 < trace.size() && eval_finite_trace(*f.lhs, trace, pos + 1);
    case Op::kGlobally:
      for (std::size_t k = pos; k < trace.size(); ++k) {
        if (!eval_finite_trace(*f.lhs, trace, k)) return false;
      }
      return true;
    case Op::kFinally:
      for (std::size_t k = pos; k < trace.size(); ++k) {
        if (eval_finite_trace(*f.lhs, trace, k)) return true;
      }
      return false;
    case Op::kUntil:
      for (std::size_t k = pos; k < trace.size(); ++k) {
        if (eval_finite_trace(*f.rhs, trace, k)) return true;
        if (!eval_finite_trace(*f.lhs, trace, k)) return false;
      }
      return false;
  }
  return false;
}

FormulaPtr Rule::formula() const {
  return ltl::globally(ltl::implies(premise, conclusion));
}

std::vector<Rule> default_rules() {
  using namespace ltl;
  return {
      {"R1", negate(atom(Atom::kDense)), atom(Atom::kRightmostLane)},
      {"R2", atom(Atom::kLaneChange), atom(Atom::kSdFront)},
  };
}

RuleVerdict eval_rules(const AtomicValuation& v) {
  static const std::vector<Rule> kRules = default_rules();
  return eval_rules(v, kRules);
}

RuleVerdict eval_rules(const AtomicValuation& v, const std::vector<Rule>& rules) {
  RuleVerdict out;
  out.outcomes.reserve(rules.size());
  for (const Rule& r : rules) {
    RuleOutcome o;
    o.premise_active = eval_propositional(*r.premise, v);
    o.violated = o.premise_active && !eval_propositional(*r.conclusion, v);
    if (o.violated) --out.step_reward;
    out.outcomes.push_back(o);
  }
  return out;
}

Compliance trace_compliance(std::span<const RuleVerdict> verdicts) {
  if (verdicts.empty()) throw std::invalid_argument("empty verdict trace");
  const std::size_t rules = verdicts.front().outcomes.size();
  std::vector<std::size_t> ok(rules, 0);
  std::size_t all_ok = 0;
  for (const RuleVerdict& v : verdicts) {
    if (v.outcomes.size() != rules) {
      throw std::invalid_argument("verdicts disagree on rule count");
    }
    bool clean = true;
    for (std::size_t r = 0; r < rules; ++r) {
      if (v.outcomes[r].violated) {
        clean = false;
      } else {
        ++ok[r];
      }
    }
    if (clean) ++all_ok;
  }
  Compliance c;
  c.steps = verdicts.size();
  const auto n = static_cast<double>(verdicts.size());
  for (std::size_t r = 0; r < rules; ++r) c.per_rule.push_back(ok[r] / n);
  c.overall = all_ok / n;
  return c;
}

}  // namespace tprl
