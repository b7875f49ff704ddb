"""Runge-Kutta tableaux and the residual blocks wired from them.

A block evaluates ``k_i = F_i(x + h * sum_j a_ij k_j)`` for its stages and
returns ``x + h * sum_i b_i k_i``.  With ``F_i`` replaced by a shared right
hand side ``f`` this is exactly one explicit RK step, which is what the ODE
oracle in :mod:`horesnet.oracle` runs from the same tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .subnet import StageFunction
from .tensor import DimensionError, Tensor, mul, parameter, scale_add

SQRT6 = math.sqrt(6.0)


class DivergenceError(ArithmeticError):
    """A forward pass produced non-finite values."""

    def __init__(self, message: str, stage: int | None = None, block: int | None = None):
        super().__init__(message)
        self.stage = stage
        self.block = block


@dataclass(frozen=True)
class Coef:
    value: float
    expr: str


def q(num: int, den: int = 1) -> Coef:
    fr = Fraction(num, den)
    return Coef(float(fr), str(fr))


def r6(a: float, b: float, den: float) -> Coef:
    """(a + b*sqrt(6)) / den"""
    sign = "+" if b >= 0 else "-"
    return Coef((a + b * SQRT6) / den, f"({a:g}{sign}{abs(b):g}*sqrt6)/{den:g}")


def dec(x: float) -> Coef:
    return Coef(float(x), repr(float(x)))


@dataclass(frozen=True)
class Tableau:
    """Explicit RK coefficients.

    ``stages[i]`` lists ``(j, a_ij)`` pairs (1-based stage indices, j < i+1)
    feeding stage ``i+1``; ``weights`` lists ``(i, b_i)`` for the output.
    ``h_policy`` is ``'none'`` (no step scale), ``'fixed'`` or ``'learnable'``.
    """

    name: str
    stages: tuple[tuple[tuple[int, Coef], ...], ...]
    weights: tuple[tuple[int, Coef], ...]
    h_policy: str = "none"
    order: int = 1
    note: str = ""

    @property
    def s(self) -> int:
        return len(self.stages)

    @property
    def layers_per_block(self) -> int:
        return 2 * self.s

    def a(self) -> np.ndarray:
        A = np.zeros((self.s, self.s))
        for i, row in enumerate(self.stages):
            for j, c in row:
                A[i, j - 1] += c.value
        return A

    def b(self) -> np.ndarray:
        out = np.zeros(self.s)
        for i, c in self.weights:
            out[i - 1] += c.value
        return out

    def c(self) -> np.ndarray:
        return self.a().sum(axis=1)

    def weight_sum(self) -> float:
        return math.fsum(c.value for _, c in self.weights)

    def exact_weight_sum(self) -> Fraction | None:
        try:
            return sum((Fraction(c.expr) for _, c in self.weights), Fraction(0))
        except ValueError:
            return None

    def to_dict(self) -> dict:
        def row(entries):
            return [{"source": f"k{j}", "value": c.value, "expr": c.expr} for j, c in entries]

        return {
            "name": self.name,
            "stages": self.s,
            "order": self.order,
            "h_policy": self.h_policy,
            "layers_per_block": self.layers_per_block,
            "stage_rules": [{"stage": i + 1, "base": "input", "terms": row(r)} for i, r in enumerate(self.stages)],
            "output_rule": {"base": "input", "terms": [{"source": f"k{i}", "value": c.value, "expr": c.expr}
                                                       for i, c in self.weights]},
            "weight_sum": self.weight_sum(),
            "note": self.note,
        }


def _tab(name, stages, weights, **kw) -> Tableau:
    return Tableau(name, tuple(tuple(r) for r in stages), tuple(weights), **kw)


EULER = _tab("euler", [[]], [(1, q(1))], order=1)

MIDPOINT = _tab("midpoint", [[], [(1, q(1, 2))]], [(2, q(1))], order=2)

_RK4_STAGES = [[], [(1, q(1, 2))], [(2, q(1, 2))], [(3, q(1))]]
RK4 = _tab("rk4", _RK4_STAGES, [(1, q(1, 6)), (2, q(1, 3)), (3, q(1, 3)), (4, q(1, 6))], order=4)
RK4_LITE = _tab("rk4-lite", _RK4_STAGES, [(4, q(1))], order=1,
                note="blend removed: output is input + k4")

# Stage rules 2..11 in exact form; 12..14 and the output weights as printed
# (rounded) in the source.  The k5 rule keeps the printed 206*sqrt6 term.
_VERNER_PRINTED_STAGES = [
    [],
    [(1, q(1, 12))],
    [(1, q(1, 27)), (2, q(2, 27))],
    [(1, q(1, 24)), (3, q(3, 24))],
    [(1, r6(4, 94, 375)), (3, r6(-282, -252, 375)), (4, r6(328, 206, 375))],
    [(1, r6(9, -1, 150)), (4, r6(312, 32, 1425)), (5, r6(69, 29, 570))],
    [(1, r6(927, -347, 1250)), (4, r6(-16248, 7328, 9375)), (5, r6(-489, 179, 3750)),
     (6, r6(14268, -5798, 9375))],
    [(1, q(4, 54)), (6, r6(16, -1, 54)), (7, r6(16, 1, 54))],
    [(1, q(38, 512)), (6, r6(118, -23, 512)), (7, r6(118, 23, 512)), (8, q(-18, 512))],
    [(1, q(11, 144)), (6, r6(266, -1, 864)), (7, r6(266, 1, 864)), (8, q(-1, 16)), (9, q(-8, 27))],
    [(1, r6(5034, -271, 61440)), (7, r6(7859, -1626, 10240)), (8, r6(-2232, 813, 20480)),
     (9, r6(-594, 271, 960)), (10, r6(657, -813, 5120))],
    [(1, dec(-8.14164)), (6, dec(-574.436)), (7, dec(847.88)), (8, dec(113.719)), (9, dec(626.94)),
     (10, dec(605.73)), (11, dec(-328.69))],
    [(1, dec(0.0878)), (6, dec(0.69337)), (7, dec(-1.9)), (8, dec(0.23)), (9, dec(-0.69)),
     (10, dec(-0.077)), (11, dec(2.49)), (12, dec(0.0018))],
    [(1, dec(-0.1)), (6, dec(5.575)), (7, dec(7.486)), (8, dec(-6.23)), (9, dec(2.27)),
     (10, dec(-4.89)), (11, dec(-4.86)), (12, dec(-0.0235)), (13, dec(1.78))],
]
_VERNER_PRINTED_WEIGHTS = [(1, dec(0.06)), (8, dec(-0.19)), (9, dec(0.72)), (10, dec(-0.72)), (11, dec(0.75)),
                         (12, dec(0.0004)), (13, dec(0.34)), (14, dec(0.032))]

# Full-precision 8th-order propagating formula of Verner's 16-stage 8(9)
# pair, first 14 stages (k15, k16 only feed the error estimate).
_VERNER_CANONICAL_STAGES = [
    [],
    [(1, q(1, 12))],
    [(1, q(1, 27)), (2, q(2, 27))],
    [(1, q(1, 24)), (3, q(1, 8))],
    [(1, r6(4, 94, 375)), (3, r6(-282, -252, 375)), (4, r6(328, 208, 375))],
    [(1, r6(9, -1, 150)), (4, r6(312, 32, 1425)), (5, r6(69, 29, 570))],
    [(1, r6(927, -347, 1250)), (4, r6(-16248, 7328, 9375)), (5, r6(-489, 179, 3750)),
     (6, r6(14268, -5798, 9375))],
    [(1, q(4, 54)), (6, r6(16, -1, 54)), (7, r6(16, 1, 54))],
    [(1, q(38, 512)), (6, r6(118, -23, 512)), (7, r6(118, 23, 512)), (8, q(-18, 512))],
    [(1, q(11, 144)), (6, r6(266, -1, 864)), (7, r6(266, 1, 864)), (8, q(-1, 16)), (9, q(-8, 27))],
    [(1, r6(5034, -271, 61440)), (7, r6(7859, -1626, 10240)), (8, r6(-2232, 813, 20480)),
     (9, r6(-594, 271, 960)), (10, r6(657, -813, 5120))],
    [(1, r6(5996, -3794, 405)), (6, r6(-4342, -338, 9)), (7, r6(154922, -40458, 135)),
     (8, r6(-4176, 3794, 45)), (9, r6(-340864, 242816, 405)), (10, r6(26304, -15176, 45)),
     (11, q(-26624, 81))],
    [(1, r6(3793, 2168, 103680)), (6, r6(4042, 2263, 13824)), (7, r6(-231278, 40717, 69120)),
     (8, r6(7947, -2168, 11520)), (9, r6(1048, -542, 405)), (10, r6(-1383, 542, 720)),
     (11, q(2624, 1053)), (12, q(3, 1664))],
    [(1, q(-137, 1296)), (6, r6(5642, -337, 864)), (7, r6(5642, 337, 864)), (8, q(-299, 48)),
     (9, q(184, 81)), (10, q(-44, 9)), (11, q(-5120, 1053)), (12, q(-11, 468)), (13, q(16, 9))],
]
_VERNER_CANONICAL_WEIGHTS = [(1, q(103, 1680)), (8, q(-27, 140)), (9, q(76, 105)), (10, q(-201, 280)),
                             (11, q(1024, 1365)), (12, q(3, 7280)), (13, q(12, 35)), (14, q(9, 280))]

VERNER = _tab("verner", _VERNER_PRINTED_STAGES, _VERNER_PRINTED_WEIGHTS, h_policy="fixed", order=8,
              note="printed coefficients; rounded weights sum to 0.9924")
VERNER_ADAPTIVE = _tab("verner-adaptive", _VERNER_PRINTED_STAGES, _VERNER_PRINTED_WEIGHTS, h_policy="learnable",
                       order=8, note="printed coefficients; learnable step scale")
VERNER_CANONICAL = _tab("verner-canonical", _VERNER_CANONICAL_STAGES, _VERNER_CANONICAL_WEIGHTS,
                        h_policy="fixed", order=8, note="full-precision coefficients")
VERNER_CANONICAL_ADAPTIVE = _tab("verner-canonical-adaptive", _VERNER_CANONICAL_STAGES,
                                 _VERNER_CANONICAL_WEIGHTS, h_policy="learnable", order=8)

TABLEAUS: dict[str, Tableau] = {
    t.name: t for t in (EULER, MIDPOINT, RK4, RK4_LITE, VERNER, VERNER_ADAPTIVE, VERNER_CANONICAL,
                        VERNER_CANONICAL_ADAPTIVE)
}


def get_tableau(name: str) -> Tableau:
    try:
        return TABLEAUS[name]
    except KeyError:
        raise KeyError(f"unknown scheme {name!r}; valid: {', '.join(TABLEAUS)}") from None


# -- step scale --------------------------------------------------------------

@dataclass
class StepScale:
    """Multiplier ``h`` on blended stage outputs.

    ``per_stage`` gives every stage output ``k_j`` its own ``h_j``;
    otherwise one ``h`` is shared by all rules of the block.
    """

    value: float = 1.0
    learnable: bool = False
    clamp: tuple[float, float] | None = None
    per_stage: int = 0
    params: list[Tensor] = field(default_factory=list)

    def __post_init__(self):
        if not self.params:
            n = self.per_stage if self.per_stage else 1
            self.params = [parameter(np.array(self.value), name="h") if self.learnable
                           else Tensor(np.array(self.value)) for _ in range(n)]

    @property
    def h(self) -> float:
        return float(self.params[0].data)

    def set(self, value: float) -> None:
        for p in self.params:
            p.data[...] = value

    def parameters(self) -> list[Tensor]:
        return self.params if self.learnable else []

    def project(self) -> None:
        if self.clamp is not None:
            lo, hi = self.clamp
            for p in self.params:
                np.clip(p.data, lo, hi, out=p.data)

    def is_identity(self) -> bool:
        return not self.learnable and not self.per_stage and self.h == 1.0


# -- blocks ------------------------------------------------------------------

class Block:
    def __init__(self, tableau: Tableau, stages: list[StageFunction], step: StepScale | None = None):
        if len(stages) != tableau.s:
            raise ValueError(f"{tableau.name} needs {tableau.s} stage functions, got {len(stages)}")
        self.tableau = tableau
        self.stages = list(stages)
        if step is None:
            step = StepScale(learnable=tableau.h_policy == "learnable")
        self.step = step

    def __call__(self, x: Tensor, trace: list | None = None) -> Tensor:
        return apply_tableau(self.tableau, self.stages, self.step, x, trace)

    def parameters(self) -> list[Tensor]:
        params = [p for f in self.stages for p in f.parameters()]
        return params + self.step.parameters()

    def train(self, mode: bool = True) -> None:
        for f in self.stages:
            f.train(mode)


def _blend(x: Tensor, rule, step: StepScale) -> Tensor:
    """x + h * sum(c * k) for one rule; ``rule`` holds (coef, k_tensor)."""
    if not rule:
        return x
    if step.is_identity():
        return scale_add(x, [(c, k) for c, k, _ in rule])
    if step.per_stage:
        return scale_add(x, [(mul(step.params[j - 1], c), k) for c, k, j in rule])
    h = step.params[0]
    if step.learnable:
        return scale_add(x, [(c, k) for c, k, _ in rule], scale=h)
    return scale_add(x, [(c * h.item(), k) for c, k, _ in rule])


def apply_tableau(tableau: Tableau, stages, step: StepScale, x: Tensor, trace: list | None = None) -> Tensor:
    ks: list[Tensor] = []
    for i, row in enumerate(tableau.stages):
        inp = _blend(x, [(c.value, ks[j - 1], j) for j, c in row], step)
        k = stages[i](inp)
        if k.shape != x.shape:
            raise DimensionError(f"stage {i + 1} changed shape {x.shape} -> {k.shape}")
        if not np.isfinite(k.data).all():
            raise DivergenceError(f"non-finite output at stage k{i + 1} of {tableau.name} block", stage=i + 1)
        ks.append(k)
    if trace is not None:
        trace.extend(ks)
    out = _blend(x, [(c.value, ks[i - 1], i) for i, c in tableau.weights], step)
    if not np.isfinite(out.data).all():
        raise DivergenceError(f"non-finite block output of {tableau.name} block", stage=tableau.s)
    return out


def _check(block: Block, names: tuple[str, ...], x: Tensor) -> None:
    if block.tableau.name not in names:
        raise ValueError(f"expected a {'/'.join(names)} block, got {block.tableau.name}")


def euler_block(block: Block, x: Tensor) -> Tensor:
    _check(block, ("euler",), x)
    return block(x)


def midpoint_block(block: Block, x: Tensor) -> Tensor:
    _check(block, ("midpoint",), x)
    return block(x)


def rk4_block(block: Block, x: Tensor, lite: bool = False) -> Tensor:
    _check(block, ("rk4", "rk4-lite"), x)
    tab = RK4_LITE if lite else RK4
    return apply_tableau(tab, block.stages, block.step, x)


def verner_block(block: Block, x: Tensor) -> Tensor:
    _check(block, ("verner", "verner-adaptive", "verner-canonical", "verner-canonical-adaptive"), x)
    return block(x)


def stacked_euler_chain(blocks: list[Block], x: Tensor) -> tuple[Tensor, list[Tensor]]:
    """Apply Euler blocks in sequence; also return every stage output k_i."""
    ks: list[Tensor] = []
    out = x
    for b in blocks:
        _check(b, ("euler",), out)
        out = b(out, trace=ks)
    return out, ks


# -- static accounting -------------------------------------------------------

def _consumers(tab: Tableau) -> dict[int, list[int]]:
    """Map state index (0 = input, j = k_j) to consuming rule indices.

    Rule i (1..s) forms the input of stage i; rule s+1 is the output blend.
    """
    uses: dict[int, list[int]] = {j: [] for j in range(tab.s + 1)}
    for i, row in enumerate(tab.stages, start=1):
        uses[0].append(i)
        for j, _ in row:
            uses[j].append(i)
    uses[0].append(tab.s + 1)
    for j, _ in tab.weights:
        uses[j].append(tab.s + 1)
    return uses


def retained_shortcuts(tab: Tableau, accumulate: bool = False) -> int:
    """Feature maps a block must store besides the one flowing stage to stage.

    A state is stored when some rule other than the one immediately
    following its production reads it; the input always is, since the
    output blend reads it.  With ``accumulate`` the output blend is folded
    into one running buffer as each k is produced, so the output rule stops
    pinning earlier states and the buffer itself counts once.
    """
    uses = _consumers(tab)
    out_rule = tab.s + 1
    count = 0
    for j, consumers in uses.items():
        if accumulate and j > 0:
            consumers = [r for r in consumers if r != out_rule]
        if j == 0 or any(r != j + 1 for r in consumers):
            count += 1
    if accumulate and any(j < tab.s for j, _ in tab.weights):
        count += 1
    return count


def peak_live_states(tab: Tableau) -> int:
    """Largest number of states simultaneously held while a stage runs."""
    uses = _consumers(tab)
    last = {j: max(c) if c else j for j, c in uses.items()}
    peak = 0
    for i in range(1, tab.s + 1):
        live = sum(1 for j in range(i) if last[j] > i)
        peak = max(peak, live)
    return peak


def op_counts(tab: Tableau) -> dict[str, int]:
    """Scalar-multiply and add passes over a feature map, per block."""
    mults = adds = 0
    rules = list(tab.stages) + [tab.weights]
    for rule in rules:
        if not rule:
            continue
        adds += len(rule)
        mults += sum(1 for _, c in rule if c.value != 1.0)
        if tab.h_policy != "none":
            mults += 1
    euler_adds = tab.s
    return {"multiplies": mults, "adds": adds, "extra_multiplies": mults, "extra_adds": adds - euler_adds}
