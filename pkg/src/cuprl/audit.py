"""Randomized audits of the performance-difference bounds and CUP certificates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .bounds import (
    AUDIT_ATOL,
    BoundReport,
    divergences,
    prop1_lower,
    prop2_upper,
    prop3_substitute,
    theorem1_bounds,
    visitation_gap,
)
from .cmdp import CmdpModel, SoftmaxPolicy, state_values
from .envs import random_cmdp
from .lambda_returns import lambda_visitation
from .optimizer import CupConfig, run_cup


@dataclass
class VariantTally:
    draws: int = 0
    violations: int = 0
    worst_margin: float = math.inf

    def add(self, margin: float, atol: float = AUDIT_ATOL) -> None:
        self.draws += 1
        if margin + atol < 0:
            self.violations += 1
        self.worst_margin = min(self.worst_margin, margin)


@dataclass
class AuditReport:
    draws: int = 0
    by_variant: dict = field(default_factory=dict)
    reports: list = field(default_factory=list)

    def tally(self, variant: str) -> VariantTally:
        return self.by_variant.setdefault(variant, VariantTally())

    @property
    def violations(self) -> int:
        return sum(t.violations for t in self.by_variant.values())

    @property
    def worst_margin(self) -> float:
        return min((t.worst_margin for t in self.by_variant.values()), default=math.inf)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def summary(self) -> dict:
        def f(x):
            return x if math.isfinite(x) else None
        return {
            "draws": self.draws,
            "violations": self.violations,
            "worst_margin": f(self.worst_margin),
            "by_variant": {
                k: {"draws": t.draws, "violations": t.violations, "worst_margin": f(t.worst_margin)}
                for k, t in sorted(self.by_variant.items())
            },
        }


@dataclass(frozen=True, eq=False)
class Draw:
    model: CmdpModel
    pi_new: SoftmaxPolicy
    pi_old: SoftmaxPolicy
    phi: np.ndarray
    lam: float
    index: int


def draw_instance(seed: int, index: int, sizes: Sequence[tuple[int, int]], lambdas: Sequence[float],
                  gamma: float = 0.9) -> Draw:
    """One reproducible (model, pi_new, pi_old, phi, lam) draw.

    Every fourth draw uses near-deterministic policies (large logits); the step
    between the two policies ranges from tiny to large.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
    S, A = sizes[index % len(sizes)]
    lam = float(lambdas[(index // len(sizes)) % len(lambdas)])
    model = random_cmdp(int(rng.integers(2**31)), S, A, gamma=gamma)
    scale = 6.0 if index % 4 == 3 else 1.0
    theta_old = scale * rng.standard_normal((S, A))
    step = float(rng.choice([0.01, 0.1, 0.5, 2.0]))
    theta_new = theta_old + step * rng.standard_normal((S, A))
    pi_old, pi_new = SoftmaxPolicy(theta_old), SoftmaxPolicy(theta_new)
    if index % 2:
        phi = state_values(model, pi_old)
    else:
        phi = rng.standard_normal(S)
    return Draw(model, pi_new, pi_old, phi, lam, index)


def _tv_kl_pair(tv: BoundReport, kl: BoundReport) -> float:
    """Signed slack of the Pinsker ordering between a TV and a KL bound."""
    if tv.variant == "prop1_tv":
        return tv.lower - kl.lower
    return kl.upper - tv.upper


def audit_draw(d: Draw, report: AuditReport, p_norms: Iterable[int] = (1, 2), keep: bool = False) -> None:
    out = []
    for p in p_norms:
        r = theorem1_bounds(d.model, d.pi_new, d.pi_old, d.phi, d.lam, p_norm=p)
        report.tally(f"theorem1_p{p}").add(r.margin())
        out.append(r)
    divs = divergences(d.pi_new, d.pi_old, lambda_visitation(d.model, d.pi_old, d.lam))
    for tv in (prop1_lower(d.model, d.pi_new, d.pi_old, d.lam), prop2_upper(d.model, d.pi_new, d.pi_old, d.lam)):
        kl = prop3_substitute(tv, divs)
        report.tally(tv.variant).add(tv.margin())
        report.tally(kl.variant).add(kl.margin())
        report.tally(f"pinsker_{tv.variant[:5]}").add(_tv_kl_pair(tv, kl))
        out += [tv, kl]
    lhs, rhs = visitation_gap(d.model, d.pi_new, d.pi_old, d.lam)
    report.tally("visitation_gap").add(rhs - lhs)
    report.draws += 1
    if keep:
        report.reports.extend(out)


def audit_bounds(seed: int = 42, draws: int = 500, sizes: Sequence[tuple[int, int]] = ((3, 2), (5, 3), (8, 3)),
                 lambdas: Sequence[float] = (0.0, 0.5, 0.95), p_norms: Iterable[int] = (1, 2),
                 keep_reports: bool = False) -> AuditReport:
    report = AuditReport()
    for i in range(draws):
        audit_draw(draw_instance(seed, i, sizes, lambdas), report, tuple(p_norms), keep_reports)
    return report


def audit_visitation_gap(seed: int, draws: int, sizes=((3, 2), (5, 3), (8, 3)),
                         lambdas=(0.0, 0.5, 0.95, 1.0)) -> AuditReport:
    report = AuditReport()
    for i in range(draws):
        d = draw_instance(seed, i, sizes, lambdas)
        lhs, rhs = visitation_gap(d.model, d.pi_new, d.pi_old, d.lam)
        report.tally("visitation_gap").add(rhs - lhs)
        report.draws += 1
    return report


@dataclass
class Theorem2Audit:
    iterates: int = 0
    violations: int = 0
    premise_iterates: int = 0  # pi_{k+1} satisfies the projection's surrogate constraint
    premise_violations: int = 0
    worst_floor_gap: float = math.inf  # min over iterates of (degradation - floor)
    worst_ceiling_gap: float = math.inf  # min over iterates of (ceiling - J^c)
    premise_worst_floor_gap: float = math.inf
    premise_worst_ceiling_gap: float = math.inf

    def summary(self) -> dict:
        return {k: (v if not isinstance(v, float) or math.isfinite(v) else None) for k, v in vars(self).items()}


def theorem2_audit(runs: Iterable[tuple[CmdpModel, CupConfig, int, int]],
                   theta0: Optional[np.ndarray] = None) -> Theorem2Audit:
    """Certify every iterate of exact-mode CUP runs given as (model, config, iters, seed)."""
    out = Theorem2Audit()
    for model, config, iters, seed in runs:
        _, reps = run_cup(model, config, iters, seed, certify=True, theta0=theta0)
        for rep in reps[1:]:
            c = rep.certificate
            fg, cg = c.degradation - c.floor, c.ceiling - c.j_cost_next
            out.iterates += 1
            out.violations += not c.holds
            out.worst_floor_gap = min(out.worst_floor_gap, fg)
            out.worst_ceiling_gap = min(out.worst_ceiling_gap, cg)
            if c.surrogate_feasible:
                out.premise_iterates += 1
                out.premise_violations += not c.holds
                out.premise_worst_floor_gap = min(out.premise_worst_floor_gap, fg)
                out.premise_worst_ceiling_gap = min(out.premise_worst_ceiling_gap, cg)
    return out
