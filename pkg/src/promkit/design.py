"""Venc selection for three-point encoding with a reliability guarantee."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from . import kernels
from ._rng import derive_seed
from .congruence import EncodingScheme, VencSet, symmetric_moments_from_vencs
from .covariance import SnrMatrix
from .errors import InfeasibleDesignError, ValidationError
from .estimator import PromModel

__all__ = [
    "DesignSpec",
    "CandidateReport",
    "DesignResult",
    "base_venc",
    "admissible_ratios",
    "design_three_point",
    "TRIALS_CAP",
]

TRIALS_CAP = 2_000_000_000  # larger screening budgets need trials_override
_SCREEN_CHUNK0 = 250_000
_SCREEN_GROWTH = 4


@dataclass(frozen=True)
class DesignSpec:
    """Search space and guarantees for the three-point venc design.

    The SNR matrix is the operating lower bound per measurement; eps bounds
    the unwrapping-error and aliasing-error probabilities; omega_eps is the
    velocity span that must stay reliable; gamma_m_tau caps the largest
    first-moment product (rad s/cm).
    """

    p_max: int
    q_max: int
    snr: SnrMatrix
    eps: tuple[float, float]
    omega_eps: float
    gamma_m_tau: float
    trials_override: int | None = None

    def __post_init__(self):
        if self.p_max < 3 or self.q_max < 2:
            raise ValidationError("search space needs p_max >= 3, q_max >= 2")
        e1, e2 = self.eps
        if not (0.0 < e1 < 1.0 and 0.0 < e2 < 1.0):
            raise ValidationError("error budgets must lie in (0, 1)")
        if not self.omega_eps > 0.0:
            raise ValidationError("omega_eps must be positive")
        if not self.gamma_m_tau > 0.0:
            raise ValidationError("gamma_m_tau must be positive")
        if self.trials_override is not None and self.trials_override < 1:
            raise ValidationError("trials_override must be positive")


@dataclass(frozen=True)
class CandidateReport:
    """Outcome of one (p, q) candidate during the search."""

    p: int
    q: int
    status: str  # selected | passed | rejected_screen | infeasible | pruned
    trials_run: int
    error_count: int
    sigma_base: float
    c: float
    objective: float
    note: str = ""


@dataclass(frozen=True)
class DesignResult:
    p: int
    q: int
    c: float
    venc: VencSet
    moments: EncodingScheme
    predicted_rmse: float
    unwrap_error_prob: float
    trials: int
    seed: int
    candidates: tuple[CandidateReport, ...] = field(repr=False)


def base_venc(p: int, q: int) -> np.ndarray:
    """Canonical integer venc [pq, q(p-q), p(p-q)] for a coprime ratio p/q."""
    if p <= q or p >= 2 * q or math.gcd(p, q) != 1:
        raise ValidationError("need coprime integers with 1 < p/q < 2")
    return np.array([p * q, q * (p - q), p * (p - q)], dtype=np.int64)


def admissible_ratios(p_max: int, q_max: int) -> list[tuple[int, int]]:
    return [(p, q)
            for p in range(3, p_max + 1)
            for q in range(max(2, (p + 2) // 2), min(q_max, p - 1) + 1)
            if math.gcd(p, q) == 1]


def _screen(seed: int, trials: int, eps1: float, model: PromModel,
            args: dict) -> tuple[int, int]:
    """Count unwrapping errors at v = 0, aborting once the budget is blown.

    Counter-based trial seeding keeps the count identical to a single
    uninterrupted run, so the early abort only saves work.
    """
    limit = eps1 * trials
    count = 0
    done = 0
    chunk = min(_SCREEN_CHUNK0, trials)
    while done < trials:
        n = min(chunk, trials - done)
        count += kernels.mc_unwrap_error_count(seed, done, n, 0.0, **args)
        done += n
        if count >= limit:
            break
        chunk = min(chunk * _SCREEN_GROWTH, trials - done)
    return count, done


def design_three_point(spec: DesignSpec, seed: int = 0) -> DesignResult:
    """Pick the scaled coprime venc triple minimizing the predicted RMSE.

    For every admissible ratio the base system is screened by Monte Carlo at
    zero velocity with the model covariance; survivors are scaled so the
    reliable span plus a two-sided Gaussian aliasing margin fits inside the
    unambiguous range, then further so the largest first moment respects its
    cap.  Candidates whose scaled RMSE cannot beat the current best are
    pruned without simulation, which cannot change the outcome.  Ties keep
    the later candidate in (p, q) enumeration order.
    """
    eps1, eps2 = spec.eps
    trials = math.ceil(100.0 / eps1)
    if spec.trials_override is not None:
        trials = spec.trials_override
    elif trials > TRIALS_CAP:
        raise ValidationError(
            f"screening needs {trials} trials, above the cap {TRIALS_CAP}; "
            "pass trials_override to proceed")
    z_margin = float(ndtri(1.0 - eps2))

    prepared = []
    reports: dict[tuple[int, int], CandidateReport] = {}
    for order, (p, q) in enumerate(admissible_ratios(spec.p_max, spec.q_max)):
        ints = base_venc(p, q)
        scheme = symmetric_moments_from_vencs(float(ints[1]), float(ints[2]))
        model = PromModel(scheme, spec.snr)
        sigma = math.sqrt(model.predicted_variance)
        omega = float(model.omega)
        gap = omega - 2.0 * z_margin * sigma
        cap = math.pi / (2.0 * spec.gamma_m_tau * q * (p - q))
        if gap <= 0.0:
            reports[(p, q)] = CandidateReport(
                p, q, "infeasible", 0, 0, sigma, math.nan, math.nan,
                "aliasing margin exceeds the unambiguous range")
            continue
        c = max(spec.omega_eps / gap, cap)
        prepared.append((c * sigma, order, p, q, c, sigma, model))

    best = None
    for objective, order, p, q, c, sigma, model in sorted(
            prepared, key=lambda item: (item[0], item[1])):
        if best is not None and objective > best[0]:
            reports[(p, q)] = CandidateReport(
                p, q, "pruned", 0, 0, sigma, c, objective,
                "objective above the screened minimum")
            continue
        cand_seed = derive_seed(seed, p, q)
        count, run = _screen(cand_seed, trials, eps1, model,
                             kernels.model_args(model))
        if count >= eps1 * trials:
            reports[(p, q)] = CandidateReport(
                p, q, "rejected_screen", run, count, sigma, c, objective,
                "unwrapping-error budget exceeded")
            continue
        reports[(p, q)] = CandidateReport(
            p, q, "passed", run, count, sigma, c, objective)
        # processing is sorted by objective, so a later passer either ties
        # (equal objective resolves to the later enumeration entry) or loses
        if best is None or (objective == best[0] and order > best[1]):
            best = (objective, order, p, q, c, sigma, count, run)

    if best is None:
        raise InfeasibleDesignError(
            "no (p, q) ratio satisfies the error budgets",
            diagnostics=[reports[key] for key in sorted(reports)])

    _, _, p, q, c, sigma, count, run = best
    reports[(p, q)] = CandidateReport(
        p, q, "selected", run, count, sigma, c, c * sigma)
    ints = base_venc(p, q)
    vencs = VencSet(c * ints.astype(np.float64))
    moments = symmetric_moments_from_vencs(float(c * ints[1]),
                                           float(c * ints[2]))
    assert moments.gamma_m1[-1] <= spec.gamma_m_tau + 1e-12
    ordered = [reports[key] for key in sorted(reports)]
    return DesignResult(
        p=p, q=q, c=c, venc=vencs, moments=moments,
        predicted_rmse=c * sigma, unwrap_error_prob=count / run,
        trials=trials, seed=seed, candidates=tuple(ordered))
