"""Classical parametric intensity models with exact log-likelihoods.

Two variants keep every term in closed form: a homogeneous Poisson process
(constant per-type rates) and a multivariate Hawkes process with a shared
exponential decay kernel

    lambda_e(t) = mu_e + sum_{t_j < t} alpha[e, e_j] * exp(-beta (t - t_j)).

The log-likelihood decomposes exactly into per-event time terms, per-event
type terms, and the survival term for the empty tail (t_N, T]. Gradients
are analytic; fitting runs plain gradient ascent with backtracking line
search on softplus-reparameterized parameters, so the ascent property is
assertable.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.integrate import quad

from .errors import (
    DivergedOptimizationError,
    QuadratureFailureError,
    UnstableModelError,
)
from .events import Event, EventSequence, validate_sequence

QUAD_ABS_TOL = 1e-10
QUAD_SPAN = 50.0  # integrate the predictive density out to 50 decay times


@dataclass(frozen=True)
class IntensityModel:
    """Parametric conditional intensity; kind is "poisson" or "exp_hawkes"."""

    kind: str
    mu: np.ndarray
    alpha: np.ndarray | None = None
    beta: float | None = None

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        object.__setattr__(self, "mu", mu)
        if self.kind == "poisson":
            if np.any(mu <= 0):
                raise ValueError("poisson rates must be strictly positive")
        elif self.kind == "exp_hawkes":
            alpha = np.asarray(self.alpha, dtype=np.float64)
            object.__setattr__(self, "alpha", alpha)
            if np.any(mu < 0):
                raise ValueError("hawkes base rates must be nonnegative")
            if mu.sum() <= 0:
                # degenerate but simulable (no event can ever occur)
                warnings.warn("hawkes model has zero total background rate",
                              stacklevel=2)
            if alpha.shape != (len(mu), len(mu)):
                raise ValueError(f"alpha must be ({len(mu)}, {len(mu)})")
            if np.any(alpha < 0):
                raise ValueError("alpha must be nonnegative")
            if self.beta is None or self.beta <= 0:
                raise ValueError("beta must be positive")
            rho = branching_spectral_radius(self)
            if rho >= 1:
                warnings.warn(
                    f"unstable hawkes model: spectral radius {rho:.3f} >= 1",
                    stacklevel=2,
                )
        else:
            raise ValueError(f"unknown model kind {self.kind!r}")

    @property
    def type_count(self) -> int:
        return len(self.mu)

    @classmethod
    def poisson(cls, rates) -> "IntensityModel":
        return cls(kind="poisson", mu=np.asarray(rates, dtype=np.float64))

    @classmethod
    def exp_hawkes(cls, mu, alpha, beta: float) -> "IntensityModel":
        return cls(
            kind="exp_hawkes",
            mu=np.asarray(mu, dtype=np.float64),
            alpha=np.asarray(alpha, dtype=np.float64),
            beta=float(beta),
        )


def branching_spectral_radius(model: IntensityModel) -> float:
    """Spectral radius of the expected-offspring matrix alpha / beta."""
    if model.kind == "poisson":
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(model.alpha / model.beta))))


@dataclass(frozen=True)
class LogLikReport:
    """Exact decomposition: total = sum(time) + sum(type) + survival."""

    total: float
    time_terms: np.ndarray
    type_terms: np.ndarray
    survival_term: float


def _hawkes_pass(model: IntensityModel, times: np.ndarray, types: np.ndarray):
    """Per-event intensities and decayed-history states via O(N E) recursion.

    Returns lam_vec (N, E) at each event time, the per-source decayed counts
    A (N, E), their beta-derivatives -B (N, E), and the post-event state
    A_plus after the last event.
    """
    beta = model.beta
    E = model.type_count
    n = len(times)
    A = np.zeros((n, E))
    B = np.zeros((n, E))
    if E == 1:
        # scalar recursion; the generic path is numpy-overhead bound
        a = b = 0.0
        prev_t = 0.0
        for i in range(n):
            dt = times[i] - prev_t
            decay = math.exp(-beta * dt)
            ai = decay * a
            b = decay * (dt * a + b)
            A[i, 0] = ai
            B[i, 0] = b
            a = ai + 1.0
            prev_t = times[i]
        a_plus = np.array([a])
    else:
        a_plus = np.zeros(E)
        b_state = np.zeros(E)
        prev_t = 0.0
        for i in range(n):
            dt = times[i] - prev_t
            decay = np.exp(-beta * dt)
            A[i] = decay * a_plus
            B[i] = decay * (dt * a_plus + b_state)
            a_plus = A[i].copy()
            a_plus[types[i]] += 1.0
            b_state = B[i]
            prev_t = times[i]
    lam = model.mu[None, :] + A @ model.alpha.T
    return lam, A, B, a_plus


def loglik(model: IntensityModel, seq: EventSequence) -> LogLikReport:
    """Closed-form Eq.-style log-likelihood report for one sequence."""
    validate_sequence(seq)
    if seq.type_count != model.type_count:
        raise ValueError("sequence and model disagree on the type count")
    if model.kind == "exp_hawkes" and branching_spectral_radius(model) >= 1:
        warnings.warn("evaluating an unstable hawkes model", stacklevel=2)
    times, types = seq.times, seq.types
    T = seq.horizon
    n = len(times)
    if model.kind == "poisson":
        lam = np.broadcast_to(model.mu, (n, model.type_count))
        lam_tot = float(model.mu.sum())
        with np.errstate(divide="ignore"):
            time_terms = np.log(np.full(n, lam_tot)) - lam_tot * np.diff(
                times, prepend=0.0
            )
            type_terms = np.log(lam[np.arange(n), types]) - np.log(
                np.full(n, lam_tot)
            )
        survival = -lam_tot * (T - (times[-1] if n else 0.0))
    else:
        lam, A, _, a_plus = _hawkes_pass(model, times, types)
        beta = model.beta
        src_weight = model.alpha.sum(axis=0)
        lam_tot = lam.sum(axis=1)
        taus = np.diff(times, prepend=0.0)
        # integral of the total intensity over each inter-event gap
        mu_tot = model.mu.sum()
        integrals = np.empty(n)
        carried = np.zeros(model.type_count)
        for i in range(n):
            integrals[i] = mu_tot * taus[i] + (src_weight @ carried) * (
                1.0 - np.exp(-beta * taus[i])
            ) / beta
            carried = A[i].copy()
            carried[types[i]] += 1.0
        with np.errstate(divide="ignore"):
            time_terms = np.log(lam_tot) - integrals
            type_terms = np.log(lam[np.arange(n), types]) - np.log(lam_tot)
        gap = T - (times[-1] if n else 0.0)
        survival = -(
            mu_tot * gap
            + (src_weight @ a_plus) * (1.0 - np.exp(-beta * gap)) / beta
        )
        if n == 0:
            survival = -mu_tot * T
    total = float(time_terms.sum() + type_terms.sum() + survival)
    return LogLikReport(
        total=total,
        time_terms=time_terms,
        type_terms=type_terms,
        survival_term=float(survival),
    )


def _seq_arrays(seq) -> tuple[np.ndarray, np.ndarray, float]:
    if isinstance(seq, EventSequence):
        return seq.times, seq.types, seq.horizon
    return seq


def loglik_and_grad(
    model: IntensityModel, seqs: Sequence
) -> tuple[float, dict[str, np.ndarray | float]]:
    """Total log-likelihood over sequences and its analytic gradient.

    Accepts EventSequence objects or pre-extracted (times, types, horizon)
    triples, which fitting uses to avoid rebuilding arrays every step.
    """
    E = model.type_count
    data = [_seq_arrays(s) for s in seqs]
    total = 0.0
    g_mu = np.zeros(E)
    if model.kind == "poisson":
        counts = np.zeros(E)
        total_T = 0.0
        for _, types, T in data:
            counts += np.bincount(types, minlength=E)
            total_T += T
        with np.errstate(divide="ignore"):
            total = float((counts * np.log(model.mu)).sum() - model.mu.sum() * total_T)
        g_mu = counts / model.mu - total_T
        return total, {"mu": g_mu}
    g_alpha = np.zeros((E, E))
    g_beta = 0.0
    beta = model.beta
    src_weight = model.alpha.sum(axis=0)
    for times, types, T in data:
        n = len(times)
        if n == 0:
            total += -model.mu.sum() * T
            g_mu += -T
            continue
        lam, A, B, _ = _hawkes_pass(model, times, types)
        lam_at = lam[np.arange(n), types]
        inv = 1.0 / lam_at
        u = T - times
        eb = np.exp(-beta * u)
        h = (1.0 - eb) / beta
        comp_alpha = np.bincount(types, weights=h, minlength=E)
        total += float(np.log(lam_at).sum()) - float(
            model.mu.sum() * T + (model.alpha @ comp_alpha).sum()
        )
        np.add.at(g_mu, types, inv)
        g_mu += -T
        contrib = A * inv[:, None]
        for e in range(E):
            rows = types == e
            if rows.any():
                g_alpha[e] += contrib[rows].sum(axis=0)
        g_alpha -= comp_alpha[None, :]
        g_beta += float(-((model.alpha[types] * B).sum(axis=1) * inv).sum())
        g_beta -= float((src_weight[types] * (u * eb / beta - h / beta)).sum())
    return total, {"mu": g_mu, "alpha": g_alpha, "beta": g_beta}


def _softplus(u: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, u)


def _softplus_inv(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x + np.log1p(-np.exp(-np.maximum(x, 1e-300)))


def _sigmoid(u: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * u))


@dataclass(frozen=True)
class FitResult:
    model: IntensityModel
    trace: list[float]
    converged: bool
    n_iter: int


def _pack(model: IntensityModel) -> np.ndarray:
    if model.kind == "poisson":
        return _softplus_inv(model.mu)
    return np.concatenate(
        [
            _softplus_inv(model.mu),
            _softplus_inv(model.alpha.ravel()),
            _softplus_inv(np.array([model.beta])),
        ]
    )


def _unpack(u: np.ndarray, kind: str, E: int) -> IntensityModel:
    if kind == "poisson":
        return IntensityModel.poisson(_softplus(u))
    mu = _softplus(u[:E])
    alpha = _softplus(u[E : E + E * E]).reshape(E, E)
    beta = float(_softplus(u[-1]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return IntensityModel.exp_hawkes(mu, alpha, beta)


def _default_init(seqs: Sequence[EventSequence], kind: str) -> IntensityModel:
    E = seqs[0].type_count
    counts = np.zeros(E)
    total_T = 0.0
    for seq in seqs:
        counts += np.bincount(seq.types, minlength=E)
        total_T += seq.horizon
    rates = np.maximum(counts / max(total_T, 1e-12), 1e-3)
    if kind == "poisson":
        return IntensityModel.poisson(rates)
    return IntensityModel.exp_hawkes(
        mu=0.5 * rates, alpha=np.full((E, E), 0.1 / E), beta=1.0
    )


def fit_mle(
    seqs: Sequence[EventSequence],
    kind: str = "exp_hawkes",
    init: IntensityModel | None = None,
    max_iter: int = 500,
    tol: float = 1e-6,
) -> FitResult:
    """Maximize the total log-likelihood by gradient ascent.

    Positivity is enforced by softplus reparameterization; each step uses
    backtracking (Armijo) so the trace is non-decreasing.
    """
    if not seqs or all(len(s) == 0 for s in seqs):
        raise ValueError("need at least one nonempty sequence")
    for seq in seqs:
        validate_sequence(seq)
    model = init if init is not None else _default_init(seqs, kind)
    E = model.type_count
    data = [_seq_arrays(s) for s in seqs]
    n_events = sum(len(t) for t, _, _ in data)

    def evaluate(u: np.ndarray) -> tuple[float, np.ndarray]:
        m = _unpack(u, kind, E)
        f, grads = loglik_and_grad(m, data)
        if kind == "poisson":
            g_nat = grads["mu"]
        else:
            g_nat = np.concatenate(
                [grads["mu"], grads["alpha"].ravel(), [grads["beta"]]]
            )
        return f, g_nat * _sigmoid(u)

    u = _pack(model)
    f, g = evaluate(u)
    if not np.isfinite(f):
        raise DivergedOptimizationError("log-likelihood non-finite at init")
    trace = [f]
    step = 1.0
    converged = False
    it = 0
    # gradient scale grows with the data; stop on the per-event gradient norm
    gtol = tol * max(n_events, 1)
    for it in range(1, max_iter + 1):
        gnorm = float(np.max(np.abs(g)))
        if gnorm < gtol:
            converged = True
            break
        s = step
        accepted = False
        for _ in range(60):
            u_try = u + s * g
            f_try, g_try = evaluate(u_try)
            if np.isfinite(f_try) and f_try >= f + 1e-4 * s * float(g @ g):
                u, f, g = u_try, f_try, g_try
                step = min(s * 2.0, 1e6)
                accepted = True
                break
            s *= 0.5
        trace.append(f)
        if not accepted:
            break
    fitted = _unpack(u, kind, E)
    if kind == "exp_hawkes" and branching_spectral_radius(fitted) >= 1:
        raise UnstableModelError(
            "fitted hawkes model is unstable (spectral radius >= 1)"
        )
    return FitResult(model=fitted, trace=trace, converged=converged, n_iter=it)


def simulate(model: IntensityModel, horizon: float, seed: int) -> EventSequence:
    """Draw one sequence on (0, horizon] (thinning for hawkes)."""
    rng = np.random.default_rng(seed)
    E = model.type_count
    if model.kind == "poisson":
        times: list[float] = []
        types: list[int] = []
        for e in range(E):
            n = rng.poisson(model.mu[e] * horizon)
            times.extend(rng.uniform(0.0, horizon, size=n))
            types.extend([e] * n)
        order = np.argsort(times, kind="stable")
        times_arr = np.asarray(times)[order]
        types_arr = np.asarray(types, dtype=int)[order]
    else:
        beta = model.beta
        src_weight = model.alpha.sum(axis=0)
        mu_tot = float(model.mu.sum())
        a_state = np.zeros(E)
        t = 0.0
        out_t: list[float] = []
        out_e: list[int] = []
        while True:
            bound = mu_tot + float(src_weight @ a_state)
            if bound <= 0:
                break
            t_new = t + rng.exponential() / bound
            if t_new > horizon:
                break
            a_state = a_state * np.exp(-beta * (t_new - t))
            t = t_new
            lam_vec = model.mu + model.alpha @ a_state
            lam_tot = float(lam_vec.sum())
            if rng.uniform(0.0, bound) <= lam_tot:
                k = int(np.searchsorted(np.cumsum(lam_vec), rng.uniform(0.0, lam_tot)))
                k = min(k, E - 1)
                out_t.append(t)
                out_e.append(k)
                a_state[k] += 1.0
        times_arr = np.asarray(out_t)
        types_arr = np.asarray(out_e, dtype=int)
    keep = np.ones(len(times_arr), dtype=bool)
    keep[1:] = np.diff(times_arr) > 0
    keep &= times_arr > 0
    events = tuple(
        Event(time=float(t), type_id=int(e))
        for t, e in zip(times_arr[keep], types_arr[keep])
    )
    return EventSequence(
        events=events, horizon=horizon, type_count=E, time_unit="s"
    )


def _post_history_state(
    model: IntensityModel, history: EventSequence
) -> tuple[float, np.ndarray]:
    """Last event time and decayed per-source counts right after it."""
    if model.kind == "poisson" or len(history) == 0:
        return (history.times[-1] if len(history) else 0.0), np.zeros(
            model.type_count
        )
    times, types = history.times, history.types
    _, _, _, a_plus = _hawkes_pass(model, times, types)
    return float(times[-1]), a_plus


def next_event_survival(
    model: IntensityModel, history: EventSequence, u: float | np.ndarray
):
    """P(no event within u after the last history event)."""
    _, a_plus = _post_history_state(model, history)
    mu_tot = float(model.mu.sum())
    if model.kind == "poisson":
        return np.exp(-mu_tot * np.asarray(u, dtype=np.float64))
    beta = model.beta
    d = float(model.alpha.sum(axis=0) @ a_plus)
    u = np.asarray(u, dtype=np.float64)
    return np.exp(-(mu_tot * u + d * (1.0 - np.exp(-beta * u)) / beta))


def next_event_density(
    model: IntensityModel, history: EventSequence, u: float | np.ndarray
):
    """Predictive density of the next inter-event wait."""
    _, a_plus = _post_history_state(model, history)
    mu_tot = float(model.mu.sum())
    u = np.asarray(u, dtype=np.float64)
    if model.kind == "poisson":
        lam = mu_tot
        return lam * np.exp(-lam * u)
    beta = model.beta
    d = float(model.alpha.sum(axis=0) @ a_plus)
    lam = mu_tot + d * np.exp(-beta * u)
    return lam * np.exp(-(mu_tot * u + d * (1.0 - np.exp(-beta * u)) / beta))


def next_event_predict(
    model: IntensityModel,
    history: EventSequence,
    horizon: float | None = None,
) -> tuple[float, int]:
    """Expected wait to the next event and the most likely type at that time.

    The expectation integrates the survival function by adaptive quadrature
    over (0, 50/beta] with an analytic exponential tail estimate beyond.
    """
    mu_tot = float(model.mu.sum())
    if mu_tot <= 0:
        raise QuadratureFailureError("zero background rate: expectation diverges")
    scale = model.beta if model.kind == "exp_hawkes" else mu_tot
    upper = QUAD_SPAN / scale
    if horizon is not None:
        upper = min(upper, horizon)
    upper = max(upper, QUAD_SPAN / mu_tot)
    value, abserr = quad(
        lambda v: float(next_event_survival(model, history, v)),
        0.0,
        upper,
        epsabs=QUAD_ABS_TOL,
        limit=400,
    )
    if abserr > 1e-6:
        raise QuadratureFailureError(f"quadrature error {abserr:.2e} too large")
    tail = float(next_event_survival(model, history, upper)) / mu_tot
    tau_hat = value + tail
    _, a_plus = _post_history_state(model, history)
    if model.kind == "poisson":
        lam_vec = model.mu
    else:
        lam_vec = model.mu + model.alpha @ (a_plus * np.exp(-model.beta * tau_hat))
    return float(tau_hat), int(np.argmax(lam_vec))


def save_model(model: IntensityModel, path: str | Path) -> None:
    obj = {"kind": model.kind, "mu": model.mu.tolist()}
    if model.kind == "exp_hawkes":
        obj["alpha"] = model.alpha.tolist()
        obj["beta"] = model.beta
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path: str | Path) -> IntensityModel:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj["kind"] == "poisson":
        return IntensityModel.poisson(obj["mu"])
    return IntensityModel.exp_hawkes(obj["mu"], obj["alpha"], obj["beta"])
