"""Synchronous rounds of consensus fusion followed by projected gradient descent.

Each round k first fuses neighbor states through the round's doubly
stochastic matrix, then every agent takes a step along its own component
gradient at its own fused point and projects back onto the feasible set.
The run is deterministic given its configuration and produces a trace of per
iteration records plus a terminal summary of the fusion invariants
(average preservation and sum non-expansiveness) tracked at every round.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .problem import ConfigError, Problem, POLYNOMIAL, SINE_QUADRATIC
from .network import WeightMatrix, WeightSchedule

_STREAM_INIT = 11
_STREAM_YSET = 12


class EngineError(RuntimeError):
    """A run aborted; carries the offending agent and iteration."""

    def __init__(self, message: str, agent: int | None = None, iteration: int | None = None):
        super().__init__(message)
        self.agent = agent
        self.iteration = iteration


# ---------------------------------------------------------------------------
# step-size schedule


@dataclass(frozen=True)
class StepSchedule:
    """Diminishing steps a/(k+b)^p: positive, non-increasing, with divergent
    sum and convergent sum of squares (guaranteed by p in (1/2, 1])."""

    a: float
    b: float = 1.0
    p: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.a) and self.a > 0):
            raise ConfigError("step schedule needs a > 0")
        if not (np.isfinite(self.b) and self.b >= 1):
            raise ConfigError("step schedule needs b >= 1")
        if not (0.5 < self.p <= 1.0):
            raise ConfigError("step schedule needs p in (1/2, 1]")

    def at(self, k):
        """Step size at iteration k; accepts scalars or integer arrays."""
        return self.a / (np.asarray(k, dtype=float) + self.b) ** self.p


def step_size(s: StepSchedule, k: int) -> float:
    if k < 0:
        raise ConfigError("iteration index must be >= 0")
    return float(s.at(k))


# ---------------------------------------------------------------------------
# stacked per-agent evaluation (row j uses component j)


class _StackedComponents:
    """Vectorized per-agent values/gradients for one problem.

    Groups components by family so a round costs a handful of numpy calls:
    quadratic and sine-perturbed components share one einsum path (pure
    quadratics get zero amplitudes), separable polynomials share a Horner
    sweep over degree-padded coefficient tensors.
    """

    def __init__(self, prob: Problem):
        dim = prob.dimension
        qi, pi = [], []
        for j, c in enumerate(prob.components):
            (pi if c.family == POLYNOMIAL else qi).append(j)
        self.q_idx = np.array(qi, dtype=int)
        self.p_idx = np.array(pi, dtype=int)
        self.n = len(prob.components)
        self.dim = dim
        if qi:
            comps = [prob.components[j] for j in qi]
            self.qa = np.stack([c.params["a"] for c in comps])
            self.qb = np.stack([c.params["b"] for c in comps])
            self.qc = np.array([c.params["c"] for c in comps])
            self.amp = np.stack([
                c.params["amplitude"] if c.family == SINE_QUADRATIC else np.zeros(dim)
                for c in comps
            ])
            self.freq = np.stack([
                c.params["frequency"] if c.family == SINE_QUADRATIC else np.ones(dim)
                for c in comps
            ])
        if pi:
            comps = [prob.components[j] for j in pi]
            kmax = max(max(cf.size for cf in c.params["coeffs"]) for c in comps)
            self.pc = np.zeros((len(comps), dim, kmax))
            for m, c in enumerate(comps):
                for d, cf in enumerate(c.params["coeffs"]):
                    self.pc[m, d, : cf.size] = cf
            # derivative coefficients, padded one shorter
            k = np.arange(1, kmax)
            self.dpc = self.pc[:, :, 1:] * k if kmax > 1 else np.zeros((len(comps), dim, 1))

    def _horner(self, coefs: np.ndarray, x: np.ndarray) -> np.ndarray:
        acc = np.broadcast_to(coefs[:, :, -1], x.shape).copy()
        for t in range(coefs.shape[2] - 2, -1, -1):
            acc = acc * x + coefs[:, :, t]
        return acc

    def grads(self, states: np.ndarray) -> np.ndarray:
        """Row j of the output is grad f_j at states[j]."""
        out = np.empty_like(states)
        if self.q_idx.size:
            x = states[self.q_idx]
            g = np.einsum("mij,mj->mi", self.qa, x) + self.qb
            g += self.amp * self.freq * np.cos(self.freq * x)
            out[self.q_idx] = g
        if self.p_idx.size:
            x = states[self.p_idx]
            out[self.p_idx] = self._horner(self.dpc, x)
        return out

    def values(self, states: np.ndarray) -> np.ndarray:
        """Entry j of the output is f_j at states[j]."""
        out = np.empty(states.shape[0])
        if self.q_idx.size:
            x = states[self.q_idx]
            v = 0.5 * np.einsum("md,md->m", x, np.einsum("mij,mj->mi", self.qa, x))
            v += np.einsum("md,md->m", x, self.qb) + self.qc
            v += np.einsum("md,md->m", np.sin(self.freq * x), self.amp)
            out[self.q_idx] = v
        if self.p_idx.size:
            x = states[self.p_idx]
            out[self.p_idx] = self._horner(self.pc, x).sum(axis=1)
        return out

    def sum_at(self, point: np.ndarray) -> float:
        """f(point) = sum of all components at one point."""
        tiled = np.tile(point, (self.n, 1))
        return float(self.values(tiled).sum())


# ---------------------------------------------------------------------------
# run configuration and trace


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Everything a run needs; two runs with equal configs match bitwise."""

    problem: Problem
    schedule: WeightSchedule
    steps: StepSchedule
    n_iterations: int
    seed: int = 0
    initial_states: np.ndarray | None = None
    record_every: int = 1
    track_bound: bool | None = None  # None = when the schedule is scrambling

    def __post_init__(self):
        if self.n_iterations < 0:
            raise ConfigError("n_iterations must be >= 0")
        if self.record_every < 1:
            raise ConfigError("record_every must be >= 1")
        if self.schedule.n_agents != self.problem.n_agents:
            raise ConfigError(
                f"schedule is for {self.schedule.n_agents} agents, "
                f"problem has {self.problem.n_agents}"
            )
        if self.initial_states is not None:
            x0 = np.asarray(self.initial_states, dtype=float)
            S, D = self.problem.n_agents, self.problem.dimension
            if x0.shape != (S, D):
                raise ConfigError(f"initial states must have shape ({S}, {D})")
            dist = self.problem.feasible_set.distance_many(x0)
            if np.any(dist > 1e-12):
                raise ConfigError("initial states must lie in the feasible set")
            object.__setattr__(self, "initial_states", x0)


@dataclass(frozen=True)
class RunSummary:
    n_iterations: int
    n_agents: int
    dimension: int
    final_f_bar: float
    final_max_disagreement: float
    final_max_delta: float
    max_average_drift: float
    max_nonexpansive_slack: float
    nu: float | None
    delta0: float
    l_bar: float
    n_bar: float
    bound_enabled: bool

    def to_dict(self) -> dict:
        return {
            "n_iterations": self.n_iterations,
            "n_agents": self.n_agents,
            "dimension": self.dimension,
            "final_f_bar": self.final_f_bar,
            "final_max_disagreement": self.final_max_disagreement,
            "final_max_delta": self.final_max_delta,
            "max_average_drift": self.max_average_drift,
            "max_nonexpansive_slack": self.max_nonexpansive_slack,
            "nu": self.nu,
            "delta0": self.delta0,
            "l_bar": self.l_bar,
            "n_bar": self.n_bar,
            "bound_enabled": self.bound_enabled,
        }


@dataclass(eq=False)
class RunTrace:
    """Column-wise record of a run: one row per recorded iteration."""

    ks: np.ndarray                 # (R,)
    alphas: np.ndarray             # (R,)
    states: np.ndarray             # (R, S, D)
    x_bar: np.ndarray              # (R, D)
    f_bar: np.ndarray              # (R,)
    max_delta: np.ndarray          # (R,)
    max_disagreement: np.ndarray   # (R,)
    bound: np.ndarray | None       # (R,) or None when disabled
    summary: RunSummary | None

    @property
    def n_records(self) -> int:
        return int(self.ks.shape[0])


def _pairwise_max(states: np.ndarray) -> float:
    if states.shape[0] == 1:
        return 0.0
    diff = states[:, None, :] - states[None, :, :]
    return float(np.max(np.linalg.norm(diff, axis=2)))


# ---------------------------------------------------------------------------
# the algorithm


def fuse(states, matrix) -> np.ndarray:
    """One consensus step: row j of the result is sum_i m[j,i] states[i]."""
    x = np.asarray(states, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    m = matrix.entries if isinstance(matrix, WeightMatrix) else np.asarray(matrix, float)
    if m.shape[0] != m.shape[1] or m.shape[0] != x.shape[0]:
        raise ConfigError(f"matrix shape {m.shape} does not match {x.shape[0]} states")
    out = m @ x
    return out[:, 0] if squeeze else out


def _check_gradients(g: np.ndarray, k: int):
    if np.all(np.isfinite(g)):
        return
    bad = int(np.where(~np.isfinite(g).all(axis=1))[0][0])
    raise EngineError(
        f"non-finite gradient for agent {bad} at iteration {k}; aborting run",
        agent=bad, iteration=k,
    )


def descend(fused, k: int, cfg: RunConfig) -> np.ndarray:
    """Projected gradient step: each agent uses its own component gradient."""
    v = np.asarray(fused, dtype=float)
    alpha = step_size(cfg.steps, k)
    g = _StackedComponents(cfg.problem).grads(v)
    _check_gradients(g, k)
    return cfg.problem.feasible_set.project_many(v - alpha * g)


def initial_states(cfg: RunConfig) -> np.ndarray:
    """Explicit initial iterates, or seeded uniform samples from the set."""
    if cfg.initial_states is not None:
        return cfg.initial_states.copy()
    rng = np.random.default_rng([cfg.seed, _STREAM_INIT])
    return cfg.problem.feasible_set.sample(cfg.problem.n_agents, rng)


def run(cfg: RunConfig) -> RunTrace:
    """Execute the full fuse-then-descend loop and collect the trace.

    Records the initial state (iteration 0) and every ``record_every``-th
    iteration, always including the terminal one.  Fusion invariants are
    tracked at every round regardless of decimation.  When the schedule is
    scrambling the closed-form disagreement bound is recorded alongside each
    iterate; otherwise a warning is emitted and the bound column is absent.
    """
    prob = cfg.problem
    S, D = prob.n_agents, prob.dimension
    fs = prob.feasible_set
    evaluator = _StackedComponents(prob)

    x = initial_states(cfg)
    l_bar = prob.l_bar
    n_bar = prob.n_bar
    delta0 = _pairwise_max(x)

    nu = None
    bound_on = False
    if cfg.track_bound is not False:
        nu = cfg.schedule.contraction_sup(horizon=max(cfg.n_iterations, 1))
        bound_on = nu < 1.0
        if not bound_on and cfg.track_bound:
            raise ConfigError("bound tracking requested but the schedule is not scrambling")
        if not bound_on:
            warnings.warn(
                "mixing schedule is not scrambling (contraction coefficient 1); "
                "disagreement bound disabled",
                RuntimeWarning,
            )

    # fixed probe points for the sum non-expansiveness invariant
    rng_y = np.random.default_rng([cfg.seed, _STREAM_YSET])
    probes = np.vstack([fs.project_many(np.zeros((1, D))), fs.sample(10, rng_y)])

    rows: list[tuple] = []

    def snapshot(t: int, states: np.ndarray, bound_val: float | None):
        xbar = states.mean(axis=0)
        md = float(np.max(np.linalg.norm(states - xbar, axis=1)))
        rows.append((
            t, float(cfg.steps.at(t)), states.copy(), xbar,
            evaluator.sum_at(xbar), md, _pairwise_max(states), bound_val,
        ))

    factor = (S - 1) / S if S > 1 else 0.0
    g_run = (nu if nu is not None else 0.0) * delta0  # bound recursion state
    snapshot(0, x, factor * delta0 if bound_on else None)

    max_drift = 0.0
    max_slack = -np.inf
    for k in range(cfg.n_iterations):
        b = cfg.schedule.matrix_at(k).entries
        v = b @ x

        drift = float(np.linalg.norm(v.mean(axis=0) - x.mean(axis=0)))
        max_drift = max(max_drift, drift)
        sq_x = ((x[None, :, :] - probes[:, None, :]) ** 2).sum(axis=(1, 2))
        sq_v = ((v[None, :, :] - probes[:, None, :]) ** 2).sum(axis=(1, 2))
        max_slack = max(max_slack, float(np.max(sq_v - sq_x)))

        alpha = float(cfg.steps.at(k))
        g = evaluator.grads(v)
        _check_gradients(g, k)
        x = fs.project_many(v - alpha * g)

        t = k + 1
        if bound_on:
            # closed-form cap evaluated at index t: the geometric recursion
            # h_t = nu h_{t-1} + l_bar alpha_t seeded with h_0 = nu delta0
            g_run = nu * g_run + l_bar * float(cfg.steps.at(t))
        if t % cfg.record_every == 0 or t == cfg.n_iterations:
            snapshot(t, x, factor * g_run if bound_on else None)

    ks = np.array([r[0] for r in rows], dtype=int)
    trace = RunTrace(
        ks=ks,
        alphas=np.array([r[1] for r in rows]),
        states=np.stack([r[2] for r in rows]),
        x_bar=np.stack([r[3] for r in rows]),
        f_bar=np.array([r[4] for r in rows]),
        max_delta=np.array([r[5] for r in rows]),
        max_disagreement=np.array([r[6] for r in rows]),
        bound=np.array([r[7] for r in rows]) if bound_on else None,
        summary=None,
    )
    trace.summary = RunSummary(
        n_iterations=cfg.n_iterations,
        n_agents=S,
        dimension=D,
        final_f_bar=float(trace.f_bar[-1]),
        final_max_disagreement=float(trace.max_disagreement[-1]),
        final_max_delta=float(trace.max_delta[-1]),
        max_average_drift=max_drift,
        max_nonexpansive_slack=float(max_slack) if np.isfinite(max_slack) else 0.0,
        nu=nu,
        delta0=delta0,
        l_bar=l_bar,
        n_bar=n_bar,
        bound_enabled=bound_on,
    )
    return trace


# ---------------------------------------------------------------------------
# trace export


def trace_records(trace: RunTrace):
    """Iterate records as plain dicts in the serialized field order."""
    for r in range(trace.n_records):
        yield {
            "k": int(trace.ks[r]),
            "alpha": float(trace.alphas[r]),
            "x": trace.states[r].tolist(),
            "x_bar": trace.x_bar[r].tolist(),
            "f_bar": float(trace.f_bar[r]),
            "max_delta": float(trace.max_delta[r]),
            "max_disagreement": float(trace.max_disagreement[r]),
            "bound": None if trace.bound is None else float(trace.bound[r]),
        }


def write_trace_jsonl(trace: RunTrace, path) -> None:
    with open(path, "w", newline="\n") as fh:
        for rec in trace_records(trace):
            fh.write(json.dumps(rec) + "\n")


def read_trace_jsonl(path) -> RunTrace:
    ks, alphas, states, xbar, fbar, mdl, mdis, bound = [], [], [], [], [], [], [], []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            ks.append(rec["k"])
            alphas.append(rec["alpha"])
            states.append(rec["x"])
            xbar.append(rec["x_bar"])
            fbar.append(rec["f_bar"])
            mdl.append(rec["max_delta"])
            mdis.append(rec["max_disagreement"])
            bound.append(rec["bound"])
    if not ks:
        raise ConfigError(f"trace file {path} has no records")
    has_bound = bound[0] is not None
    return RunTrace(
        ks=np.array(ks, dtype=int),
        alphas=np.array(alphas),
        states=np.array(states),
        x_bar=np.array(xbar),
        f_bar=np.array(fbar),
        max_delta=np.array(mdl),
        max_disagreement=np.array(mdis),
        bound=np.array([b if b is not None else np.nan for b in bound]) if has_bound else None,
        summary=None,
    )


def write_trace_csv(trace: RunTrace, path) -> None:
    """CSV columns: k, alpha, f_bar, max_disagreement, max_delta, bound, x_J_d."""
    n_rec, S, D = trace.states.shape
    header = ["k", "alpha", "f_bar", "max_disagreement", "max_delta", "bound"]
    header += [f"x_{j}_{d}" for j in range(S) for d in range(D)]
    with open(path, "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in range(n_rec):
            bound = "" if trace.bound is None or not np.isfinite(trace.bound[r]) else repr(float(trace.bound[r]))
            row = [
                int(trace.ks[r]), repr(float(trace.alphas[r])), repr(float(trace.f_bar[r])),
                repr(float(trace.max_disagreement[r])), repr(float(trace.max_delta[r])), bound,
            ]
            row += [repr(float(v)) for v in trace.states[r].ravel()]
            w.writerow(row)
