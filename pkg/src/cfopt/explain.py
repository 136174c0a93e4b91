"""Counterfactual explanations of predict-then-optimize decisions.

An explanation task asks for a context close to ``x0`` under which a
criterion ``h(x) <= 0`` holds:

* relative: the alternative decision is no worse than the initial one,
* absolute: the alternative decision is optimal,
* epsilon: the initial decision has relative regret of at least ``eps``.

The search runs simultaneous gradient descent on the primal variable and
ascent on a scalar multiplier of the augmented Lagrangian
``loss + lam * h + rho / 2 * h**2``, either directly over contexts or over the
latent space of a VAE whose decoder maps back to contexts. All costs are in
minimize form (see :mod:`cfopt.pipeline`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .plausibility import RegularizerSpec, omega

KINDS = ("relative", "absolute", "epsilon")
PROXIMITIES = ("feature_sq_euclid", "latent_sq_euclid")


@dataclass
class ExplanationTask:
    kind: str
    x0: np.ndarray
    y0: np.ndarray
    y_alt: np.ndarray | None = None
    eps: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown explanation kind {self.kind!r}")
        self.x0 = np.asarray(self.x0, dtype=np.float64)
        self.y0 = np.asarray(getattr(self.y0, "y", self.y0), dtype=np.float64)
        if self.kind == "epsilon":
            if self.eps is None or not self.eps > 0:
                raise InputError("epsilon explanations need eps > 0")
        else:
            if self.y_alt is None:
                raise InputError(f"{self.kind} explanations need an alternative decision")
            self.y_alt = np.asarray(getattr(self.y_alt, "y", self.y_alt), dtype=np.float64)
            if self.y_alt.shape != self.y0.shape:
                raise InputError("y_alt and y0 have different lengths")

    @classmethod
    def create(cls, kind, pipeline, x0, y_alt=None, eps=None, allow_trivial=False):
        """Build a task, computing the initial decision at ``x0``."""
        x0 = np.asarray(x0, dtype=np.float64)
        if x0.shape != (pipeline.n_x,):
            raise InputError(f"x0 must have length {pipeline.n_x}")
        y0 = pipeline.solve_costs(pipeline.costs(x0)).y
        task = cls(kind, x0, y0, y_alt, eps)
        if kind != "epsilon" and not allow_trivial and np.array_equal(task.y_alt, y0):
            raise InputError("the alternative decision equals the initial decision")
        if task.y0.shape != (pipeline.n_y,):
            raise InputError("decision length differs from the pipeline's n_y")
        return task


def criterion(task, pipeline, costs):
    """Return ``(h, v)`` with ``h = costs . v`` for minimize-form ``costs``.

    ``v`` is the direction the criterion is linear in; any solution of the
    layer it contains is held constant when differentiating.
    """
    if task.kind == "relative":
        v = task.y_alt - task.y0
    else:
        y_star = pipeline.solve_costs(costs).y
        if task.kind == "absolute":
            v = task.y_alt - y_star
        else:
            # regret is relative to |min cost|, hence the sign switch
            factor = 1.0 + task.eps if costs @ y_star >= 0 else 1.0 - task.eps
            v = factor * y_star - task.y0
    return float(costs @ v), v


def h_value(task, pipeline, x):
    return criterion(task, pipeline, pipeline.costs(x))[0]


def grad_h(task, pipeline, x):
    _, v = criterion(task, pipeline, pipeline.costs(x))
    return pipeline.costs_vjp(x, v)


@dataclass
class MdmmConfig:
    gamma: float = 0.1
    rho: float = 1.0
    K: int = 6000
    c_max: int = 10
    u: float = 0.9
    reg: RegularizerSpec = field(default_factory=lambda: RegularizerSpec("none"))
    proximity: str = "feature_sq_euclid"
    feas_tol: float = 1e-9
    record_trace: bool = False

    def __post_init__(self):
        if not self.gamma > 0:
            raise InputError("gamma must be positive")
        if not self.rho > 0:
            raise InputError("rho must be positive")
        if self.K < 1 or self.c_max < 1:
            raise InputError("K and c_max must be at least 1")
        if not 0 < self.u < 1:
            raise InputError("u must lie in (0, 1)")
        if self.proximity not in PROXIMITIES:
            raise InputError(f"unknown proximity {self.proximity!r}")
        if self.feas_tol < 0:
            raise InputError("feas_tol must be >= 0")


@dataclass
class ExplanationResult:
    x_best: np.ndarray | None
    z_best: np.ndarray | None
    loss_best: float
    feasible: bool
    iterations_run: int
    h_best: float | None = None
    status: str = "max_iter"
    improvements: list = field(default_factory=list)
    trace: list | None = None

    def to_dict(self):
        def arr(a):
            return None if a is None else [float(v) for v in a]

        return {
            "feasible": self.feasible,
            "loss_best": None if math.isinf(self.loss_best) else self.loss_best,
            "h_best": self.h_best,
            "iterations_run": self.iterations_run,
            "status": self.status,
            "x_best": arr(self.x_best),
            "z_best": arr(self.z_best),
            "improvements": [[k, l] for k, l in self.improvements],
        }


@dataclass
class _Eval:
    x: np.ndarray
    h: float
    loss: float
    energy: float
    grad: np.ndarray


def _eval_feature(x, lam, task, pipeline, cfg):
    costs = pipeline.costs(x)
    h, v = criterion(task, pipeline, costs)
    d = x - task.x0
    loss = float(d @ d)
    grad = 2.0 * d + (lam + cfg.rho * h) * pipeline.costs_vjp(x, v)
    energy = loss + lam * h + 0.5 * cfg.rho * h * h
    return _Eval(x, h, loss, energy, grad)


def _eval_latent(z, lam, task, pipeline, vae, cfg, z0):
    x, dec_cache = vae.decoder.forward_cache(z)
    costs = pipeline.costs(x)
    h, v = criterion(task, pipeline, costs)
    gx = (lam + cfg.rho * h) * pipeline.costs_vjp(x, v)
    if cfg.proximity == "feature_sq_euclid":
        d = x - task.x0
        loss = float(d @ d)
        gx = gx + 2.0 * d
        gz_prox = 0.0
    else:
        d = z - z0
        loss = float(d @ d)
        gz_prox = 2.0 * d
    reg, greg = omega(z, cfg.reg)
    _, gz = vae.decoder.backward(dec_cache, gx, need_params=False)
    grad = gz + gz_prox + greg
    loss += reg
    energy = loss + lam * h + 0.5 * cfg.rho * h * h
    return _Eval(x, h, loss, energy, grad)


def energy(z, lam, task, pipeline, vae, cfg):
    """Augmented Lagrangian and its partial derivatives.

    Returns ``(E, grad_z, grad_lam)``. With ``vae=None`` the primal variable
    is the context itself and no regularizer applies.
    """
    z = np.asarray(z, dtype=np.float64)
    if vae is None:
        ev = _eval_feature(z, lam, task, pipeline, cfg)
    else:
        z0 = vae.encode_mean(task.x0) if cfg.proximity == "latent_sq_euclid" else None
        ev = _eval_latent(z, lam, task, pipeline, vae, cfg, z0)
    return ev.energy, ev.grad, ev.h


def _mdmm(start, evaluate, cfg, latent):
    var, lam = start.copy(), 0.0
    c = 0
    best_var, best_x, best_h = None, None, None
    l_best = math.inf
    improvements = []
    trace = [] if cfg.record_trace else None
    status = "max_iter"
    k = 0
    for k in range(1, cfg.K + 1):
        ev = evaluate(var, lam)
        if c == cfg.c_max:
            k -= 1
            status = "converged"
            break
        if trace is not None:
            trace.append({"k": k, "h": ev.h, "loss": ev.loss, "lam": lam, "energy": ev.energy})
        if ev.h <= cfg.feas_tol:
            if ev.loss < cfg.u * l_best:
                best_var, best_x, best_h = var.copy(), ev.x.copy(), ev.h
                l_best = ev.loss
                improvements.append((k, ev.loss))
                c = 0
            else:
                c += 1
        if not (np.all(np.isfinite(ev.grad)) and math.isfinite(ev.h)):
            status = "diverged"
            break
        var = var - cfg.gamma * ev.grad
        lam = lam + cfg.gamma * ev.h
    return ExplanationResult(
        x_best=best_x,
        z_best=best_var if latent else None,
        loss_best=l_best,
        feasible=best_x is not None,
        iterations_run=k,
        h_best=best_h,
        status=status,
        improvements=improvements,
        trace=trace,
    )


def cf_opt_feature(task, pipeline, cfg=None):
    """Search directly over contexts, starting from ``x0``."""
    cfg = cfg or MdmmConfig()
    if task.x0.shape != (pipeline.n_x,):
        raise InputError("task context width differs from the pipeline's n_x")
    return _mdmm(
        task.x0,
        lambda x, lam: _eval_feature(x, lam, task, pipeline, cfg),
        cfg,
        latent=False,
    )


def cf_opt_latent(task, pipeline, vae, cfg=None):
    """Search over VAE latent codes, starting from the encoding of ``x0``."""
    cfg = cfg or MdmmConfig()
    if vae.n_x != pipeline.n_x or task.x0.shape != (pipeline.n_x,):
        raise InputError("VAE, pipeline and task disagree on n_x")
    z0 = vae.encode_mean(task.x0)
    return _mdmm(
        z0,
        lambda z, lam: _eval_latent(z, lam, task, pipeline, vae, cfg, z0),
        cfg,
        latent=True,
    )


def verify_explanation(task, pipeline, x, tol=1e-9):
    """Re-check the explanation criterion at ``x`` with the exact layer.

    Written from the definitions rather than through :func:`criterion`.
    """
    costs = pipeline.costs(x)
    if task.kind == "relative":
        return bool(costs @ task.y_alt <= costs @ task.y0 + tol)
    best = pipeline.solve_costs(costs).objective
    if task.kind == "absolute":
        return bool(costs @ task.y_alt <= best + tol)
    return bool(best + task.eps * abs(best) <= costs @ task.y0 + tol)
