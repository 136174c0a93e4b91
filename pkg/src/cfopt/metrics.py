"""Decision-quality metrics and batch explanation runs."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import UndefinedMetricError
from .explain import ExplanationTask, cf_opt_feature, cf_opt_latent, verify_explanation

log = logging.getLogger(__name__)


def relative_regret(y, theta, layer):
    """Suboptimality of ``y`` under ``theta`` relative to the optimal value.

    Uses the layer's native sense, so the result is nonnegative for both
    minimizing and maximizing layers.
    """
    y = np.asarray(getattr(y, "y", y), dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    opt = layer.solve(theta).objective
    if opt == 0:
        raise UndefinedMetricError("relative regret is undefined when the optimal value is 0")
    gap = theta @ y - opt if layer.sense == "minimize" else opt - theta @ y
    return float(gap / abs(opt))


def reconstruction_error(vae, x):
    d = np.asarray(x, dtype=np.float64) - vae.reconstruct(x)
    return float(d @ d)


def decision_focused_recon(vae, pipeline, x):
    """Regret of the decision at ``x`` under the costs predicted from its
    reconstruction."""
    _, sol = pipeline.decide(x)
    return relative_regret(sol.y, pipeline.predict(vae.reconstruct(x)), pipeline.layer)


@dataclass
class MetricReport:
    name: str
    n: int
    mean: float
    std: float
    q10: float
    q50: float
    q90: float

    @classmethod
    def from_values(cls, name, values):
        v = np.asarray([x for x in values if x is not None and np.isfinite(x)], dtype=float)
        if len(v) == 0:
            return cls(name, 0, *([float("nan")] * 5))
        q10, q50, q90 = np.quantile(v, [0.1, 0.5, 0.9])
        return cls(name, len(v), float(v.mean()), float(v.std()), float(q10), float(q50), float(q90))


def sample_tasks(pipeline, contexts, solutions, kind, n_tasks, rng, eps=None):
    """Random explanation tasks over a test set.

    Relative and absolute tasks pair a context ``x_i`` with the stored
    solution ``y_j`` of another row, skipping pairs where ``y_j`` equals the
    pipeline's decision at ``x_i``.
    """
    tasks = []
    n = len(contexts)
    attempts = 0
    while len(tasks) < n_tasks:
        attempts += 1
        if attempts > 100 * n_tasks + 1000:
            raise RuntimeError("could not sample enough non-trivial tasks")
        i = int(rng.integers(n))
        if kind == "epsilon":
            tasks.append(ExplanationTask.create(kind, pipeline, contexts[i], eps=eps))
            continue
        j = int(rng.integers(n))
        y0 = pipeline.solve_costs(pipeline.costs(contexts[i])).y
        if np.array_equal(solutions[j], y0):
            continue
        tasks.append(ExplanationTask.create(kind, pipeline, contexts[i], y_alt=solutions[j]))
    return tasks


ROW_FIELDS = (
    "setting", "task_id", "kind", "eps", "feasible", "verified",
    "iterations", "loss", "sq_distance", "h_best", "status", "error",
)


def _run_one(args):
    setting, task_id, task, pipeline, vae, cfg = args
    row = dict.fromkeys(ROW_FIELDS, "")
    row.update(setting=setting, task_id=task_id, kind=task.kind,
               eps="" if task.eps is None else task.eps)
    try:
        if vae is None:
            res = cf_opt_feature(task, pipeline, cfg)
        else:
            res = cf_opt_latent(task, pipeline, vae, cfg)
    except Exception as exc:  # recorded per task, never fatal for the batch
        row.update(feasible=False, verified=False, error=repr(exc))
        return row
    row.update(feasible=res.feasible, iterations=res.iterations_run, status=res.status)
    if res.feasible:
        d = res.x_best - task.x0
        row.update(
            verified=verify_explanation(task, pipeline, res.x_best),
            loss=res.loss_best,
            sq_distance=float(d @ d),
            h_best=res.h_best,
        )
    else:
        row["verified"] = False
    return row


def batch_explain(tasks, pipeline, configs, vae=None, jobs=1):
    """Run every task under every named config.

    ``configs`` maps a setting name to an :class:`MdmmConfig`. Returns raw
    rows (dicts with :data:`ROW_FIELDS`) in (setting, task) order.
    """
    work = [
        (name, t, task, pipeline, vae, cfg)
        for name, cfg in configs.items()
        for t, task in enumerate(tasks)
    ]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_one, work, chunksize=max(1, len(work) // (4 * jobs))))
    else:
        rows = [_run_one(w) for w in work]
    for r in rows:
        if r["error"]:
            log.warning("task %s/%s failed: %s", r["setting"], r["task_id"], r["error"])
    return rows


def summarize(rows):
    """One report per setting and metric, recomputed from raw rows."""
    reports = {}
    settings = list(dict.fromkeys(r["setting"] for r in rows))
    for s in settings:
        sub = [r for r in rows if r["setting"] == s]
        reports[s] = {
            "iterations": MetricReport.from_values("iterations", [r["iterations"] for r in sub if r["iterations"] != ""]),
            "feasible": MetricReport.from_values("feasible", [float(bool(r["verified"])) for r in sub]),
            "loss": MetricReport.from_values("loss", [r["loss"] for r in sub if r["loss"] != ""]),
            "sq_distance": MetricReport.from_values("sq_distance", [r["sq_distance"] for r in sub if r["sq_distance"] != ""]),
        }
    return reports


def batch_explain_and_report(tasks, pipeline, configs, vae=None, jobs=1):
    rows = batch_explain(tasks, pipeline, configs, vae=vae, jobs=jobs)
    return rows, summarize(rows)


def _fmt(v):
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def rows_to_csv(rows, fields=None):
    if not rows:
        return ""
    fields = list(fields or rows[0].keys())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_fmt(r.get(f, "")) for f in fields])
    return buf.getvalue()


def reports_to_rows(reports):
    out = []
    for setting, metrics in reports.items():
        for rep in metrics.values():
            out.append({"setting": setting, **rep.__dict__})
    return out
