"""Benchmark command line: budgets, calibration, verification, and sweeps.

Subcommands:
  budget          privacy budgets of the three mechanisms at matched variance
  calibrate       Huber alpha (and epsilon) for target noise variances
  verify-privacy  numeric check that sup log-likelihood-ratio = alpha * df
  gen             write a synthetic low-rank dataset to an .npz file
  run             execute a (solver x mechanism x variance x fraction) sweep

All randomness derives from one master seed through a counter-based split:
ground truth uses stream (seed, 1), the trial mask (seed, 2, fraction_index,
trial), the holdout split (seed, 3, fraction_index, trial), and each solver
run (seed, 4, cell_index, trial). Re-running a plan with the same seed
therefore reproduces the summary byte for byte, regardless of execution
order.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data_io, lrmc, mechanisms
from .data_io import RunRecord, SyntheticSpec
from .lrmc import DrawCounters, ObservedMatrix, SolverConfig
from .mechanisms import MechanismConfig, Sensitivity

__all__ = ["ExperimentPlan", "main", "run_plan"]

_DOMAIN_TRUTH = 1
_DOMAIN_MASK = 2
_DOMAIN_SPLIT = 3
_DOMAIN_SOLVER = 4

_GAUSSIAN_LOG_NOTE = (
    "note: gaussian epsilon uses the natural-log bound sqrt(2 ln(1.25/delta))/sigma * df;"
    " --log-base base10 evaluates it with log10 instead, dividing epsilon by"
    " sqrt(ln 10) ~= 1.5174 (compatibility mode for base-10 budget tables)."
)


def _stream(*entropy: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(tuple(int(e) for e in entropy)))


def _float_list(text: str) -> list[float]:
    text = text.strip()
    if not text:
        return []
    return [float(p) for p in text.split(",") if p.strip()]


def _str_list(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


# ---------------------------------------------------------------------------
# Experiment plans
# ---------------------------------------------------------------------------

_SOLVERS = ("als", "irls")
_MECHANISMS = ("none", "gaussian", "laplace", "huber")


@dataclass
class ExperimentPlan:
    """A full sweep: dataset, solver/mechanism/variance/fraction grid, seeds.

    trial_mode "fresh_mask" fixes the synthetic ground truth for the whole
    plan and redraws the observation mask (and noise) per trial;
    "fresh_matrix" regenerates the ground truth each trial as well.
    """

    dataset: str = "synthetic"
    m: int = 500
    n: int = 500
    data_rank: int = 5
    solvers: list[str] = field(default_factory=lambda: ["als", "irls"])
    mechanisms: list[str] = field(default_factory=lambda: list(_MECHANISMS))
    variances: list[float] = field(default_factory=lambda: [1.0])
    fractions: list[float] = field(default_factory=lambda: [0.05])
    trials: int = 10
    seed: int = 0
    rank: int = 5
    lam: float = 0.5
    outer_iterations: int = 50
    irls_iterations: int = 20
    huber_loss_alpha: float | None = None
    delta: float = 1e-5
    delta_f: float = 5.0
    log_base: str = "natural"
    trial_mode: str = "fresh_mask"
    holdout_fraction: float = 0.1
    clip: bool = False
    out: str | None = None

    def __post_init__(self):
        for s in self.solvers:
            if s not in _SOLVERS:
                raise ValueError(f"unknown solver {s!r}")
        for mech in self.mechanisms:
            if mech not in _MECHANISMS:
                raise ValueError(f"unknown mechanism {mech!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.trial_mode not in ("fresh_mask", "fresh_matrix"):
            raise ValueError("trial_mode must be 'fresh_mask' or 'fresh_matrix'")
        if self.log_base not in ("natural", "base10"):
            raise ValueError("log_base must be 'natural' or 'base10'")
        if not self.mechanisms:
            raise ValueError("at least one mechanism is required")
        if not self.solvers:
            raise ValueError("at least one solver is required")

    @classmethod
    def from_file(cls, path) -> "ExperimentPlan":
        with Path(path).open("r", encoding="utf-8") as fh:
            payload = json.load(fh)
        unknown = set(payload) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown plan fields: {sorted(unknown)}")
        return cls(**payload)

    def cells(self) -> list[tuple[str, str, float | None, float]]:
        """Deterministic cell enumeration; mechanism 'none' collapses the
        variance axis."""
        out = []
        for solver in self.solvers:
            for mech in self.mechanisms:
                variances = [None] if mech == "none" else self.variances
                for variance in variances:
                    for fraction in self.fractions:
                        out.append((solver, mech, variance, fraction))
        return out


def _dataset_label(plan: ExperimentPlan) -> str:
    if plan.dataset == "synthetic":
        return f"synthetic-m{plan.m}-n{plan.n}-rank{plan.data_rank}"
    kind, _, path = plan.dataset.partition(":")
    if path:
        return f"{kind}-{Path(path).stem}"
    return plan.dataset


def _load_file_dataset(spec: str) -> tuple[np.ndarray | None, ObservedMatrix]:
    kind, _, path = spec.partition(":")
    if not path:
        raise ValueError(
            f"dataset {spec!r} needs the form movielens:PATH, sweetrs:PATH, or file:PATH"
        )
    if kind == "movielens":
        return None, data_io.RatingsFile("movielens100k", path).load()
    if kind == "sweetrs":
        return None, data_io.RatingsFile("sweetrs", path).load()
    if kind == "file":
        with np.load(path, allow_pickle=False) as npz:
            obs = ObservedMatrix(
                int(npz["m"]),
                int(npz["n"]),
                npz["rows"],
                npz["cols"],
                npz["values"],
                tuple(npz["value_range"]),
            )
            truth = npz["x"] if "x" in npz.files else None
        return truth, obs
    raise ValueError(f"unknown dataset kind {kind!r}")


def _build_mechanism(kind: str, variance: float | None) -> tuple[MechanismConfig, bool]:
    if kind == "none":
        return MechanismConfig.none(), False
    convention = False
    if kind == "huber":
        alpha, convention = mechanisms.huber_alpha_for_variance(variance)
        return MechanismConfig.huber(alpha), convention
    return MechanismConfig.from_variance(kind, variance), convention


def run_plan(plan: ExperimentPlan) -> tuple[list[RunRecord], list[str]]:
    """Execute every cell of the plan; returns (records, failure messages)."""
    synthetic = plan.dataset == "synthetic"
    truth = None
    base_obs = None
    if synthetic:
        if plan.trial_mode == "fresh_mask":
            truth = data_io.synthetic_truth(
                plan.m, plan.n, plan.data_rank, _stream(plan.seed, _DOMAIN_TRUTH)
            )
    else:
        truth, base_obs = _load_file_dataset(plan.dataset)

    label = _dataset_label(plan)
    sens = Sensitivity.scalar(plan.delta_f)
    records: list[RunRecord] = []
    failures: list[str] = []

    for cell_idx, (solver, mech_kind, variance, fraction) in enumerate(plan.cells()):
        cell_name = f"{solver}-{mech_kind}" + (
            f"-v{variance:g}" if variance is not None else ""
        ) + f"-f{fraction:g}"
        started = time.perf_counter()
        try:
            mech, convention = _build_mechanism(mech_kind, variance)
            budget = mechanisms.mechanism_budget(
                mech, sens, delta=plan.delta, log_base=plan.log_base
            )
            config = SolverConfig(
                rank=plan.rank,
                lam=plan.lam,
                outer_iterations=plan.outer_iterations,
                inner_iterations=plan.irls_iterations,
                huber_loss_alpha=plan.huber_loss_alpha,
                mechanism=mech,
                seed=plan.seed,
                trials=plan.trials,
                clip=plan.clip,
            )
            counters = DrawCounters()
            trial_rmse = []
            train_rmse = []
            actual_fraction = None
            frac_idx = plan.fractions.index(fraction)
            for trial in range(plan.trials):
                if synthetic:
                    if plan.trial_mode == "fresh_matrix":
                        spec = SyntheticSpec(
                            plan.m, plan.n, plan.data_rank, fraction, plan.seed
                        )
                        x, obs = data_io.generate_synthetic(
                            spec, _stream(plan.seed, _DOMAIN_TRUTH, frac_idx, trial)
                        )
                    else:
                        x = truth
                        obs = data_io.mask_entries(
                            x, fraction, _stream(plan.seed, _DOMAIN_MASK, frac_idx, trial)
                        )
                    train, test, scope = obs, None, "all_entries"
                else:
                    obs = base_obs
                    # fraction 1.0 means "use the dataset as is"; anything
                    # lower subsamples (and fails loudly when infeasible)
                    if fraction < 1.0:
                        obs = data_io.subsample(
                            obs, fraction, _stream(plan.seed, _DOMAIN_MASK, frac_idx, trial)
                        )
                    actual_fraction = obs.observed_fraction
                    if truth is not None:
                        # the file carries its ground truth (a generated
                        # dataset): score against all entries, no holdout
                        x, train, test, scope = truth, obs, None, "all_entries"
                    else:
                        train, test = data_io.holdout_split(
                            obs,
                            plan.holdout_fraction,
                            _stream(plan.seed, _DOMAIN_SPLIT, frac_idx, trial),
                        )
                        scope = "holdout"
                solve = lrmc.noisy_als if solver == "als" else lrmc.irls_huber
                factors = solve(
                    train,
                    config,
                    _stream(plan.seed, _DOMAIN_SOLVER, cell_idx, trial),
                    counters=counters,
                )
                if scope == "all_entries":
                    trial_rmse.append(lrmc.rmse(x, factors, scope="all_entries"))
                else:
                    trial_rmse.append(lrmc.rmse(test, factors, scope="observed"))
                    train_rmse.append(lrmc.rmse(train, factors, scope="observed"))
            extras = {}
            if train_rmse:
                extras["rmse_train_mean"] = float(np.mean(train_rmse))
            if actual_fraction is not None:
                extras["actual_fraction"] = actual_fraction
            if convention:
                extras["huber_unit_variance_convention"] = True
            record = RunRecord.from_trials(
                trial_rmse,
                dataset=label,
                solver=solver,
                mechanism=mech_kind,
                variance=variance,
                fraction=fraction,
                rank=plan.rank,
                epsilon=budget.epsilon,
                delta=budget.delta,
                seed=plan.seed,
                config={
                    "lam": plan.lam,
                    "outer_iterations": plan.outer_iterations,
                    "irls_iterations": plan.irls_iterations,
                    "mechanism_scale": mech.scale,
                    "huber_loss_alpha": (
                        lrmc.resolve_loss_alpha(config) if solver == "irls" else None
                    ),
                    "delta_f": plan.delta_f,
                    "log_base": plan.log_base,
                    "trial_mode": plan.trial_mode,
                    "holdout_fraction": plan.holdout_fraction if scope == "holdout" else None,
                    "clip": plan.clip,
                    "trial_streams": [
                        [plan.seed, _DOMAIN_SOLVER, cell_idx, t]
                        for t in range(plan.trials)
                    ],
                },
                draw_counts={"u_sweep": counters.u_sweep, "v_sweep": counters.v_sweep},
                rmse_scope=scope,
                wall_clock_sec=time.perf_counter() - started,
                extras=extras,
            )
            records.append(record)
        except Exception as exc:  # cell isolation: a bad cell must not kill the sweep
            failures.append(f"{cell_name}: {type(exc).__name__}: {exc}")
    return records, failures


def _rmse_table(records: list[RunRecord], failures: list[str]) -> str:
    """Rows variance x fraction x solver, one mean-RMSE column per mechanism.

    The no-noise baseline has no variance and shows up under '-'.
    """
    mechanisms_seen = [m for m in _MECHANISMS if any(r.mechanism == m for r in records)]
    by_key: dict[tuple, dict[str, str]] = {}
    for rec in records:
        key = (
            rec.variance if rec.variance is not None else -math.inf,
            rec.fraction,
            rec.solver,
        )
        by_key.setdefault(key, {})[rec.mechanism] = f"{rec.rmse_mean:.4f}"
    header = ["variance", "fraction", "solver"] + mechanisms_seen
    widths = [max(8, len(h)) for h in header]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for (variance, fraction, solver), cells in sorted(by_key.items()):
        row = [
            "-" if math.isinf(variance) else f"{variance:g}",
            f"{fraction:g}",
            solver,
        ]
        row += [cells.get(m, "") for m in mechanisms_seen]
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    out = "\n".join(lines)
    if failures:
        out += "\n\nFAILED cells:\n" + "\n".join(f"  {f}" for f in failures)
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_budget(args) -> int:
    sens = Sensitivity.scalar(args.delta_f)
    rows = mechanisms.budget_table(args.variances, sens, args.delta, args.log_base)
    header = f"{'variance':>8}  {'gaussian (eps, delta)':>26}  {'laplace (eps, delta)':>24}  {'huber (eps, delta)':>22}  {'alpha':>8}"
    print(header)
    for row in rows:
        note = " *" if row.huber_unit_variance_convention else ""
        print(
            f"{row.variance:>8g}  "
            f"({row.gaussian.epsilon:>12.3f}, {row.gaussian.delta:g})  "
            f"({row.laplace.epsilon:>10.3f}, {row.laplace.delta:g})  "
            f"({row.huber.epsilon:>9.3f}, {row.huber.delta:g})  "
            f"{row.huber_alpha:>8.4f}{note}"
        )
    if any(r.huber_unit_variance_convention for r in rows):
        print(
            f"  * variance <= 1 is unreachable by Huber noise; "
            f"alpha={mechanisms.UNIT_VARIANCE_ALPHA} convention applied"
        )
    print(_GAUSSIAN_LOG_NOTE)
    if args.csv:
        path = Path(args.csv)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as fh:
            fh.write(
                "variance,gaussian_epsilon,gaussian_delta,laplace_epsilon,"
                "laplace_delta,huber_epsilon,huber_delta,huber_alpha\n"
            )
            for row in rows:
                fh.write(
                    f"{row.variance!r},{row.gaussian.epsilon!r},{row.gaussian.delta!r},"
                    f"{row.laplace.epsilon!r},{row.laplace.delta!r},"
                    f"{row.huber.epsilon!r},{row.huber.delta!r},{row.huber_alpha!r}\n"
                )
    return 0


def cmd_calibrate(args) -> int:
    print(f"{'variance':>10}  {'alpha':>10}  {'epsilon':>10}  {'residual':>10}")
    for target in args.targets:
        alpha, convention = mechanisms.huber_alpha_for_variance(target)
        eps = alpha * args.delta_f
        resid = abs(mechanisms.huber_variance(alpha) - target)
        note = ""
        if convention:
            note = "  (unreachable target; alpha=3 unit-variance convention)"
            print(
                f"warning: variance {target:g} <= 1 cannot be calibrated; "
                f"using alpha={alpha:g}",
                file=sys.stderr,
            )
        print(f"{target:>10g}  {alpha:>10.4f}  {eps:>10.3f}  {resid:>10.2e}{note}")
    return 0


def cmd_verify_privacy(args) -> int:
    worst = 0.0
    cells = 0
    failed = False
    print(f"{'alpha':>8}  {'delta_f':>8}  {'sup g':>12}  {'deviation':>12}")
    for alpha in args.alphas:
        for delta_f in args.delta_fs:
            closed, grid = mechanisms.privacy_gap_estimates(alpha, delta_f)
            bound = alpha * delta_f
            deviation = max(abs(closed - bound), abs(grid - bound))
            worst = max(worst, deviation)
            cells += 1
            status = ""
            if deviation > args.tolerance:
                failed = True
                status = "  FAIL"
            print(f"{alpha:>8g}  {delta_f:>8g}  {closed:>12.6f}  {deviation:>12.3e}{status}")
    print(f"{cells} cells checked; max |sup g - alpha*delta_f| = {worst:.3e}")
    if failed:
        print(f"tolerance {args.tolerance:g} exceeded", file=sys.stderr)
        return 1
    return 0


def cmd_gen(args) -> int:
    spec = SyntheticSpec(args.m, args.n, args.rank, args.fraction, args.seed)
    x, obs = data_io.generate_synthetic(spec)
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(
        path,
        x=x,
        m=obs.m,
        n=obs.n,
        rows=obs.rows,
        cols=obs.cols,
        values=obs.values,
        value_range=np.array(obs.value_range),
        rank=spec.rank,
        seed=spec.seed,
    )
    print(
        f"wrote {path}: {obs.m}x{obs.n} rank-{spec.rank} matrix, "
        f"{obs.n_observed} observed entries ({obs.observed_fraction:.1%})"
    )
    return 0


#: per-dataset protocol defaults, applied when the field was not set
#: explicitly (by flag or plan file)
_PROTOCOL_DEFAULTS = {
    "movielens": {"rank": 32, "outer_iterations": 20},
    "sweetrs": {"rank": 32, "outer_iterations": 100},
}


def _with_protocol_defaults(payload: dict) -> dict:
    kind = str(payload.get("dataset", "synthetic")).partition(":")[0]
    for key, value in _PROTOCOL_DEFAULTS.get(kind, {}).items():
        payload.setdefault(key, value)
    return payload


def cmd_run(args) -> int:
    given = {
        name: getattr(args, name)
        for name in ExperimentPlan.__dataclass_fields__
        if getattr(args, name, None) is not None
    }
    if args.plan:
        with Path(args.plan).open("r", encoding="utf-8") as fh:
            payload = json.load(fh)
        unknown = set(payload) - set(ExperimentPlan.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown plan fields: {sorted(unknown)}")
        payload.update(given)
        plan = ExperimentPlan(**_with_protocol_defaults(payload))
    else:
        plan = ExperimentPlan(**_with_protocol_defaults(given))
    records, failures = run_plan(plan)
    out_dir = Path(plan.out) if plan.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        for rec in records:
            name = f"run-{rec.solver}-{rec.mechanism}"
            if rec.variance is not None:
                name += f"-v{rec.variance:g}"
            name += f"-f{rec.fraction:g}.json"
            data_io.persist_run(rec, out_dir / name)
        data_io.write_summary_csv(records, out_dir / "summary.csv")
    print(_rmse_table(records, failures))
    if plan.log_base == "natural" and any(r.mechanism == "gaussian" for r in records):
        print(_GAUSSIAN_LOG_NOTE)
    if out_dir:
        print(f"\nwrote {len(records)} records + summary.csv to {out_dir}")
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="huberdp-bench",
        description="Benchmarks for Huber-mechanism differential privacy and private matrix completion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_budget = sub.add_parser("budget", help="privacy budgets at matched noise variance")
    p_budget.add_argument("--variances", type=_float_list, default=[1.0, 2.0, 3.0, 4.0])
    p_budget.add_argument("--delta-f", type=float, default=5.0, dest="delta_f")
    p_budget.add_argument("--delta", type=float, default=1e-5)
    p_budget.add_argument("--log-base", choices=["natural", "base10"], default="natural", dest="log_base")
    p_budget.add_argument("--csv", default=None, help="also write the table to this CSV file")
    p_budget.set_defaults(func=cmd_budget)

    p_cal = sub.add_parser("calibrate", help="alpha achieving target Huber noise variances")
    p_cal.add_argument("--targets", type=_float_list, default=[2.0, 3.0, 4.0])
    p_cal.add_argument("--delta-f", type=float, default=5.0, dest="delta_f")
    p_cal.set_defaults(func=cmd_calibrate)

    p_ver = sub.add_parser("verify-privacy", help="check sup g(t) = alpha * delta_f on a grid")
    p_ver.add_argument("--alphas", type=_float_list, default=[0.5, 1.0, 2.0, 4.0])
    p_ver.add_argument("--delta-fs", type=_float_list, default=[0.1, 1.0, 5.0, 10.0], dest="delta_fs")
    p_ver.add_argument("--tolerance", type=float, default=1e-9)
    p_ver.set_defaults(func=cmd_verify_privacy)

    p_gen = sub.add_parser("gen", help="write a synthetic dataset to an .npz file")
    p_gen.add_argument("--m", type=int, default=500)
    p_gen.add_argument("--n", type=int, default=500)
    p_gen.add_argument("--rank", type=int, default=5)
    p_gen.add_argument("--fraction", type=float, default=0.15)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gen)

    p_run = sub.add_parser("run", help="run an experiment sweep")
    p_run.add_argument("--plan", default=None, help="JSON plan file; flags override its fields")
    p_run.add_argument("--dataset", default=None, help="synthetic | movielens:PATH | sweetrs:PATH | file:PATH.npz")
    p_run.add_argument("--m", type=int, default=None)
    p_run.add_argument("--n", type=int, default=None)
    p_run.add_argument("--data-rank", type=int, default=None, dest="data_rank", help="rank of the synthetic ground truth")
    p_run.add_argument("--solver", type=_str_list, default=None, dest="solvers", help="comma list from {als,irls}")
    p_run.add_argument("--mechanism", type=_str_list, default=None, dest="mechanisms", help="comma list from {none,gaussian,laplace,huber}")
    p_run.add_argument("--variance", type=_float_list, default=None, dest="variances")
    p_run.add_argument("--fraction", type=_float_list, default=None, dest="fractions")
    p_run.add_argument("--trials", type=int, default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--rank", type=int, default=None, help="rank used by the solvers")
    p_run.add_argument("--lambda", type=float, default=None, dest="lam")
    p_run.add_argument("--outer-t", type=int, default=None, dest="outer_iterations")
    p_run.add_argument("--irls-k", type=int, default=None, dest="irls_iterations")
    p_run.add_argument("--huber-loss-alpha", type=float, default=None, dest="huber_loss_alpha")
    p_run.add_argument("--delta", type=float, default=None)
    p_run.add_argument("--delta-f", type=float, default=None, dest="delta_f")
    p_run.add_argument("--log-base", choices=["natural", "base10"], default=None, dest="log_base")
    p_run.add_argument("--trial-mode", choices=["fresh_mask", "fresh_matrix"], default=None, dest="trial_mode")
    p_run.add_argument("--holdout", type=float, default=None, dest="holdout_fraction")
    p_run.add_argument("--clip", action=argparse.BooleanOptionalAction, default=None)
    p_run.add_argument("--out", default=None, help="directory for run records and summary.csv")
    p_run.set_defaults(func=cmd_run)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
