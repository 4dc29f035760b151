"""Command-line workbench: ``approxctl {verify,gramian,solve,sweep,oracle} --scenario FILE``.

Each subcommand writes schema-fixed CSV files plus ``report.json`` into
``--out`` and prints a short summary.  Exit codes: 0 success, 2 invalid
scenario, 3 solver did not converge, 4 a verification check failed,
5 numerical diagnostic failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DiagnosticError, ScenarioError
from .families import EvolutionKernel, verify_axioms
from .inclusion import ControlProblem, MildSolution, _solve, sweep_regularization
from .oracle import dense_integrate, kernel_agreement, quadrature_gramian_reference
from .scenario import Scenario, load_scenario
from .synthesis import h0_diagnostic, linear_terminal_error, residual_target

log = logging.getLogger("approxctl")

EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_CHECK_FAILED, EXIT_DIAGNOSTIC = 0, 2, 3, 4, 5
COMMANDS = ("verify", "gramian", "solve", "sweep", "oracle")


@dataclass
class Check:
    name: str
    value: float
    threshold: float | None = None
    kind: str = "max"  # "max": value <= threshold; "min": value >= threshold

    @property
    def passed(self) -> bool:
        if self.threshold is None:
            return True
        return self.value <= self.threshold if self.kind == "max" else self.value >= self.threshold


@dataclass
class RunReport:
    command: str
    scenario: str
    digest: str
    checks: list[Check] = field(default_factory=list)
    gramian: dict[str, float] = field(default_factory=dict)
    solves: list[dict] = field(default_factory=list)
    flags: dict[str, bool] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    exit_code: int = EXIT_OK

    def to_json(self) -> str:
        data = asdict(self)
        data["flags"] = {k: bool(v) for k, v in self.flags.items()}
        for c, check in zip(data["checks"], self.checks):
            c["passed"] = check.passed
        return json.dumps(data, indent=2, sort_keys=True)

    def summary(self) -> str:
        lines = [f"{self.command} {self.scenario} (digest {self.digest[:12]})"]
        for c in self.checks:
            bound = "" if c.threshold is None else f" {'<=' if c.kind == 'max' else '>='} {c.threshold:.3g}"
            status = "" if c.threshold is None else ("  PASS" if c.passed else "  FAIL")
            lines.append(f"  {c.name:<28} {c.value: .6e}{bound}{status}")
        for k, v in self.gramian.items():
            lines.append(f"  {k:<28} {v: .6e}")
        for s in self.solves:
            lines.append("  " + ", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in s.items()))
        for k, v in self.flags.items():
            lines.append(f"  {k:<28} {v}")
        lines.append(f"  outputs: {', '.join(self.outputs) or '-'}")
        return "\n".join(lines)


def _write_csv(out: Path, name: str, header: Sequence[str], rows: Iterable[Sequence], report: RunReport) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / name, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    report.outputs.append(name)


def _checks_csv(out: Path, report: RunReport, name: str) -> None:
    rows = [(c.name, repr(c.value), "" if c.threshold is None else repr(c.threshold), c.passed) for c in report.checks]
    _write_csv(out, name, ("check", "value", "threshold", "passed"), rows, report)


def solution_rows(sol: MildSolution, modes: Sequence[int]) -> tuple[list[str], list[list[float]]]:
    header = ["t"]
    header += [f"x{n}_{part}" for n in modes for part in ("re", "im")]
    header += [f"u{n}_{part}" for n in modes for part in ("re", "im")]
    rows = []
    for j, t in enumerate(sol.times):
        row = [float(t)]
        for arr in (sol.states[j], sol.controls[j]):
            for z in arr:
                row += [float(z.real), float(z.imag)]
        rows.append(row)
    return header, rows


def _solve_scenario(sc: Scenario, problem: ControlProblem) -> MildSolution:
    return _solve(problem, sc.selection, sc.nonlocal_spec, sc.impulses)


def _solve_summary(sol: MildSolution) -> dict:
    return {
        "status": sol.status,
        "iterations": sol.iterations,
        "terminal_error": sol.terminal_error,
        "contraction_constant": sol.contraction_constant,
        "residual_ratio": sol.residual_ratio,
    }


def _kernel_summary(kernel: EvolutionKernel) -> dict[str, float]:
    return {"Nhat": kernel.Nhat, "Ntilde": kernel.Ntilde, "N1": kernel.N1, "rk4_substeps": float(kernel.substeps)}


def cmd_verify(sc: Scenario, out: Path, report: RunReport) -> None:
    kernel = sc.kernel()
    ax = verify_axioms(kernel)
    tol = sc.tolerances
    report.checks += [
        Check("S(t,t)=0", ax.zero_diagonal, 1e-6),
        Check("C(t,t)=I", ax.unit_cosine_diagonal, 1e-6),
        Check("dS/dt|t=s=I", ax.dt_at_diagonal, tol["derivative"]),
        Check("dS/ds|t=s=-I", ax.ds_at_diagonal, tol["derivative"]),
        Check("d2S/dt2=A(t)S (relative)", ax.second_order),
        Check("gronwall_slack", ax.gronwall_slack, -tol["gronwall"], "min"),
        Check("oracle_kernel_relative", kernel_agreement(kernel), tol["oracle"]),
    ]
    report.gramian.update(_kernel_summary(kernel))
    _checks_csv(out, report, "axioms.csv")
    if not all(c.passed for c in report.checks):
        report.exit_code = EXIT_CHECK_FAILED


def cmd_gramian(sc: Scenario, out: Path, report: RunReport) -> None:
    kernel = sc.kernel()
    problem = sc.problem(kernel)
    g = problem.gramian
    p = residual_target(kernel, sc.x0, sc.y0, sc.target)
    probes = [sc.modes.basis(sc.modes.modes[0]), sc.modes.basis(sc.modes.modes[-1]), p, *sc.probes]
    table = h0_diagnostic(g, sc.a_list, probes)
    _write_csv(out, "decay.csv", ("a", "probe_id", "norm_value"), table.rows(), report)
    _write_csv(out, "gramian_spectrum.csv", ("index", "eigenvalue"), enumerate(g.eigenvalues.tolist()), report)
    report.gramian.update(
        {
            "lambda_min": g.lambda_min,
            "lambda_max": float(g.eigenvalues[-1]),
            **_kernel_summary(kernel),
            "M_B": problem.M_B,
            "predicted_linear_error": linear_terminal_error(g, sc.a, p),
        }
    )
    report.flags["h0_holds_on_probes"] = table.h0_holds
    for i, flag in enumerate(table.non_decay):
        report.flags[f"probe_{i}_non_decay"] = flag


def cmd_solve(sc: Scenario, out: Path, report: RunReport) -> None:
    kernel = sc.kernel()
    problem = sc.problem(kernel)
    sol = _solve_scenario(sc, problem)
    header, rows = solution_rows(sol, sc.modes.modes)
    _write_csv(out, "solution.csv", header, rows, report)
    _write_csv(out, "residuals.csv", ("iteration", "residual"), enumerate(sol.residual_history, 1), report)
    if sol.impulses:
        imp_rows = []
        for rec in sol.impulses:
            for n, (a, b) in enumerate(zip(rec.pos_minus, rec.pos_plus)):
                imp_rows.append((rec.time, sc.modes.modes[n], a.real, a.imag, b.real, b.imag))
        _write_csv(out, "impulses.csv", ("t", "mode", "minus_re", "minus_im", "plus_re", "plus_im"), imp_rows, report)
    summary = _solve_summary(sol)
    if sc.linear and sc.nonlocal_spec is None and sc.impulses is None:
        p = residual_target(kernel, sc.x0, sc.y0, sc.target)
        summary["predicted_linear_error"] = linear_terminal_error(problem.gramian, sc.a, p)
    report.solves.append(summary)
    if not sol.converged:
        report.exit_code = EXIT_NOT_CONVERGED


def cmd_sweep(sc: Scenario, out: Path, report: RunReport) -> None:
    kernel = sc.kernel()
    table = sweep_regularization(sc.problem(kernel), sc.a_list, sc.selection, sc.nonlocal_spec, sc.impulses)
    rows = [(r.a, r.terminal_error, r.iterations, r.converged, r.contraction_constant) for r in table.rows]
    _write_csv(out, "sweep.csv", ("a", "terminal_error", "iterations", "converged", "contraction_constant"), rows, report)
    report.flags["non_decay"] = table.non_decay
    report.flags["nonincreasing"] = table.nonincreasing
    report.flags["strictly_decreasing"] = table.strictly_decreasing
    if not all(r.converged for r in table.rows):
        report.exit_code = EXIT_NOT_CONVERGED


def cmd_oracle(sc: Scenario, out: Path, report: RunReport) -> None:
    kernel = sc.kernel()
    tol = sc.tolerances["oracle"]
    report.checks.append(Check("kernel_vs_dense", kernel_agreement(kernel), tol))
    if sc.damping.is_zero and np.allclose(sc.B, np.eye(sc.modes.dim)):
        problem = sc.problem(kernel)
        ref = quadrature_gramian_reference(sc.modes, sc.grid.T)
        got = np.diag(problem.gramian.matrix).real
        want = np.diag(ref.matrix).real
        report.checks.append(Check("gramian_vs_analytic", float(np.max(np.abs(got - want) / np.abs(want))), tol))
    problem = sc.problem(kernel)
    sol = _solve_scenario(sc, problem)
    forcing = sol.selections + sol.controls @ sc.B.T
    dense = dense_integrate(
        sc.modes, sc.damping, forcing, sol.states[0], sol.velocities[0], sc.grid, sc.impulses
    )
    M = sc.grid.steps
    report.checks.append(Check("terminal_state_vs_dense", float(np.linalg.norm(dense.pos[M] - sol.states[M])), tol))
    report.solves.append(_solve_summary(sol))
    _checks_csv(out, report, "oracle.csv")
    if not all(c.passed for c in report.checks):
        report.exit_code = EXIT_CHECK_FAILED


HANDLERS = {"verify": cmd_verify, "gramian": cmd_gramian, "solve": cmd_solve, "sweep": cmd_sweep, "oracle": cmd_oracle}


def run(command: str, scenario: Scenario, out: str | Path) -> RunReport:
    """Execute one subcommand and write its outputs (including ``report.json``)."""
    if command not in HANDLERS:
        raise ValueError(f"unknown command {command!r}; expected one of {COMMANDS}")
    out = Path(out)
    report = RunReport(command, scenario.name, scenario.digest)
    HANDLERS[command](scenario, out, report)
    report.outputs.append("report.json")
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n")
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="approxctl", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=COMMANDS)
    parser.add_argument("--scenario", required=True, help="scenario YAML file or bundled name (e.g. wave_example)")
    parser.add_argument("--out", default="out", help="output directory (default: ./out)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        sc = load_scenario(args.scenario)
        report = run(args.subcommand, sc, args.out)
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except DiagnosticError as exc:
        print(f"diagnostic failure: {exc}", file=sys.stderr)
        return EXIT_DIAGNOSTIC
    print(report.summary())
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
