"""Command-line interface.

Exit codes: 0 success, 1 usage or input error, 2 runtime failure,
3 solver stopped before converging. Progress goes to stderr, results to
stdout.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np

from . import io
from .hierarchy import HierarchyError, validate
from .oracle import DEFAULT_CAP, TooLarge, brute_force_min
from .problem import primal_energy
from .reductions import InvalidLevels, TooFewLabels, from_ishikawa, from_potts
from .solver import InvalidProblem, SolverParams, solve

EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_NOT_CONVERGED = 3

_positive = click.FloatRange(min=0, min_open=True)


@click.group()
def cli():
    """Hierarchical max-flow segmentation."""


@cli.command("validate")
@click.argument("spec")
def cmd_validate(spec):
    """Parse SPEC and report the label hierarchy."""
    problem = io.read_problem(spec)
    h = problem.hierarchy
    problems = validate(h)
    for p in problems:
        click.echo(f"violation: {p}", err=True)
    leaves = [h.name(i) for i in h.leaves]
    click.echo(f"{len(h)} nodes, {len(leaves)} leaves, depth {h.depth()}")
    click.echo("leaves: " + " ".join(leaves))
    return EXIT_USAGE if problems else 0


@cli.command("solve")
@click.argument("spec")
@click.option("--c", "c", type=_positive, default=SolverParams.c, show_default=True, help="Augmentation weight.")
@click.option("--tau", type=_positive, default=SolverParams.tau, show_default=True, help="Spatial flow step.")
@click.option("--tol", type=_positive, default=SolverParams.tolerance, show_default=True, help="Mean labeling change threshold.")
@click.option("--max-iters", type=click.IntRange(min=1), default=SolverParams.max_iters, show_default=True)
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--out", "out_dir", default="ghmf_out", show_default=True, help="Output directory.")
@click.option("--debug-invariants", is_flag=True, help="Check flow capacities after every update.")
def cmd_solve(spec, c, tau, tol, max_iters, workers, out_dir, debug_invariants):
    """Solve SPEC and write labelings, label map and summary to --out."""
    problem = io.read_problem(spec)
    params = SolverParams(c=c, tau=tau, max_iters=max_iters, tolerance=tol, workers=workers, debug_invariants=debug_invariants)

    def progress(state, energy, gap):
        click.echo(f"iter={state.iteration} residual={state.residual:.6e} energy={energy:.9g} gap={gap:.3e}", err=True)

    sol = solve(problem, params, progress=progress)
    io.write_solution(sol, out_dir)
    click.echo(io.format_summary(sol), nl=False)
    return 0 if sol.converged else EXIT_NOT_CONVERGED


@cli.command("reduce")
@click.option("--potts", "kind", flag_value="potts", help="Input is a flat Potts spec.")
@click.option("--ishikawa", "kind", flag_value="ishikawa", help="Input is an Ishikawa level spec.")
@click.argument("input_spec")
@click.option("--out", "out_spec", required=True, help="Path of the hierarchical spec to write.")
@click.option("--table", default=None, help="Level table path (Ishikawa only; default <out>.levels).")
def cmd_reduce(kind, input_spec, out_spec, table):
    """Rewrite a Potts or Ishikawa model as a hierarchical spec."""
    if kind is None:
        raise click.UsageError("one of --potts or --ishikawa is required")
    src = Path(input_spec)
    text = src.read_text(encoding="utf-8")
    out = Path(out_spec)
    out.parent.mkdir(parents=True, exist_ok=True)
    if kind == "potts":
        problem = from_potts(io.parse_potts(text, src.parent))
        io.write_problem(problem, out)
    else:
        problem, rmap = from_ishikawa(io.parse_ishikawa(text, src.parent))
        io.write_problem(problem, out)
        table_path = Path(table) if table else out.with_suffix(".levels")
        table_path.write_text(io.format_reconstruction(rmap), encoding="utf-8")
        click.echo(f"table={table_path}")
    click.echo(f"spec={out}")
    click.echo(f"nodes={len(problem.hierarchy)}")
    return 0


@cli.command("oracle")
@click.argument("spec")
@click.option("--cap", type=click.IntRange(min=1), default=DEFAULT_CAP, show_default=True, help="Maximum labelings to enumerate.")
@click.option("--out", "out_dir", default=None, help="Directory for the minimizing label map.")
def cmd_oracle(spec, cap, out_dir):
    """Exhaustively minimize the discrete energy of a tiny SPEC."""
    problem = io.read_problem(spec)
    label_map, energy = brute_force_min(problem, cap)
    names = np.array(problem.hierarchy.names)
    click.echo(f"energy={energy:.12g}")
    for row in np.atleast_2d(names[label_map]).reshape(-1, label_map.shape[-1]):
        click.echo("labels=" + " ".join(row))
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        io.write_label_map(label_map, out_dir)
    return 0


@cli.command("energy")
@click.argument("spec")
@click.argument("labeling_dir")
def cmd_energy(spec, labeling_dir):
    """Evaluate the energy of leaf labelings u_<name>.ghmf stored in LABELING_DIR."""
    problem = io.read_problem(spec)
    u = io.read_leaf_labeling(problem, labeling_dir)
    click.echo(f"energy={primal_energy(problem, u):.12g}")
    return 0


_INPUT_ERRORS = (io.ParseError, HierarchyError, TooFewLabels, InvalidLevels, InvalidProblem)


def main(argv=None) -> int:
    try:
        rv = cli.main(args=argv, prog_name="ghmf", standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.Abort:
        return EXIT_RUNTIME
    except _INPUT_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    except TooLarge as exc:
        click.echo(f"error: {exc}; rerun with --cap {exc.needed}", err=True)
        return EXIT_RUNTIME
    except (OSError, ValueError, RuntimeError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_RUNTIME
    return rv if isinstance(rv, int) else 0


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
