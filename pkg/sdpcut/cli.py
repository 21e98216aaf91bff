#!/usr/bin/env python3
# PYTHON_ARGCOMPLETE_OK
"""
sdpcut - two-population clustering benchmarks: SDP relaxation vs spectral k-means
"""

import sys
import argparse
from pathlib import Path
from typing import Any, Dict, List, Optional

import argcomplete
from rich.console import Console
from rich.table import Table
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn, TimeElapsedColumn

from .app.config import settings
from .app.errors import InvalidConfigError, InvalidSpecError
from .app.utils.logger import setup_logger
from .app.utils.matrix_io import write_rows_csv
from .services.experiments import (
    SWEEP_HEADER,
    VERIFY_SUITES,
    ExperimentPlan,
    RunMode,
    load_plan,
    run_angles,
    run_sweep,
    run_verify,
)
from .services.trial_runner import TrialJob, TrialRunner

console = Console()

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_INVALID_CONFIG = 2


def _fmt(value: Optional[float], digits: int = 4) -> str:
    return "-" if value is None else f"{value:.{digits}g}"


def _int_list(text: str) -> List[int]:
    try:
        return [int(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")


class SdpCutCLI:
    def __init__(self, threads: int = settings.threads):
        self.runner = TrialRunner(max_workers=threads)

    def _with_progress(self, description: str, run):
        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            TextColumn("{task.completed}/{task.total}"),
            TimeElapsedColumn(),
            console=console
        ) as progress:
            task = progress.add_task(description, total=None)

            def on_progress(job: TrialJob):
                progress.update(task, total=job.total_tasks,
                                completed=job.completed_tasks + job.failed_tasks)

            self.runner.register_callback('on_progress', on_progress)
            try:
                return run()
            finally:
                self.runner.callbacks['on_progress'].remove(on_progress)

    def sweep_mode(self, plan: ExperimentPlan, out: Path) -> int:
        """Success-rate sweep over the (n, p) grid"""
        console.print(f"\n[bold cyan]Success-rate sweep[/bold cyan] "
                      f"n={plan.n_grid} p={plan.p_grid} trials={plan.trials} "
                      f"algorithms={','.join(a.value for a in plan.algorithms)}")

        rows = self._with_progress("Running trials...", lambda: run_sweep(plan, runner=self.runner))
        write_rows_csv(rows, out, header=SWEEP_HEADER)

        table = Table(title="Success rate", show_lines=False)
        table.add_column("Algorithm", style="cyan")
        table.add_column("n", justify="right")
        table.add_column("p", justify="right")
        table.add_column("npγ²", justify="right")
        table.add_column("Success", justify="right", style="green")
        table.add_column("± std", justify="right")
        table.add_column("θ (deg)", justify="right")
        table.add_column("Failures", justify="right")

        for row in rows:
            failures = f"[red]{row.failures}[/red]" if row.failures else "0"
            table.add_row(
                row.algorithm, str(row.n), str(row.p), _fmt(row.np_gamma_sq),
                _fmt(row.mean_success, 3), _fmt(row.std_success, 2), _fmt(row.mean_theta_deg),
                failures,
            )
        console.print(table)
        console.print(f"\n[green]✓[/green] Results written to {out}")
        return EXIT_OK

    def angles_mode(self, plan: ExperimentPlan, out: Path) -> int:
        """Angle and Z-distance study"""
        console.print(f"\n[bold cyan]Angle study[/bold cyan] "
                      f"n={plan.n_grid} p={plan.p_grid} w1={plan.w1} trials={plan.trials}")

        rows = self._with_progress("Running trials...", lambda: run_angles(plan, runner=self.runner))
        write_rows_csv(rows, out)

        table = Table(title="Angles (degrees)")
        table.add_column("n", justify="right")
        table.add_column("p", justify="right")
        table.add_column("θ_SDP", justify="right", style="green")
        table.add_column("θ₁", justify="right", style="yellow")
        table.add_column("φ", justify="right")
        table.add_column("‖Ẑ−x̄x̄ᵀ‖₁/n²", justify="right")
        table.add_column("∠(v̄₁, x̄)", justify="right", style="dim")

        for row in rows:
            table.add_row(
                str(row.n), str(row.p), _fmt(row.mean_theta_sdp), _fmt(row.mean_theta_1),
                _fmt(row.mean_phi), _fmt(row.mean_z_l1), _fmt(row.reference_angle_deg, 6),
            )
        console.print(table)
        console.print(f"\n[green]✓[/green] Results written to {out}")
        return EXIT_OK

    def verify_mode(self, seed: int, out: Path, suites: Optional[List[str]] = None,
                    verbose: bool = False) -> int:
        """Run the verification suites; nonzero exit on any failed check"""
        console.print(f"\n[bold cyan]Verification[/bold cyan] seed={seed}")
        with console.status("Running verification suites..."):
            report = run_verify(seed=seed, suites=suites)
        report.write_csv(out)

        by_name: Dict[str, List[Any]] = {}
        for check in report.checks:
            by_name.setdefault(check.name, []).append(check)

        table = Table(title="Verification checks")
        table.add_column("Check", style="cyan")
        table.add_column("Runs", justify="right")
        table.add_column("Failed", justify="right")
        table.add_column("Worst statistic", justify="right")
        for name, checks in by_name.items():
            failed = sum(1 for c in checks if not c.passed)
            worst = max(checks, key=lambda c: c.statistic - c.bound)
            table.add_row(
                name, str(len(checks)),
                f"[red]{failed}[/red]" if failed else "[green]0[/green]",
                f"{worst.statistic:.4g} / {worst.bound:.4g}",
            )
        console.print(table)

        if verbose:
            for check in report.failures:
                if check.error:
                    console.print(f"[red]✗ {check.name} [{check.fingerprint}] {check.error}[/red]")
                else:
                    console.print(f"[red]✗ {check.name} [{check.fingerprint}] "
                                  f"{check.statistic:.6g} > {check.bound:.6g}[/red]")

        console.print(f"\nResults written to {out}")
        if report.passed:
            console.print(f"[green]✓ All {len(report.checks)} checks passed[/green]")
            return EXIT_OK
        console.print(f"[red]❌ {len(report.failures)} of {len(report.checks)} checks failed[/red]")
        return EXIT_VERIFY_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='sdpcut',
        description='Two-population clustering: SDP relaxation and spectral k-means benchmarks',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog='''
Algorithms:
  sdp            - elliptope SDP on the adjusted Gram matrix, eigenvector signs
  spectral_pw    - leading eigenvector of YY^T, best contiguous k-means split
  spectral_sign  - leading eigenvector of YY^T, coordinate signs

Examples:
  sdpcut sweep --n-grid 100,400,1000 --p-grid 500 --trials 10
  sdpcut angles --w1 0.7 --p-grid 20000 --n-grid 100,200,400
  sdpcut verify --seed 0 --out results/verify.csv
  sdpcut sweep --config plans/growth.json --threads 8
        '''
    )

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, help='JSON experiment config file')
    common.add_argument('--out', type=str, help='Output CSV path')
    common.add_argument('--seed', type=int, help='Master seed (u64)')
    common.add_argument('--threads', type=int, help=f'Worker threads (default: {settings.threads})')
    common.add_argument('--algo', type=str,
                        help='Comma-separated algorithms: sdp,spectral_pw,spectral_sign')
    common.add_argument('-v', '--verbose', action='store_true', help='Show detailed output')

    grid = argparse.ArgumentParser(add_help=False)
    grid.add_argument('--n-grid', type=_int_list, help='Comma-separated sample sizes')
    grid.add_argument('--p-grid', type=_int_list, help='Comma-separated dimensions')
    grid.add_argument('--trials', type=int, help='Trials per cell')
    grid.add_argument('--w1', type=float, help='Proportion of the first population')
    grid.add_argument('--model', choices=['bernoulli', 'gaussian'], help='Mixture model')

    subparsers = parser.add_subparsers(dest='mode', help='Operation mode', required=True)
    subparsers.add_parser('sweep', parents=[common, grid], help='Success rate over an (n, p) grid')
    subparsers.add_parser('angles', parents=[common, grid], help='Angles and Z distances over an (n, p) grid')
    verify_parser = subparsers.add_parser('verify', parents=[common], help='Run the verification suites')
    verify_parser.add_argument('--suites', type=str,
                               help=f'Comma-separated subset of: {",".join(VERIFY_SUITES)}')

    parser.add_argument('--no-color', action='store_true', help='Disable colored output')
    parser.add_argument('--version', action='version', version=f'{settings.app_name} {settings.app_version}')
    return parser


def _plan_from_args(args) -> ExperimentPlan:
    overrides = {
        'mode': args.mode,
        'master_seed': args.seed,
        'threads': args.threads,
        'output_path': args.out,
        'algorithms': [a.strip() for a in args.algo.split(",") if a.strip()] if args.algo else None,
        'n_grid': getattr(args, 'n_grid', None),
        'p_grid': getattr(args, 'p_grid', None),
        'trials': getattr(args, 'trials', None),
        'w1': getattr(args, 'w1', None),
        'model': getattr(args, 'model', None),
    }
    return load_plan(Path(args.config) if args.config else None, overrides)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()

    # Enable auto-completion
    argcomplete.autocomplete(parser)

    args = parser.parse_args(argv)

    global console
    if args.no_color:
        console = Console(no_color=True)

    settings.setup_directories()
    setup_logger("sdpcut", level="DEBUG" if args.verbose else settings.log_level, log_dir=settings.log_dir)

    try:
        plan = _plan_from_args(args)
    except (InvalidConfigError, InvalidSpecError) as e:
        console.print(f"[red]❌ Invalid configuration: {e}[/red]")
        return EXIT_INVALID_CONFIG

    out = Path(plan.output_path) if plan.output_path else settings.output_dir / f"{plan.mode.value}.csv"
    cli = SdpCutCLI(threads=plan.threads)

    try:
        if plan.mode == RunMode.SWEEP:
            return cli.sweep_mode(plan, out)
        if plan.mode == RunMode.ANGLES:
            return cli.angles_mode(plan, out)
        suites = [s.strip() for s in args.suites.split(",") if s.strip()] if args.suites else None
        return cli.verify_mode(plan.master_seed, out, suites=suites, verbose=args.verbose)
    except (InvalidConfigError, InvalidSpecError) as e:
        console.print(f"[red]❌ Invalid configuration: {e}[/red]")
        return EXIT_INVALID_CONFIG
    except KeyboardInterrupt:
        console.print("\n[yellow]Operation cancelled by user[/yellow]")
        return EXIT_OK
    except Exception as e:
        console.print(f"[red]❌ Error: {e}[/red]")
        if args.verbose:
            import traceback
            console.print(traceback.format_exc())
        return EXIT_VERIFY_FAILED


if __name__ == '__main__':
    sys.exit(main())
