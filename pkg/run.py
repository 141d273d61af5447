#!/usr/bin/env python3
"""
NDRE Solver Toolkit - Command Line Runner
"""

import sys
import os
import argparse
import logging

# Add src directory to path
sys.path.append(os.path.join(os.path.dirname(__file__), 'src'))

from config import LOG_LEVEL
from src.exceptions import ConfigError, NDREError
from src.experiment_runner import METHODS, ORACLES, PROBLEM_KINDS, ExperimentRunner, load_experiment_config
from src.report_io import recompute_residuals, render_table

EXIT_OK = 0
EXIT_SOLVER_ERROR = 1
EXIT_CONFIG_ERROR = 2
EXIT_NOT_CONVERGED = 3


def add_experiment_arguments(parser):
    """Flags shared by run and compare; each overrides the experiment file"""
    parser.add_argument('--config', help='Experiment file with PROBLEM__*, SOLVER__* and RUN__* keys')
    parser.add_argument('--problem', choices=PROBLEM_KINDS, help='Problem family')
    parser.add_argument('--n', type=int, help='Problem size')
    parser.add_argument('--c', type=float, help='Transport parameter c in (0, 1]')
    parser.add_argument('--alpha', type=float, help='Transport parameter alpha in [0, 1)')
    parser.add_argument('--seed', type=int, help='Seed for random F and G (guo problem)')
    parser.add_argument('--h', type=float, help='Step size of the BDF/Rosenbrock schemes')
    parser.add_argument('--tf', dest='t_f', type=float, help='Final time')
    parser.add_argument('--tol', type=float, help='Relative residual tolerance')
    parser.add_argument('--check-every', type=int, help='Krylov steps between residual checks')
    parser.add_argument('--grid-step', type=float, help='Spacing of the output time grid')
    parser.add_argument('--out', help='Output directory for the artifacts')


def main():
    """Command line interface for NDRE experiments"""

    parser = argparse.ArgumentParser(
        description="NDRE Solver Toolkit - low-rank solution of nonsymmetric differential Riccati equations",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python run.py run --problem transport --n 40 --method eba-bdf1 --h 0.01 --tf 10 --oracle direct-exp
  python run.py run --problem guo --n 500 --method eba-exp --tf 1 --bounds
  python run.py compare --problem transport --n 1000 --methods eba-bdf1 bdf1-newton-ba
  python run.py recompute results/
        """
    )
    subparsers = parser.add_subparsers(dest='command', required=True)

    run_parser = subparsers.add_parser('run', help='Solve one configured experiment')
    add_experiment_arguments(run_parser)
    run_parser.add_argument('--method', choices=sorted(METHODS), help='Solver method')
    run_parser.add_argument('--oracle', choices=ORACLES, help='Dense oracle to compare against')
    run_parser.add_argument('--bounds', action='store_true', default=None,
                            help='Evaluate the nonlocal error bound rho')

    compare_parser = subparsers.add_parser('compare', help='Run several methods on one problem')
    add_experiment_arguments(compare_parser)
    compare_parser.add_argument('--methods', nargs='+', choices=sorted(METHODS),
                                help='Methods to compare (at least two)')

    recompute_parser = subparsers.add_parser('recompute', help='Re-derive residuals.csv from stored snapshots')
    recompute_parser.add_argument('report_dir', help='Directory written by a previous run')

    args = parser.parse_args()
    logging.basicConfig(level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
                        format='%(asctime)s %(name)s %(levelname)s: %(message)s')

    if args.command == 'recompute':
        sys.exit(recompute(args.report_dir))

    overrides = {key: value for key, value in vars(args).items() if key not in ('command', 'config')}
    try:
        config = load_experiment_config(args.config, overrides)
    except ConfigError as e:
        print(f"❌ Configuration error: {e}")
        sys.exit(EXIT_CONFIG_ERROR)

    runner = ExperimentRunner(config)
    try:
        if args.command == 'compare':
            print(f"🔍 Comparing {', '.join(config.methods)} on {config.problem} (n={config.n})...")
            frame = runner.compare()
            print("\n" + render_table(frame))
            print(f"\n💾 Comparison saved to {config.out}")
            sys.exit(EXIT_SOLVER_ERROR if (frame['status'] == 'failed').any() else EXIT_OK)

        print(f"🔍 Solving {config.problem} (n={config.n}) with {config.method}...")
        summary = runner.run()
    except ConfigError as e:
        print(f"❌ Configuration error: {e}")
        sys.exit(EXIT_CONFIG_ERROR)
    except NDREError as e:
        print(f"❌ Solver error: {e}")
        sys.exit(EXIT_SOLVER_ERROR)

    display_summary(summary)
    sys.exit(EXIT_OK if summary['converged'] else EXIT_NOT_CONVERGED)


def display_summary(summary):
    """Print the outcome of a single run"""

    print("\n" + "="*60)
    print(f"📈 NDRE SOLVE: {summary['method']}")
    print("="*60)
    status = "✅ converged" if summary['converged'] else "⚠️ not converged"
    print(f"\n🎯 Status: {status}")
    print(f"📊 Final relative residual: {summary['final_residual']:.3e}")

    oracle = summary.get('oracle')
    if oracle:
        if 'skipped' in oracle:
            print(f"\n🧪 Oracle {oracle['name']} skipped: {oracle['skipped']}")
        else:
            print(f"\n🧪 Oracle {oracle['name']}:")
            print(f"  max |X11 difference|: {oracle['max_x11_abs_diff']:.3e}")
            print(f"  max relative Frobenius difference: {oracle['max_rel_fro_diff']:.3e}")

    bounds = summary.get('bounds')
    if bounds:
        if 'skipped' in bounds:
            print(f"\n📐 Error bound skipped: {bounds['skipped']}")
        else:
            print(f"\n📐 Error bound: feasible={bounds['feasible']}, rho={bounds['rho']:.3e}")

    print(f"\n💾 Artifacts:")
    for name, path in summary['paths'].items():
        print(f"  • {name}: {path}")
    print("="*60)


def recompute(report_dir):
    """Spot-check the residual CSV of a finished run"""
    try:
        frame = recompute_residuals(report_dir)
    except (NDREError, OSError) as e:
        print(f"❌ Error: {e}")
        return EXIT_SOLVER_ERROR
    print(render_table(frame))
    worst = frame['difference'].max() if len(frame) else 0.0
    print(f"\n✅ Max difference: {worst:.3e}")
    return EXIT_OK


if __name__ == "__main__":
    main()
