#!/usr/bin/env python3
"""
Setup script for the NDRE Solver Toolkit
"""

import importlib.util
import re
import subprocess
import sys
import os

HERE = os.path.dirname(os.path.abspath(__file__))
# distribution name -> import name where they differ
IMPORT_NAMES = {'python-dotenv': 'dotenv'}


def read_requirements(path=os.path.join(HERE, "requirements.txt")):
    """Requirement lines without comments or blanks"""
    with open(path) as f:
        lines = [line.split('#', 1)[0].strip() for line in f]
    return [line for line in lines if line]


def missing_requirements(requirements):
    """Requirements whose module cannot be found in this interpreter"""
    missing = []
    for requirement in requirements:
        name = re.split(r'[<>=!~;\[ ]', requirement, maxsplit=1)[0]
        module = IMPORT_NAMES.get(name.lower(), name.replace('-', '_'))
        if importlib.util.find_spec(module) is None:
            missing.append(requirement)
    return missing


def install_requirements():
    """Install whatever requirements.txt lists and the interpreter lacks"""
    requirements = read_requirements()
    missing = missing_requirements(requirements)
    print(f"📦 Numerical stack: {', '.join(requirements)}")
    if not missing:
        print("✅ Every requirement is already importable")
        return True
    print(f"📦 Installing {len(missing)} missing package(s): {', '.join(missing)}")
    try:
        subprocess.check_call([sys.executable, "-m", "pip", "install", *missing])
        print("✅ Numerical stack ready")
        return True
    except subprocess.CalledProcessError as e:
        print(f"❌ pip failed with exit code {e.returncode} for {', '.join(missing)}")
        return False


def verify_installation():
    """Import the stack and solve a tiny transport problem"""
    print("\n🧪 Testing installation...")
    try:
        import numpy
        import scipy
        import pandas
        import dotenv
        print("✅ All imports successful!")
    except ImportError as e:
        print(f"❌ Import error: {e}")
        return False

    try:
        sys.path.append(HERE)
        from src.problem import TransportParams, build_transport_problem
        from src.eba_driver import SolverOptions, solve_ndre

        problem = build_transport_problem(TransportParams(n=20))
        solution = solve_ndre(problem, SolverOptions(inner='exp', t_f=1.0, check_every=2, m_max=20))
        print(f"✅ Sample solve: relative residual {solution.residual:.2e}")
        return solution.converged
    except Exception as e:
        print(f"❌ Sample solve failed: {e}")
        return False


def main():
    """Main setup function"""
    print("🚀 Setting up NDRE Solver Toolkit...")
    print("="*50)

    if not install_requirements():
        print("❌ Setup failed during package installation")
        return False

    if not verify_installation():
        print("❌ Setup failed during testing")
        return False

    print("\n🎉 Setup completed successfully!")
    print("\n📋 Next steps:")
    print("1. Run an experiment: python run.py run --config experiments/transport_example1.env")
    print("2. Compare methods: python run.py compare --config experiments/transport_compare.env")
    print("3. Run the tests: python -m unittest discover tests")

    return True


if __name__ == "__main__":
    main()
