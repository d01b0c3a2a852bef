#!/usr/bin/env python3
"""
Dependency checker for the coupling experiments

Run this script to check if all required dependencies are installed.
"""

import importlib
import sys

REQUIRED_PACKAGES = [
    ('numpy', 'Array numerics and Philox random streams'),
    ('scipy', 'Special functions, quadrature rules and root finding'),
    ('pandas', 'Report tables and CSV output'),
    ('matplotlib', 'SVG plots'),
    ('seaborn', 'Plot styling'),
]

OPTIONAL_PACKAGES = [
    ('pytest', 'Test runner (needed for the test suite only)'),
]


def _probe(package):
    module = importlib.import_module(package)
    return getattr(module, '__version__', 'unknown')


def check_dependencies():
    """Check if all required dependencies are available"""

    missing_packages = []

    print("=== Brownian Coupling Experiments - Dependency Check ===\n")

    python_version = sys.version_info
    print(f"Python Version: {python_version.major}.{python_version.minor}.{python_version.micro}")

    if python_version < (3, 9):
        print("❌ ERROR: Python 3.9 or higher is required")
        return False
    else:
        print("✅ Python version is compatible\n")

    print("Checking required packages:")
    print("-" * 50)

    for package, description in REQUIRED_PACKAGES:
        try:
            version = _probe(package)
            print(f"✅ {package:12} {version:10} - {description}")
        except ImportError:
            print(f"❌ {package:12} - {description} (MISSING)")
            missing_packages.append(package)
        except Exception as e:
            print(f"⚠️  {package:12} - {description} (ERROR: {e})")
            missing_packages.append(package)

    print("\nChecking optional packages:")
    print("-" * 50)

    for package, description in OPTIONAL_PACKAGES:
        try:
            version = _probe(package)
            print(f"✅ {package:12} {version:10} - {description}")
        except ImportError:
            print(f"⚠️  {package:12} - {description} (Optional)")

    print("\n" + "=" * 60)

    if not missing_packages:
        print("✅ ALL REQUIRED DEPENDENCIES ARE AVAILABLE!")
        print("\nRun an experiment with:")
        print("   python coupling_cli.py --config configs/simulate_coupling.cfg")
        return True

    print("❌ MISSING REQUIRED DEPENDENCIES:")
    for package in missing_packages:
        print(f"   - {package}")
    print("\nTo install missing packages, run:")
    print("   pip install -r requirements.txt")
    return False


def main():
    """Main function"""
    try:
        success = check_dependencies()
    except Exception as e:
        print(f"\n❌ Error during dependency check: {e}")
        return 1
    if success:
        print("\n🎉 Ready to run experiments!")
        return 0
    print("\n⚠️  Please install missing dependencies before running experiments.")
    return 1


if __name__ == "__main__":
    sys.exit(main())
