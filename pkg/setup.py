#!/usr/bin/env python3
"""
Setup script for the Road-Mask Tree Mapping Toolkit

Installs dependencies, writes a .env file and runs a synthetic smoke test.
"""

import shutil
import subprocess
import sys
import tempfile
from pathlib import Path


def print_banner():
    """Print project banner"""
    print("=" * 70)
    print("🌳 Road-Mask Tree Mapping Toolkit")
    print("=" * 70)
    print("Tree crowns from aerial imagery, supervised only where road labels are valid")
    print("=" * 70)
    print()


def check_python_version():
    """Check if Python version is compatible"""
    if sys.version_info < (3, 8):
        print("❌ Error: Python 3.8 or higher is required")
        print(f"Current version: {sys.version}")
        sys.exit(1)
    print(f"✅ Python version: {sys.version.split()[0]}")


def install_dependencies():
    """Install required dependencies"""
    print("📦 Installing dependencies...")
    try:
        subprocess.check_call([sys.executable, "-m", "pip", "install", "-r", "requirements.txt"])
        print("✅ Dependencies installed successfully")
    except subprocess.CalledProcessError:
        print("❌ Error: Failed to install dependencies")
        sys.exit(1)


def setup_environment():
    """Create .env from the template if it doesn't exist"""
    print("🔧 Setting up environment...")
    env_file = Path(".env")
    if env_file.exists():
        print("✅ .env file already exists")
        return
    shutil.copy(".env.example", env_file)
    print("✅ .env file created from .env.example")


def smoke_test():
    """Generate a small synthetic scene and burn its road mask"""
    print("🧪 Running synthetic smoke test...")
    with tempfile.TemporaryDirectory() as tmp:
        commands = [
            ["synth", "--seed", "0", "--width", "128", "--height", "128", "--trees", "8", "--roads", "2",
             "--out-dir", tmp],
            ["build-mask", "--roads", f"{tmp}/roads.geojson", "--like", f"{tmp}/image.rras",
             "--out", f"{tmp}/mask.rras"],
        ]
        for args in commands:
            result = subprocess.run([sys.executable, "-m", "src.main"] + args, capture_output=True, text=True)
            if result.returncode != 0:
                print(f"❌ '{args[0]}' exited with {result.returncode}")
                print(result.stderr)
                return False
    print("✅ Smoke test passed")
    return True


def run_tests():
    """Run the test suite"""
    print("🧪 Running tests...")
    try:
        subprocess.check_call([sys.executable, "-m", "pytest", "tests/", "-v"])
        print("✅ All tests passed")
    except subprocess.CalledProcessError:
        print("❌ Some tests failed")
        return False
    return True


def print_next_steps():
    """Print next steps for the user"""
    print("\n" + "=" * 70)
    print("🎉 Setup completed successfully!")
    print("=" * 70)
    print("\nNext steps:")
    print("1. Generate a synthetic scene:")
    print("   python -m src.main synth --seed 1 --out-dir data/synth")
    print()
    print("2. Walk the pipeline (see README.md):")
    print("   build-mask → rasterize-labels → extract-patches → train → predict")
    print()
    print("3. Run the long synthetic experiment:")
    print("   RUN_SLOW=1 python -m pytest tests/test_pipeline.py -k experiment")
    print("\n" + "=" * 70)


def main():
    """Main setup function"""
    print_banner()
    check_python_version()
    install_dependencies()
    setup_environment()

    if smoke_test():
        run_tests()
    else:
        print("⚠️  Skipping tests due to smoke test failure")

    print_next_steps()


if __name__ == "__main__":
    main()
