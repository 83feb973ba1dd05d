"""Run the acceptance tests and print one PASS/FAIL line per criterion."""
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def main():
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", str(ROOT / "tests" / "test_acceptance.py")],
                          cwd=ROOT, capture_output=True, text=True)
    out = proc.stdout.splitlines()
    lines = [ln for ln in out if ln[:1] == "A" and (" PASS " in ln or " FAIL " in ln)]
    print("\n".join(lines) if lines else proc.stdout)
    sys.exit(proc.returncode)


if __name__ == "__main__":
    main()
