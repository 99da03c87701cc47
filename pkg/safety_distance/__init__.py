from pathlib import Path

ROOT_DIR = Path(__file__).parent
PROBLEMS_DIR = ROOT_DIR / "problems"
