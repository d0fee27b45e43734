"""Small helpers shared by the experiment scripts."""

import argparse
import csv
from pathlib import Path

from hybridctl.export import fmt

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def parser(description: str, default_out: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--out", default=default_out, help="CSV file for the result table")
    return p


def write_table(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([v if isinstance(v, str) else fmt(v) for v in r])
    print(f"wrote {path}")
