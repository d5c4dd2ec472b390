"""End-to-end synthetic experiment: generate a corpus, run the full pipeline,
print the metrics table.

Usage:
    python scripts/run_synthetic_experiment.py [--seed 42] [--out runs/exp1]
                                               [--labeled 1000] [--unlabeled 5000]
"""

import argparse
import json
import sys
import tempfile
from pathlib import Path

from todpipe.cli import main as cli_main


def build_config(args, workdir: Path) -> Path:
    doc = {
        "corpus": str(workdir / "corpus.jsonl"),
        "out": str(workdir / "out"),
        "synthetic": {
            "n_labeled": args.labeled,
            "n_unlabeled": args.unlabeled,
            "n_entities_per_kb": 3,
            "label_noise_rate": args.noise,
            "seed": args.seed,
        },
        "encoder": {"seed": args.seed + 1},
        "classifier": {"seed": args.seed + 2},
        "weak": {"seed": args.seed + 3},
        "lm": {"seed": args.seed + 4},
    }
    path = workdir / "config.json"
    path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return path


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--labeled", type=int, default=1000)
    parser.add_argument("--unlabeled", type=int, default=5000)
    parser.add_argument("--noise", type=float, default=0.05)
    parser.add_argument("--out", default=None, help="working directory (default: temp)")
    parser.add_argument("--skip-pretrain", action="store_true")
    args = parser.parse_args()

    workdir = Path(args.out) if args.out else Path(tempfile.mkdtemp(prefix="todpipe-"))
    workdir.mkdir(parents=True, exist_ok=True)
    config = build_config(args, workdir)

    code = cli_main(["gen-data", "--config", str(config)])
    if code != 0:
        return code
    pipeline_args = ["pipeline", "--config", str(config)]
    if args.skip_pretrain:
        pipeline_args.append("--skip-pretrain")
    code = cli_main(pipeline_args)
    if code != 0:
        return code
    print(f"\nartifacts: {workdir / 'out'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
