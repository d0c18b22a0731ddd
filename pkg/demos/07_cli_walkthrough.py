"""The command-line workflow end to end in a scratch directory.

    hydra gen     -> data/{train,eval,test}.json, images, weights.csv, truth_*.csv
    hydra train   -> run/checkpoints, run/logs, run/run.json
    hydra predict -> run/scores/test/head-*.csv, run/predictions/test.csv
    hydra score   -> weighted F-measure table
    hydra report  -> run/report.json
"""
import subprocess
import sys
import tempfile
from pathlib import Path


def hydra(*args):
    cmd = [sys.executable, "-m", "hydra_ensemble", *map(str, args)]
    print("$ hydra", " ".join(map(str, args)), flush=True)
    subprocess.run(cmd, check=True)


with tempfile.TemporaryDirectory() as tmp:
    root = Path(tmp)
    hydra("gen", "--config", "tiny", "--out", root / "data")
    hydra("train", "--config", "tiny", "--data", root / "data", "--out", root / "run")
    hydra("predict", "--out", root / "run", "--data", root / "data", "--split", "test")
    hydra("score", "--pred", root / "run/predictions/test.csv", "--truth", root / "data/truth_test.csv",
          "--weights", root / "data/weights.csv")
    hydra("report", "--out", root / "run")
    hydra("cost", "--config", "paper")
