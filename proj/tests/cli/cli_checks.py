"""End-to-end checks of the shapeformer command-line tool.

usage: cli_checks.py <binary> <data-dir> <case>
"""

import json
import pathlib
import subprocess
import sys
import tempfile

BIN = sys.argv[1]
DATA = pathlib.Path(sys.argv[2])
TRAIN = DATA / "BasicMotions" / "BasicMotions_TRAIN.ts"
TEST = DATA / "BasicMotions" / "BasicMotions_TEST.ts"
SMALL = ["--epochs", "2", "--d-spe", "16", "--d-gen", "8", "--heads", "4",
         "--per-class", "2", "--window", "10", "--threads", "1", "--quiet"]


def run(*args, expect=0):
    p = subprocess.run([BIN, *map(str, args)], capture_output=True, text=True)
    if p.returncode != expect:
        sys.exit(f"{' '.join(map(str, args))}: exit {p.returncode}, expected {expect}\n{p.stdout}\n{p.stderr}")
    return p


def check(cond, msg):
    if not cond:
        sys.exit("FAILED: " + msg)


def relabel(src, dst, old, new):
    text = src.read_text().replace(f" {old}", f" {new}").replace(f":{old}\n", f":{new}\n")
    dst.write_text(text)


def case_exit_codes(tmp):
    run("train", "--data", tmp / "missing.ts", "--out", tmp / "o", expect=2)
    bad = tmp / "bad.ts"
    bad.write_text("@problemName x\n@classLabel true a b\n@data\n1,2,3:a\n1,oops,3:b\n")
    run("discover", "--data", bad, "--out", tmp / "o", expect=2)
    run("train", "--data", TRAIN, "--out", tmp / "o", "--bogus-flag", expect=2)
    run("train", "--data", TRAIN, "--out", tmp / "o", "--dropout", "1.5", "--quiet", expect=4)

    run("train", "--data", TRAIN, "--out", tmp / "run", "--save-every", "1", *SMALL)
    other = tmp / "other.ts"
    relabel(TEST, other, "Standing", "Sitting")
    run("eval", "--model", tmp / "run" / "checkpoint", "--data", other, expect=4)
    run("train", "--data", TRAIN, "--out", tmp / "run", "--resume", *SMALL[:-1], "--lr", "0.5", "--quiet", expect=3)

    run("discover", "--data", TRAIN, "--out", tmp / "p2", "--per-class", "1", "--window", "10")
    run("eval", "--model", tmp / "run" / "checkpoint", "--data", TEST, "--pool", tmp / "p2" / "pool.json", expect=3)


def case_pipeline(tmp):
    run("discover", "--data", TRAIN, "--out", tmp / "d", "--per-class", "2", "--window", "10")
    pool = json.loads((tmp / "d" / "pool.json").read_text())
    check(len(pool["shapelets"]) == 8, "pool holds 2 shapelets for each of 4 classes")
    stats = json.loads((tmp / "d" / "discovery_stats.json").read_text())
    check(sum(stats["gain_histogram"]["counts"]) > 0, "gain histogram is populated")

    run("train", "--data", TRAIN, "--pool", tmp / "d" / "pool.json", "--test", TEST, "--out", tmp / "t", *SMALL)
    report = json.loads((tmp / "t" / "report.json").read_text())
    lines = (tmp / "t" / "metrics.jsonl").read_text().splitlines()
    check(len(lines) == len(report["epochs"]) == 2, "one metrics line per epoch")
    check(report["test_accuracy"] is not None, "test accuracy recorded")

    p = run("eval", "--model", tmp / "t" / "checkpoint", "--data", TEST)
    ev = json.loads((tmp / "t" / "eval" / "eval.json").read_text())
    printed = float(p.stdout.split("accuracy ")[1].split()[0])
    check(abs(printed - ev["accuracy"]) < 1e-6, "printed accuracy matches eval.json")
    check(abs(ev["accuracy"] - report["test_accuracy"]) < 1e-12, "eval agrees with the training report")
    rows = (tmp / "t" / "eval" / "confusion.csv").read_text().splitlines()
    check(len(rows) == 5, "confusion header plus one row per class")

    run("report", "--run-dir", tmp / "t")
    for f in ("loss.svg", "accuracy.svg", "summary.txt"):
        check((tmp / "t" / "report" / f).is_file(), f"report/{f} written")

    run("export", "--model", tmp / "t" / "checkpoint", "--data", TEST, "--out", tmp / "x")
    emb = json.loads((tmp / "x" / "embeddings.json").read_text())
    inst = emb["instances"][0]
    check(len(inst["fused"]) == 16 + 8, "fused embedding width is d_spe + d_gen")
    check(len(inst["best_fit"]) == 8, "one best-fit offset per shapelet")


def case_determinism(tmp):
    digests = []
    for name, seed in (("a", 3), ("b", 3), ("c", 4)):
        run("train", "--data", TRAIN, "--out", tmp / name, "--seed", seed, *SMALL)
        m = json.loads((tmp / name / "manifest.json").read_text())
        digests.append(m["artifacts"]["checkpoint"])
    check(digests[0] == digests[1], "same seed gives the same checkpoint")
    check(digests[0] != digests[2], "another seed gives another checkpoint")

    run("replay", "--manifest", tmp / "a" / "manifest.json")
    m = json.loads((tmp / "a" / "manifest.json").read_text())
    check(m["artifacts"]["checkpoint"] == digests[0], "replay reproduces the checkpoint")


if __name__ == "__main__":
    with tempfile.TemporaryDirectory() as d:
        globals()["case_" + sys.argv[3]](pathlib.Path(d))
    print("ok")
