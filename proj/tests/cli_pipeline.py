"""End-to-end checks of acgtool: gen -> train -> predict -> eval.

Scores are recomputed here from the raw files, independently of the C++
evaluation code.
"""

import json
import os
import re
import subprocess
import sys
import tempfile


def run(tool, *args, expect=0):
    proc = subprocess.run([tool, *args], capture_output=True, text=True)
    if proc.returncode != expect:
        sys.exit(f"{' '.join(args)}: exit {proc.returncode}, expected {expect}\n{proc.stdout}\n{proc.stderr}")
    return proc.stdout


def lines(path):
    with open(path) as f:
        return [json.loads(l) for l in f if l.strip()]


def canon(s):
    return " ".join(re.findall(r"[a-z0-9']+|[^\sa-z0-9']", s.lower()))


def key(rec, acge):
    if acge and "entities" in rec:
        return rec["state_id"] + "|" + rec["entities"][0]["name"]
    if "entity" in rec:
        return rec["state_id"] + "|" + rec["entity"]
    return rec["state_id"]


def recompute(pred_path, gold_path, acge=False):
    preds = {key(r, acge): {canon(c) for c in r["predicted"]} for r in lines(pred_path) if "_meta" not in r}
    tp = fp = fn = 0
    for g in lines(gold_path):
        if "_meta" in g:
            continue
        gold = {canon(c) for c in g["commands"]}
        pred = preds.get(key(g, acge), set())
        tp += len(pred & gold)
        fp += len(pred - gold)
        fn += len(gold - pred)
    p = tp / (tp + fp) if tp + fp else (1.0 if fn == 0 else 0.0)
    r = tp / (tp + fn) if tp + fn else (1.0 if fp == 0 else 0.0)
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def check(cond, what):
    if not cond:
        sys.exit("FAILED: " + what)


def main():
    tool = sys.argv[1]
    with tempfile.TemporaryDirectory() as tmp:
        d = os.path.join(tmp, "data")
        run(tool, "gen", "--games", "12", "--seed", "7", "--out", d)
        run(tool, "gen", "--games", "12", "--seed", "7", "--out", d + "2")
        for name in sorted(os.listdir(d)):
            with open(os.path.join(d, name), "rb") as a, open(os.path.join(d + "2", name), "rb") as b:
                check(a.read() == b.read(), "gen is deterministic: " + name)
        for name in os.listdir(d):
            path = os.path.join(d, name)
            with open(path) as f:
                first = f.readline()
            check("config_digest" in first, "metadata header in " + name)

        run(tool, "gen", "--games", "4", "--train-ratio", "0.5", "--out", os.path.join(tmp, "bad"), expect=1)

        # Unseen commands appear at desk scale with the default lexicon.
        big = os.path.join(tmp, "big")
        run(tool, "gen", "--games", "100", "--out", big)
        with open(os.path.join(big, "stats.txt")) as f:
            stats = f.read()
        test_row = [l for l in stats.splitlines() if l.startswith("test")][0]
        check(int(test_row.split("|")[3]) > 0, "unseen commands in the test split")

        # Per-split totals add up to the union.
        union = os.path.join(tmp, "union.jsonl")
        with open(union, "w") as out:
            for split in ("train", "valid", "test"):
                with open(os.path.join(big, f"acg_{split}.jsonl")) as f:
                    out.writelines(l for l in f if not l.startswith('{"_meta"'))
        split_out = run(tool, "stats", "--train", os.path.join(big, "acg_train.jsonl"), "--valid",
                        os.path.join(big, "acg_valid.jsonl"), "--test", os.path.join(big, "acg_test.jsonl"))
        union_out = run(tool, "stats", "--train", union)
        totals = [int(l.split("|")[1]) for l in split_out.splitlines() if l.split("|")[0].strip() in
                  ("train", "valid", "test")]
        union_total = [int(l.split("|")[1]) for l in union_out.splitlines() if l.startswith("train")][0]
        check(sum(totals) == union_total, "stats totals are additive")
        empty = os.path.join(tmp, "empty.jsonl")
        open(empty, "w").close()
        check(" 0 " in run(tool, "stats", "--train", empty).replace("|", " "), "stats of an empty dataset")

        train, valid, test = (os.path.join(d, f"acg_{s}.jsonl") for s in ("train", "valid", "test"))
        ckpt = os.path.join(tmp, "m.ckpt")
        log = os.path.join(tmp, "m.jsonl")
        common = ["--d-emb", "8", "--d-hid", "16", "--d-att", "8", "--lr", "0.01"]
        run(tool, "train", "--arch", "lstm", "--train", train, expect=1)
        run(tool, "train", "--arch", "ps_cat", "--train", os.path.join(tmp, "missing.jsonl"), expect=2)
        run(tool, "train", "--arch", "ps_cat", "--train", train, "--clip", "0", expect=1)
        run(tool, "train", "--arch", "ps_cat", "--train", train, "--valid", valid, "--out", ckpt, "--metrics", log,
            "--epochs", "2", "--patience", "0", *common)
        epochs = [r["epoch"] for r in lines(log) if "epoch" in r]
        check(epochs == [1, 2], "metrics log epochs")
        best = [r["best_f1"] for r in lines(log) if "epoch" in r]
        check(all(a <= b for a, b in zip(best, best[1:])), "best F1 is monotone")

        # Resuming continues the epoch count from the saved (best) epoch.
        probe = os.path.join(tmp, "probe.jsonl")
        run(tool, "predict", "--checkpoint", ckpt, "--data", test, "--out", probe)
        saved = lines(probe)[0]["_meta"]["checkpoint_epoch"]
        resumed = os.path.join(tmp, "r.ckpt")
        run(tool, "train", "--arch", "ps_cat", "--train", train, "--out", resumed, "--metrics", log,
            "--resume", ckpt, "--epochs", "3", "--patience", "0", *common)
        epochs = [r["epoch"] for r in lines(log) if "epoch" in r]
        check(epochs[2:] == list(range(saved + 1, 4)), f"resumed epochs {epochs} from {saved}")
        run(tool, "train", "--arch", "hred_ps", "--train", train, "--resume", ckpt, "--out", resumed, expect=1)

        preds = os.path.join(tmp, "p.jsonl")
        run(tool, "predict", "--checkpoint", ckpt, "--data", test, "--out", preds, "--beam-width", "2",
            "--top-k", "3", expect=1)
        shown = run(tool, "predict", "--checkpoint", ckpt, "--data", test, "--out", preds, "--train", train, "--show")
        check("gold:" in shown, "--show prints gold")
        with open(preds) as a, open(test) as b:
            check(len(a.readlines()) == len(b.readlines()), "one prediction line per dataset line")
        run(tool, "predict", "--checkpoint", os.path.join(tmp, "missing.ckpt"), "--data", test, expect=2)

        report = os.path.join(tmp, "rep")
        run(tool, "eval", "--predictions", preds, "--gold", test, "--train", train, "--out", report)
        rep = json.load(open(report + ".json"))["report"]
        p, r, f = recompute(preds, test)
        check(abs(rep["precision"] - p) < 1e-12 and abs(rep["recall"] - r) < 1e-12 and abs(rep["f1"] - f) < 1e-12,
              f"independent recomputation {(p, r, f)} vs {(rep['precision'], rep['recall'], rep['f1'])}")
        for suffix in (".txt", "_missing.csv", "_extra.csv"):
            check(os.path.exists(report + suffix), "report file " + suffix)

        # Gold as predictions scores 1; no predictions scores recall 0.
        perfect = os.path.join(tmp, "perfect.jsonl")
        with open(perfect, "w") as out:
            for g in lines(test):
                if "_meta" not in g:
                    out.write(json.dumps({"state_id": g["state_id"], "predicted": g["commands"]}) + "\n")
        run(tool, "eval", "--predictions", perfect, "--gold", test, "--out", report)
        rep = json.load(open(report + ".json"))["report"]
        check(rep["precision"] == 1 and rep["recall"] == 1 and rep["f1"] == 1, "perfect predictions")
        run(tool, "eval", "--predictions", empty, "--gold", test, "--out", report)
        check(json.load(open(report + ".json"))["report"]["recall"] == 0, "empty predictions")

        # Unknown ids are a join error that names them.
        stray = os.path.join(tmp, "stray.jsonl")
        with open(stray, "w") as out:
            out.write(json.dumps({"state_id": "nowhere", "predicted": []}) + "\n")
        proc = subprocess.run([tool, "eval", "--predictions", stray, "--gold", test, "--out", report],
                              capture_output=True, text=True)
        check(proc.returncode == 1 and "nowhere" in proc.stderr, "join error lists ids")

        # ACGE: entity-keyed predictions with the default beam settings.
        acge_train, acge_test = (os.path.join(d, f"acge_{s}.jsonl") for s in ("train", "test"))
        bs = os.path.join(tmp, "bs.ckpt")
        run(tool, "train", "--arch", "ps_bs", "--train", acge_train, "--out", bs, "--epochs", "1", *common)
        run(tool, "predict", "--checkpoint", bs, "--data", acge_test, "--out", preds)
        recs = [r for r in lines(preds) if "_meta" not in r]
        check(all("entity" in r and len(r["predicted"]) <= 3 for r in recs), "ACGE predictions keep k = 3")
        run(tool, "eval", "--predictions", preds, "--gold", acge_test, "--out", report)
        rep = json.load(open(report + ".json"))["report"]
        p, r, f = recompute(preds, acge_test, acge=True)
        check(abs(rep["f1"] - f) < 1e-12, "ACGE recomputation")
    print("cli pipeline ok")


if __name__ == "__main__":
    main()
