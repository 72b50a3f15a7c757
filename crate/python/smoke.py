#!/usr/bin/env python3
"""Smoke test for the dualvd_py extension module.

Builds nothing itself: run `cargo build -p dualvd-py` (or --release)
first, then `python3 python/smoke.py`. The script copies the cdylib next
to a temp dir under an importable name, trains a tiny run, and checks
generation, training, evaluation, gate inspection, checkpoints, and
metrics against each other.
"""

import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module():
    candidates = [
        ROOT / "target" / "release" / "libdualvd_py.so",
        ROOT / "target" / "debug" / "libdualvd_py.so",
    ]
    built = [p for p in candidates if p.exists()]
    if not built:
        sys.exit("build the extension first: cargo build -p dualvd-py")
    newest = max(built, key=lambda p: p.stat().st_mtime)
    stage = Path(tempfile.mkdtemp(prefix="dualvd_py_"))
    shutil.copy2(newest, stage / "dualvd_py.so")
    sys.path.insert(0, str(stage))
    import dualvd_py

    return dualvd_py


def main():
    dv = load_module()

    assert dv.variants() == [
        "ObjRep",
        "RelRep",
        "VisNoRel",
        "VisMod",
        "GlCap",
        "LoCap",
        "SemMod",
        "DualVD",
    ], dv.variants()

    cfg = dv.RunConfig.desk(7)
    cfg.n_train = 6
    cfg.n_val = 2
    cfg.rounds = 3
    cfg.epochs = 2
    cfg.batch_size = 4
    cfg.validate()
    assert "DualVD" in repr(cfg)

    round_trip = dv.RunConfig.from_json(cfg.to_json())
    assert round_trip.to_json() == cfg.to_json()

    train_set, val_set = dv.generate(cfg)
    assert len(train_set) == 6 and len(val_set) == 2
    assert train_set.question_count() == 18
    counts = train_set.modality_counts()
    assert set(counts) == {"visual", "semantic", "both"}
    assert sum(counts.values()) == 18

    outcome = dv.fit(cfg, train_set, val_set)
    assert outcome.epochs_run == 2
    history = outcome.history()
    assert len(history) == 2
    assert all(len(row) == 4 for row in history)
    assert outcome.final_train_r1 is not None

    metrics = dv.evaluate(cfg, outcome, val_set)
    assert 0.0 < metrics["mrr"] <= 1.0
    assert metrics["count"] == 6

    report = dv.gate_report(cfg, outcome, train_set)
    assert len(report) == 18
    qid, modality, visual_frac, semantic_frac = report[0]
    assert modality in {"visual", "semantic", "both"}
    assert abs(visual_frac + semantic_frac - 1.0) < 1e-12

    with tempfile.TemporaryDirectory() as tmp:
        first = Path(tmp) / "first.ckpt"
        second = Path(tmp) / "second.ckpt"
        outcome.save_checkpoint(first)
        dv.fit(cfg, train_set, val_set).save_checkpoint(second)
        assert first.read_bytes() == second.read_bytes(), "training is not deterministic"

        loaded = dv.load_checkpoint(cfg, first)
        assert loaded.parameter_names() == outcome.parameter_names()
        again = dv.evaluate(cfg, loaded, val_set)
        assert again == metrics

        bad = dv.RunConfig.desk(7)
        bad.variant = "GlCap"
        try:
            dv.load_checkpoint(bad, first)
        except ValueError:
            pass
        else:
            sys.exit("checkpoint variant mismatch was not rejected")

    sanity = dv.metrics_from_ranks([1, 2, 3, 4])
    assert abs(sanity["mrr"] - (1 + 0.5 + 1 / 3 + 0.25) / 4) < 1e-12
    assert sanity["recall_at_1"] == 0.25

    shape, values = outcome.parameter(outcome.parameter_names()[0])
    assert len(values) == max(1, shape[0]) * (shape[1] if len(shape) > 1 else 1)

    print("smoke ok: generate, fit, evaluate, gates, checkpoints, metrics")


if __name__ == "__main__":
    main()
