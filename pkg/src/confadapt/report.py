"""Report emission: stratified TER evaluation, architecture dumps, and
penalty sweeps.

Evaluation reports are pure functions of (checkpoint, corpus), emitted
as structured records plus rendered text, so regenerating a report from
the same inputs is byte-identical.
"""

from __future__ import annotations

import json

from dataclasses import replace
from pathlib import Path

from .checkpoint import Checkpoint
from .data import median_split
from .pipeline import corpus_ter, model_from_checkpoint, run_recipe
from .space import param_count

REPORT_SCHEMA_VERSION = 1


def stratified_eval(model, corpus, split="test"):
    """Overall TER plus TER on the shorter/longer median halves."""
    utts = corpus.split(split)
    if not utts:
        raise ValueError(f"stratified_eval: corpus has no {split!r} split")
    shorter, longer = median_split(utts)
    rec = {
        "split": split,
        "overall": corpus_ter(model, utts),
        "n_total": len(utts),
        "shorter": corpus_ter(model, shorter) if shorter else None,
        "n_shorter": len(shorter),
        "longer": corpus_ter(model, longer) if longer else None,
        "n_longer": len(longer),
    }
    return rec


def system_record(name, ckpt_path, corpus, split="test"):
    """Evaluation record for one derived-model checkpoint."""
    ckpt = Checkpoint.load(ckpt_path)
    model = model_from_checkpoint(ckpt)
    etas = [e.get("eta") for e in ckpt.lineage if e.get("kind") in ("pretrain", "adapt")]
    return {
        "name": name,
        "checkpoint": str(ckpt_path),
        "params": model.param_count(),
        "arch": ckpt.arch.to_json(),
        "eta": etas[-1] if etas else None,
        "stages": [e.get("stage") for e in ckpt.lineage],
        "seeds": [e.get("resolved_seed") for e in ckpt.lineage],
        "ter": stratified_eval(model, corpus, split=split),
    }


def evaluation_report(systems):
    return {"schema_version": REPORT_SCHEMA_VERSION, "systems": systems}


def write_report(report, out_dir, stem="report"):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{stem}.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out_dir / f"{stem}.txt").write_text(render_report(report))
    return out_dir / f"{stem}.json"


def _fmt_ter(x):
    return "-" if x is None else f"{100 * x:6.2f}"


def render_report(report):
    lines = ["system                          eta      params   TER%   short%  long%"]
    for s in report.get("systems", []):
        if "error" in s:
            lines.append(f"{s.get('name', '?'):30}  FAILED: {s['error']}")
            continue
        ter = s["ter"]
        eta = "-" if s.get("eta") is None else f"{s['eta']:g}"
        lines.append(
            f"{s['name']:30}  {eta:>6}  {s['params']:9d}  "
            f"{_fmt_ter(ter['overall'])} {_fmt_ter(ter['shorter'])}  {_fmt_ter(ter['longer'])}"
        )
    return "\n".join(lines) + "\n"


def arch_table(arch, space):
    """Per-block hyper-parameter table; row 0 is the bottom block, the
    one closest to the input, the last row the top block."""
    d = arch.to_json()
    lines = []
    enc_groups = ["fd", "ah", "adim", "ck"]
    lines.append("section  block  " + "".join(f"{g.upper():>6}" for g in enc_groups))
    for b in range(space.encoder_blocks):
        row = "".join(f"{d[f'enc.{b}.{g}']:6d}" for g in enc_groups)
        lines.append(f"enc      {b:5d}  {row}")
    dec_groups = (
        ["fd", "ah_self", "adim_self", "ah_cross", "adim_cross"]
        if space.split_decoder_attention
        else ["fd", "ah", "adim"]
    )
    lines.append("section  block  " + "".join(f"{g.upper():>11}" for g in dec_groups))
    for b in range(space.decoder_blocks):
        row = "".join(f"{d[f'dec.{b}.{g}']:11d}" for g in dec_groups)
        lines.append(f"dec      {b:5d}  {row}")
    return "\n".join(lines) + "\n"


def sweep(eta_list, stages, corpora, out_dir, space, seed=0, eval_corpus="target",
          eval_split="test"):
    """One recipe run per penalty factor, sharing the source pre-training.

    The leading pretrain stage (if any) runs once; every arm then runs
    the remaining stages with its own penalty factor applied to the
    search stages. Failures in one arm are recorded without aborting the
    others.
    """
    out_dir = Path(out_dir)
    shared_input = None
    rest = list(stages)
    if rest and rest[0].kind == "pretrain":
        head = rest[0]
        shared_report = run_recipe([head], corpora, out_dir / "shared", space, seed=seed)
        shared_input = shared_report["checkpoints"][head.output or head.name]
        rest = rest[1:]

    systems = []
    arms = []
    for i, eta in enumerate(eta_list):
        if eta < 0:
            raise ValueError(f"sweep: penalty factors must be nonnegative, got {eta}")
        arm_stages = []
        for st in rest:
            st2 = replace(st, eta=eta) if st.kind in ("pretrain", "adapt") else replace(st)
            if shared_input is not None and st2.input is not None and not Path(st2.input).exists():
                head_name = stages[0].output or stages[0].name
                if st2.input == head_name:
                    st2 = replace(st2, input=str(shared_input))
            arm_stages.append(st2)
        arm_dir = out_dir / f"eta_{i}"
        try:
            rep = run_recipe(arm_stages, corpora, arm_dir, space, seed=seed)
            last = arm_stages[-1]
            ckpt_path = rep["checkpoints"][last.output or last.name]
            rec = system_record(f"eta={eta:g}", ckpt_path, corpora[eval_corpus], split=eval_split)
            rec["eta"] = eta
            systems.append(rec)
            arms.append({"eta": eta, "report": rep})
        except Exception as exc:  # isolate arm failures
            systems.append({"name": f"eta={eta:g}", "eta": eta, "error": str(exc)})
            arms.append({"eta": eta, "error": str(exc)})
    report = evaluation_report(systems)
    report["arms"] = arms
    return report
