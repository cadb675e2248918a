"""Command-line entry point.

Subcommands: ``gen-data`` (write the synthetic corpora), ``run``
(execute a recipe and evaluate the configured systems), ``evaluate``
(regenerate an evaluation report from a checkpoint), ``dump-arch``
(print per-block hyper-parameter choices), ``sweep`` (one recipe run
per penalty factor, shared pre-training).

Configuration is one declarative JSON file with explicit schema
versioning; unknown keys are rejected with field-level diagnostics.
``--set path=value`` overrides scalar fields only (dotted path, list
indices allowed, e.g. ``--set stages.0.epochs=3``).

Exit codes: 0 success, 2 invalid configuration, 3 missing checkpoint,
1 other failures. Errors also emit one machine-parsable JSON record on
stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

from pathlib import Path

from .checkpoint import Checkpoint
from .data import Corpus, DomainSpec, generate
from .pipeline import StageConfig, logits_from_checkpoint, run_recipe
from .report import (
    arch_table,
    evaluation_report,
    render_report,
    sweep as run_sweep,
    system_record,
    write_report,
)
from .search import extract
from .space import ArchSpace

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


def _check_keys(d, allowed, path, required=()):
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown field {path}.{unknown[0]}", field=f"{path}.{unknown[0]}")
    for r in required:
        if r not in d:
            raise ConfigError(f"missing required field {path}.{r}", field=f"{path}.{r}")


def _build(cls, d, path):
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}", field=path) from exc
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}", field=path) from exc


class RunConfig:
    TOP_KEYS = ("schema_version", "seed", "out_dir", "data", "space", "stages",
                "systems", "sweep")

    def __init__(self, raw):
        _check_keys(raw, self.TOP_KEYS, "config", required=("schema_version", "out_dir"))
        if raw["schema_version"] != SCHEMA_VERSION:
            raise ConfigError(
                f"config.schema_version: expected {SCHEMA_VERSION}, got {raw['schema_version']}",
                field="config.schema_version",
            )
        self.seed = int(raw.get("seed", 0))
        self.out_dir = Path(raw["out_dir"])
        self.data = None
        if "data" in raw:
            d = raw["data"]
            _check_keys(d, ("dir", "source", "target"), "config.data", required=("dir",))
            self.data = {"dir": Path(d["dir"])}
            for dom in ("source", "target"):
                if dom in d:
                    _check_keys(d[dom], ("spec", "counts"), f"config.data.{dom}",
                                required=("spec", "counts"))
                    spec = _build(DomainSpec, d[dom]["spec"], f"config.data.{dom}.spec")
                    counts = {k: int(v) for k, v in d[dom]["counts"].items()}
                    self.data[dom] = (spec, counts)
        self.space = None
        if "space" in raw:
            space_raw = {k: tuple(v) if isinstance(v, list) else v for k, v in raw["space"].items()}
            self.space = _build(ArchSpace, space_raw, "config.space")
        self.stages = []
        for i, st in enumerate(raw.get("stages", [])):
            self.stages.append(_build(StageConfig, st, f"config.stages.{i}"))
        self.systems = []
        for i, s in enumerate(raw.get("systems", [])):
            _check_keys(s, ("name", "checkpoint", "corpus", "split"),
                        f"config.systems.{i}", required=("name", "checkpoint"))
            self.systems.append({
                "name": s["name"], "checkpoint": s["checkpoint"],
                "corpus": s.get("corpus", "target"), "split": s.get("split", "test"),
            })
        self.sweep = None
        if "sweep" in raw:
            _check_keys(raw["sweep"], ("eta", "eval_corpus", "eval_split"),
                        "config.sweep", required=("eta",))
            self.sweep = {
                "eta": [float(e) for e in raw["sweep"]["eta"]],
                "eval_corpus": raw["sweep"].get("eval_corpus", "target"),
                "eval_split": raw["sweep"].get("eval_split", "test"),
            }


def _apply_override(raw, spec_str):
    if "=" not in spec_str:
        raise ConfigError(f"--set needs path=value, got {spec_str!r}", field=spec_str)
    path, value = spec_str.split("=", 1)
    parts = path.split(".")
    node = raw
    for p in parts[:-1]:
        if isinstance(node, list):
            node = node[int(p)]
        elif p in node:
            node = node[p]
        else:
            raise ConfigError(f"--set: no such field {path!r}", field=path)
    leaf = parts[-1]
    container = node
    if isinstance(container, list):
        leaf = int(leaf)
        current = container[leaf]
    else:
        if leaf not in container:
            raise ConfigError(f"--set: no such field {path!r}", field=path)
        current = container[leaf]
    if isinstance(current, (dict, list)):
        raise ConfigError(f"--set: {path!r} is not a scalar field", field=path)
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    container[leaf] = parsed


def load_config(path, overrides=()):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}", field="config")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}", field="config") from exc
    for o in overrides:
        _apply_override(raw, o)
    return RunConfig(raw)


def _load_corpora(cfg):
    if cfg.data is None:
        raise ConfigError("config.data is required for this command", field="config.data")
    out = {}
    for dom in ("source", "target"):
        path = cfg.data["dir"] / dom
        if not (path / "meta.json").exists():
            raise ConfigError(
                f"corpus directory {path} not found (run gen-data first)",
                field=f"config.data.{dom}",
            )
        out[dom] = Corpus.load(path)
    return out


# ---------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------


def cmd_gen_data(cfg, _args):
    if cfg.data is None or "source" not in cfg.data or "target" not in cfg.data:
        raise ConfigError("gen-data needs config.data.source and config.data.target",
                          field="config.data")
    for dom in ("source", "target"):
        spec, counts = cfg.data[dom]
        corpus = generate(spec, counts)
        out = cfg.data["dir"] / dom
        corpus.save(out)
        print(f"wrote {len(corpus)} utterances to {out}")
    return 0


def cmd_run(cfg, _args):
    if cfg.space is None or not cfg.stages:
        raise ConfigError("run needs config.space and config.stages", field="config.stages")
    corpora = _load_corpora(cfg)
    rep = run_recipe(cfg.stages, corpora, cfg.out_dir, cfg.space, seed=cfg.seed)
    systems = []
    for s in cfg.systems:
        ckpt_path = rep["checkpoints"].get(s["checkpoint"], s["checkpoint"])
        systems.append(system_record(s["name"], ckpt_path, corpora[s["corpus"]], s["split"]))
    report = evaluation_report(systems)
    report["stages"] = rep["stages"]
    out = write_report(report, cfg.out_dir)
    print(render_report(report), end="")
    print(f"report written to {out}")
    return 0


def cmd_evaluate(cfg, args):
    corpora = _load_corpora(cfg)
    corpus = corpora[args.corpus]
    rec = system_record(args.name, args.checkpoint, corpus, args.split)
    report = evaluation_report([rec])
    out = write_report(report, cfg.out_dir, stem=f"eval_{args.name}")
    print(render_report(report), end="")
    print(f"report written to {out}")
    return 0


def cmd_dump_arch(_cfg, args):
    ckpt = Checkpoint.load(args.checkpoint)
    if ckpt.kind == "model":
        arch = ckpt.arch
    else:
        arch = extract(logits_from_checkpoint(ckpt))
    print(arch_table(arch, ckpt.space), end="")
    print(json.dumps({"arch": arch.to_json()}, sort_keys=True))
    return 0


def cmd_sweep(cfg, _args):
    if cfg.sweep is None or cfg.space is None or not cfg.stages:
        raise ConfigError("sweep needs config.sweep, config.space and config.stages",
                          field="config.sweep")
    corpora = _load_corpora(cfg)
    report = run_sweep(cfg.sweep["eta"], cfg.stages, corpora, cfg.out_dir, cfg.space,
                       seed=cfg.seed, eval_corpus=cfg.sweep["eval_corpus"],
                       eval_split=cfg.sweep["eval_split"])
    out = write_report(report, cfg.out_dir, stem="sweep")
    print(render_report(report), end="")
    print(f"report written to {out}")
    return 0


def _error_record(exc, code):
    rec = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if getattr(exc, "field", None):
        rec["field"] = exc.field
    return json.dumps(rec, sort_keys=True)


def main(argv=None):
    parser = argparse.ArgumentParser(prog="confadapt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen-data", "run", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", required=True)
        p.add_argument("--set", action="append", default=[], dest="overrides",
                       metavar="PATH=VALUE")
    p = sub.add_parser("evaluate")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", default="target", choices=("source", "target"))
    p.add_argument("--split", default="test")
    p.add_argument("--name", default="system")
    p.add_argument("--set", action="append", default=[], dest="overrides", metavar="PATH=VALUE")
    p = sub.add_parser("dump-arch")
    p.add_argument("--checkpoint", required=True)

    args = parser.parse_args(argv)
    handlers = {
        "gen-data": cmd_gen_data,
        "run": cmd_run,
        "evaluate": cmd_evaluate,
        "dump-arch": cmd_dump_arch,
        "sweep": cmd_sweep,
    }
    try:
        cfg = None
        if getattr(args, "config", None) is not None:
            cfg = load_config(args.config, getattr(args, "overrides", ()))
        return handlers[args.command](cfg, args)
    except ConfigError as exc:
        print(_error_record(exc, 2), file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(_error_record(exc, 3), file=sys.stderr)
        return 3
    except Exception as exc:  # surface everything as a structured record
        print(_error_record(exc, 1), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
