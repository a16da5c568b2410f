"""Command-line interface.

Subcommands: generate, fit, deform, eval, attention-dump. Every command
reads a flat ``key = value`` config file plus repeatable ``--set key=value``
overrides; unknown keys are rejected and every value is validated before
any file is touched. Exit codes: 0 success, 2 configuration error, 3
numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import container as containers
from .attention import MODES, aggregate_by_level
from .errors import ConfigError, MeshFlowError, NumericError
from .flow import FlowConfig, integrate
from .mesh import TriangleMesh, make_icosphere
from .meshio import load_mesh, save_mesh
from .metrics import evaluate_meshes
from .synthetic import ShapeSpec, make_target
from .train import (
    AdamState,
    FitSchedule,
    LossWeights,
    ParameterSet,
    Stage,
    fit,
)

MANIFEST_NAME = "manifest.json"


# ---------------------------------------------------------------------------
# config handling


class _Key:
    def __init__(self, kind, default, help_text, required=False):
        self.kind = kind
        self.default = default
        self.help = help_text
        self.required = required


def _req(kind, help_text):
    return _Key(kind, None, help_text, required=True)


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _parse_int_list(raw: str):
    return tuple(int(part) for part in raw.split(",") if part.strip())


def _parse_float_list(raw: str):
    return tuple(float(part) for part in raw.split(",") if part.strip())


_PARSERS = {
    "int": int,
    "float": float,
    "str": str.strip,
    "bool": _parse_bool,
    "path": lambda raw: raw.strip(),
    "ints": _parse_int_list,
    "floats": _parse_float_list,
}


def _convert(name: str, raw: str, kind: str):
    try:
        return _PARSERS[kind](raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"config key {name!r}: {exc}") from exc


def read_config_file(path) -> dict:
    """Parse a flat key = value file; '#' starts a comment."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = text.split("=", 1)
        values[key.strip()] = raw.strip()
    return values


def resolve_config(schema: dict, config_path, sets) -> dict:
    """Merge file values and --set overrides against a typed schema."""
    raw = {}
    if config_path is not None:
        raw.update(read_config_file(config_path))
    for item in sets or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        raw[key.strip()] = value.strip()

    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    out = {}
    for name, key in schema.items():
        if name in raw:
            out[name] = _convert(name, raw[name], key.kind)
        elif key.required:
            raise ConfigError(f"missing required config key {name!r}")
        else:
            out[name] = key.default
    return out


def _check_mode(mode: str) -> str:
    mode = mode.lower()
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {'/'.join(MODES)}, got {mode!r}")
    return mode


def _set_workers(n: int) -> None:
    if n < 0:
        raise ConfigError("workers must be >= 0 (0 means all cores)")
    torch.set_num_threads(n if n > 0 else (os.cpu_count() or 1))


# ---------------------------------------------------------------------------
# generate


GENERATE_SCHEMA = {
    "out_dir": _req("path", "output directory for targets + manifest"),
    "count": _Key("int", 8, "number of targets"),
    "a_min": _Key("float", 27.0, "condition range lower end"),
    "a_max": _Key("float", 45.0, "condition range upper end"),
    "base_radius": _Key("float", 0.6, "sphere base radius"),
    "subdivisions": _Key("int", 4, "icosphere subdivision level"),
    "seed": _Key("int", 0, "shape family seed"),
}


def cmd_generate(cfg: dict) -> int:
    if cfg["count"] < 1:
        raise ConfigError("count must be at least 1")
    if cfg["a_min"] > cfg["a_max"]:
        raise ConfigError(
            f"a_min ({cfg['a_min']}) must not exceed a_max ({cfg['a_max']})"
        )
    template = make_icosphere(cfg["subdivisions"], radius=cfg["base_radius"])
    n = cfg["count"]
    if n > 1:
        ages = np.linspace(cfg["a_min"], cfg["a_max"], n)
    else:
        ages = np.array([(cfg["a_min"] + cfg["a_max"]) / 2.0])

    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    save_mesh(template, out_dir / "template.obj")
    targets = []
    for i, a in enumerate(ages):
        spec = ShapeSpec.default(float(a), cfg["base_radius"], cfg["seed"])
        mesh = make_target(spec, template)
        name = f"target_{i:02d}.obj"
        save_mesh(mesh, out_dir / name)
        targets.append({"a": float(a), "file": name})

    manifest = {
        "format": "meshflow-dataset",
        "seed": cfg["seed"],
        "base_radius": cfg["base_radius"],
        "subdivisions": cfg["subdivisions"],
        "template": "template.obj",
        "targets": targets,
    }
    (out_dir / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    print(f"wrote {n} targets and {MANIFEST_NAME} to {out_dir}")
    return 0


def _load_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise ConfigError(f"dataset manifest not found: {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("format") != "meshflow-dataset":
        raise ConfigError(f"{path} is not a dataset manifest")
    base = path.parent
    template = load_mesh(base / manifest["template"])
    dataset = []
    for entry in manifest["targets"]:
        mesh = load_mesh(base / entry["file"])
        # generated targets share the template connectivity vertex for vertex
        mesh = TriangleMesh(mesh.vertices, mesh.faces, in_correspondence=True)
        dataset.append((float(entry["a"]), mesh))
    return template, dataset, manifest


# ---------------------------------------------------------------------------
# fit


FIT_SCHEMA = {
    "data": _req("path", "dataset manifest (file or directory)"),
    "out_dir": _req("path", "checkpoint directory"),
    "n_levels": _Key("int", 3, "pyramid levels R"),
    "n_fields": _Key("int", 4, "fields per level M"),
    "base_resolution": _Key("int", 16, "finest grid resolution"),
    "hidden": _Key("ints", (64, 64), "attention hidden widths"),
    "mode": _Key("str", "ctvf", "conditioning mode"),
    "a_min": _Key("float", 27.0, "condition normalization lower end"),
    "a_max": _Key("float", 45.0, "condition normalization upper end"),
    "steps": _Key("int", 50, "Euler steps K"),
    "horizon": _Key("float", 1.0, "integration horizon T"),
    "epochs1": _Key("int", 30, "stage 1 epochs"),
    "epochs2": _Key("int", 30, "stage 2 epochs"),
    "lr1": _Key("float", 1e-4, "stage 1 learning rate"),
    "lr2": _Key("float", 2e-5, "stage 2 learning rate"),
    "lambda_lap1": _Key("float", 0.5, "stage 1 Laplacian weight"),
    "lambda_lap2": _Key("float", 0.1, "stage 2 Laplacian weight"),
    "lambda_nc1": _Key("float", 5e-4, "stage 1 normal-consistency weight"),
    "lambda_nc2": _Key("float", 1e-4, "stage 2 normal-consistency weight"),
    "loss": _Key("str", "chamfer", "fidelity term: chamfer or mse"),
    "n_samples": _Key("int", 2000, "surface samples per chamfer evaluation"),
    "steps_per_item": _Key("int", 16, "optimizer steps per item per epoch"),
    "seed": _Key("int", 0, "training seed"),
    "resume": _Key("bool", False, "continue from the checkpoint directory"),
    "workers": _Key("int", 0, "torch threads (0 = all cores)"),
}


def _fit_schedule(cfg: dict) -> FitSchedule:
    return FitSchedule((
        Stage(cfg["epochs1"], cfg["lr1"],
              LossWeights(cfg["lambda_lap1"], cfg["lambda_nc1"]),
              cfg["loss"], cfg["n_samples"], cfg["steps_per_item"]),
        Stage(cfg["epochs2"], cfg["lr2"],
              LossWeights(cfg["lambda_lap2"], cfg["lambda_nc2"]),
              cfg["loss"], cfg["n_samples"], cfg["steps_per_item"]),
    ))


def cmd_fit(cfg: dict) -> int:
    mode = _check_mode(cfg["mode"])
    schedule = _fit_schedule(cfg)
    flow = FlowConfig(steps=cfg["steps"], horizon=cfg["horizon"])
    _set_workers(cfg["workers"])
    template, dataset, _ = _load_manifest(cfg["data"])

    out_dir = Path(cfg["out_dir"])
    start_epoch = 0
    state = None
    if cfg["resume"]:
        params, state, info = containers.load_checkpoint(out_dir)
        start_epoch = int(info.get("global_epoch", 0))
        if start_epoch >= schedule.total_epochs:
            print(f"checkpoint already at epoch {start_epoch}; nothing to do")
            return 0
    else:
        params = ParameterSet.create(
            n_levels=cfg["n_levels"], n_fields=cfg["n_fields"],
            base_resolution=cfg["base_resolution"], hidden=cfg["hidden"],
            mode=mode, a_range=(cfg["a_min"], cfg["a_max"]), seed=cfg["seed"],
        )
    out_dir.mkdir(parents=True, exist_ok=True)

    def checkpoint(global_epoch, params, state, history):
        containers.save_checkpoint(out_dir, params, state, {
            "global_epoch": global_epoch + 1,
            "seed": cfg["seed"],
            "mode": mode,
            "flow": {"steps": flow.steps, "horizon": flow.horizon},
            "last_loss": history[-1]["mean_total"],
        })

    result = fit(
        dataset, template, params, schedule=schedule, seed=cfg["seed"],
        flow=flow, state=state, start_epoch=start_epoch,
        log_path=out_dir / containers.CHECKPOINT_LOG, on_epoch_end=checkpoint,
    )
    if result.diverged:
        print("fit diverged; checkpoint rolled back to the last stable epoch",
              file=sys.stderr)
        return 3
    print(json.dumps({
        "epochs_run": result.epochs_run,
        "final_loss": result.final_loss,
        "checkpoint": str(out_dir),
    }, indent=2))
    return 0


# ---------------------------------------------------------------------------
# deform


DEFORM_SCHEMA = {
    "model": _req("path", "velocity-model container"),
    "mesh": _req("path", "input mesh to deform"),
    "a": _req("float", "condition value"),
    "out": _req("path", "output mesh path"),
    "steps": _Key("int", 50, "Euler steps K"),
    "horizon": _Key("float", 1.0, "integration horizon T"),
    "mode": _Key("str", "", "mode override (default: container mode)"),
    "attention_csv": _Key("path", "", "optional per-step attention CSV"),
    "workers": _Key("int", 1, "torch threads (0 = all cores)"),
}


def cmd_deform(cfg: dict) -> int:
    mode = _check_mode(cfg["mode"]) if cfg["mode"] else None
    flow = FlowConfig(steps=cfg["steps"], horizon=cfg["horizon"], mode=mode)
    _set_workers(cfg["workers"])
    pyramid, net, _ = containers.load_container(cfg["model"])
    mesh = load_mesh(cfg["mesh"])

    start = time.perf_counter()
    deformed, log = integrate(mesh, pyramid, net, cfg["a"], flow,
                              record_trajectory=True)
    elapsed = time.perf_counter() - start

    out = Path(cfg["out"])
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    save_mesh(deformed, out)

    if cfg["attention_csv"]:
        with open(cfg["attention_csv"], "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "t", "r", "m", "p"])
            for k, p in enumerate(log.attention_maps):
                t = log.times[k]
                for r in range(p.shape[0]):
                    for m in range(p.shape[1]):
                        writer.writerow([k, f"{t:.6f}", r, m, f"{p[r, m]:.12g}"])

    report = {
        "vertices": deformed.n_vertices,
        "steps": flow.steps,
        "horizon": flow.horizon,
        "mode": mode or net.mode,
        "condition": cfg["a"],
        "wall_time_s": elapsed,
        "output": str(out),
    }
    Path(str(out) + ".json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n"
    )
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# eval


EVAL_SCHEMA = {
    "pred": _req("path", "predicted mesh file"),
    "target": _req("path", "target mesh file"),
    "n_samples": _Key("int", 20000, "surface samples per direction"),
    "seed": _Key("int", 0, "sampling seed"),
    "sif_backend": _Key("str", "bvh", "self-intersection backend: bvh or brute"),
    "out": _Key("path", "", "optional JSON output path (default: stdout only)"),
    "sif_faces_csv": _Key("path", "", "optional CSV of intersecting faces"),
    "workers": _Key("int", 0, "torch threads (0 = all cores)"),
}


def cmd_eval(cfg: dict) -> int:
    if cfg["sif_backend"] not in ("bvh", "brute"):
        raise ConfigError("sif_backend must be 'bvh' or 'brute'")
    if cfg["n_samples"] < 1:
        raise ConfigError("n_samples must be at least 1")
    _set_workers(cfg["workers"])
    pred = load_mesh(cfg["pred"])
    target = load_mesh(cfg["target"])

    report = evaluate_meshes(
        pred, target, n=cfg["n_samples"], seed=cfg["seed"],
        sif_backend=cfg["sif_backend"], with_faces=bool(cfg["sif_faces_csv"]),
    )
    payload = report.to_dict()
    faces = payload.pop("sif_faces", None)
    if cfg["sif_faces_csv"] and faces is not None:
        with open(cfg["sif_faces_csv"], "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["face"])
            writer.writerows([[f] for f in faces])
        payload["sif_faces_csv"] = cfg["sif_faces_csv"]
    text = json.dumps(payload, indent=2, sort_keys=True)
    if cfg["out"]:
        Path(cfg["out"]).write_text(text + "\n")
    print(text)
    return 0


# ---------------------------------------------------------------------------
# attention-dump


ATTENTION_SCHEMA = {
    "model": _req("path", "velocity-model container"),
    "out": _req("path", "output CSV path"),
    "t_points": _Key("int", 51, "time grid size over [0, horizon]"),
    "horizon": _Key("float", 1.0, "integration horizon T"),
    "a_values": _Key("floats", (28.0, 35.0, 42.0), "condition probe values"),
    "mode": _Key("str", "", "mode override (default: container mode)"),
}


def cmd_attention_dump(cfg: dict) -> int:
    if cfg["t_points"] < 2:
        raise ConfigError("t_points must be at least 2")
    if not cfg["a_values"]:
        raise ConfigError("a_values must not be empty")
    mode = _check_mode(cfg["mode"]) if cfg["mode"] else None
    _, net, _ = containers.load_container(cfg["model"])

    times = np.linspace(0.0, cfg["horizon"], cfg["t_points"])
    with open(cfg["out"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "a", "r", "m", "p_rm", "p_r"])
        with torch.no_grad():
            for a in cfg["a_values"]:
                for t in times:
                    p = net(float(t), float(a), mode=mode).cpu().numpy()
                    level = aggregate_by_level(p)
                    for r in range(p.shape[0]):
                        for m in range(p.shape[1]):
                            writer.writerow([
                                f"{t:.6f}", a, r, m,
                                f"{p[r, m]:.12g}", f"{level[r]:.12g}",
                            ])
    print(f"wrote attention maps for a={list(cfg['a_values'])} to {cfg['out']}")
    return 0


# ---------------------------------------------------------------------------
# entry point


_COMMANDS = {
    "generate": (GENERATE_SCHEMA, cmd_generate, "create a synthetic dataset"),
    "fit": (FIT_SCHEMA, cmd_fit, "train velocity fields on a dataset"),
    "deform": (DEFORM_SCHEMA, cmd_deform, "integrate a mesh through a model"),
    "eval": (EVAL_SCHEMA, cmd_eval, "compute metrics for a mesh pair"),
    "attention-dump": (ATTENTION_SCHEMA, cmd_attention_dump,
                       "export attention maps over a (t, a) grid"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meshflow",
        description="conditional velocity-field mesh deformation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (schema, _, help_text) in _COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="flat key = value file")
        p.add_argument(
            "--set", action="append", default=[], metavar="KEY=VALUE",
            help="override one config key (repeatable); known keys: "
            + ", ".join(schema),
        )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    schema, runner, _ = _COMMANDS[args.command]
    try:
        cfg = resolve_config(schema, args.config, args.set)
        return runner(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except MeshFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
