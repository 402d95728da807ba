"""Command-line entry point: ``cten <command> [--config FILE] [--out DIR] [--set key=value ...]``.

Exit status: 0 success, 1 usage or configuration error, 2 partial experiment
failure (some seeds diverged), 3 a ``verify`` check failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, analysis, ipd, kernels, verify
from . import config as cfgmod
from .model import ABLATION_ORDER, VARIANTS, latent_energy_traces, save_checkpoint
from .train import loss_curves_csv, run_multi_seed, train_model

COMMANDS = ("gen-data", "train", "ablate", "ta-train", "demo-appendix", "export-traces", "verify")
OUTPUT_ENV = "CTEN_OUTPUT_DIR"

log = logging.getLogger("cten")


@dataclass
class ExperimentSpec:
    command: str
    config_path: str | None = None
    output_dir: str = "cten-out"
    overrides: list = field(default_factory=list)


def build_id() -> str:
    return f"cten-{__version__} numpy-{np.__version__} python-{platform.python_version()} kernels-{kernels.backend()}"


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _echo(out: Path, spec: ExperimentSpec, cfg: dict) -> None:
    _write_json(out / "config.json", {"build": build_id(), "command": spec.command, "config": cfg})


def _external(cfg: dict):
    path = cfg["data"]["path"]
    if path is None:
        return None
    if str(path).endswith(".csv"):
        return ipd.ingest_csv(path, normalize=cfg["data"]["zscore"])
    batch = ipd.load(path)
    if cfg["data"]["zscore"]:
        batch = ipd.SpikeBatch(ipd.zscore(batch.events), batch.labels, batch.n_classes)
    return batch


def _run_report(cfg: dict, typed: dict, ablation, out: Path, name: str) -> dict:
    ext = _external(cfg)
    report = run_multi_seed(typed["dims"], ablation, typed["data"], typed["train"],
                            kind=cfg["model"]["kind"], baseline_hidden=cfg["model"]["baseline_hidden"],
                            external=ext)
    _write_json(out / f"{name}.json", {"build": build_id(), "config": cfg, **report})
    (out / f"{name}_loss_curves.csv").write_text(loss_curves_csv(report))
    return report


def _summary(name: str, report: dict) -> str:
    a = report["aggregate"]
    if a["mean_acc"] is None:
        return f"{name:16s} all seeds failed"
    std = "n/a" if a["std_acc"] is None else f"{100 * a['std_acc']:.2f}"
    return (f"{name:16s} params={a['parameter_count']:>8d} mean={100 * a['mean_acc']:.2f}% std={std} "
            f"best={100 * a['best_acc']:.2f}% worst={100 * a['worst_acc']:.2f}% time={a['mean_time_s']:.2f}s")


def cmd_gen_data(spec, cfg, typed, out: Path, args) -> int:
    batch = ipd.generate(typed["data"])
    ipd.save(batch, out / "dataset.ctenipd")
    if args.csv:
        ipd.export_csv(batch, out / "dataset.csv")
    print(f"wrote {len(batch)} samples to {out / 'dataset.ctenipd'}")
    return 0


def cmd_train(spec, cfg, typed, out: Path, args, ablation=None, name="report") -> int:
    report = _run_report(cfg, typed, ablation or typed["ablation"], out, name)
    print(_summary(name, report))
    return 2 if report["failed"] else 0


def cmd_ta_train(spec, cfg, typed, out, args) -> int:
    heads = typed["ablation"].attention_heads or 8
    from .model import AblationConfig
    abl = AblationConfig(typed["ablation"].use_phase, typed["ablation"].use_interaction,
                         typed["ablation"].pooling, heads)
    typed["dims"].validate(abl)
    cfg["model"]["attention_heads"] = heads
    return cmd_train(spec, cfg, typed, out, args, abl, "report_ta")


def cmd_ablate(spec, cfg, typed, out: Path, args) -> int:
    rows, failed = [], False
    for name in ABLATION_ORDER:
        report = run_multi_seed(typed["dims"], VARIANTS[name], typed["data"], typed["train"],
                                external=_external(cfg))
        failed |= report["failed"]
        rows.append({"variant": name, "parameter_count": report["aggregate"]["parameter_count"], **report})
        (out / f"ablation_{name}_loss_curves.csv").write_text(loss_curves_csv(report))
        print(_summary(name, report), flush=True)
    _write_json(out / "ablation.json", {"build": build_id(), "config": cfg, "variants": rows})
    return 2 if failed else 0


def cmd_demo(spec, cfg, typed, out: Path, args) -> int:
    stages = analysis.reduced_two_channel_demo(typed["demo"])
    for p in analysis.export_demo(stages, out):
        print(f"wrote {p}")
    return 0


def cmd_export_traces(spec, cfg, typed, out: Path, args) -> int:
    train_cfg = typed["train"]
    seed = train_cfg.seeds[0]
    if not cfg["export"]["train_first"]:
        train_cfg.epochs, train_cfg.learning_rate = 1, 0.0
    _, params, test = train_model(typed["dims"], typed["ablation"], typed["data"], train_cfg, seed)
    idx = cfg["export"]["sample_index"]
    if not 0 <= idx < len(test):
        raise cfgmod.ConfigError(f"'export.sample_index' must lie in [0, {len(test)})")
    units = cfg["export"]["units"]
    if any(not 0 <= u < typed["dims"].hidden for u in units):
        raise cfgmod.ConfigError(f"'export.units' must lie in [0, {typed['dims'].hidden})")
    t = np.arange(typed["data"].time_steps) * typed["data"].dt
    x = test.inputs([idx])[0]
    P, psi_r, psi_i = latent_energy_traces(params, x, t, with_parts=True)
    analysis.write_trace_csv(out / "input_raster.csv", t, x, "e")
    analysis.write_trace_csv(out / "latent_energy.csv", t, P[:, units], "P")
    analysis.write_trace_csv(out / "wave_real.csv", t, psi_r[:, units], "psi_r")
    analysis.write_trace_csv(out / "wave_imag.csv", t, psi_i[:, units], "psi_i")
    save_checkpoint(params, out / "model.ckpt", {"seed": seed, "epoch": train_cfg.epochs, "build": build_id()})
    print(f"exported sample {idx} (label {int(test.labels[idx])}) units {units} to {out}")
    return 0


def cmd_verify(spec, cfg, typed, out: Path, args) -> int:
    results = verify.run_all()
    for name, ok, detail in results:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    _write_json(out / "verify.json", {"build": build_id(),
                                      "checks": [{"name": n, "passed": ok, "detail": d} for n, ok, d in results]})
    return 0 if all(ok for _, ok, _ in results) else 3


HANDLERS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "ablate": cmd_ablate, "ta-train": cmd_ta_train,
    "demo-appendix": cmd_demo, "export-traces": cmd_export_traces, "verify": cmd_verify,
}


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cten", description="Continuous temporal energy network experiments")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON config file (unknown keys are rejected)")
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./cten-out)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, dot-path for nesting (repeatable)")
    p.add_argument("--overrides", dest="overrides", action="append", metavar="KEY=VALUE", help=argparse.SUPPRESS)
    p.add_argument("--csv", action="store_true", help="gen-data: also write a CSV export")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv=None) -> int:
    try:
        args = parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    spec = ExperimentSpec(args.command, args.config,
                          args.out or os.environ.get(OUTPUT_ENV, "cten-out"), args.overrides)
    try:
        cfg = cfgmod.resolve(spec.config_path, spec.overrides)
        typed = cfgmod.build(cfg)
        out = Path(spec.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        _echo(out, spec, cfg)
        return HANDLERS[spec.command](spec, cfg, typed, out, args)
    except (cfgmod.ConfigError, ipd.DatasetFormatError, ipd.DatasetValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
