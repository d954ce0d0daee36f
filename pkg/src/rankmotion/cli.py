"""Command-line front end: ``phantom``, ``register`` and ``evaluate``.

Each verb takes ``--config`` (flat ``section.key = value`` file) and
``--output-dir``. Relative paths inside a config resolve against the
config file's directory. Failures print ``error: <category>: <message>``
on one line and exit nonzero.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, dump_config, load_config
from .density import preprocess_exponential
from .evaluation import BinaryMask, evaluate_run
from .lowrank import DeformationEnsemble
from .multiscale import register_series
from .phantom import generate_phantom
from .volume_io import VolumeFormatError, read_volume, write_volume

PHANTOM_MANIFEST = "manifest.cfg"
RUN_MANIFEST = "run_manifest.cfg"
TRACE_FILE = "trace.csv"

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_INPUT = 5


class CliError(Exception):
    def __init__(self, category: str, message: str, code: int):
        super().__init__(message)
        self.category = category
        self.code = code


def _resolve(path, base: Path) -> Path:
    p = Path(path)
    return (p if p.is_absolute() else base / p).resolve()


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        w.writerow(header)
        w.writerows(rows)


def _num(x) -> str:
    # repr round-trips doubles exactly
    return repr(float(x))


def write_trace_csv(path: Path, trace, n_fields: int) -> None:
    header = ["level", "iter", "match", "penalty", "nuclear", "total"]
    header += [f"sigma_{i}" for i in range(1, n_fields + 1)] + ["folds", "eps"]
    rows = [[r.level, r.iteration, _num(r.match), _num(r.penalty), _num(r.nuclear), _num(r.total),
             *(_num(s) for s in r.singvals), r.folds, _num(r.eps)] for r in trace.records]
    _write_csv(path, header, rows)


# ---------------------------------------------------------------- phantom

def cmd_phantom(cfg: RunConfig, out: Path) -> None:
    truth = generate_phantom(cfg.phantom)
    n = cfg.phantom.n_phases
    files = {"phases": [], "truth": [], "mask_tumor": [], "mask_lung": []}
    for p, img in enumerate(truth.images):
        files["phases"].append(write_volume(out / f"phase_{p:02d}.mhd", img).name)
    for pid, d in zip(truth.true_displacements.phase_ids, truth.true_displacements.fields):
        files["truth"].append(write_volume(out / f"truth_{pid:02d}.mhd", d).name)
    for name in ("tumor", "lung"):
        for p, m in enumerate(truth.masks[name]):
            files[f"mask_{name}"].append(write_volume(out / f"mask_{name}_{p:02d}.mhd", m.as_volume()).name)
    manifest = cfg.to_dict()
    manifest.update({
        "output.reference_index": truth.reference_index,
        "output.phase_ids": [k for k in range(n) if k != truth.reference_index],
        **{f"output.{k}": v for k, v in files.items()},
    })
    (out / PHANTOM_MANIFEST).write_text(dump_config(manifest))


def _phantom_manifest(directory: Path) -> dict:
    path = directory / PHANTOM_MANIFEST
    if not path.is_file():
        raise CliError("input", f"no {PHANTOM_MANIFEST} in {directory}", EXIT_INPUT)
    return load_config(path)


# --------------------------------------------------------------- register

def _register_inputs(cfg: RunConfig, base: Path) -> tuple[list, int]:
    opts = cfg.register
    if "inputs" in opts:
        paths = [_resolve(p, base) for p in opts["inputs"]]
        ref = int(opts.get("reference", 0))
    elif "input_dir" in opts:
        directory = _resolve(opts["input_dir"], base)
        man = _phantom_manifest(directory)
        paths = [directory / name for name in man["output.phases"]]
        ref = int(opts.get("reference", man["output.reference_index"]))
    else:
        raise ConfigError("register needs register.inputs or register.input_dir")
    return paths, ref


def cmd_register(cfg: RunConfig, out: Path, base: Path) -> None:
    paths, ref = _register_inputs(cfg, base)
    images = [read_volume(p) for p in paths]
    if any(getattr(im, "values", None) is None for im in images):
        raise CliError("input", "register inputs must be scalar volumes", EXIT_INPUT)
    if any(im.geometry != images[0].geometry for im in images):
        raise CliError("geometry", "input volumes do not share geometry", EXIT_INPUT)
    if not 0 <= ref < len(images):
        raise CliError("input", f"reference index {ref} out of range for {len(images)} inputs", EXIT_INPUT)
    if cfg.preprocess_gamma != 0:
        images = [preprocess_exponential(im, cfg.preprocess_gamma, cfg.preprocess_scale) for im in images]
    threads = cfg.register.get("threads")
    ens, trace = register_series(images, ref, cfg.registration, threads=int(threads) if threads else None)

    for pid, d in zip(ens.phase_ids, ens.fields):
        write_volume(out / f"disp_{pid:02d}.mhd", d)
    write_trace_csv(out / TRACE_FILE, trace, len(ens))

    manifest = cfg.to_dict()
    for key in ("register.input_dir", "register.threads"):
        manifest.pop(key, None)
    manifest["register.inputs"] = [str(p) for p in paths]
    manifest["register.reference"] = ref
    if "evaluate.runs" in manifest:
        manifest["evaluate.runs"] = [str(_resolve(r, base)) for r in manifest["evaluate.runs"]]
    if "evaluate.masks_dir" in manifest:
        manifest["evaluate.masks_dir"] = str(_resolve(manifest["evaluate.masks_dir"], base))
    manifest["output.phase_ids"] = list(ens.phase_ids)
    manifest["output.level_start"] = [float(v) for v in trace.level_start]
    (out / RUN_MANIFEST).write_text(dump_config(manifest))


# --------------------------------------------------------------- evaluate

def _load_run(directory: Path):
    path = directory / RUN_MANIFEST
    if not path.is_file():
        raise CliError("input", f"no {RUN_MANIFEST} in {directory}", EXIT_INPUT)
    man = load_config(path)
    fields = [read_volume(directory / f"disp_{pid:02d}.mhd") for pid in man["output.phase_ids"]]
    return DeformationEnsemble(fields, man["output.phase_ids"]), float(man.get("registration.alpha", 0.0))


def _load_masks(directory: Path) -> tuple[dict, int]:
    man = _phantom_manifest(directory)
    masks = {}
    for key, names in man.items():
        if key.startswith("output.mask_"):
            masks[key[len("output.mask_"):]] = [BinaryMask.from_volume(read_volume(directory / n)) for n in names]
    if not masks:
        raise CliError("input", f"no masks listed in {directory / PHANTOM_MANIFEST}", EXIT_INPUT)
    return masks, int(man["output.reference_index"])


def cmd_evaluate(cfg: RunConfig, out: Path, base: Path) -> None:
    opts = cfg.evaluate
    if "runs" not in opts or "masks_dir" not in opts:
        raise ConfigError("evaluate needs evaluate.runs and evaluate.masks_dir")
    masks, ref = _load_masks(_resolve(opts["masks_dir"], base))
    runs, alphas = {}, {}
    for run_dir in opts["runs"]:
        path = _resolve(run_dir, base)
        label = path.name
        if label in runs:
            raise ConfigError(f"duplicate run name {label!r}")
        runs[label], alphas[label] = _load_run(path)
    ks = opts.get("ks")
    report = evaluate_run(runs, masks, ks=ks, reference=ref, alphas=alphas, center=bool(opts.get("center", False)))

    _write_csv(out / "dice.csv", ["run", "alpha", "structure", "phase", "dice"],
               [[r[0], _num(r[1]), r[2], r[3], _num(r[4])] for r in report.dice_rows])
    m = max(len(r[2]) for r in report.cumfrac_rows)
    _write_csv(out / "sv_cumfrac.csv", ["run", "alpha"] + [f"k_{i}" for i in range(1, m + 1)],
               [[r[0], _num(r[1]), *(_num(c) for c in r[2])] for r in report.cumfrac_rows])
    _write_csv(out / "pca_dice.csv", ["run", "alpha", "structure", "k", "mean_dice"],
               [[r[0], _num(r[1]), r[2], r[3], _num(r[4])] for r in report.pca_rows])


# ------------------------------------------------------------------- main

COMMANDS = {"phantom", "register", "evaluate"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rankmotion", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("phantom", "write the synthetic phantom series"),
                           ("register", "register a volume series"),
                           ("evaluate", "DICE, PCA truncation and spectrum tables")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--output-dir", required=True, type=Path)
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        base = args.config.resolve().parent
        out = args.output_dir
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise CliError("io", f"cannot create {out}: {exc}", EXIT_IO) from None
        if args.command == "phantom":
            cmd_phantom(cfg, out)
        elif args.command == "register":
            cmd_register(cfg, out, base)
        else:
            cmd_evaluate(cfg, out, base)
    except CliError as exc:
        return _fail(exc.category, str(exc), exc.code)
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    except VolumeFormatError as exc:
        return _fail("format", str(exc), EXIT_FORMAT)
    except OSError as exc:
        return _fail("io", str(exc), EXIT_IO)
    except ValueError as exc:
        return _fail("input", str(exc), EXIT_INPUT)
    return 0


def _fail(category: str, message: str, code: int) -> int:
    print(f"error: {category}: {' '.join(message.split())}", file=sys.stderr)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
