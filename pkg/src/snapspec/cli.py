"""Command-line pipeline driver.

Each subcommand covers one stage of the simulation/reconstruction pipeline
and writes a key=value manifest beside its artifact; `rerun` replays any
such manifest and reproduces the artifact byte for byte. A flat key=value
config file (--config) can supply defaults for any flag; explicit flags win.

Exit codes: 0 success, 1 runtime failure (bad file, shape mismatch,
diverged run), 2 usage error.
"""

import argparse
import glob
import math
import os
import sys
from collections import namedtuple

import numpy as np

from . import __version__, manifest, metrics, scenes, selection, spectra, unfolding
from .checkpoint import load_checkpoint, save_checkpoint
from .forward_model import (
    HyperCube,
    build_mosaic,
    encode,
    load_cube,
    load_measurement,
    save_cube,
    save_measurement,
)
from .prior_net import ReconstructionModel, model_from_arrays


class UsageError(Exception):
    """Bad invocation (missing/conflicting flags) -> exit code 2."""


def _parse_bool(text):
    low = str(text).strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


# name is both the manifest key and (dashed) the command-line flag
Arg = namedtuple("Arg", "name type required default choices flag_only help")
Arg.__new__.__defaults__ = (None, False, None, None, False, "")

ARG_SPECS = {
    "gen-spectra": [
        Arg("n", int, True, help="how many filter spectra to synthesize"),
        Arg("seed", int, True, help="root RNG seed"),
        Arg("bands", int, False, 300, help="spectral samples per curve"),
        Arg("gmax", float, False, 0.08, help="max allowed adjacent-sample jump"),
        Arg("rmin", float, False, 0.3, help="min required peak-to-valley range"),
        Arg("out", str, True, help="output spectra file (.spc)"),
    ],
    "select-filters": [
        Arg("in", str, True, help="candidate spectra file (.spc)"),
        Arg("k", int, True, help="subset size"),
        Arg("method", str, False, "fps", ("fps", "innerproduct", "oracle"),
            help="selection strategy"),
        Arg("abs", _parse_bool, False, True,
            help="score fps candidates by |correlation| (true) or signed (false)"),
        Arg("tau", float, False, 0.5, help="innerproduct: correlation threshold"),
        Arg("seed", int, False, 0, help="innerproduct: restart seed"),
        Arg("max_iters", int, False, 1000, help="innerproduct: resample budget"),
        Arg("budget", int, False, 1_000_000, help="oracle: max subsets to enumerate"),
        Arg("out", str, True, help="output spectra file for the selected rows"),
    ],
    "gen-scenes": [
        Arg("n", int, True, help="number of scenes"),
        Arg("height", int, True, help="scene height in pixels"),
        Arg("width", int, True, help="scene width in pixels"),
        Arg("bands", int, False, 300, help="spectral bands per scene"),
        Arg("seed", int, True, help="root RNG seed"),
        Arg("out", str, True, help="output directory for scene_*.hsc cubes"),
    ],
    "encode": [
        Arg("scene", str, True, help="input cube (.hsc)"),
        Arg("filters", str, True, help="selected filter spectra (.spc)"),
        Arg("mosaic_s", int, True, help="mosaic period; file must hold s*s spectra"),
        Arg("sigma", float, False, 0.0, help="additive Gaussian noise level"),
        Arg("seed", int, False, 0, help="noise RNG seed"),
        Arg("out", str, True, help="output measurement (.msr)"),
    ],
    "train": [
        Arg("scenes", str, True, help="directory of training cubes (*.hsc)"),
        Arg("filters", str, True, help="selected filter spectra (.spc)"),
        Arg("stages", int, True, help="number of unrolled solver stages"),
        Arg("channels", int, False, 32, help="base feature width of the denoiser"),
        Arg("epochs", int, True, help="training epochs"),
        Arg("lr", float, False, 2e-4, help="Adam learning rate"),
        Arg("seed", int, False, 0, help="root seed for init, shuffling, augmentation"),
        Arg("rank_ratio", int, False, 4, help="channel reduction of the gating branch"),
        Arg("bank_size", int, False, 8, help="rows in each shared query bank"),
        Arg("share", _parse_bool, False, True, help="share denoiser weights across stages"),
        Arg("batch", int, False, 1, help="samples per optimizer step"),
        Arg("augment", _parse_bool, False, True, help="random crop/rotate/flip"),
        Arg("crop", int, False, None, help="augmentation crop size (optional)"),
        Arg("rho_init", float, False, 1.0, help="initial gradient step size"),
        Arg("out", str, True, help="output checkpoint (.erp)"),
    ],
    "reconstruct": [
        Arg("measurement", str, True, help="input measurement (.msr)"),
        Arg("filters", str, True, help="filter spectra used at encode time (.spc)"),
        Arg("model", str, False, None, help="trained checkpoint (.erp)"),
        Arg("classical", None, False, False, flag_only=True,
            help="use plain soft-threshold iterations instead of a model"),
        Arg("stages", int, False, None,
            help="iteration count (required with --classical)"),
        Arg("reg_weight", float, False, 1e-3, help="classical: sparsity weight"),
        Arg("rho", float, False, None, help="classical: step size (default 1/L)"),
        Arg("out", str, True, help="output cube (.hsc)"),
    ],
    "evaluate": [
        Arg("recon", str, True, help="reconstructed cube or directory of cubes"),
        Arg("truth", str, True, help="reference cube or directory of cubes"),
        Arg("out", str, True, help="output quality report CSV"),
    ],
    "export-plots": [
        Arg("in", str, True,
            help="spectra file, loss CSV, or stage:report[,stage:report...] list"),
        Arg("out", str, True, help="output path prefix for the CSV bundle"),
    ],
}

COMMAND_HELP = {
    "gen-spectra": "synthesize a bank of filter transmittance spectra",
    "select-filters": "pick a low-correlation filter subset from a bank",
    "gen-scenes": "synthesize ground-truth spectral cubes",
    "encode": "project a cube through the filter mosaic into a measurement",
    "train": "fit the unrolled reconstruction model",
    "reconstruct": "recover a cube from a measurement",
    "evaluate": "score reconstructions against references",
    "export-plots": "turn artifacts into plot-ready CSV bundles",
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="snapspec",
        description="simulate and reconstruct snapshot mosaic spectral captures",
    )
    parser.add_argument(
        "--version", action="version", version=f"snapspec {__version__}"
    )
    sub = parser.add_subparsers(dest="command", metavar="command")
    for cmd, args in ARG_SPECS.items():
        sp = sub.add_parser(cmd, help=COMMAND_HELP[cmd])
        for a in args:
            flag = "--" + a.name.replace("_", "-")
            if a.flag_only:
                sp.add_argument(flag, dest=a.name, action="store_true",
                                default=None, help=a.help)
            else:
                sp.add_argument(flag, dest=a.name, type=a.type, default=None,
                                choices=a.choices, help=a.help)
        sp.add_argument("--config", default=None,
                        help="key=value file supplying defaults; flags win")
    rp = sub.add_parser("rerun", help="replay a command from its manifest")
    rp.add_argument("--manifest", required=True, help="manifest file to replay")
    return parser


def _read_config(path):
    if not os.path.exists(path):
        raise UsageError(f"--config file not found: {path}")
    entries = {}
    with open(path) as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{ln}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            entries[key.strip()] = value.strip()
    return entries


def _resolve(command, ns):
    """Merge flags over config over declared defaults; enforce required."""
    config = _read_config(ns.config) if ns.config else {}
    resolved = {}
    for a in ARG_SPECS[command]:
        value = getattr(ns, a.name)
        if value is None and a.name in config:
            raw = config[a.name]
            if a.flag_only:
                value = _parse_bool(raw)
            else:
                try:
                    value = a.type(raw)
                except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
                    raise UsageError(
                        f"config value {a.name}={raw!r} is invalid: {exc}"
                    ) from None
                if a.choices and value not in a.choices:
                    raise UsageError(
                        f"config value {a.name}={raw!r} not one of {a.choices}"
                    )
        if value is None:
            if a.required:
                flag = "--" + a.name.replace("_", "-")
                raise UsageError(f"missing required flag {flag}")
            value = a.default
        resolved[a.name] = value
    return resolved


def _write_manifest(command, resolved):
    out = resolved["out"]
    manifest.write_manifest(manifest.manifest_path_for(out), command, resolved)


def _stem(path):
    root, ext = os.path.splitext(str(path))
    return root if ext else str(path)


def _infer_s(count, source):
    s = math.isqrt(count)
    if s * s != count:
        raise ValueError(
            f"{source} holds {count} spectra, not a square mosaic count"
        )
    return s


def _load_bank_for_cube(filters_path, cube_path, cube):
    bank = spectra.load_spectra(filters_path)
    if bank.bands != cube.data.shape[2]:
        raise ValueError(
            f"band mismatch: {filters_path} has {bank.bands} bands, "
            f"{cube_path} has {cube.data.shape[2]}"
        )
    return bank


# ---- command handlers ----


def _cmd_gen_spectra(res):
    bank = spectra.generate_synthetic(
        res["n"], res["seed"], g_max=res["gmax"], r_min=res["rmin"], bands=res["bands"]
    )
    spectra.save_spectra(res["out"], bank)


def _cmd_select_filters(res):
    bank = spectra.load_spectra(res["in"])
    method = res["method"]
    if method == "fps":
        result = selection.select_fps(bank, res["k"], use_abs=res["abs"])
    elif method == "innerproduct":
        result = selection.select_innerproduct_baseline(
            bank, res["k"], res["tau"], seed=res["seed"], max_iters=res["max_iters"]
        )
    else:
        result = selection.brute_force_oracle(bank, res["k"], budget=res["budget"])
    subset = spectra.SpectrumBank(
        grid=bank.grid, values=result.theta, meta={"source": res["in"]}
    )
    spectra.save_spectra(res["out"], subset)
    lines = ["rank,bank_index"]
    lines += [f"{r},{int(i)}" for r, i in enumerate(result.indices)]
    with open(_stem(res["out"]) + "_indices.csv", "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _cmd_gen_scenes(res):
    cubes = scenes.generate_scenes(
        res["n"], res["height"], res["width"], res["bands"], res["seed"]
    )
    os.makedirs(res["out"], exist_ok=True)
    for i, cube in enumerate(cubes):
        save_cube(os.path.join(res["out"], f"scene_{i:03d}.hsc"), cube)


def _cmd_encode(res):
    cube = load_cube(res["scene"])
    bank = _load_bank_for_cube(res["filters"], res["scene"], cube)
    s = res["mosaic_s"]
    if s * s != bank.count:
        raise ValueError(
            f"--mosaic-s {s} needs {s * s} spectra, {res['filters']} holds {bank.count}"
        )
    h, w, _ = cube.data.shape
    phi = build_mosaic(bank.values, h, w, s)
    meas = encode(cube, phi, sigma=res["sigma"], seed=res["seed"])
    save_measurement(res["out"], meas)


def _load_scene_dir(path, bank):
    paths = sorted(glob.glob(os.path.join(path, "*.hsc")))
    if not paths:
        raise ValueError(f"no .hsc cubes found in {path}")
    cubes = []
    shape = None
    for p in paths:
        cube = load_cube(p)
        if cube.data.shape[2] != bank.bands:
            raise ValueError(
                f"band mismatch: {p} has {cube.data.shape[2]} bands, "
                f"filters have {bank.bands}"
            )
        if shape is None:
            shape = cube.data.shape
        elif cube.data.shape != shape:
            raise ValueError(f"{p}: shape {cube.data.shape} differs from {shape}")
        cubes.append(cube)
    return paths, cubes


def _cmd_train(res):
    bank = spectra.load_spectra(res["filters"])
    _, cubes = _load_scene_dir(res["scenes"], bank)
    h, w, _ = cubes[0].data.shape
    s = _infer_s(bank.count, res["filters"])
    phi = build_mosaic(bank.values, h, w, s)
    model = ReconstructionModel(
        bands=bank.bands,
        stages=res["stages"],
        base_channels=res["channels"],
        rank_ratio=res["rank_ratio"],
        bank_size=res["bank_size"],
        share_params=res["share"],
        rho_init=res["rho_init"],
        seed=res["seed"],
    )
    dataset = [(cube, encode(cube, phi, 0.0)) for cube in cubes]
    unfolding.train(
        model,
        dataset,
        phi,
        epochs=res["epochs"],
        lr=res["lr"],
        batch=res["batch"],
        seed=res["seed"],
        augment=res["augment"],
        crop=res["crop"],
        loss_csv=_stem(res["out"]) + "_loss.csv",
    )
    save_checkpoint(res["out"], model.state_dict())


def _cmd_reconstruct(res):
    if (res["model"] is None) == (not res["classical"]):
        raise UsageError("pass exactly one of --model or --classical")
    meas = load_measurement(res["measurement"])
    bank = spectra.load_spectra(res["filters"])
    h, w = meas.y.shape
    s = _infer_s(bank.count, res["filters"])
    phi = build_mosaic(bank.values, h, w, s)
    if res["classical"]:
        if res["stages"] is None:
            raise UsageError("--classical needs --stages")
        config = unfolding.UnfoldingConfig(
            stages=res["stages"],
            rho_init=res["rho"],
            prox_kind="classical_soft_threshold",
            reg_weight=res["reg_weight"],
        )
        result = unfolding.run_unfolding(meas, phi, config)
    else:
        model = model_from_arrays(load_checkpoint(res["model"]))
        if model.bands != bank.bands:
            raise ValueError(
                f"band mismatch: {res['model']} expects {model.bands} bands, "
                f"filters have {bank.bands}"
            )
        if res["stages"] is not None and res["stages"] != model.stages:
            raise ValueError(
                f"--stages {res['stages']} does not match the "
                f"{model.stages}-stage checkpoint {res['model']}"
            )
        res["stages"] = model.stages  # recorded in the manifest
        config = unfolding.UnfoldingConfig(stages=model.stages, prox_kind="erra")
        result = unfolding.run_unfolding(meas, phi, config, model=model)
    # estimates may leave the physical radiance range; project before storing
    clipped = np.clip(np.asarray(result.estimate, dtype=np.float32), 0.0, 1.0)
    cube = HyperCube(data=clipped, grid=bank.grid)
    save_cube(res["out"], cube)
    lines = ["stage,fidelity"]
    lines += [f"{k + 1},{fid:.9g}" for k, fid in enumerate(result.fidelity)]
    with open(_stem(res["out"]) + "_stages.csv", "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _cmd_evaluate(res):
    recon, truth = res["recon"], res["truth"]
    if os.path.isdir(recon) != os.path.isdir(truth):
        raise ValueError("--recon and --truth must both be files or both directories")
    if os.path.isdir(recon):
        rpaths = sorted(glob.glob(os.path.join(recon, "*.hsc")))
        tpaths = sorted(glob.glob(os.path.join(truth, "*.hsc")))
        if not rpaths:
            raise ValueError(f"no .hsc cubes found in {recon}")
        if len(rpaths) != len(tpaths):
            raise ValueError(
                f"{recon} holds {len(rpaths)} cubes, {truth} holds {len(tpaths)}"
            )
        pairs = []
        for rp, tp in zip(rpaths, tpaths):
            sid = os.path.splitext(os.path.basename(rp))[0]
            pairs.append((sid, load_cube(rp).data, load_cube(tp).data))
    else:
        sid = os.path.splitext(os.path.basename(recon))[0]
        pairs = [(sid, load_cube(recon).data, load_cube(truth).data)]
    metrics.report(pairs, path=res["out"])


def _average_row(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != "scene_id,psnr_db,ssim":
        raise ValueError(f"{path}: not a quality report CSV")
    last = lines[-1].split(",")
    if last[0] != "average":
        raise ValueError(f"{path}: missing average row")
    return float(last[1]), float(last[2])


def _cmd_export_plots(res):
    src, out = res["in"], res["out"]
    if ":" in src:
        # "stages:report.csv[,stages:report.csv...]" -> quality-vs-stage curve
        points = []
        for part in src.split(","):
            stage_text, _, path = part.partition(":")
            try:
                stage = int(stage_text)
            except ValueError:
                raise UsageError(
                    f"--in entry {part!r} is not stages:report.csv"
                ) from None
            psnr, ssim = _average_row(path)
            points.append((stage, psnr, ssim))
        points.sort()
        lines = ["stages,avg_psnr,avg_ssim"]
        lines += [f"{k},{p:.6f},{s:.6f}" for k, p, s in points]
        with open(out + "_stage_curve.csv", "w") as fh:
            fh.write("\n".join(lines) + "\n")
        return
    if not os.path.exists(src):
        raise ValueError(f"--in file not found: {src}")
    with open(src, "rb") as fh:
        magic = fh.read(4)
    if magic == spectra.SPECTRA_MAGIC:
        bank = spectra.load_spectra(src)
        spectra.export_csv(out + "_spectra.csv", bank)
        absp = np.abs(spectra.pearson_stats(bank).p)
        np.savetxt(out + "_correlation.csv", absp, fmt="%.9g", delimiter=",")
        return
    with open(src) as fh:
        first = fh.readline().strip()
        rest = fh.read()
    if first == "epoch,loss":
        with open(out + "_loss.csv", "w") as fh:
            fh.write(first + "\n" + rest)
        return
    raise ValueError(
        f"--in {src}: expected a spectra file, a loss CSV, "
        "or a stages:report.csv list"
    )


HANDLERS = {
    "gen-spectra": _cmd_gen_spectra,
    "select-filters": _cmd_select_filters,
    "gen-scenes": _cmd_gen_scenes,
    "encode": _cmd_encode,
    "train": _cmd_train,
    "reconstruct": _cmd_reconstruct,
    "evaluate": _cmd_evaluate,
    "export-plots": _cmd_export_plots,
}

_RERUN_SKIP = ("command", "tool_version", "config")


def _rerun_argv(manifest_path):
    entries = manifest.read_manifest(manifest_path)
    command = entries["command"]
    if command not in ARG_SPECS:
        raise ValueError(f"{manifest_path}: unknown command {command!r}")
    flag_only = {a.name for a in ARG_SPECS[command] if a.flag_only}
    argv = [command]
    for key in sorted(entries):
        if key in _RERUN_SKIP:
            continue
        flag = "--" + key.replace("_", "-")
        if key in flag_only:
            if entries[key] == "true":
                argv.append(flag)
        else:
            argv += [flag, entries[key]]
    return argv


def run(argv=None):
    """Parse and execute one command; returns the process exit code."""
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the message
        return int(exc.code or 0)
    if ns.command == "rerun":
        try:
            replay = _rerun_argv(ns.manifest)
        except (OSError, ValueError) as exc:
            print(f"snapspec rerun: error: {exc}", file=sys.stderr)
            return 1
        return run(replay)
    try:
        resolved = _resolve(ns.command, ns)
        HANDLERS[ns.command](resolved)
        _write_manifest(ns.command, resolved)
    except UsageError as exc:
        print(f"snapspec {ns.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, RuntimeError, FloatingPointError) as exc:
        print(f"snapspec {ns.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(run())
