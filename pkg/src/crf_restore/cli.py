"""Command-line interface: crf-restore {degrade|denoise|inpaint|metrics|bench}.

Every command writes a JSON manifest next to its primary output recording all
paths, parameters, and seeds, so a run can be replayed exactly
(:func:`run_manifest`).  Exit codes: 0 success, 2 argument errors, 3 I/O
errors, 4 data or numerical errors.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import os
import sys as _sys
import time
from pathlib import Path

import numpy as np

from . import degrade as deg
from . import solver as slv
from .image import load_image, psnr, save_image
from .priors import GSMConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DATA = 4

# Conventional resolutions of the common benchmark photographs (the grid in
# cmd_bench assumes these).  The images are not distributed with the package;
# SHA-256 values of your local copies can be supplied via --hashes to get
# integrity warnings when a file differs from the one a result was made with.
STANDARD_IMAGES = {
    "peppers": 256,
    "house": 256,
    "cameraman": 256,
    "barbara": 512,
    "lena": 512,
    "man": 512,
    "boats": 512,
}

DENOISE_SIGMAS = (10.0, 20.0, 30.0, 50.0)
INPAINT_KEEPS = (0.8, 0.5, 0.3)
PRIORS = ("gaussian", "gsm")

_CONFIG_FIELDS = ("prior", "sigma", "iterations", "lambda0", "rho0", "gamma1",
                  "gamma2", "patch_size", "k_total", "window",
                  "reference_stride", "seed", "alpha", "scale_from_root")


def load_config_file(path) -> dict:
    """Flat ``key = value`` file; '#' starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    unknown = set(values) - set(_CONFIG_FIELDS)
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    return values


def _coerce(key: str, value):
    if value is None:
        return None
    if key in ("iterations", "patch_size", "k_total", "window",
               "reference_stride", "seed"):
        return int(value)
    if key in ("sigma", "lambda0", "rho0", "gamma1", "gamma2", "alpha"):
        return float(value)
    return str(value)


def build_solver_config(task: str, file_values: dict, flag_values: dict) -> slv.SolverConfig:
    """Precedence: task defaults < config file < command-line flags."""
    merged = {}
    for key in _CONFIG_FIELDS:
        if flag_values.get(key) is not None:
            merged[key] = _coerce(key, flag_values[key])
        elif key in file_values:
            merged[key] = _coerce(key, file_values[key])
    gsm = GSMConfig(alpha=merged.pop("alpha", 0.5),
                    scale_from_root=merged.pop("scale_from_root", "square"))
    return slv.SolverConfig(task=task, gsm=gsm, **merged)


def _config_as_dict(cfg: slv.SolverConfig) -> dict:
    return {
        "task": cfg.task, "prior": cfg.prior, "sigma": cfg.sigma,
        "iterations": cfg.iterations, "lambda0": cfg.lambda0, "rho0": cfg.rho0,
        "gamma1": cfg.gamma1, "gamma2": cfg.gamma2,
        "patch_size": cfg.patch_size, "k_total": cfg.k_total,
        "window": cfg.window, "reference_stride": cfg.reference_stride,
        "seed": cfg.seed, "alpha": cfg.gsm.alpha,
        "scale_from_root": cfg.gsm.scale_from_root,
    }


def _write_manifest(primary_output: str, manifest: dict) -> None:
    path = Path(str(primary_output) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(json.dumps(manifest, sort_keys=True))


def run_manifest(path) -> int:
    """Re-execute the command recorded in a manifest; artifacts are
    byte-identical to the original run (wall time differs only in the new
    manifest)."""
    manifest = json.loads(Path(path).read_text())
    return main(manifest["argv"])


# -- subcommands -------------------------------------------------------------

def cmd_degrade(args) -> int:
    img = load_image(args.input)
    spec = deg.DegradationSpec(noise_sigma=args.sigma,
                               keep_probability=args.keep, seed=args.seed)
    degraded, mask = deg.apply_degradation(img, spec)
    save_image(degraded, args.output)
    outputs = {"image": str(args.output)}
    if args.mask_out:
        deg.save_mask(mask, args.mask_out)
        outputs["mask"] = str(args.mask_out)
    _write_manifest(args.output, {
        "command": "degrade", "argv": args.argv,
        "input": str(args.input), "outputs": outputs,
        "degradation": {"noise_sigma": args.sigma, "keep_probability": args.keep,
                        "seed": args.seed},
        "wall_time_s": time.time() - args.t0,
    })
    return EXIT_OK


def _run_restore(args, task: str) -> int:
    y = load_image(args.input)
    mask = deg.load_mask(args.mask) if task == "inpaint" else None
    file_values = load_config_file(args.config) if args.config else {}
    flags = {key: getattr(args, key, None) for key in _CONFIG_FIELDS}
    if task == "denoise" and flags.get("sigma") is None and "sigma" not in file_values:
        raise ValueError("denoising requires --sigma")
    cfg = build_solver_config(task, file_values, flags)
    reference = load_image(args.reference) if args.reference else None

    restored, history = slv.run(y, cfg, mask=mask, reference=reference)
    save_image(restored, args.output)
    outputs = {"image": str(args.output)}
    if args.csv:
        Path(args.csv).write_text(slv.stats_to_csv(history))
        outputs["csv"] = str(args.csv)

    result = {"command": task, "argv": args.argv, "input": str(args.input),
              "outputs": outputs, "config": _config_as_dict(cfg),
              "wall_time_s": time.time() - args.t0}
    if task == "inpaint":
        result["mask"] = str(args.mask)
    if reference is not None:
        result["psnr"] = psnr(reference, restored)
    _write_manifest(args.output, result)
    return EXIT_OK


def cmd_denoise(args) -> int:
    return _run_restore(args, "denoise")


def cmd_inpaint(args) -> int:
    return _run_restore(args, "inpaint")


def cmd_metrics(args) -> int:
    value = psnr(load_image(args.reference), load_image(args.test))
    print(value)
    return EXIT_OK


def _bench_cell(job):
    """One (image, setting, prior) cell; pure function of its arguments."""
    path, name, task, sigma, keep, prior, seed, overrides = job
    clean = load_image(path)
    spec = deg.DegradationSpec(noise_sigma=sigma, keep_probability=keep, seed=seed)
    degraded, mask = deg.apply_degradation(clean, spec)
    cfg = slv.SolverConfig(task=task, prior=prior, sigma=sigma, seed=seed,
                           **overrides)
    t0 = time.time()
    restored, _ = slv.run(degraded, cfg, mask=mask if task == "inpaint" else None)
    elapsed = time.time() - t0
    return {"image": name, "task": task, "sigma": sigma, "keep": keep,
            "prior": prior, "seed": seed, "psnr": psnr(clean, restored),
            "seconds": elapsed}


def cmd_bench(args) -> int:
    image_dir = Path(args.image_dir)
    if not image_dir.is_dir():
        raise OSError(f"not a directory: {image_dir}")
    hashes = json.loads(Path(args.hashes).read_text()) if args.hashes else {}

    found, missing = {}, []
    for name in STANDARD_IMAGES:
        for suffix in (".pgm", ".png"):
            candidate = image_dir / f"{name}{suffix}"
            if candidate.exists():
                found[name] = candidate
                break
        else:
            missing.append(name)
    if missing:
        print(f"missing images (skipped): {', '.join(missing)}", file=_sys.stderr)
    if not found:
        raise OSError(f"no benchmark images found in {image_dir}")

    for name, path in found.items():
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        expect = hashes.get(name)
        if expect and digest != expect:
            print(f"warning: SHA-256 mismatch for {name}: {digest} != {expect}",
                  file=_sys.stderr)

    overrides = {}
    if args.iterations is not None:
        overrides["iterations"] = args.iterations

    jobs = []
    for img_i, (name, path) in enumerate(sorted(found.items())):
        for set_i, setting in enumerate(
                DENOISE_SIGMAS if args.suite == "denoise" else INPAINT_KEEPS):
            for pri_i, prior in enumerate(PRIORS):
                seed = int(np.random.SeedSequence(
                    entropy=args.seed,
                    spawn_key=(img_i, set_i, pri_i)).generate_state(1)[0])
                if args.suite == "denoise":
                    jobs.append((path, name, "denoise", float(setting), 1.0,
                                 prior, seed, overrides))
                else:
                    jobs.append((path, name, "inpaint", 0.0, float(setting),
                                 prior, seed, overrides))

    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_bench_cell, jobs))
    else:
        rows = [_bench_cell(job) for job in jobs]

    header = "image,task,sigma,keep,prior,seed,psnr"
    lines = [header]
    timing = ["image,task,sigma,keep,prior,seconds"]
    for row in rows:
        lines.append(f"{row['image']},{row['task']},{row['sigma']!r},"
                     f"{row['keep']!r},{row['prior']},{row['seed']},{row['psnr']!r}")
        timing.append(f"{row['image']},{row['task']},{row['sigma']!r},"
                      f"{row['keep']!r},{row['prior']},{row['seconds']:.3f}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    timing_path = Path(str(args.out) + ".timing.csv")
    timing_path.write_text("\n".join(timing) + "\n")

    _write_manifest(args.out, {
        "command": "bench", "argv": args.argv, "image_dir": str(image_dir),
        "suite": args.suite, "seed": args.seed,
        "outputs": {"csv": str(args.out), "timing": str(timing_path)},
        "images": {k: str(v) for k, v in sorted(found.items())},
        "wall_time_s": time.time() - args.t0,
    })
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--prior", choices=PRIORS, help="patch prior (default gsm)")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--sigma", type=float, help="noise standard deviation")
    p.add_argument("--iterations", type=int)
    p.add_argument("--lambda0", type=float)
    p.add_argument("--rho0", type=float)
    p.add_argument("--gamma1", type=float)
    p.add_argument("--gamma2", type=float)
    p.add_argument("--patch-size", type=int, dest="patch_size")
    p.add_argument("--k-total", type=int, dest="k_total")
    p.add_argument("--window", type=int)
    p.add_argument("--stride", type=int, dest="reference_stride")
    p.add_argument("--alpha", type=float, help="Gamma shape of the scale prior")
    p.add_argument("--scale-mode", choices=("square", "sqrt"),
                   dest="scale_from_root")
    p.add_argument("--seed", type=int)
    p.add_argument("--csv", help="write per-iteration diagnostics CSV here")
    p.add_argument("--reference", help="clean image for PSNR diagnostics")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crf-restore",
        description="Patch-based image denoising and inpainting.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("degrade", help="add noise and/or drop pixels")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--keep", type=float, default=1.0,
                   help="probability a pixel is kept (Bernoulli)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mask-out", dest="mask_out", help="write the mask here")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("denoise", help="remove Gaussian noise")
    p.add_argument("input")
    p.add_argument("output")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("inpaint", help="restore missing pixels")
    p.add_argument("input")
    p.add_argument("mask", help="mask image, 0 = missing")
    p.add_argument("output")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("metrics", help="print PSNR between two images")
    p.add_argument("reference")
    p.add_argument("test")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("bench", help="run the evaluation grid over a directory "
                                     "of standard images")
    p.add_argument("image_dir")
    p.add_argument("--suite", choices=("denoise", "inpaint"), default="denoise")
    p.add_argument("--out", required=True, help="results CSV path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int, help="override iteration count")
    p.add_argument("--jobs", type=int,
                   default=int(os.environ.get("CRF_RESTORE_JOBS", "1")),
                   help="parallel cells (default $CRF_RESTORE_JOBS or 1)")
    p.add_argument("--hashes", help="JSON file of name -> sha256 to verify")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    if argv is None:
        argv = _sys.argv[1:]
    argv = [str(a) for a in argv]
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    args.t0 = time.time()
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_IO
    except (ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
