"""Command-line interface: ``ringdecon <command> [options]``.

Exit codes: 0 on success, 1 for invalid input or configuration, 2 when a
numerical procedure fails.  ``RDM_THREADS`` caps native worker threads.
"""

from __future__ import annotations

import argparse
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .bench import bench, loglog_slope
from .calibration import detect_sources, fit_seidel
from .config import RunConfig
from .dataset import gen_dataset
from .errors import InvalidArgumentError, NumericalError, RdmError, UserInputError
from .forward import lsi_convolve, precompute_ring_spectra, ring_convolve, superpose_blur
from .io import (
    load_image,
    load_json,
    merge_channels,
    remove_hot_pixels,
    save_image,
    save_json,
    split_channels,
    write_csv,
)
from .noise import add_gaussian_noise
from .roft import psf_metrics, roft
from .seidel import Psf, PsfRadialStack, SeidelCoeffs, synth_radial_psfs
from .solvers import blind_deconvolve, center_psf, deconvolve, ring_deconvolve

__all__ = ["main", "build_parser"]


class _UsageError(UserInputError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="run configuration JSON")
    p.add_argument("--seed", type=int, help="random seed (overrides the config)")
    p.add_argument("--out", type=Path, required=True, help="output file or directory")
    p.add_argument(
        "--display-stretch",
        action="store_true",
        help="also write contrast-stretched PNG previews (stored data are never stretched)",
    )
    p.add_argument("--hot-pixels", action="store_true", help="median-clamp isolated hot pixels on input")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ringdecon", description="Ring deconvolution for rotationally symmetric optics.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    c = _common()

    p = sub.add_parser("calibrate", parents=[c], help="fit Seidel coefficients to a bead image")
    p.add_argument("image", type=Path)

    p = sub.add_parser("psf", parents=[c], help="synthesize the radial PSF stack")
    p.add_argument("--coeffs", type=Path, required=True)
    p.add_argument("--size", type=int, required=True, help="image side N the stack is built for")

    p = sub.add_parser("blur", parents=[c], help="apply a forward model to an image")
    p.add_argument("image", type=Path)
    p.add_argument("--coeffs", type=Path, required=True)
    p.add_argument("--method", choices=("ring", "lsi", "true"), default="ring")
    p.add_argument("--snr", type=float, help="add Gaussian noise at this SNR (dB)")
    p.add_argument("--allow-large", action="store_true", help="allow the O(N^4) oracle above 256 px")

    p = sub.add_parser("deblur", parents=[c], help="deconvolve an image")
    p.add_argument("image", type=Path)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--coeffs", type=Path, help="Seidel coefficients or calibration JSON")
    src.add_argument("--psf", type=Path, help="measured PSF TIFF (shift-invariant methods)")
    src.add_argument("--psf-stack", type=Path, help="radial PSF stack TIFF written by the psf command")
    p.add_argument(
        "--method", choices=("ring", "wiener", "richardson_lucy", "iterative_ls"), default="ring"
    )

    p = sub.add_parser("blind", parents=[c], help="estimate the sphere coefficient and deblur")
    p.add_argument("image", type=Path)

    p = sub.add_parser("roft", parents=[c], help="PSF bandwidth and mix width per radius")
    p.add_argument("--coeffs", type=Path, required=True)
    p.add_argument("--size", type=int, help="image side N (defaults to the image size)")
    p.add_argument("--image", type=Path, help="also plot the RoFT of this image")

    p = sub.add_parser("bench", parents=[c], help="time and compare the forward models")
    p.add_argument("--sizes", type=int, nargs="+", default=[64])
    p.add_argument("--levels", type=float, nargs="+", default=[0.0, 0.5, 1.0, 1.5])
    p.add_argument("--trials", type=int, default=1)

    p = sub.add_parser("gen-dataset", parents=[c], help="generate blurred/clean training pairs")
    p.add_argument("clean_dir", type=Path)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--snr", type=float)
    p.add_argument("--include-zero", action="store_true")
    return parser


def _run_config(args) -> RunConfig:
    cfg = RunConfig() if args.config is None else RunConfig.from_dict(load_json(args.config))
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def load_coeffs(path) -> SeidelCoeffs:
    """Coefficients from a bare coefficient object or a calibration record."""
    d = load_json(path)
    return SeidelCoeffs.from_dict(d.get("coeffs", d))


def _load_input(args) -> list[np.ndarray]:
    chans = split_channels(load_image(args.image))
    if args.hot_pixels:
        chans = [remove_hot_pixels(c) for c in chans]
    return chans


def _square(a: np.ndarray, path) -> int:
    if a.shape[0] != a.shape[1]:
        raise InvalidArgumentError(f"{path}: expected a square image, got {a.shape}")
    return a.shape[0]


def _meta(args, run: RunConfig, **extra) -> dict:
    return {"command": args.command, "config": run.to_dict(), **extra}


def _preview(args, images: dict, path: Path):
    if args.display_stretch:
        from .plotting import plot_images

        plot_images(images, path.with_suffix(".png"), stretch=True)


def _stack(coeffs, n, run):
    grid = run.grid.build(n)
    cfg = run.optical_for(n)
    return grid, cfg, synth_radial_psfs(coeffs, grid, cfg)


def cmd_calibrate(args, run: RunConfig) -> None:
    from dataclasses import replace

    from .plotting import plot_fit_trace

    chans = _load_input(args)
    img = chans[0] if len(chans) == 1 else np.sum(chans, axis=0)
    p = run.detection.patch_size
    cfg = run.optical_for(max(img.shape), psf_side=p)
    det = run.detection
    if det.fov_radius_px is None:
        det = replace(det, fov_radius_px=cfg.fov_radius_px)
    patches = detect_sources(img, det)
    fit = replace(run.fit, seed=run.seed)
    report = fit_seidel(patches, cfg, fit)
    out = Path(args.out)
    run.optical = cfg
    run.detection = det
    run.fit = fit
    save_json(
        {
            **report.to_dict(),
            "sources": [
                {"center": list(s.center), "field_radius": s.field_radius, "field_angle": s.field_angle}
                for s in patches
            ],
            "config": run.to_dict(),
        },
        out / "calibration.json",
    )
    write_csv(out / "loss_trace.csv", ["iteration", "loss"], enumerate(report.per_iteration_loss))
    plot_fit_trace(report.per_iteration_loss, out / "loss_trace.png")
    print(" ".join(f"{k}={v:.4f}" for k, v in report.coeffs.to_dict().items()))


def cmd_psf(args, run: RunConfig) -> None:
    from .plotting import plot_psf_stack

    coeffs = load_coeffs(args.coeffs)
    grid, cfg, stack = _stack(coeffs, args.size, run)
    out = Path(args.out)
    meta = _meta(args, run, coeffs=coeffs.to_dict(), grid=grid.to_dict(), optical=cfg.to_dict())
    save_image(stack.array(), out / "psf_stack.tif", meta)
    save_image(center_psf(coeffs, cfg).intensity, out / "center_psf.tif", meta)
    write_csv(
        out / "psf_radii.csv",
        ["index", "radius_px", "normalized_radius"],
        [(j, r, p.source_radius) for j, (r, p) in enumerate(zip(grid.radii, stack.psfs))],
    )
    plot_psf_stack(stack, out / "psf_stack.png")


def cmd_blur(args, run: RunConfig) -> None:
    coeffs = load_coeffs(args.coeffs)
    chans = _load_input(args)
    n = _square(chans[0], args.image)
    grid, cfg, stack = _stack(coeffs, n, run)
    rng = np.random.default_rng(run.seed)
    if args.method == "ring":
        spectra = precompute_ring_spectra(stack, grid)
        fwd = lambda x: ring_convolve(x, spectra)  # noqa: E731
    elif args.method == "lsi":
        fwd = lambda x: lsi_convolve(x, stack.psfs[0])  # noqa: E731
    else:
        fwd = lambda x: superpose_blur(x, coeffs, cfg, allow_large=args.allow_large)  # noqa: E731
    out = []
    for c in chans:
        b = fwd(c)
        if args.snr is not None:
            b = add_gaussian_noise(b, args.snr, rng)
        out.append(b)
    result = merge_channels(out)
    save_image(result, args.out, _meta(args, run, coeffs=coeffs.to_dict(), method=args.method, snr_db=args.snr))
    _preview(args, {"input": chans[0], "blurred": out[0]}, Path(args.out))


def _stack_from_tiff(path, grid, cfg) -> PsfRadialStack:
    arr = load_image(path)
    if arr.ndim != 3 or arr.shape[0] != grid.num_radii:
        raise InvalidArgumentError(
            f"{path}: expected {grid.num_radii} PSFs for this image size, got array of shape {arr.shape}"
        )
    radii = grid.radii / cfg.fov_radius_px
    return PsfRadialStack(tuple(Psf(a, float(r)) for a, r in zip(arr, radii)), grid)


def cmd_deblur(args, run: RunConfig) -> None:
    chans = _load_input(args)
    n = _square(chans[0], args.image)
    grid = run.grid.build(n)
    cfg = run.optical_for(n)
    s = run.solver
    meta = {"method": args.method}
    if args.method == "ring":
        if args.psf is not None:
            raise InvalidArgumentError("ring deconvolution needs --coeffs or --psf-stack, not a single --psf")
        if args.coeffs is not None:
            coeffs = load_coeffs(args.coeffs)
            stack = synth_radial_psfs(coeffs, grid, cfg)
            meta["coeffs"] = coeffs.to_dict()
        else:
            stack = _stack_from_tiff(args.psf_stack, grid, cfg)
        spectra = precompute_ring_spectra(stack, grid)
        solve = lambda x: ring_deconvolve(x, spectra, grid, s)  # noqa: E731
    else:
        if args.coeffs is not None:
            coeffs = load_coeffs(args.coeffs)
            psf = center_psf(coeffs, cfg)
            meta["coeffs"] = coeffs.to_dict()
        elif args.psf is not None:
            psf = Psf(load_image(args.psf))
        else:
            psf = Psf(load_image(args.psf_stack)[0])
        solve = lambda x: deconvolve(x, psf, args.method, s)  # noqa: E731
    results = [solve(c) for c in chans]
    out = Path(args.out)
    save_image(merge_channels([r.image for r in results]), out, _meta(args, run, **meta))
    rows = [(c, k + 1, v) for c, r in enumerate(results) for k, v in enumerate(r.loss_trace)]
    write_csv(out.with_suffix(".trace.csv"), ["channel", "iteration", "loss"], rows)
    _preview(args, {"input": chans[0], "deblurred": results[0].image}, out)


def cmd_blind(args, run: RunConfig) -> None:
    chans = _load_input(args)
    n = _square(chans[0], args.image)
    cfg = run.optical_for(n)
    est = [blind_deconvolve(c, cfg, run.solver) for c in chans]
    out = Path(args.out)
    spheres = [w for w, _ in est]
    save_image(merge_channels([r.image for _, r in est]), out, _meta(args, run, sphere=spheres))
    save_json(
        {"sphere": spheres, "sharpness_trace": [[-v for v in r.loss_trace] for _, r in est], "config": run.to_dict()},
        out.with_suffix(".json"),
    )
    _preview(args, {"input": chans[0], "deblurred": est[0][1].image}, out)
    print(" ".join(f"sphere={w:.4f}" for w in spheres))


def cmd_roft(args, run: RunConfig) -> None:
    from .plotting import plot_metrics, plot_roft

    coeffs = load_coeffs(args.coeffs)
    img = None
    if args.image is not None:
        img = split_channels(load_image(args.image))[0]
    n = args.size if args.size is not None else (None if img is None else _square(img, args.image))
    if n is None:
        raise InvalidArgumentError("roft needs --size or --image")
    grid, cfg, stack = _stack(coeffs, n, run)
    metrics = psf_metrics(stack, grid)
    out = Path(args.out)
    write_csv(out / "psf_metrics.csv", ["radius", "bandwidth", "mix_width"], [(m.radius, m.bandwidth, m.mix_width) for m in metrics])
    plot_metrics(metrics, out / "psf_metrics.png")
    if img is not None:
        if img.shape[0] != n:
            raise InvalidArgumentError(f"--size {n} does not match the image side {img.shape[0]}")
        plot_roft(roft(img, grid), out / "image_roft.png")
    save_json({"coeffs": coeffs.to_dict(), "config": run.to_dict()}, out / "run.json")


def cmd_bench(args, run: RunConfig) -> None:
    from .plotting import plot_bench

    out = Path(args.out)
    records = bench(args.sizes, args.levels, args.trials, out / "bench.csv", seed=run.seed)
    plot_bench(records, out / "bench.png")
    save_json({"config": run.to_dict(), "sizes": args.sizes, "levels": args.levels, "trials": args.trials}, out / "run.json")
    if len(set(args.sizes)) > 1:
        for m in sorted({r.method for r in records}):
            rs = [r for r in records if r.method == m]
            sizes = sorted({r.image_size for r in rs})
            times = [np.median([r.wall_time for r in rs if r.image_size == s]) for s in sizes]
            if len(sizes) > 1:
                print(f"{m}: log-log slope {loglog_slope(sizes, times):.2f}")


def cmd_gen_dataset(args, run: RunConfig) -> None:
    m = gen_dataset(
        args.clean_dir,
        args.out,
        args.count,
        run.seed,
        snr_db=args.snr,
        include_zero=args.include_zero,
        grid_settings=run.grid,
        optical=run.optical,
    )
    print(f"wrote {len(m['entries'])} pairs to {args.out}")


_COMMANDS = {
    "calibrate": cmd_calibrate,
    "psf": cmd_psf,
    "blur": cmd_blur,
    "deblur": cmd_deblur,
    "blind": cmd_blind,
    "roft": cmd_roft,
    "bench": cmd_bench,
    "gen-dataset": cmd_gen_dataset,
}


def _thread_limit():
    val = os.environ.get("RDM_THREADS")
    if not val:
        return nullcontext()
    try:
        n = int(val)
    except ValueError as exc:
        raise UserInputError(f"RDM_THREADS must be a positive integer, got {val!r}") from exc
    if n < 1:
        raise UserInputError(f"RDM_THREADS must be a positive integer, got {val!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise _UsageError("a command is required")
        with _thread_limit():
            _COMMANDS[args.command](args, _run_config(args))
    except UserInputError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except RdmError as exc:  # pragma: no cover - every concrete error has a family
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_entry()
