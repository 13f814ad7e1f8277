"""Command line entry point: ``microtrap <verb> [--config PATH] [--out DIR] ...``.

Verbs: ``pattern`` (mask PGM), ``traps`` (per-site CSV), ``ramsey``, ``echo``,
``texture`` (result CSV, optional SVG) and ``image`` (fluorescence PGM).
Exit codes: 0 ok, 2 config error, 3 physics-validity error, 4 I/O error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__, optics, serialize, trap
from .config import RunConfig, parse_config
from .errors import ConfigError, EmptySelectionError, PhysicsError
from .experiments import make_pattern, run_scan, synth_fluorescence_image

log = logging.getLogger("microtrap")

TWO_PI = 2 * math.pi

EXIT_OK, EXIT_CONFIG, EXIT_PHYSICS, EXIT_IO = 0, 2, 3, 4

TRAPS_HEADER = ("site_i", "site_j", "x_um", "y_um", "power_mw", "relative_transmission",
                "depth_j", "depth_uk", "radial_hz", "axial_hz", "differential_shift_hz",
                "dephasing_tau_ms")

_PROTOCOL = {"ramsey": "ramsey", "echo": "echo", "texture": "spin_texture_ramsey"}


def traps_table(cfg: RunConfig) -> bytes:
    lit = make_pattern(cfg.pattern_spec())
    sites = cfg.trap_sites(lit)
    species = cfg.species_spec()
    temp = cfg.ensemble.temperature_uk
    rows = []
    for s in sites:
        if s.power > 0:
            p = trap.trap_parameters(s.power, s.waist, cfg.wavelength, species,
                                     None if temp is None else temp * 1e-6, cfg.ensemble.kappa)
        else:
            p = trap.TrapParameters(0.0, 0.0, 0.0, 0.0, float("inf"))
        rows.append((s.lens[0], s.lens[1], s.position[0] * 1e6, s.position[1] * 1e6,
                     s.power * 1e3, s.relative_transmission, p.depth, p.depth_uk,
                     p.radial_frequency / TWO_PI, p.axial_frequency / TWO_PI,
                     p.differential_shift / TWO_PI, p.dephasing_tau * 1e3))
    return serialize.csv_bytes(TRAPS_HEADER, rows)


def pattern_mask(cfg: RunConfig) -> optics.SlmMask:
    spec = cfg.pattern_spec()
    lit = make_pattern(spec)
    amap = cfg.address_map(spec.grid)
    slm = cfg.slm_spec()
    return optics.rasterize_pattern(lit, slm.max_level, 0, amap, slm)


def fluorescence(cfg: RunConfig):
    lit = make_pattern(cfg.pattern_spec())
    sites = cfg.trap_sites(lit)
    im = cfg.image
    populations = {s.lens: 1.0 if s.lens in lit else 0.0 for s in sites}
    return synth_fluorescence_image(
        sites, populations, cfg.noise_model(), averages=im.averages,
        pixel_scale=im.pixel_scale_um * 1e-6,
        sigma=None if im.blob_sigma_um is None else im.blob_sigma_um * 1e-6,
        counts_per_atom=im.counts_per_atom, background=im.background)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="microtrap", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"microtrap {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override noise.rng_seed")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--backend", choices=("analytic", "mc"))
    common.add_argument("--no-noise", action="store_true",
                        help="ideal detection and perfect addressing contrast")
    common.add_argument("-v", "--verbose", action="store_true")
    helps = {
        "pattern": "write the addressing mask as PGM",
        "traps": "write per-site trap parameters as CSV",
        "ramsey": "site-selective Ramsey scan",
        "echo": "Ramsey with an addressed echo pulse",
        "texture": "anti-parallel spin texture followed by global Ramsey",
        "image": "synthetic fluorescence image as PGM",
    }
    for verb, text in helps.items():
        p = sub.add_parser(verb, parents=[common], help=text)
        if verb in _PROTOCOL:
            p.add_argument("--svg", action="store_true", help="also write plot.svg")
    return parser


def _load(args) -> tuple[RunConfig, bytes]:
    raw = b"{}"
    if args.config is not None:
        try:
            raw = args.config.read_bytes()
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc.strerror}") from exc
    cfg = parse_config(raw)
    backend = {"mc": "monte_carlo", "analytic": "analytic"}.get(args.backend)
    cfg = cfg.with_overrides(seed=args.seed, backend=backend, no_noise=args.no_noise,
                             protocol=_PROTOCOL.get(args.verb))
    return cfg, raw


def run(args) -> list[Path]:
    cfg, raw = _load(args)
    out = args.out
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc.strerror}") from exc
    written: dict[str, bytes] = {}
    if args.verb == "pattern":
        written["mask.pgm"] = serialize.export_pgm(pattern_mask(cfg))
    elif args.verb == "traps":
        written["traps.csv"] = traps_table(cfg)
    elif args.verb == "image":
        written["image.pgm"] = serialize.export_pgm(fluorescence(cfg))
    else:
        table = run_scan(cfg.experiment_spec())
        written["results.csv"] = serialize.emit_results(table)
        if args.svg:
            written["plot.svg"] = serialize.render_plot(table)
    manifest = {
        "tool": "microtrap",
        "version": __version__,
        "verb": args.verb,
        "config_sha256": hashlib.sha256(raw).hexdigest(),
        "resolved_config_sha256": hashlib.sha256(cfg.canonical_json().encode()).hexdigest(),
        "seed": cfg.noise.rng_seed,
        "backend": cfg.experiment.backend,
        "noise_enabled": cfg.noise.enabled,
        "outputs": {name: hashlib.sha256(data).hexdigest() for name, data in written.items()},
    }
    written["manifest.json"] = (json.dumps(manifest, sort_keys=True, indent=2) + "\n").encode()
    paths = []
    for name, data in written.items():
        path = out / name
        serialize._write(data, path)
        log.info("wrote %s (%d bytes)", path, len(data))
        paths.append(path)
    return paths


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PhysicsError, EmptySelectionError) as exc:
        print(f"physics error: {exc}", file=sys.stderr)
        return EXIT_PHYSICS
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
