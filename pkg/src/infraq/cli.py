"""Command-line entry point: one subcommand per pipeline stage plus run-all and synth.

Exit codes: 0 ok, 1 configuration error, 2 data error, 3 model-quality failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

from . import pipeline, synth
from .errors import ConfigError, DataWarning, InfraqError
from .ingest import write_tracts


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--input", type=Path, help="tract table for a single city (instead of --config)")
    p.add_argument("--city", help="restrict to this city (names the --input city)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", type=Path, help="output directory (overrides the config)")
    p.add_argument("--frac", type=float, help="LOWESS span fraction")
    p.add_argument("--no-smote", action="store_true", help="train without SMOTE balancing")
    p.add_argument("--raw-units", action="store_true",
                   help="measure provision deviations in raw feature units")
    p.add_argument("--workers", type=int, help="cities processed concurrently (run-all)")
    p.add_argument("--n-iter", type=int, help="random-search draws")


_SYNTH = {
    "planted": synth.planted_city,
    "separable": synth.separable_city,
    "overshoot": synth.overshoot_city,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="infraq",
        description="Hazard-aware infrastructure provision scores for census tracts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in pipeline.STAGES:
        _add_common(sub.add_parser(stage, help=f"run the {stage} stage"))
    _add_common(sub.add_parser("run-all", help="run every stage for every city"))

    s = sub.add_parser("synth", help="write a synthetic city table")
    s.add_argument("--kind", choices=sorted(_SYNTH), default="planted")
    s.add_argument("--city", default=None, help="city name (default: the kind)")
    s.add_argument("--n", type=int, default=None, help="number of tracts")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, default=Path("."), help="directory for <city>.csv")
    return parser


def config_from_args(args: argparse.Namespace) -> pipeline.RunConfig:
    if args.config is not None:
        if args.input is not None:
            raise ConfigError("use either --config or --input, not both")
        if not args.config.is_file():
            raise ConfigError(f"config file not found: {args.config}")
        try:
            raw = json.loads(args.config.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        if args.seed is not None:
            raw["seed"] = args.seed
        base = args.config.parent
    elif args.input is not None:
        if args.seed is None:
            raise ConfigError("--seed is required without --config")
        city = args.city or args.input.stem
        raw = {"cities": {city: str(args.input.resolve())}, "seed": args.seed}
        base = Path.cwd()
    else:
        raise ConfigError("either --config or --input is required")
    if args.out is not None:
        raw["out"] = str(args.out.resolve())
    cfg = pipeline.RunConfig.from_dict(raw, base_dir=base)
    return cfg.with_overrides(
        frac=args.frac,
        smote=False if args.no_smote else None,
        raw_units=True if args.raw_units else None,
        workers=args.workers,
        n_iter=args.n_iter,
    )


def _cities(cfg: pipeline.RunConfig, city: str | None) -> list[str]:
    if city is None:
        return sorted(cfg.cities)
    if city not in cfg.cities:
        raise ConfigError(f"city {city!r} is not in the config")
    return [city]


def _report(manifest: dict, cities, stages) -> None:
    for city in cities:
        entry = manifest["cities"][city]
        for stage in stages:
            rec = entry["stages"][stage]
            metrics = {k: v for k, v in rec["metrics"].items() if not isinstance(v, dict)}
            shown = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                              for k, v in metrics.items())
            print(f"{city}/{stage}: {shown}" if shown else f"{city}/{stage}: done")
            if stage == "thresholds":
                for feat, pattern in rec["metrics"]["patterns"].items():
                    t = rec["metrics"]["thresholds"][feat]
                    print(f"  {feat}: {pattern} at {t:.4g}")
            for w in rec["warnings"]:
                print(f"  warning: {w}")


def _synth(args) -> int:
    maker = _SYNTH[args.kind]
    city = args.city or args.kind
    kwargs = {"seed": args.seed, "city": city}
    if args.n is not None:
        kwargs["n"] = args.n
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"{city}.csv"
    write_tracts(maker(**kwargs), path)
    print(path)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    # stage warnings are recorded in the manifest and echoed by _report
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DataWarning)
        return _dispatch(args)


def _dispatch(args) -> int:
    try:
        if args.command == "synth":
            return _synth(args)
        cfg = config_from_args(args)
        if args.command == "run-all":
            if args.city is not None:
                cfg = cfg.with_overrides(cities={args.city: cfg.cities[_cities(cfg, args.city)[0]]})
            manifest = pipeline.run_all(cfg)
            _report(manifest, sorted(cfg.cities), pipeline.STAGES)
        else:
            cities = _cities(cfg, args.city)
            manifest = pipeline.run_stages(cfg, (args.command,), cities)
            _report(manifest, cities, (args.command,))
        print(f"manifest: {Path(cfg.out) / pipeline.MANIFEST}")
        return 0
    except InfraqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
