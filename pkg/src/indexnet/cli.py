"""``indexnet`` command-line interface.

Exit codes: 0 success, 1 verification or training failure, 2 usage or
configuration error (including a missing dataset), 3 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import contextlib
import datetime as _dt
import hashlib
import json
import logging
import sys
import urllib.error
import urllib.request
from pathlib import Path

from . import verification
from .archive import load_archive
from .bench import data as bench_data
from .bench import comparison
from .config import RunConfig, parse_overrides
from .errors import ConfigError, ContractError, DimensionError, FormatError, TrainingError
from .index_networks import (
    VARIANTS,
    Family,
    IndexNetConfig,
    documented_count,
    param_count,
    parse_family,
    table1_count,
)
from .tensor import corrupt_backward, precision

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

logger = logging.getLogger("indexnet")

DEFAULT_MIRROR = "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/"
# MD5 digests published alongside the dataset
KNOWN_MD5 = {
    "train-images-idx3-ubyte.gz": "8d4fb7e6c68d591d4c3dfef9ec88bf0d",
    "train-labels-idx1-ubyte.gz": "25c81989df183df01b3e8a0aad5dffbe",
    "t10k-images-idx3-ubyte.gz": "bef4ecab320f06d8554ea6380940ec79",
    "t10k-labels-idx1-ubyte.gz": "bb300cfdad3c16e7a12a480ee83cd310",
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _run_config(args) -> RunConfig:
    overrides = parse_overrides(args.set or [])
    for key in ("data", "out", "profile", "seed", "epochs", "pair", "indexnet", "pairs", "precision", "workers"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "seeds", None) is not None:
        overrides["seeds"] = tuple(int(s) for s in args.seeds.split(",") if s.strip())
    if getattr(args, "timing", False):
        overrides["timing"] = True
    return RunConfig.load(args.config, overrides)


def fresh_run_dir(root: str | Path, command: str) -> Path:
    """A new directory ``<root>/<command>-<timestamp>[-n]``; existing runs are never reused."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
    for n in range(1000):
        path = root / (f"{command}-{stamp}" + (f"-{n}" if n else ""))
        try:
            path.mkdir()
            return path
        except FileExistsError:
            continue
    raise OSError(f"could not create a fresh run directory under {root}")


def _load_splits(cfg: RunConfig):
    root = cfg.dataset_root()
    tc = cfg.train_config()
    train_images = bench_data.load_fashion_mnist(root, "train", resize=cfg.resize, limit=tc.subset_size)
    test_images = bench_data.load_fashion_mnist(root, "test", resize=cfg.resize, limit=cfg.test_size_value())
    return train_images, test_images


def _print_err(msg: str) -> None:
    print(f"indexnet: error: {msg}", file=sys.stderr)


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = _run_config(args)
    pairing = cfg.pairing()
    tc = cfg.train_config()
    train_images, test_images = _load_splits(cfg)
    run_dir = fresh_run_dir(cfg.out, "train")
    with precision(cfg.precision):
        outcome = comparison.run_pairing(pairing, train_images, test_images, tc, cfg.seed, keep_model=True)
    result = comparison.ComparisonResult([outcome], test_images[: comparison.PREVIEW_COUNT], comparison.aggregate([outcome]))
    comparison.write_outputs(result, run_dir, timing=cfg.timing, archive_meta={"config": cfg.dump()})
    (run_dir / "config.txt").write_text(cfg.dump())
    print(comparison.render_table(result.aggregates))
    print(f"run directory: {run_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .bench.model import build_recon_net
    from .bench.train import evaluate

    params = Path(args.params)
    meta = json.loads((params / "manifest.json").read_text()).get("metadata", {})
    if "pairing" not in meta:
        raise ConfigError(f"{params}: archive metadata does not name a pairing")
    stored = {}
    if "config" in meta:
        from .config import parse_config_text

        stored = parse_config_text(meta["config"], f"{params}/manifest.json")
    cfg = RunConfig.load(None, {**stored, **parse_overrides(args.set or [])})
    if args.data:
        cfg = cfg.with_overrides(data=args.data)
    pairing = comparison.Pairing.parse(meta["pairing"])
    if pairing.indexnet is not None:
        pairing = comparison.Pairing(pairing.pair, cfg.indexnet_config(pairing.indexnet.label))
    model = build_recon_net(pairing.spec(), 0)
    load_archive(model, params)
    images = bench_data.load_fashion_mnist(cfg.dataset_root(), "test", resize=cfg.resize, limit=cfg.test_size_value())
    with precision(cfg.precision):
        scores = evaluate(model, images)
    print(json.dumps({"pairing": pairing.key, "test_images": len(images), **scores}, indent=1))
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _run_config(args)
    pairings = cfg.pairing_list()
    tc = cfg.train_config()
    train_images, test_images = _load_splits(cfg)
    run_dir = fresh_run_dir(cfg.out, "compare")
    (run_dir / "config.txt").write_text(cfg.dump())
    with precision(cfg.precision):
        result = comparison.run_table3(
            pairings, train_images, test_images, tc, cfg.seeds, cfg.workers, keep_models=cfg.save_params
        )
    comparison.write_outputs(result, run_dir, timing=cfg.timing, archive_meta={"config": cfg.dump()})
    print(comparison.render_table(result.aggregates))
    print(f"run directory: {run_dir}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.all:
        families, variants = None, None
    elif args.family:
        families = [parse_family(args.family)]
        variants = [args.variant] if args.variant else None
    else:
        if args.variant:
            raise UsageError("--variant needs --family")
        families, variants = [], None
    if variants is not None and variants[0] not in VARIANTS:
        raise UsageError(f"unknown variant {variants[0]!r}; expected one of {VARIANTS}")
    cases = verification.suite(families, variants, primitives=not args.indexnet_only)
    corrupted = [op for op in (args.corrupt or "").split(",") if op]
    hook = corrupt_backward(*corrupted) if corrupted else contextlib.nullcontext()
    with hook:
        results = verification.run_cases(cases, mode=args.precision)
    print(verification.format_results(results))
    failed = [r.name for r in results if not r.passed]
    if corrupted:
        print(f"corrupted backward: {', '.join(corrupted)}")
    if failed:
        print("FAIL: " + ", ".join(failed))
        return EXIT_VERIFY
    print("PASS")
    return EXIT_OK


def _params_line(cfg: IndexNetConfig) -> str:
    count = param_count(cfg)
    expected, formula = documented_count(cfg)
    tab_count, tab_formula = table1_count(cfg)
    line = f"{cfg.label} k={cfg.k} C={cfg.channels}: {count} parameters  formula {formula} = {expected}"
    if cfg.family is Family.O2O_UNSHARED and cfg.nonlinear:
        line += f"  [deviation: tabulated {tab_formula} = {tab_count}; built with a grouped pointwise layer]"
    if count != expected:
        line += "  MISMATCH"
    return line


def cmd_params(args) -> int:
    if args.all:
        cfgs = [IndexNetConfig.from_variant(f, v, k=args.k, channels=args.channels) for f in Family for v in VARIANTS]
    else:
        if not args.family:
            raise UsageError("params needs --family (or --all)")
        variants = [args.variant] if args.variant else list(VARIANTS)
        cfgs = [IndexNetConfig.from_variant(args.family, v, k=args.k, channels=args.channels) for v in variants]
    if len(cfgs) == 1 and not args.verbose:
        cfg = cfgs[0]
        print(param_count(cfg))
        print(_params_line(cfg))
    else:
        for cfg in cfgs:
            print(_params_line(cfg))
    mismatched = [c for c in cfgs if param_count(c) != documented_count(c)[0]]
    return EXIT_VERIFY if mismatched else EXIT_OK


def _checksums(args) -> tuple[dict[str, str], dict[str, str]]:
    sha = {}
    if args.checksums:
        for line in Path(args.checksums).read_text().splitlines():
            parts = line.split()
            if len(parts) >= 2 and not line.startswith("#"):
                sha[parts[1].lstrip("*")] = parts[0].lower()
    for item in args.sha256 or []:
        name, _, digest = item.partition("=")
        if not digest:
            raise UsageError(f"--sha256 expects NAME=HEX, got {item!r}")
        sha[name] = digest.lower()
    return sha, dict(KNOWN_MD5)


def cmd_fetch_data(args) -> int:
    dest = Path(args.dest) if args.dest else bench_data.default_dataset_root()
    sha, md5 = _checksums(args)
    mirror = args.mirror if args.mirror.endswith("/") else args.mirror + "/"
    dest.mkdir(parents=True, exist_ok=True)
    failures = []
    for name in bench_data.ALL_FILES:
        target = dest / name
        if target.exists() and not args.force:
            payload = target.read_bytes()
            print(f"{name}: present")
        else:
            url = mirror + name
            print(f"{name}: downloading {url}")
            with urllib.request.urlopen(url, timeout=args.timeout) as resp:
                payload = resp.read()
        if name in sha:
            ok, algo, digest = hashlib.sha256(payload).hexdigest() == sha[name], "sha256", sha[name]
        elif name in md5 and not args.skip_md5:
            ok, algo, digest = hashlib.md5(payload).hexdigest() == md5[name], "md5", md5[name]
        else:
            ok, algo, digest = True, "none", ""
        if not ok:
            failures.append(f"{name}: {algo} mismatch (expected {digest})")
            continue
        if not target.exists() or args.force:
            tmp = target.with_suffix(target.suffix + ".part")
            tmp.write_bytes(payload)
            tmp.replace(target)
        print(f"{name}: ok ({algo})")
    if failures:
        for f in failures:
            _print_err(f)
        return EXIT_VERIFY
    print(f"dataset ready in {dest}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_run_options(p: argparse.ArgumentParser, compare: bool) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--data", help="dataset directory (default: $%s)" % bench_data.DATASET_ENV)
    p.add_argument("--out", help="parent directory for run outputs")
    p.add_argument("--profile", choices=("desk", "full", "smoke"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--precision", choices=("f32", "f64"))
    p.add_argument("--timing", action="store_true", help="record wall time in the CSV")
    if compare:
        p.add_argument("--pairs", help="comma-separated pairings, e.g. ip_iu:m2o_nl_c,maxpool_unpool; 'all' for every IndexNet variant")
        p.add_argument("--seeds", help="comma-separated seeds")
        p.add_argument("--workers", type=int, help="parallel training runs")
    else:
        p.add_argument("--pair", help="sampler pair id")
        p.add_argument("--indexnet", help="IndexNet label such as m2o_nl_c")
        p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="indexnet", description="Index-guided pooling and upsampling toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one reconstruction network")
    _add_run_options(p, compare=False)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a saved parameter archive on the test split")
    p.add_argument("params", help="archive directory written by train or compare")
    p.add_argument("--data")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="train and compare several sampler pairings")
    _add_run_options(p, compare=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--family")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--all", action="store_true", help="every family and variant")
    p.add_argument("--precision", choices=("f64", "f32"), default="f64")
    p.add_argument("--indexnet-only", action="store_true", help="skip primitive and guided-operator checks")
    p.add_argument("--corrupt", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="IndexNet parameter counts and closed-form formulas")
    p.add_argument("--family")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--all", action="store_true")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("fetch-data", help="download Fashion-MNIST and verify checksums")
    p.add_argument("--mirror", default=DEFAULT_MIRROR)
    p.add_argument("--dest", help="target directory (default: $%s)" % bench_data.DATASET_ENV)
    p.add_argument("--sha256", action="append", metavar="NAME=HEX", help="expected SHA-256 of one file")
    p.add_argument("--checksums", help="sha256sum-style file of expected digests")
    p.add_argument("--skip-md5", action="store_true", help="do not check the published MD5 digests")
    p.add_argument("--force", action="store_true", help="re-download files already present")
    p.add_argument("--timeout", type=float, default=60.0)
    p.set_defaults(func=cmd_fetch_data)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        _print_err(str(exc))
        return EXIT_USAGE if str(exc).startswith("dataset not found") else EXIT_IO
    except (UsageError, ConfigError, DimensionError, ContractError) as exc:
        _print_err(str(exc))
        return EXIT_USAGE
    except TrainingError as exc:
        _print_err(str(exc))
        return EXIT_VERIFY
    except (FormatError, OSError, urllib.error.URLError) as exc:
        _print_err(str(exc))
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
