"""Train and score several sampler pairings; CSV, JSON, PNG and text outputs."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..archive import save_archive
from ..errors import ConfigError
from ..index_networks import IndexNetConfig
from ..samplers import SamplerId
from ..tensor import current_precision, precision
from .model import ReconNet, ReconNetSpec, build_recon_net
from .train import ReconReport, TrainConfig, evaluate, predict, rng_streams, train

logger = logging.getLogger(__name__)

CSV_HEADER = ("pair", "variant", "psnr_db", "ssim", "mae", "rmse", "epochs", "seconds", "seed")
PREVIEW_COUNT = 8


@dataclass(frozen=True)
class Pairing:
    """One row of the comparison: a sampler pair and, for index-guided pairs, its IndexNet."""

    pair: SamplerId
    indexnet: IndexNetConfig | None = None

    @classmethod
    def parse(cls, text: str) -> Pairing:
        """``avgpool_nn`` or ``ip_iu:m2o_nl_c``."""
        name, _, label = text.strip().partition(":")
        try:
            pid = SamplerId(name)
        except ValueError:
            choices = ", ".join(s.value for s in SamplerId)
            raise ConfigError(f"unknown pair {name!r}; expected one of {choices}") from None
        if pid.needs_indexnet and not label:
            label = "m2o_nl_c"
        cfg = IndexNetConfig.parse(label) if label else None
        return cls(pid, cfg).validated()

    def validated(self) -> Pairing:
        self.spec()
        return self

    @property
    def variant(self) -> str:
        return "-" if self.indexnet is None else self.indexnet.label

    @property
    def key(self) -> str:
        return self.pair.value if self.indexnet is None else f"{self.pair.value}:{self.indexnet.label}"

    @property
    def display(self) -> str:
        if self.indexnet is None:
            return self.pair.display
        return f"{self.pair.display} ({self.indexnet.label})"

    def spec(self) -> ReconNetSpec:
        return ReconNetSpec(self.pair, self.indexnet)


def parse_pairings(texts) -> list[Pairing]:
    if isinstance(texts, str):
        texts = [t for t in texts.split(",") if t.strip()]
    return [Pairing.parse(t) for t in texts]


DEFAULT_PAIRINGS = tuple(
    parse_pairings(
        "avgpool_nn,conv_bilinear,s2d_d2s,conv_deconv,maxpool_unpool,ip_iu:m2o_nl_c,ip_bilinear:m2o_nl_c"
    )
)
# the five fixed pairs, IP-IU with three IndexNet families, and the IP-Bilinear ablation
ALL_PAIRINGS = DEFAULT_PAIRINGS[:5] + tuple(
    parse_pairings("ip_iu:o2o_modelwise_nl_c,ip_iu:hin_nl_c,ip_iu:m2o_nl_c,ip_bilinear:m2o_nl_c")
)


@dataclass
class RunOutcome:
    pairing: Pairing
    report: ReconReport
    losses: list[float]
    lrs: list[float]
    preview: np.ndarray
    model: ReconNet | None = None


def run_pairing(
    pairing: Pairing,
    train_images: np.ndarray,
    test_images: np.ndarray,
    cfg: TrainConfig,
    seed: int,
    keep_model: bool = False,
) -> RunOutcome:
    """Build, train and score one pairing; every run draws its own RNG streams from ``seed``."""
    init_rng, shuffle_rng = rng_streams(seed)
    model = build_recon_net(pairing.spec(), init_rng)
    logger.info("training %s seed=%d on %d images", pairing.key, seed, len(train_images))
    result = train(model, train_images, cfg, shuffle_rng)
    scores = evaluate(model, test_images)
    report = ReconReport(
        pair=pairing.pair.value,
        variant=pairing.variant,
        epochs=cfg.epochs,
        seconds=result.seconds,
        seed=seed,
        metadata={
            "optimizer": cfg.optimizer,
            "lr": cfg.lr,
            "lr_decay_epochs": list(cfg.lr_decay_epochs),
            "batch_size": cfg.batch_size,
            "train_images": int(len(train_images)),
            "test_images": int(len(test_images)),
            "resize": "bilinear",
            "rmse_note": "root mean square error; some tables label this column MSE",
        },
        **scores,
    )
    preview = np.clip(predict(model, test_images[:PREVIEW_COUNT]), 0.0, 1.0)
    return RunOutcome(pairing, report, result.losses, result.lrs, preview, model if keep_model else None)


@dataclass
class ComparisonResult:
    outcomes: list[RunOutcome]
    test_preview: np.ndarray
    aggregates: list[dict] = field(default_factory=list)

    @property
    def reports(self) -> list[ReconReport]:
        return [o.report for o in self.outcomes]

    def mean_psnr(self, key: str) -> float:
        for row in self.aggregates:
            if row["key"] == key:
                return row["psnr_db"]
        raise KeyError(key)


def _sort_key(o: RunOutcome):
    return (o.report.pair, o.report.variant, o.report.seed)


def aggregate(outcomes: list[RunOutcome]) -> list[dict]:
    """Seed-averaged metrics per pairing, in pair-id order."""
    groups: dict[str, list[RunOutcome]] = {}
    for o in sorted(outcomes, key=_sort_key):
        groups.setdefault(o.pairing.key, []).append(o)
    rows = []
    for key, group in groups.items():
        row = {"key": key, "display": group[0].pairing.display, "seeds": [o.report.seed for o in group]}
        for metric in ("psnr_db", "ssim", "mae", "rmse"):
            values = np.array([getattr(o.report, metric) for o in group])
            row[metric] = float(values.mean())
            row[metric + "_std"] = float(values.std())
        rows.append(row)
    return rows


def run_table3(
    pairings,
    train_images: np.ndarray,
    test_images: np.ndarray,
    cfg: TrainConfig,
    seeds=(0,),
    workers: int = 1,
    keep_models: bool = False,
) -> ComparisonResult:
    """Train every (pairing, seed) combination and collect the reports.

    Runs are independent, so ``workers > 1`` trains them on a thread pool;
    results are sorted by pair id and seed, which makes the output independent
    of completion order.
    """
    pairings = parse_pairings(pairings) if isinstance(pairings, str) else list(pairings)
    pairings = [p if isinstance(p, Pairing) else Pairing.parse(p) for p in pairings]
    if not pairings:
        raise ConfigError("no pairings requested")
    jobs = [(p, int(s)) for p in pairings for s in seeds]
    if workers > 1:
        mode = current_precision()

        def job(p, s):
            # precision and grad mode are per thread; carry the caller's precision over
            with precision(mode):
                return run_pairing(p, train_images, test_images, cfg, s, keep_models)

        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(job, p, s) for p, s in jobs]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [run_pairing(p, train_images, test_images, cfg, s, keep_models) for p, s in jobs]
    outcomes.sort(key=_sort_key)
    return ComparisonResult(outcomes, test_images[:PREVIEW_COUNT], aggregate(outcomes))


# ---------------------------------------------------------------------------
# outputs


def csv_text(reports: list[ReconReport], timing: bool = False) -> str:
    """Deterministic CSV; ``seconds`` is left empty unless ``timing`` is set, since wall time varies."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in sorted(reports, key=lambda r: (r.pair, r.variant, r.seed)):
        writer.writerow([
            r.pair,
            r.variant,
            f"{r.psnr_db:.4f}",
            f"{r.ssim:.6f}",
            f"{r.mae:.6f}",
            f"{r.rmse:.6f}",
            r.epochs,
            f"{r.seconds:.1f}" if timing else "",
            r.seed,
        ])
    return buf.getvalue()


def read_csv(path: str | os.PathLike) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def loss_curves(outcomes: list[RunOutcome]) -> dict:
    return {
        f"{o.pairing.key}/seed{o.report.seed}": {"loss": o.losses, "lr": o.lrs} for o in sorted(outcomes, key=_sort_key)
    }


def render_table(aggregates: list[dict]) -> str:
    """Plain-text comparison table of seed-averaged metrics."""
    head = f"{'pairing':<40} {'PSNR':>8} {'SSIM':>7} {'MAE':>8} {'RMSE':>8}  seeds"
    lines = [head, "-" * len(head)]
    for row in aggregates:
        lines.append(
            f"{row['display']:<40} {row['psnr_db']:8.2f} {row['ssim']:7.4f} {row['mae']:8.4f} "
            f"{row['rmse']:8.4f}  {len(row['seeds'])}"
        )
    return "\n".join(lines)


def reconstruction_grid(result: ComparisonResult, scale: int = 2, gap: int = 2):
    """Pillow image: the first row holds test inputs, each later row one pairing's reconstructions."""
    from PIL import Image, ImageDraw

    rows = [("input", result.test_preview)]
    seen = set()
    for o in result.outcomes:
        if o.pairing.key not in seen:
            seen.add(o.pairing.key)
            rows.append((o.pairing.key, o.preview))
    n = len(result.test_preview)
    side = result.test_preview.shape[-1] * scale
    label_w = 150
    width = label_w + n * (side + gap)
    height = len(rows) * (side + gap) + gap
    canvas = Image.new("L", (width, height), 255)
    draw = ImageDraw.Draw(canvas)
    for r, (label, imgs) in enumerate(rows):
        y = gap + r * (side + gap)
        draw.text((4, y + side // 2 - 5), label[:24], fill=0)
        for c in range(n):
            tile = (np.clip(imgs[c, 0], 0, 1) * 255).round().astype(np.uint8)
            tile = Image.fromarray(tile).resize((side, side), Image.NEAREST)
            canvas.paste(tile, (label_w + c * (side + gap), y))
    return canvas


def write_outputs(
    result: ComparisonResult, out_dir: str | os.PathLike, timing: bool = False, archive_meta: dict | None = None
) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": out / "report.csv",
        "curves": out / "loss_curves.json",
        "summary": out / "summary.txt",
        "grid": out / "reconstructions.png",
        "reports": out / "reports.json",
    }
    paths["csv"].write_text(csv_text(result.reports, timing))
    paths["curves"].write_text(json.dumps(loss_curves(result.outcomes), indent=1) + "\n")
    paths["summary"].write_text(render_table(result.aggregates) + "\n")
    reports = [o.report.to_dict() for o in result.outcomes]
    if not timing:
        for r in reports:
            r.pop("seconds")
    paths["reports"].write_text(json.dumps({"runs": reports, "aggregates": result.aggregates}, indent=1) + "\n")
    reconstruction_grid(result).save(paths["grid"])
    if timing:
        timings = {f"{o.pairing.key}/seed{o.report.seed}": o.report.seconds for o in result.outcomes}
        paths["timing"] = out / "timing.json"
        paths["timing"].write_text(json.dumps(timings, indent=1) + "\n")
    for o in result.outcomes:
        if o.model is not None:
            name = o.pairing.key.replace(":", "-") + f"-seed{o.report.seed}"
            meta = {**(archive_meta or {}), "pairing": o.pairing.key, "seed": o.report.seed}
            save_archive(o.model, out / "params" / name, meta)
    return paths
