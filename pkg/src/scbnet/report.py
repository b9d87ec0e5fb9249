"""Architecture sweep and the two accuracy tables.

Table 1 covers the plain CNNs (arch-1..arch-5), Table 2 the networks with a
skip-connection block (arch-6..arch-10). Each architecture gets one row per
augmentation setting.
"""
from __future__ import annotations

import hashlib
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

from .architecture import REGISTRY, NetworkSpec, build_architecture
from .data import LabeledDataset
from .training import TrainConfig, evaluate, train

TABLE1_ARCHS = ("arch-1", "arch-2", "arch-3", "arch-4", "arch-5")
TABLE2_ARCHS = ("arch-6", "arch-7", "arch-8", "arch-9", "arch-10")
TABLE1_COLUMNS = ("", "AUGMENTATION", "CONV1", "CONV2", "CONV3", "CONV4", "FC1", "FC2", "ACCURACY")
TABLE2_COLUMNS = ("", "AUGMENTATION", "CONV1", "CONV2", "CONV3", "CONV4", "SCB CONV1", "FC1", "FC2", "ACCURACY")
RESULTS_HEADER = "arch,augment,seed,accuracy,tp,tn,fp,fn,n"


@dataclass(frozen=True)
class SweepRow:
    arch: str
    augment: bool
    conv_filters: tuple[int, ...]
    scbs: int | None
    fc_sizes: tuple[int, ...]
    seed: int
    accuracy: float | None = None  # percentage, 0..100
    counts: tuple[int, int, int, int] | None = None  # tp, tn, fp, fn

    def cells(self, with_scb: bool) -> list[str]:
        convs = [str(f) for f in self.conv_filters] + ["-"] * (4 - len(self.conv_filters))
        row = [self.arch.upper(), "YES" if self.augment else "No", *convs]
        if with_scb:
            row.append("-" if self.scbs is None else str(self.scbs))
        row += [str(s) for s in self.fc_sizes]
        row.append("" if self.accuracy is None else f"{self.accuracy:.2f}")
        return row


@dataclass
class SweepResult:
    rows: dict[tuple[str, bool], SweepRow]

    def ordered(self, archs: Iterable[str] | None = None) -> list[SweepRow]:
        keep = list(REGISTRY) if archs is None else list(archs)
        return [self.rows[(a, aug)] for a in keep for aug in (False, True) if (a, aug) in self.rows]

    def to_csv(self) -> str:
        lines = [RESULTS_HEADER]
        for r in self.ordered():
            acc = "" if r.accuracy is None else f"{r.accuracy:.2f}"
            counts = ",".join(str(c) for c in r.counts) if r.counts else ",,,"
            n = str(sum(r.counts)) if r.counts else ""
            lines.append(f"{r.arch},{int(r.augment)},{r.seed},{acc},{counts},{n}")
        return "\n".join(lines) + "\n"


def cell_seed(master_seed: int, arch: str, augment: bool) -> int:
    """Per-cell seed derived from the master seed, stable across runs and platforms."""
    digest = hashlib.sha256(f"{master_seed}:{arch}:{int(augment)}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def _row(spec: NetworkSpec, augment: bool, seed: int, **kw) -> SweepRow:
    return SweepRow(spec.name, augment, tuple(spec.conv_filters), spec.scbs, tuple(spec.fc_sizes), seed, **kw)


def run_cell(
    spec: NetworkSpec,
    augment: bool,
    seed: int,
    train_data: LabeledDataset,
    test_data: LabeledDataset,
    epochs: int,
    batch_size: int,
    learning_rate: float,
) -> SweepRow:
    cfg = TrainConfig(batch_size=batch_size, epochs=epochs, seed=seed,
                      learning_rate=learning_rate, augment=augment)
    params, _ = train(spec, train_data, cfg)
    res = evaluate(spec, params, test_data)
    return _row(spec, augment, seed, accuracy=round(100 * res.accuracy, 2),
                counts=(res.tp, res.tn, res.fp, res.fn))


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("SCBNET_THREADS", "1")))
    except ValueError:
        return 1


def run_sweep(
    train_data: LabeledDataset | None,
    test_data: LabeledDataset | None,
    *,
    master_seed: int = 0,
    resolution: int = 64,
    epochs: int = 60,
    batch_size: int = 15,
    learning_rate: float = 1e-3,
    archs: Sequence[str] = TABLE1_ARCHS + TABLE2_ARCHS,
    dry_run: bool = False,
    workers: int | None = None,
) -> SweepResult:
    """Train and test every (architecture, augmentation) cell.

    With ``dry_run`` nothing is trained and accuracy cells stay empty.
    """
    cells = []
    for arch in archs:
        spec = build_architecture(arch).with_overrides(input_resolution=resolution)
        for aug in (False, True):
            cells.append((spec, aug, cell_seed(master_seed, spec.name, aug)))
    if dry_run:
        return SweepResult({(s.name, a): _row(s, a, seed) for s, a, seed in cells})
    if train_data is None or test_data is None:
        raise ValueError("a sweep needs both training and test data unless dry_run is set")

    workers = worker_count() if workers is None else workers
    args = [(s, a, seed, train_data, test_data, epochs, batch_size, learning_rate) for s, a, seed in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_cell, *zip(*args)))
    else:
        rows = [run_cell(*a) for a in args]
    return SweepResult({(r.arch, r.augment): r for r in rows})


def render_table(result: SweepResult, table: int, fmt: str = "text") -> str:
    """Render Table 1 (plain CNNs) or Table 2 (with SCB) as aligned text or CSV."""
    if table == 1:
        columns, archs, with_scb, title = TABLE1_COLUMNS, TABLE1_ARCHS, False, "Table 1. Accuracy values for various neural network models"
    elif table == 2:
        columns, archs, with_scb, title = TABLE2_COLUMNS, TABLE2_ARCHS, True, "Table 2. The accuracy values for CNNs with Skip Connections"
    else:
        raise ValueError(f"table must be 1 or 2, got {table}")
    body = [r.cells(with_scb) for r in result.ordered(archs)]
    if fmt == "csv":
        return "\n".join(",".join(row) for row in [list(columns), *body]) + "\n"
    widths = [max(len(row[i]) for row in [list(columns), *body]) for i in range(len(columns))]
    fmt_row = lambda row: "  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
    lines = [title, fmt_row(list(columns)), fmt_row(["-" * w for w in widths])]
    lines += [fmt_row(row) for row in body]
    return "\n".join(lines) + "\n"
