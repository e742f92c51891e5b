"""Tables and figures for audit results.

* distribution figure: per cohort, one panel per pair group with the genuine
  and impostor histograms overlaid and d' in the upper-left corner;
* grid figure: d' against facial-hair percentage of the training set, with
  standard-deviation error bars over repetitions;
* grid table: one row per grid point ("x-CS y-FH"), mean/std/n per cohort
  and pair group.
"""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import matplotlib

from .errors import EmptyReport, ParseError
from .pairstats import GROUPS, KINDS, N_BINS, AuditReport, PairGroup
from .plotting import GROUP_COLORS, KIND_STYLE, PROTOCOL_STYLE, RC, new_figure, save_svg, svg_bytes

PROTOCOLS = ("across", "within")


# -- grid results -----------------------------------------------------------


@dataclass(frozen=True)
class GridCell:
    mean: float
    std: float
    n: int


def _summarize(values: list[float]) -> GridCell:
    n = len(values)
    mean = math.fsum(values) / n
    if n < 2:
        return GridCell(mean, 0.0, n)
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return GridCell(mean, math.sqrt(var), n)


@dataclass
class GridResult:
    """d-prime per (protocol, grid point, cohort, group), summarized over repetitions.

    ``values`` keeps the per-repetition d-primes when known; ``cells`` holds
    the mean / sample std. Absent cells are simply missing keys.
    """

    subjects: int = 5000
    k: int = 12
    cells: dict[tuple[str, int, str, str], GridCell] = field(default_factory=dict)
    values: dict[tuple[str, int, str, str], dict[int, float]] = field(default_factory=dict)

    @classmethod
    def from_runs(cls, runs: Iterable[tuple], subjects: int = 5000, k: int = 12) -> "GridResult":
        """``runs`` yields (protocol, grid_point, repetition, cohort, group, dprime)."""
        values: dict = defaultdict(dict)
        for protocol, x, rep, cohort, group, d in runs:
            if d is None:
                continue
            values[(str(protocol), int(x), str(cohort), str(group))][int(rep)] = float(d)
        cells = {key: _summarize([v[r] for r in sorted(v)]) for key, v in values.items()}
        return cls(subjects, k, cells, dict(values))

    @classmethod
    def from_reports(cls, reports: Iterable[AuditReport]) -> "GridResult":
        runs, subjects, k = [], None, None
        for rep in reports:
            meta = rep.run
            missing = {"protocol", "grid_point"} - set(meta)
            if missing:
                raise ParseError(f"audit report lacks run metadata {sorted(missing)}")
            subjects = int(meta.get("subjects", subjects or 5000))
            k = int(meta.get("k", k or 12))
            for cohort, cr in rep.cohorts.items():
                for g, d in cr.dprime.items():
                    runs.append((meta["protocol"], meta["grid_point"], meta.get("repetition", 0), cohort, g.value, d))
        return cls.from_runs(runs, subjects or 5000, k or 12)

    def points(self) -> list[tuple[str, int]]:
        return sorted({(p, x) for p, x, _, _ in self.cells}, key=lambda t: (PROTOCOLS.index(t[0]) if t[0] in PROTOCOLS else 9, t[0], t[1]))

    def columns(self) -> list[tuple[str, str]]:
        cohorts = sorted({c for _, _, c, _ in self.cells})
        groups = [g.value for g in GROUPS]
        present = {(c, g) for _, _, c, g in self.cells}
        return [(c, g) for c in cohorts for g in groups if (c, g) in present]

    def row_label(self, protocol: str, x: int) -> str:
        total = self.subjects if protocol == "across" else self.k
        return f"{x}-CS {total - x}-FH"

    def fh_image_pct(self, protocol: str, x: int) -> float:
        total = self.subjects if protocol == "across" else self.k
        return 100.0 * (total - x) / total if total else 0.0

    def fh_subject_pct(self, protocol: str, x: int) -> float:
        if protocol == "across":
            return 100.0 * (self.subjects - x) / self.subjects if self.subjects else 0.0
        return 0.0 if x == self.k else 100.0


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def emit_table(results: GridResult, out=None) -> str:
    """Write the grid as CSV (one row per grid point); returns the text."""
    cols = results.columns()
    header = ["protocol", "grid_point", "row", "subjects", "k", "fh_image_pct", "fh_subject_pct"]
    for c, g in cols:
        header += [f"{c}_{g}_mean", f"{c}_{g}_std", f"{c}_{g}_n"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for protocol, x in results.points():
        row = [
            protocol,
            x,
            results.row_label(protocol, x),
            results.subjects,
            results.k,
            _fmt(results.fh_image_pct(protocol, x)),
            _fmt(results.fh_subject_pct(protocol, x)),
        ]
        for c, g in cols:
            cell = results.cells.get((protocol, x, c, g))
            row += ["", "", ""] if cell is None else [_fmt(cell.mean), _fmt(cell.std), cell.n]
        w.writerow(row)
    text = buf.getvalue()
    if out is not None:
        Path(out).write_text(text, encoding="utf-8")
    return text


def read_table(source) -> GridResult:
    """Parse a table written by :func:`emit_table` (path or CSV text)."""
    text = source if isinstance(source, str) and "\n" in source else Path(source).read_text(encoding="utf-8")
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or "grid_point" not in reader.fieldnames:
        raise ParseError("not a grid table: missing grid_point column")
    cell_cols = [f[: -len("_mean")] for f in reader.fieldnames if f.endswith("_mean")]
    cells, subjects, k = {}, 5000, 12
    for row in reader:
        subjects, k = int(row["subjects"]), int(row["k"])
        protocol, x = row["protocol"], int(row["grid_point"])
        for base in cell_cols:
            if row[f"{base}_mean"] == "":
                continue
            cohort, group = base.rsplit("_", 1)
            cells[(protocol, x, cohort, group)] = GridCell(
                float(row[f"{base}_mean"]), float(row[f"{base}_std"]), int(row[f"{base}_n"])
            )
    return GridResult(subjects, k, cells)


# -- figures ----------------------------------------------------------------


def render_distributions(report: AuditReport, out=None) -> bytes:
    """Genuine/impostor histograms per pair group and cohort, d' upper-left."""
    cohorts = [c for c in sorted(report.cohorts) if report.cohorts[c].cells]
    if not cohorts:
        raise EmptyReport("report has no populated cells")
    fig, axes = new_figure(len(cohorts), len(GROUPS))
    width = 2.0 / N_BINS
    centers = [-1.0 + width * (i + 0.5) for i in range(N_BINS)]
    with matplotlib.rc_context(RC):
        for r, cohort in enumerate(cohorts):
            cr = report.cohorts[cohort]
            for c, group in enumerate(GROUPS):
                ax = axes[r][c]
                ax.set_title(f"{cohort} {group.display}")
                ax.set_xlim(-1.0, 1.0)
                ax.set_xlabel("cosine similarity")
                if c == 0:
                    ax.set_ylabel("density")
                drawn = False
                for kind in KINDS:
                    s = cr.cell(group, kind)
                    if s is None:
                        continue
                    dens = s.histogram / (s.n * width)
                    (line,) = ax.plot(centers, dens, KIND_STYLE[kind.value], color=GROUP_COLORS[group.value], label=kind.value)
                    line.set_gid(f"hist-{cohort}-{group.value}-{kind.value}")
                    drawn = True
                if group in cr.dprime:
                    ax.text(
                        0.03, 0.97, f"d' = {cr.dprime[group]:.2f}",
                        transform=ax.transAxes, va="top", ha="left",
                        gid=f"dprime-{cohort}-{group.value}",
                    )
                if drawn:
                    ax.legend(loc="upper right", frameon=False)
    fig.tight_layout()
    return save_svg(fig, out) if out is not None else svg_bytes(fig)


def render_grid(results: GridResult, out=None) -> bytes:
    """d' vs. facial-hair percentage; solid across-subjects, dashed within-subjects."""
    if not results.cells:
        raise EmptyReport("grid result is empty")
    cohorts = sorted({c for _, _, c, _ in results.cells})
    fig, axes = new_figure(1, len(cohorts), panel=(4.0, 3.0))
    with matplotlib.rc_context(RC):
        for i, cohort in enumerate(cohorts):
            ax = axes[0][i]
            ax.set_title(cohort)
            ax.set_xlabel("facial hair images in training set (%)")
            if i == 0:
                ax.set_ylabel("d'")
            for protocol in sorted({p for p, _, _, _ in results.cells}):
                for group in GROUPS:
                    pts = sorted(
                        (results.fh_image_pct(p, x), cell)
                        for (p, x, c, g), cell in results.cells.items()
                        if p == protocol and c == cohort and g == group.value
                    )
                    if not pts:
                        continue
                    cont = ax.errorbar(
                        [p for p, _ in pts],
                        [cell.mean for _, cell in pts],
                        yerr=[cell.std for _, cell in pts],
                        fmt="o",
                        ls=PROTOCOL_STYLE.get(protocol, ":"),
                        color=GROUP_COLORS[group.value],
                        ms=3,
                        capsize=2,
                        label=f"{group.display} ({protocol})",
                    )
                    cont.lines[0].set_gid(f"grid-{cohort}-{protocol}-{group.value}")
            ax.set_xlim(-5, 105)
            ax.legend(frameon=False)
    fig.tight_layout()
    return save_svg(fig, out) if out is not None else svg_bytes(fig)


def dprime_table(report: AuditReport) -> str:
    """Single-report d-prime table: one row per cohort, one column per group."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cohort"] + [g.value for g in GROUPS])
    for cohort in sorted(report.cohorts):
        dp: Mapping[PairGroup, float] = report.cohorts[cohort].dprime
        w.writerow([cohort] + [_fmt(dp[g]) if g in dp else "" for g in GROUPS])
    return buf.getvalue()
