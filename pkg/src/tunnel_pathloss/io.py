"""File formats: measurement-campaign CSV, fitted-model JSON, trace and curve CSV.

Floats are written with ``repr`` (shortest round-trip form), so reading a file
back reproduces the binary values exactly and output never depends on locale.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .estimator import TrainingSet, record_engagement
from .model import TemplateModel, TunnelGeometry

__all__ = [
    "CAMPAIGN_COLUMNS",
    "TRACE_COLUMNS",
    "CampaignFile",
    "CampaignRow",
    "FormatError",
    "ModelFile",
    "campaign_to_training_set",
    "format_curve",
    "format_trace",
    "parse_campaign",
    "read_campaign",
]

CAMPAIGN_COLUMNS = ("anchor_pos", "loss_bs1", "loss_bs2", "iteration")
TRACE_COLUMNS = ("policy", "seed", "iteration", "gamma", "c", "d0", "alpha", "sse")


class FormatError(ValueError):
    """Malformed input file; ``row`` is 1-based within the data rows."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.row = row
        self.column = column


def fmt(x: float) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class CampaignRow:
    anchor_pos: float
    loss_bs1: float
    loss_bs2: float
    iteration: int


@dataclass
class CampaignFile:
    tunnel: str
    bs1_pos: float
    bs2_pos: float
    rows: list[CampaignRow] = field(default_factory=list)
    units: str = "m,dB"
    extra: dict[str, str] = field(default_factory=dict)

    def validate(self) -> None:
        if not self.bs2_pos > self.bs1_pos:
            raise FormatError(f"bs2_pos ({self.bs2_pos}) must exceed bs1_pos ({self.bs1_pos})")
        for k, r in enumerate(self.rows, start=1):
            if not self.bs1_pos < r.anchor_pos < self.bs2_pos:
                raise FormatError(
                    f"anchor_pos {r.anchor_pos} is not strictly between the base stations",
                    k, "anchor_pos",
                )
            for col in ("loss_bs1", "loss_bs2"):
                if not math.isfinite(getattr(r, col)):
                    raise FormatError("loss must be finite", k, col)
            if r.iteration < 0:
                raise FormatError("iteration must be non-negative", k, "iteration")

    def geometry(self) -> TunnelGeometry:
        anchors = sorted({r.anchor_pos for r in self.rows})
        return TunnelGeometry(self.bs1_pos, self.bs2_pos, tuple(anchors))

    def dumps(self) -> str:
        buf = io.StringIO()
        buf.write(f"# tunnel={self.tunnel}\n")
        buf.write(f"# bs1_pos={fmt(self.bs1_pos)}\n")
        buf.write(f"# bs2_pos={fmt(self.bs2_pos)}\n")
        buf.write(f"# units={self.units}\n")
        for k, v in self.extra.items():
            buf.write(f"# {k}={v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CAMPAIGN_COLUMNS)
        for r in self.rows:
            w.writerow([fmt(r.anchor_pos), fmt(r.loss_bs1), fmt(r.loss_bs2), str(int(r.iteration))])
        return buf.getvalue()


def _float_cell(text: str, row: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise FormatError(f"expected a number, got {text!r}", row, column) from None


def parse_campaign(text: str) -> CampaignFile:
    header: dict[str, str] = {}
    lines = text.splitlines()
    body_start = 0
    for i, line in enumerate(lines):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            key, sep, value = stripped[1:].partition("=")
            if sep:
                header[key.strip()] = value.strip()
            continue
        body_start = i
        break
    else:
        raise FormatError("missing column header")

    for key in ("tunnel", "bs1_pos", "bs2_pos"):
        if key not in header:
            raise FormatError(f"missing header line '# {key}=...'")
    try:
        bs1 = float(header["bs1_pos"])
        bs2 = float(header["bs2_pos"])
    except ValueError:
        raise FormatError("bs1_pos/bs2_pos header values must be numbers") from None

    reader = csv.reader(lines[body_start:])
    columns = [c.strip() for c in next(reader)]
    if tuple(columns) != CAMPAIGN_COLUMNS:
        raise FormatError(f"column header must be {','.join(CAMPAIGN_COLUMNS)}, got {','.join(columns)}")

    rows = []
    for k, cells in enumerate(reader, start=1):
        if not cells or all(not c.strip() for c in cells):
            continue
        if len(cells) != len(CAMPAIGN_COLUMNS):
            raise FormatError(f"expected {len(CAMPAIGN_COLUMNS)} cells, got {len(cells)}", k)
        pos = _float_cell(cells[0], k, "anchor_pos")
        l1 = _float_cell(cells[1], k, "loss_bs1")
        l2 = _float_cell(cells[2], k, "loss_bs2")
        try:
            it = int(cells[3])
        except ValueError:
            raise FormatError(f"expected an integer, got {cells[3]!r}", k, "iteration") from None
        rows.append(CampaignRow(pos, l1, l2, it))

    extra = {k: v for k, v in header.items() if k not in ("tunnel", "bs1_pos", "bs2_pos", "units")}
    camp = CampaignFile(header["tunnel"], bs1, bs2, rows, header.get("units", "m,dB"), extra)
    camp.validate()
    return camp


def read_campaign(path: str | Path) -> CampaignFile:
    return parse_campaign(Path(path).read_text(encoding="utf-8"))


def campaign_to_training_set(camp: CampaignFile) -> tuple[TrainingSet, TunnelGeometry]:
    """Distances come from the header BS positions and each row's anchor position."""
    geo = camp.geometry()
    index = {p: i for i, p in enumerate(geo.anchor_positions)}
    ts = TrainingSet()
    for r in camp.rows:
        record_engagement(ts, geo, index[r.anchor_pos], r.loss_bs1, r.loss_bs2, r.iteration)
    return ts, geo


@dataclass
class ModelFile:
    model: TemplateModel
    sse: float | None = None
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "gamma": self.model.gamma,
            "c": self.model.c,
            "d0_m": self.model.d0,
            "alpha_db_per_m": self.model.alpha,
            "sse_db2": self.sse,
            "provenance": self.provenance,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ModelFile":
        try:
            model = TemplateModel(
                gamma=float(data["gamma"]),
                c=float(data["c"]),
                d0=float(data["d0_m"]),
                alpha=float(data["alpha_db_per_m"]),
            )
        except KeyError as exc:
            raise FormatError(f"model file is missing key {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise FormatError(f"invalid model parameters: {exc}") from None
        sse = data.get("sse_db2")
        return cls(model, None if sse is None else float(sse), data.get("provenance") or {})

    @classmethod
    def loads(cls, text: str) -> "ModelFile":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise FormatError("model file must hold a JSON object")
        return cls.from_dict(data)

    @classmethod
    def read(cls, path: str | Path) -> "ModelFile":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def format_trace(traces: Iterable) -> str:
    """Trace CSV sorted by (policy, seed, iteration); failed fits are written as nan."""
    rows = []
    for tr in traces:
        for e in tr.per_iteration:
            if e.model is None:
                params = ["nan"] * 4
            else:
                params = [fmt(v) for v in e.model.as_tuple()]
            rows.append(((tr.policy, tr.seed, e.iteration), [tr.policy, str(tr.seed), str(e.iteration), *params, fmt(e.sse)]))
    rows.sort(key=lambda r: r[0])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    w.writerows(r[1] for r in rows)
    return buf.getvalue()


def format_curve(distances: Sequence[float], losses: Sequence[float]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("distance", "loss"))
    for d, l in zip(distances, losses):
        w.writerow((fmt(d), fmt(l)))
    return buf.getvalue()
