"""Text formats: CSV data, model and safety configs, weight files, run reports.

Every writer uses ``repr`` for floats, which round-trips doubles exactly, so
save -> load -> save reproduces a file byte for byte.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .editing import ACTIVATIONS, LayerPlan, PhyTaylorModel, build_model
from .errors import DimensionMismatch, HashMismatch, InvalidArgument, ParseError, VersionUnknown
from .knowledge import UNKNOWN, KnowledgeSpec
from .selfcorrect import SIGNS, CommandBox, SafetyQuadratic
from .suppressor import SuppressorConfig
from .train import Dataset, History

FORMAT_VERSION = 1
META_COLUMNS = ("traj", "split")


def fmt(v: float) -> str:
    return repr(float(v))


def _float(tok: str, line: int, what: str = "value") -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"bad {what} {tok!r}", line=line) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite {what} {tok!r}", line=line)
    return v


def _int(tok: str, line: int, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"{what} must be an integer, got {tok!r}", line=line) from None


# ------------------------------------------------------------------ CSV data

def _delimiter(path: Path, header: str) -> str:
    return "\t" if "\t" in header or path.suffix == ".tsv" else ","


def load_csv(path, input_dim: int, target_dim: int) -> Dataset:
    """Rows of ``x || y`` values, optionally followed by ``traj`` / ``split`` columns."""
    path = Path(path)
    with path.open(newline="") as fh:
        first = fh.readline()
        if not first.strip():
            raise ParseError("file is empty or has no header", line=1)
        fh.seek(0)
        rows = list(csv.reader(fh, delimiter=_delimiter(path, first)))
    header = [h.strip() for h in rows[0]]
    meta = {name: header.index(name) for name in META_COLUMNS if name in header}
    value_cols = [i for i, h in enumerate(header) if h not in META_COLUMNS]
    want = input_dim + target_dim
    if len(value_cols) != want:
        raise DimensionMismatch(
            f"{path.name} has {len(value_cols)} value columns, expected "
            f"{input_dim} inputs + {target_dim} targets = {want}"
        )
    values, traj, split = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"{len(row)} fields, header has {len(header)}", line=lineno)
        values.append([_float(row[i], lineno) for i in value_cols])
        if "traj" in meta:
            traj.append(_int(row[meta["traj"]], lineno, "traj"))
        if "split" in meta:
            split.append(row[meta["split"]].strip())
    if not values:
        raise ParseError("no data rows", line=2)
    arr = np.array(values)
    try:
        return Dataset(arr[:, :input_dim], arr[:, input_dim:],
                       split if "split" in meta else None, traj if "traj" in meta else None)
    except InvalidArgument as exc:
        raise ParseError(str(exc)) from None


def save_csv(path, data: Dataset, input_names: Sequence[str], target_names: Sequence[str],
             delimiter: str = ",") -> None:
    if len(input_names) != data.input_dim or len(target_names) != data.target_dim:
        raise DimensionMismatch("column names do not match the dataset dims")
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow([*input_names, *target_names, *META_COLUMNS])
        for x, y, t, s in zip(data.inputs, data.targets, data.traj, data.split):
            w.writerow([*map(fmt, x), *map(fmt, y), int(t), s])


def write_table(fh, header: Sequence[str], rows, delimiter: str = ",") -> None:
    w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else fmt(v) if isinstance(v, float) else v for v in row])


def write_history(path, history: History, delimiter: str = ",") -> None:
    with Path(path).open("w", newline="") as fh:
        write_table(fh, ("epoch", "train_loss", "val_loss"), history.rows(), delimiter)


# ------------------------------------------------------- block text format

@dataclass
class _Block:
    name: str
    line: int
    fields: dict[str, tuple[str, int]] = field(default_factory=dict)
    rows: list[tuple[list[str], int]] = field(default_factory=list)

    def get(self, key: str, default=None):
        if key in self.fields:
            return self.fields[key][0]
        if default is None:
            raise ParseError(f"[{self.name}] block is missing {key!r}", line=self.line)
        return default

    def line_of(self, key: str) -> int:
        return self.fields.get(key, ("", self.line))[1]


def _blocks(text: str) -> list[_Block]:
    """Split text into a header block and ``[name]`` blocks.

    ``key = value`` lines become fields; any other non-blank line is a row of
    whitespace-separated tokens.
    """
    blocks = [_Block("header", 1)]
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            blocks.append(_Block(line[1:-1].strip(), lineno))
        elif "=" in line:
            key, value = (s.strip() for s in line.split("=", 1))
            if key in blocks[-1].fields:
                raise ParseError(f"duplicate key {key!r}", line=lineno)
            blocks[-1].fields[key] = (value, lineno)
        else:
            blocks[-1].rows.append((line.split(), lineno))
    return blocks


def _check_version(header: _Block) -> None:
    raw = header.fields.get("format_version")
    if raw is None:
        raise VersionUnknown("missing format_version")
    if raw[0] != str(FORMAT_VERSION):
        raise VersionUnknown(f"format_version {raw[0]!r} is not supported (expected {FORMAT_VERSION})")


# ------------------------------------------------------------- model config

def format_suppressor(sup: SuppressorConfig) -> str:
    toks = []
    for on, pos, k, r in zip(sup.active, sup.noise_positive, sup.kappa, sup.rho):
        toks.append(f"{'p' if pos else 'n'}:{fmt(k)}:{fmt(r)}" if on else "off")
    return " ".join(toks)


def parse_suppressor(text: str, dim: int, line: int | None = None) -> SuppressorConfig:
    toks = text.split()
    if len(toks) != dim:
        raise ParseError(f"suppressor has {len(toks)} channels, layer input has {dim}", line=line)
    active, kappa, rho, positive = [], [], [], []
    for tok in toks:
        if tok == "off":
            active.append(False), kappa.append(1.0), rho.append(0.0), positive.append(False)
            continue
        parts = tok.split(":")
        if len(parts) != 3 or parts[0] not in ("p", "n"):
            raise ParseError(f"bad suppressor token {tok!r} (use off, p:k:r or n:k:r)", line=line)
        active.append(True)
        positive.append(parts[0] == "p")
        kappa.append(_float(parts[1], line, "kappa"))
        rho.append(_float(parts[2], line, "rho"))
    return SuppressorConfig(tuple(active), tuple(kappa), tuple(rho), tuple(positive))


@dataclass(frozen=True, eq=False)
class ModelConfig:
    spec: KnowledgeSpec
    plan: tuple[LayerPlan, ...]

    @property
    def input_dim(self) -> int:
        return self.spec.input_dim

    def build(self, seed: int | None = 0) -> PhyTaylorModel:
        return build_model(self.spec, self.plan, seed=seed)

    def text(self) -> str:
        return format_model_config(self)

    def sha256(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()


def format_model_config(cfg: ModelConfig) -> str:
    spec = cfg.spec
    out = [
        f"format_version = {FORMAT_VERSION}",
        f"input_dim = {spec.input_dim}",
        f"first_order = {spec.order}",
        f"terminal_out_dim = {spec.out_dim}",
        "",
        "[knowledge]",
        *(" ".join(row) for row in spec.to_rows()),
    ]
    for p in cfg.plan:
        out += ["", "[layer]", f"out_dim = {p.out_dim}", f"order = {p.order}",
                f"activation = {p.activation}"]
        if p.suppressor is not None and p.suppressor.any_active:
            out.append(f"suppressor = {format_suppressor(p.suppressor)}")
    return "\n".join(out) + "\n"


def parse_model_config(text: str) -> ModelConfig:
    blocks = _blocks(text)
    header = blocks[0]
    _check_version(header)
    n = _int(header.get("input_dim"), header.line_of("input_dim"), "input_dim")
    r = _int(header.get("first_order"), header.line_of("first_order"), "first_order")
    ny = _int(header.get("terminal_out_dim"), header.line_of("terminal_out_dim"), "terminal_out_dim")
    if min(n, r, ny) < 1:
        raise ParseError("input_dim, first_order and terminal_out_dim must be >= 1")
    spec = KnowledgeSpec.unknown(ny, n, r)
    plan: list[LayerPlan] = []
    in_dim = n
    for b in blocks[1:]:
        if b.name == "knowledge":
            spec = _parse_knowledge(b, spec)
        elif b.name == "layer":
            if b.rows:
                raise ParseError("unexpected row in [layer] block", line=b.rows[0][1])
            out_dim = _int(b.get("out_dim"), b.line_of("out_dim"), "out_dim")
            order = _int(b.get("order"), b.line_of("order"), "order")
            act = b.get("activation", "tanh")
            if act not in ACTIVATIONS:
                raise ParseError(f"unknown activation {act!r}", line=b.line_of("activation"))
            sup = None
            if "suppressor" in b.fields:
                sup = parse_suppressor(b.get("suppressor"), in_dim, b.line_of("suppressor"))
            plan.append(LayerPlan(out_dim, order, act, sup))
            in_dim = out_dim
        else:
            raise ParseError(f"unknown block [{b.name}]", line=b.line)
    if not plan:
        raise ParseError("config has no [layer] block")
    return ModelConfig(spec, tuple(plan))


def _parse_knowledge(block: _Block, template: KnowledgeSpec) -> KnowledgeSpec:
    L = len(template.basis)
    if len(block.rows) != template.out_dim:
        raise ParseError(f"[knowledge] has {len(block.rows)} rows, expected {template.out_dim}",
                         line=block.line)
    for i, (toks, lineno) in enumerate(block.rows, start=1):
        if len(toks) != L:
            raise ParseError(f"knowledge row {i} has {len(toks)} entries, expected {L}", line=lineno)
        for j, tok in enumerate(toks, start=1):
            if tok != UNKNOWN:
                _float(tok, lineno, f"knowledge entry (row {i}, column {j})")
    return KnowledgeSpec.from_rows([t for t, _ in block.rows], template.input_dim, template.order)


def load_model_config(path) -> ModelConfig:
    return parse_model_config(Path(path).read_text())


def save_model_config(cfg: ModelConfig, path) -> None:
    Path(path).write_text(format_model_config(cfg))


# ------------------------------------------------------------ safety config

@dataclass(frozen=True)
class SafetyConfig:
    quadratics: tuple[SafetyQuadratic, ...]
    box: CommandBox | None = None


def format_safety_config(cfg: SafetyConfig) -> str:
    out = [f"format_version = {FORMAT_VERSION}"]
    for q in cfg.quadratics:
        out += ["", "[quadratic]", f"sign = {q.sign}", f"b = {fmt(q.b)}",
                "P = " + " ".join(fmt(v) for v in q.P.ravel())]
        if np.any(q.linear):
            out.append("linear = " + " ".join(fmt(v) for v in q.linear))
    if cfg.box is not None:
        out += ["", "[box]", "lower = " + " ".join(map(fmt, cfg.box.lower)),
                "upper = " + " ".join(map(fmt, cfg.box.upper))]
    return "\n".join(out) + "\n"


def _floats(block: _Block, key: str, count: int) -> list[float]:
    line = block.line_of(key)
    toks = block.get(key).split()
    if len(toks) != count:
        raise ParseError(f"{key} needs {count} numbers, got {len(toks)}", line=line)
    return [_float(t, line, key) for t in toks]


def parse_safety_config(text: str) -> SafetyConfig:
    blocks = _blocks(text)
    _check_version(blocks[0])
    quads, box = [], None
    for b in blocks[1:]:
        if b.name == "quadratic":
            sign = b.get("sign")
            if sign not in SIGNS:
                raise ParseError(f"sign must be plus or minus, got {sign!r}", line=b.line_of("sign"))
            b_val = _float(b.get("b"), b.line_of("b"), "b")
            P = np.array(_floats(b, "P", 4)).reshape(2, 2)
            lin = _floats(b, "linear", 2) if "linear" in b.fields else [0.0, 0.0]
            try:
                quads.append(SafetyQuadratic(sign, b_val, P, np.array(lin)))
            except InvalidArgument as exc:
                raise ParseError(str(exc), line=b.line) from None
        elif b.name == "box":
            box = CommandBox(tuple(_floats(b, "lower", 2)), tuple(_floats(b, "upper", 2)))
        else:
            raise ParseError(f"unknown block [{b.name}]", line=b.line)
    if not quads:
        raise ParseError("safety config has no [quadratic] block")
    return SafetyConfig(tuple(quads), box)


def load_safety_config(path) -> SafetyConfig:
    return parse_safety_config(Path(path).read_text())


def save_safety_config(cfg: SafetyConfig, path) -> None:
    Path(path).write_text(format_safety_config(cfg))


# ----------------------------------------------------------------- weights

PER_LINE = 6


def format_weights(model: PhyTaylorModel, cfg: ModelConfig) -> str:
    """K in full and the trainable part of W, both row-major."""
    out = [f"format_version = {FORMAT_VERSION}", f"config_sha256 = {cfg.sha256()}",
           f"layers = {len(model.layers)}"]
    for t, layer in enumerate(model.layers, start=1):
        w = layer.W[layer.M != 0]
        out += ["", f"[layer {t}]", f"shape = {layer.out_dim} {len(layer.basis)}", "K ="]
        out += [" ".join(map(fmt, row)) for row in layer.K]
        out.append(f"W = {w.size}")
        out += [" ".join(map(fmt, w[i:i + PER_LINE])) for i in range(0, w.size, PER_LINE)]
    return "\n".join(out) + "\n"


def _weight_sections(text: str) -> Iterator[tuple[str, int, list[str]]]:
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line:
            yield line, lineno, line.split()


def parse_weights(text: str, cfg: ModelConfig) -> PhyTaylorModel:
    lines = list(_weight_sections(text))
    head = {}
    i = 0
    while i < len(lines) and not lines[i][0].startswith("["):
        key, _, value = lines[i][0].partition("=")
        head[key.strip()] = (value.strip(), lines[i][1])
        i += 1
    version = head.get("format_version", (None,))[0]
    if version != str(FORMAT_VERSION):
        raise VersionUnknown(f"weights format_version {version!r} is not supported")
    digest = head.get("config_sha256", ("",))[0]
    if digest != cfg.sha256():
        raise HashMismatch(f"weights were saved for config {digest[:12]}..., "
                           f"this config hashes to {cfg.sha256()[:12]}...")
    model = cfg.build(seed=0)
    n_layers = _int(head.get("layers", ("?", 1))[0], head.get("layers", ("", 1))[1], "layers")
    if n_layers != len(model.layers):
        raise ParseError(f"file has {n_layers} layers, config has {len(model.layers)}")
    for t, layer in enumerate(model.layers, start=1):
        if i >= len(lines) or lines[i][0] != f"[layer {t}]":
            raise ParseError(f"expected [layer {t}]", line=lines[i][1] if i < len(lines) else None)
        shape_line, lineno, toks = lines[i + 1]
        want = (layer.out_dim, len(layer.basis))
        if toks[:2] != ["shape", "="] or tuple(_int(v, lineno, "shape") for v in toks[2:]) != want:
            raise ParseError(f"layer {t} shape must be {want[0]} {want[1]}", line=lineno)
        if lines[i + 2][0] != "K =":
            raise ParseError("expected 'K ='", line=lines[i + 2][1])
        i += 3
        K = np.empty(want)
        for row in range(want[0]):
            _, lineno, toks = lines[i]
            if len(toks) != want[1]:
                raise ParseError(f"K row has {len(toks)} entries, expected {want[1]}", line=lineno)
            K[row] = [_float(v, lineno, "K entry") for v in toks]
            i += 1
        _, lineno, toks = lines[i]
        count = _int(toks[-1], lineno, "W count") if toks[:2] == ["W", "="] else -1
        if count != layer.n_trainable:
            raise ParseError(f"layer {t} needs {layer.n_trainable} trainable weights", line=lineno)
        i += 1
        vals: list[float] = []
        while len(vals) < count:
            _, lineno, toks = lines[i]
            vals += [_float(v, lineno, "W entry") for v in toks]
            i += 1
        if len(vals) != count:
            raise ParseError(f"layer {t} has {len(vals)} W entries, expected {count}", line=lineno)
        W = np.zeros(want)
        W[layer.M != 0] = vals
        layer.K, layer.W = K, W
    if i != len(lines):
        raise ParseError("trailing content after the last layer", line=lines[i][1])
    return model


def save_weights(model: PhyTaylorModel, cfg: ModelConfig, path) -> None:
    Path(path).write_text(format_weights(model, cfg))


def load_weights(path, cfg: ModelConfig) -> PhyTaylorModel:
    try:
        return parse_weights(Path(path).read_text(), cfg)
    except IndexError:
        raise ParseError(f"{path}: file ends early") from None


# ------------------------------------------------------------------ reports

def jsonable(obj):
    """Plain JSON types; non-finite floats become the strings "inf"/"-inf"/"nan"."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


@dataclass
class RunReport:
    config_hash: str
    seed: int
    history: History | None = None
    compliance: dict | None = None
    rollout_errors: dict | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"config_hash": self.config_hash, "seed": self.seed}
        if self.history is not None:
            d["epochs"] = self.history.epochs
            d["train_loss"] = self.history.train_loss
            d["val_loss"] = self.history.val_loss
        if self.compliance is not None:
            d["compliance"] = self.compliance
        if self.rollout_errors is not None:
            d["rollout_errors"] = self.rollout_errors
        d.update(self.extra)
        return jsonable(d)


def dumps_report(report: RunReport | dict) -> str:
    d = report.to_dict() if isinstance(report, RunReport) else jsonable(report)
    return json.dumps(d, indent=2, sort_keys=True) + "\n"


def write_report(path, report: RunReport | dict) -> None:
    Path(path).write_text(dumps_report(report))
