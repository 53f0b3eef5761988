"""File formats: panel CSV, chain container, summary and elasticity tables.

Panel CSV
    Long format, one row per (individual, period), header mandatory::

        i,t,choice,p_1..p_Jp,z_<j>_<k>...,w_<j1>_<j2>_<k>...,zp_<j>_<k>...

    ``choice`` is the sorted good list joined by ``+`` (``1+3``) and the
    empty string for the outside option. Floats are written with ``repr`` so
    that a write/read/write cycle is byte-stable. By convention ``z_<j>_1``
    is the price covariate of good ``j`` unless told otherwise.

Chain file
    ``MAGIC`` (8 bytes), header length (8-byte little-endian unsigned),
    UTF-8 JSON header, then the arrays listed in ``header["arrays"]``
    back to back, each row-major little-endian at the recorded offset
    (relative to the start of the body).
"""
from __future__ import annotations

import csv
import json
import math
import os
import re
import struct
from pathlib import Path

import numpy as np

from .errors import ArtifactIOError, DataError
from .mcmc import ModelSpec, ParameterState, PosteriorChain, summarize
from .model_core import PanelData, enumerate_choice_set

MAGIC = b"BNDLCHN1"
FORMAT_VERSION = 1

_COL = re.compile(r"^(p|z|w|zp)_(\d+(?:_\d+)*)$")


def _fmt(v: float) -> str:
    return repr(float(v))


def panel_columns(data: PanelData) -> list[str]:
    cs = data.choice_set
    cols = ["i", "t", "choice"] + [f"p_{k + 1}" for k in range(data.J_p)]
    for j, blk in enumerate(data.z):
        cols += [f"z_{j + 1}_{k + 1}" for k in range(blk.shape[1])]
    for (a, b), blk in zip(cs.pair_list, data.w):
        cols += [f"w_{a + 1}_{b + 1}_{k + 1}" for k in range(blk.shape[1])]
    for j, blk in enumerate(data.zp):
        cols += [f"zp_{j + 1}_{k + 1}" for k in range(blk.shape[1])]
    return cols


def write_panel(data: PanelData, path) -> None:
    cs = data.choice_set
    blocks = [data.p, *data.z, *data.w, *data.zp]
    num = np.hstack([b for b in blocks if b.shape[1]]) if any(b.shape[1] for b in blocks) else np.zeros((data.n_obs, 0))
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(panel_columns(data))
            for n in range(data.n_obs):
                wr.writerow([int(data.ids[n]), int(data.periods[n]), cs.label(int(data.y[n]))]
                            + [_fmt(v) for v in num[n]])
    except OSError as e:
        raise ArtifactIOError(f"cannot write panel to {path}: {e}") from e


def read_panel(path, price_slot=0) -> PanelData:
    """Read a panel CSV; ``price_slot`` is the 0-based price column within each ``z_<j>`` block
    (an int for all goods, a per-good sequence, or None for no price covariate)."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"cannot read panel {path}: {e}") from e
    with fh:
        rd = csv.reader(fh)
        try:
            header = next(rd)
        except StopIteration:
            raise DataError(f"{path}: empty file, header expected") from None
        header = [h.strip() for h in header]
        if header[:3] != ["i", "t", "choice"]:
            raise DataError(f"{path}, line 1: header must start with i,t,choice")
        groups: dict[str, dict[tuple, int]] = {"p": {}, "z": {}, "w": {}, "zp": {}}
        for c, name in enumerate(header[3:], start=3):
            m = _COL.match(name)
            if not m:
                raise DataError(f"{path}, line 1: unrecognised column {name!r}")
            key = tuple(int(v) for v in m.group(2).split("_"))
            want = {"p": 1, "z": 2, "w": 3, "zp": 2}[m.group(1)]
            if len(key) != want or min(key) < 1:
                raise DataError(f"{path}, line 1: malformed column name {name!r}")
            if key in groups[m.group(1)]:
                raise DataError(f"{path}, line 1: duplicate column {name!r}")
            groups[m.group(1)][key] = c
        J = max((k[0] for k in groups["z"]), default=0)
        if J < 1:
            raise DataError(f"{path}, line 1: no z_<j>_<k> columns")
        cs = enumerate_choice_set(J)
        rows_i, rows_t, rows_y, num = [], [], [], []
        width = len(header)
        for row in rd:
            line = rd.line_num
            if not row or all(not v.strip() for v in row):
                continue
            if len(row) != width:
                raise DataError(f"{path}, line {line}: expected {width} fields, found {len(row)}")
            try:
                rows_i.append(int(row[0]))
                rows_t.append(int(row[1]))
            except ValueError:
                raise DataError(f"{path}, line {line}: i and t must be integers") from None
            try:
                rows_y.append(cs.parse_label(row[2]))
            except (ValueError, KeyError) as e:
                raise DataError(f"{path}, line {line}: bad choice {row[2]!r} ({e})") from None
            try:
                vals = [float(v) for v in row[3:]]
            except ValueError:
                raise DataError(f"{path}, line {line}: non-numeric covariate value") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}, line {line}: non-finite covariate value")
            num.append(vals)
    if not rows_i:
        raise DataError(f"{path}: no data rows")
    X = np.asarray(num, dtype=float).reshape(len(rows_i), width - 3)

    def block(kind, lead):
        cols = sorted(k for k in groups[kind] if k[:-1] == lead)
        if [k[-1] for k in cols] != list(range(1, len(cols) + 1)):
            raise DataError(f"{path}, line 1: {kind} columns for {lead} are not numbered 1..K")
        return X[:, [groups[kind][k] - 3 for k in cols]]

    z = [block("z", (j + 1,)) for j in range(J)]
    w = [block("w", (a + 1, b + 1)) for a, b in cs.pair_list] if groups["w"] else []
    for key in groups["w"]:
        if key[0] >= key[1] or key[1] > J:
            raise DataError(f"{path}, line 1: w columns must name pairs j1 < j2 <= {J}")
    J_p = len(groups["p"])
    if sorted(groups["p"]) != [(k + 1,) for k in range(J_p)]:
        raise DataError(f"{path}, line 1: p columns must be numbered 1..J_p")
    p = X[:, [groups["p"][(k + 1,)] - 3 for k in range(J_p)]] if J_p else None
    zp = [block("zp", (k + 1,)) for k in range(J_p)] if J_p else []
    if isinstance(price_slot, (int, np.integer)) or price_slot is None:
        slots = tuple(None if price_slot is None else int(price_slot) for _ in range(J))
    else:
        slots = tuple(price_slot)
    return PanelData(cs, np.asarray(rows_i), np.asarray(rows_t), np.asarray(rows_y), tuple(z), tuple(w),
                     p, tuple(zp), slots)


# ---------------------------------------------------------------- chain container

def _chain_arrays(chain: PosteriorChain) -> dict[str, np.ndarray]:
    arr = {"theta": chain.theta}
    for name in ("lam", "f", "Sigma", "nu"):
        v = getattr(chain, name)
        if v is not None:
            arr[name] = v
    if chain.mask is not None:
        arr["mask"] = chain.mask.astype(np.uint8)
    st = chain.final_state
    if st is not None:
        for name in ("u", "theta", "Lambda", "f", "nu", "Sigma"):
            v = getattr(st, name)
            if v is not None:
                arr[f"state_{name}"] = v
    return arr


def write_chain(chain: PosteriorChain, path) -> None:
    arrays = _chain_arrays(chain)
    entries, body, offset = [], [], 0
    for name, a in arrays.items():
        dt = "<u1" if a.dtype == np.uint8 else "<f8"
        raw = np.ascontiguousarray(a, dtype=dt).tobytes()
        entries.append({"name": name, "dtype": dt, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        body.append(raw)
        offset += len(raw)
    header = {
        "format": "bundlechoice-chain",
        "version": FORMAT_VERSION,
        "spec": chain.spec.to_dict(),
        "param_names": list(chain.param_names),
        "metadata": chain.metadata,
        "final_sweep": None if chain.final_state is None else int(chain.final_state.sweep),
        "rng_states": chain.rng_states,
        "arrays": entries,
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(hb)))
            fh.write(hb)
            for raw in body:
                fh.write(raw)
        os.replace(tmp, path)
    except OSError as e:
        raise ArtifactIOError(f"cannot write chain to {path}: {e}") from e


def read_chain_header(path) -> dict:
    with _open_chain(path) as fh:
        return _header(fh, path)


def _open_chain(path):
    try:
        return open(path, "rb")
    except OSError as e:
        raise ArtifactIOError(f"cannot read chain {path}: {e}") from e


def _header(fh, path) -> dict:
    if fh.read(len(MAGIC)) != MAGIC:
        raise ArtifactIOError(f"{path} is not a chain file")
    raw = fh.read(8)
    if len(raw) != 8:
        raise ArtifactIOError(f"{path}: truncated header")
    (n,) = struct.unpack("<Q", raw)
    try:
        header = json.loads(fh.read(n).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ArtifactIOError(f"{path}: corrupt header ({e})") from None
    if header.get("version") != FORMAT_VERSION:
        raise ArtifactIOError(f"{path}: unsupported chain format version {header.get('version')}")
    return header


def read_chain(path) -> PosteriorChain:
    with _open_chain(path) as fh:
        header = _header(fh, path)
        body = fh.read()
    arrays = {}
    for e in header["arrays"]:
        chunk = body[e["offset"]: e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise ArtifactIOError(f"{path}: truncated body (array {e['name']})")
        arrays[e["name"]] = np.frombuffer(chunk, dtype=e["dtype"]).reshape(e["shape"]).copy()
    state = None
    if header.get("final_sweep") is not None:
        state = ParameterState(
            u=arrays["state_u"], theta=arrays["state_theta"], Lambda=arrays.get("state_Lambda"),
            f=arrays.get("state_f"), nu=arrays.get("state_nu"), Sigma=arrays.get("state_Sigma"),
            sweep=int(header["final_sweep"]))
    mask = arrays.get("mask")
    return PosteriorChain(
        spec=ModelSpec.from_dict(header["spec"]),
        param_names=tuple(header["param_names"]),
        theta=arrays["theta"],
        lam=arrays.get("lam"),
        f=arrays.get("f"),
        Sigma=arrays.get("Sigma"),
        nu=arrays.get("nu"),
        mask=None if mask is None else mask.astype(bool),
        metadata=header["metadata"],
        final_state=state,
        rng_states=header.get("rng_states"),
    )


# ---------------------------------------------------------------- tables

def _write_rows(path, fields, rows) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(fields)
            for r in rows:
                wr.writerow(["" if v is None else (_fmt(v) if isinstance(v, float) else v) for v in r])
    except OSError as e:
        raise ArtifactIOError(f"cannot write {path}: {e}") from e


def write_summary(chain_or_rows, path) -> list[dict]:
    rows = summarize(chain_or_rows) if isinstance(chain_or_rows, PosteriorChain) else chain_or_rows
    fields = list(rows[0]) if rows else ["parameter"]
    _write_rows(path, fields, [[r[k] for k in fields] for r in rows])
    return rows


def write_shares(result, path) -> None:
    """Bundle shares (outside option first) followed by good shares."""
    rows = [["bundle", lab if lab else "outside", float(v)] for lab, v in zip(result.labels, result.bundle)]
    rows += [["good", str(j + 1), float(v)] for j, v in enumerate(result.good)]
    _write_rows(path, ["level", "label", "share"], rows)


def write_elasticities(table, path) -> None:
    """Long-format elasticity table: one row per (price good, target good or bundle)."""
    J = table.good.shape[0]

    def val(v):
        return None if not np.isfinite(v) else float(v)

    rows = []
    for j in range(J):
        for k in range(J):
            rows.append(["good", j + 1, str(k + 1), val(table.good[j, k]), val(table.good_se[j, k])])
    for j in range(J):
        for r, lab in enumerate(table.bundle_labels[1:]):
            rows.append(["bundle", j + 1, lab, val(table.bundle[j, r]), val(table.bundle_se[j, r])])
    _write_rows(path, ["level", "price_good", "target", "elasticity", "se"], rows)


def write_json(obj, path) -> None:
    try:
        Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"cannot write {path}: {e}") from e


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ArtifactIOError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e})") from None
