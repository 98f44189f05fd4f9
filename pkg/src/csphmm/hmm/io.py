"""JSON persistence for circular HMMs (``csphmm-model/1``).

Only transition entries allowed by the mask are written; each conditional
row lists the probabilities of the context's allowed successors in
ascending state order.  Floats are written with ``repr`` precision, so a
round trip reproduces every bit.
"""

import json

import numpy as np

from ..exceptions import ModelFormatError
from .model import CircularHmm, circular_mask

MODEL_FORMAT = "csphmm-model/1"


def _rows(table, mask):
    n = mask.shape[0]
    flat = table.reshape(-1, n)
    lasts = np.indices(table.shape[:-1]).reshape(table.ndim - 1, -1)[-1] if table.ndim > 1 else None
    return [[float(v) for v in flat[c][mask[lasts[c]]]] for c in range(flat.shape[0])]


def _unrows(rows, shape, mask):
    n = mask.shape[0]
    out = np.zeros((int(np.prod(shape[:-1])), n))
    lasts = np.indices(shape[:-1]).reshape(len(shape) - 1, -1)[-1]
    if len(rows) != out.shape[0]:
        raise ModelFormatError(f"expected {out.shape[0]} transition rows, found {len(rows)}")
    for c, row in enumerate(rows):
        allowed = np.flatnonzero(mask[lasts[c]])
        if len(row) != len(allowed):
            raise ModelFormatError(f"row {c} has {len(row)} entries, mask allows {len(allowed)}")
        out[c, allowed] = row
    return out.reshape(shape)


def model_to_dict(hmm):
    mask = hmm.mask
    d = {
        "format": MODEL_FORMAT,
        "order": hmm.order,
        "n_states": hmm.n_states,
        "n_mix": hmm.n_mix,
        "dim": hmm.dim,
        "topology": "circular" if np.array_equal(mask, circular_mask(hmm.n_states)) else "custom",
        "successors": [[int(j) for j in np.flatnonzero(row)] for row in mask],
        "pi": [float(v) for v in hmm.pi],
    }
    for name, table in hmm.tables():
        d[name] = _rows(table, mask)
    d["weights"] = hmm.weights.tolist()
    d["means"] = hmm.means.tolist()
    d["variances"] = hmm.variances.tolist()
    d["var_floor"] = None if hmm.var_floor is None else hmm.var_floor.tolist()
    return d


def model_from_dict(d):
    if d.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"unsupported model format {d.get('format')!r}")
    try:
        n, r = int(d["n_states"]), int(d["order"])
        mask = np.zeros((n, n), dtype=bool)
        for i, succ in enumerate(d["successors"]):
            mask[i, succ] = True
        kw = {}
        if r >= 2:
            kw["boot1"] = _unrows(d["boot1"], (n, n), mask)
        if r == 3:
            kw["boot2"] = _unrows(d["boot2"], (n, n, n), mask)
        return CircularHmm(
            pi=np.array(d["pi"], dtype=float),
            transitions=_unrows(d["transitions"], (n,) * (r + 1), mask),
            weights=np.array(d["weights"], dtype=float),
            means=np.array(d["means"], dtype=float),
            variances=np.array(d["variances"], dtype=float),
            mask=mask,
            var_floor=None if d.get("var_floor") is None else np.array(d["var_floor"], dtype=float),
            **kw,
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise ModelFormatError(f"malformed model payload: {exc}") from exc


def dumps(obj):
    """Canonical JSON text used for every persisted artifact."""
    return json.dumps(obj, indent=1, sort_keys=False, allow_nan=False) + "\n"


def save_model(hmm, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(model_to_dict(hmm)))


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
