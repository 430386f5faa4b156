"""Bit-exact text checkpoints for networks and full models.

Every float is written as a hexadecimal float literal (lossless) followed
on a companion line by a short decimal rendering for human inspection.
Only the hex lines are parsed back, so serialize -> deserialize -> rollout
is bit-identical.
"""

from __future__ import annotations

import numpy as np

from .errors import DataFormatError
from .model import TustinModel
from .network import FeedforwardNet

FORMAT_TAG = "tustinnet-checkpoint v1"


def _hex_line(values) -> str:
    return " ".join(float(v).hex() for v in values)


def _dec_line(values) -> str:
    return " ".join(format(float(v), ".6g") for v in values)


def _emit_array(lines, name, arr):
    arr = np.atleast_2d(np.asarray(arr, dtype=float))
    lines.append(f"array {name} {arr.shape[0]} {arr.shape[1]}")
    for row in arr:
        lines.append("hex " + _hex_line(row))
        lines.append("# dec " + _dec_line(row))


def save_checkpoint(path, obj):
    """Write a FeedforwardNet or TustinModel to ``path``."""
    if isinstance(obj, TustinModel):
        net = obj.net
        model_fields = {"n_q": obj.n_q, "n_u": obj.n_u, "tau_s": obj.tau_s}
    elif isinstance(obj, FeedforwardNet):
        net = obj
        model_fields = {}
    else:
        raise TypeError(f"cannot checkpoint {type(obj).__name__}")

    lines = [FORMAT_TAG]
    lines.append("layer_sizes " + " ".join(str(s) for s in net.layer_sizes))
    lines.append(f"activation_slope {float(net.activation_slope).hex()} "
                 f"# {net.activation_slope!r}")
    lines.append("frozen " + " ".join("1" if f else "0" for f in net.frozen))
    if model_fields:
        lines.append(f"n_q {model_fields['n_q']}")
        lines.append(f"n_u {model_fields['n_u']}")
        lines.append(f"tau_s {float(model_fields['tau_s']).hex()} "
                     f"# {model_fields['tau_s']!r}")
    for m, w in enumerate(net.weights):
        _emit_array(lines, f"W{m + 1}", w)
    for m, b in enumerate(net.biases):
        _emit_array(lines, f"b{m + 1}", b.reshape(1, -1))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_hex_row(line, width, path):
    parts = line.split()[1:]
    if len(parts) != width:
        raise DataFormatError(f"{path}: expected {width} values, got {len(parts)}")
    return np.array([float.fromhex(p) for p in parts])


def load_checkpoint(path):
    """Read a checkpoint; returns a TustinModel when model fields are present,
    otherwise a bare FeedforwardNet."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in raw if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or lines[0] != FORMAT_TAG:
        raise DataFormatError(f"{path}: not a {FORMAT_TAG} file")

    header = {}
    arrays = {}
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        key = parts[0]
        if key == "array":
            name, rows, cols = parts[1], int(parts[2]), int(parts[3])
            data = np.empty((rows, cols))
            for r in range(rows):
                i += 1
                if i >= len(lines) or not lines[i].startswith("hex "):
                    raise DataFormatError(f"{path}: truncated array {name}")
                data[r] = _parse_hex_row(lines[i], cols, path)
            arrays[name] = data
        else:
            header[key] = parts[1:]
        i += 1

    try:
        layer_sizes = [int(s) for s in header["layer_sizes"]]
        slope = float.fromhex(header["activation_slope"][0])
        frozen = [s == "1" for s in header["frozen"]]
    except KeyError as exc:
        raise DataFormatError(f"{path}: missing checkpoint field {exc}") from exc

    n_layers = len(layer_sizes) - 1
    weights = []
    biases = []
    for m in range(n_layers):
        name = f"W{m + 1}"
        if name not in arrays:
            raise DataFormatError(f"{path}: missing array {name}")
        weights.append(arrays[name])
    for m in range(n_layers - 1):
        name = f"b{m + 1}"
        if name not in arrays:
            raise DataFormatError(f"{path}: missing array {name}")
        biases.append(arrays[name].reshape(-1))

    net = FeedforwardNet(layer_sizes=layer_sizes, weights=weights, biases=biases,
                         activation_slope=slope, frozen=frozen)
    net.validate()
    if "n_q" in header:
        return TustinModel(
            net=net,
            n_q=int(header["n_q"][0]),
            n_u=int(header["n_u"][0]),
            tau_s=float.fromhex(header["tau_s"][0]),
        )
    return net
