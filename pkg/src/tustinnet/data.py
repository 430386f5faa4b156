"""Experiment ingestion, velocity estimation, and training-set extraction.

Experiments live in CSV files with header ``t,theta,alpha,u`` (comment
lines start with ``#``). Velocities are reconstructed offline with the
fourth-order five-point stencil; the first/last two samples fall back to
one-sided differences and are flagged. A manifest file makes the
train/validation layout declarative.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import (ConfigError, DataFormatError, DatasetError, GridError,
                     TooShortError)
from .state import StateVector

log = logging.getLogger(__name__)

FREE_FALL = "free-fall"
NOISE_EXCITED = "noise-excited"
KINDS = (FREE_FALL, NOISE_EXCITED)

VOLTAGE_LIMIT = 15.0
GRID_TOL = 1e-6
CSV_COLUMNS = ("t", "theta", "alpha", "u")

DEFAULT_SPEED_TOL = 0.1
DEFAULT_EQUILIBRIUM_WINDOW = 50


@dataclass
class ExperimentSequence:
    """One recorded or simulated run with estimated velocities attached.

    ``kbar`` is the equilibrium-entry step: the first index from which the
    run stays slow for a whole detection window, or the last index T_i as
    a "never" sentinel. ``boundary_mask`` marks velocity samples that came
    from one-sided differences rather than the full stencil.
    """

    id: int
    t: np.ndarray
    u: np.ndarray          # (T+1, n_u)
    q: np.ndarray          # (T+1, n_q) unwrapped rad
    qdot_est: np.ndarray   # (T+1, n_q) stencil estimates
    tau_s: float
    kbar: int
    kind: str
    boundary_mask: np.ndarray = field(default=None)
    source: str = ""

    @property
    def horizon(self) -> int:
        """Last valid index T_i (sequences hold T_i + 1 samples)."""
        return self.q.shape[0] - 1

    @property
    def n_q(self) -> int:
        return self.q.shape[1]

    @property
    def n_u(self) -> int:
        return self.u.shape[1]

    def state(self, k: int) -> StateVector:
        """State at step k with the stencil-estimated velocity."""
        return StateVector(q=self.q[k].copy(), qdot=self.qdot_est[k].copy())


@dataclass
class SubsequenceSample:
    """A (x0, input window, state window) training triple."""

    source_id: int
    start: int
    x0: StateVector
    u_window: np.ndarray   # (T+1, n_u)
    q_window: np.ndarray   # (T+1, n_q)
    qdot_window: np.ndarray
    window_len: int

    @property
    def x_window(self) -> np.ndarray:
        """(T+1, 2 n_q) state window, positions first."""
        return np.concatenate([self.q_window, self.qdot_window], axis=1)


def estimate_velocities(q: np.ndarray, tau_s: float):
    """Five-point-stencil first derivative of each position column.

    Interior samples use (q[k-2] - 8 q[k-1] + 8 q[k+1] - q[k+2]) / (12 tau_s),
    which is exact for polynomials up to degree four. The two samples at
    each end use one-sided two-point differences and are reported in the
    returned boundary mask.
    """
    q = np.asarray(q, dtype=float)
    squeeze = q.ndim == 1
    if squeeze:
        q = q[:, None]
    n = q.shape[0]
    if n < 5:
        raise TooShortError(f"stencil needs >= 5 samples, got {n}")
    v = np.empty_like(q)
    # paired differences keep the formula exactly zero on constant input
    v[2:-2] = ((q[:-4] - q[4:]) + 8.0 * (q[3:-1] - q[1:-3])) / (12.0 * tau_s)
    v[0] = (q[1] - q[0]) / tau_s
    v[1] = (q[2] - q[1]) / tau_s
    v[-2] = (q[-2] - q[-3]) / tau_s
    v[-1] = (q[-1] - q[-2]) / tau_s
    mask = np.zeros(n, dtype=bool)
    mask[:2] = True
    mask[-2:] = True
    if squeeze:
        return v[:, 0], mask
    return v, mask


def detect_equilibrium_entry(seq: ExperimentSequence,
                             speed_tol: float = DEFAULT_SPEED_TOL,
                             window: int = DEFAULT_EQUILIBRIUM_WINDOW) -> int:
    """Smallest k >= 2 whose next ``window`` speed estimates all stay below
    ``speed_tol`` in the infinity norm; the last index T_i when none does."""
    horizon = seq.horizon
    if window > horizon:
        raise ConfigError(f"window {window} exceeds sequence horizon {horizon}")
    speed = np.max(np.abs(seq.qdot_est), axis=1)
    below = speed < speed_tol
    for k in range(2, horizon - window + 2):
        if below[k:k + window].all():
            return k
    return horizon


def annotate(seq: ExperimentSequence, speed_tol: float = DEFAULT_SPEED_TOL,
             window: int = DEFAULT_EQUILIBRIUM_WINDOW) -> ExperimentSequence:
    """Fill in stencil velocities and the equilibrium-entry index.

    The detection window is clamped to the sequence horizon so short but
    otherwise valid records still load.
    """
    v, mask = estimate_velocities(seq.q, seq.tau_s)
    seq.qdot_est = v
    seq.boundary_mask = mask
    seq.kbar = detect_equilibrium_entry(seq, speed_tol=speed_tol,
                                        window=min(window, seq.horizon))
    return seq


def load_experiment(path, expected_tau_s: float, id: int = 0,
                    kind: str = FREE_FALL,
                    speed_tol: float = DEFAULT_SPEED_TOL,
                    window: int = DEFAULT_EQUILIBRIUM_WINDOW) -> ExperimentSequence:
    """Parse one experiment CSV, estimate velocities, detect kbar.

    Rejects missing/unknown columns, non-finite cells, and any time gap off
    the uniform grid by more than 1e-6 s. Voltages beyond the +-15 V
    saturation bound are only warned about, so slightly out-of-range sensor
    logs still load.
    """
    path = Path(path)
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(ln for ln in fh if not ln.lstrip().startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if sorted(header) != sorted(CSV_COLUMNS):
            missing = set(CSV_COLUMNS) - set(header)
            if missing:
                raise DataFormatError(f"{path}: missing column(s) {sorted(missing)}")
            raise DataFormatError(f"{path}: unexpected columns {header}")
        idx = {name: header.index(name) for name in CSV_COLUMNS}
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                vals = [float(rec[idx[name]]) for name in CSV_COLUMNS]
            except (ValueError, IndexError) as exc:
                raise DataFormatError(f"{path}:{lineno}: bad row {rec}") from exc
            if not all(np.isfinite(v) for v in vals):
                raise DataFormatError(f"{path}:{lineno}: non-finite cell in {rec}")
            rows.append(vals)

    if len(rows) < 5:
        raise TooShortError(
            f"{path}: {len(rows)} rows, velocity stencil needs at least 5"
        )
    data = np.array(rows)
    t, theta, alpha, u = data.T
    gaps = np.diff(t)
    off = np.abs(gaps - expected_tau_s)
    if np.any(off > GRID_TOL):
        k = int(np.argmax(off > GRID_TOL))
        raise GridError(
            f"{path}: time gap {gaps[k]:.6g}s at row {k + 2} "
            f"(expected {expected_tau_s:.6g}s)"
        )
    if np.any(np.abs(u) > VOLTAGE_LIMIT + 1e-9):
        log.warning("%s: %d input samples exceed the %.0f V saturation bound",
                    path, int(np.sum(np.abs(u) > VOLTAGE_LIMIT + 1e-9)),
                    VOLTAGE_LIMIT)
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}")

    seq = ExperimentSequence(
        id=id, t=t, u=u[:, None], q=np.column_stack([theta, alpha]),
        qdot_est=None, tau_s=expected_tau_s, kbar=-1, kind=kind,
        source=str(path),
    )
    return annotate(seq, speed_tol=speed_tol, window=window)


def write_experiment_csv(path, t, q, u):
    """Write an experiment in the canonical CSV layout with full precision."""
    q = np.asarray(q, dtype=float)
    u = np.asarray(u, dtype=float).reshape(len(t), -1)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("t,theta,alpha,u\n")
        for k in range(len(t)):
            fh.write(f"{float(t[k])!r},{float(q[k, 0])!r},"
                     f"{float(q[k, 1])!r},{float(u[k, 0])!r}\n")


def _window_range(seq: ExperimentSequence, window_len: int,
                  pretrain: bool) -> tuple:
    """Inclusive draw range [2, hi] for a window start, or None if empty."""
    if pretrain:
        hi = min(seq.kbar - 2, seq.horizon - window_len)
    else:
        hi = seq.horizon - window_len - 2
    if hi < 2:
        return None
    return (2, hi)


def _extract(seq: ExperimentSequence, start: int, window_len: int) -> SubsequenceSample:
    stop = start + window_len + 1
    return SubsequenceSample(
        source_id=seq.id,
        start=start,
        x0=seq.state(start),
        u_window=seq.u[start:stop].copy(),
        q_window=seq.q[start:stop].copy(),
        qdot_window=seq.qdot_est[start:stop].copy(),
        window_len=window_len,
    )


def _build_dataset(experiments, n_samples: int, window_len: int, seed,
                   pretrain: bool) -> list:
    usable = []
    for seq in experiments:
        rng_range = _window_range(seq, window_len, pretrain)
        if rng_range is None:
            log.warning(
                "experiment %d excluded from %s dataset (kbar=%d, horizon=%d)",
                seq.id, "pre-train" if pretrain else "fine-tune",
                seq.kbar, seq.horizon,
            )
            continue
        usable.append((seq, rng_range))
    if not usable:
        raise DatasetError("no experiment offers a valid draw range")
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n_samples):
        seq, (lo, hi) = usable[rng.integers(0, len(usable))]
        start = int(rng.integers(lo, hi + 1))
        samples.append(_extract(seq, start, window_len))
    return samples


def build_pretrain_dataset(experiments, n_samples: int, window_len: int,
                           seed) -> list:
    """Draw transient subsequences: starts are uniform on [2, kbar - 2]
    (intersected with the in-bounds limit), sources uniform over the
    experiments that admit a valid start."""
    return _build_dataset(experiments, n_samples, window_len, seed, pretrain=True)


def build_finetune_dataset(experiments, n_samples: int, window_len: int,
                           seed) -> list:
    """Draw subsequences from the whole record: starts uniform on
    [2, T_i - window - 2], so steady-state segments are sampled too."""
    return _build_dataset(experiments, n_samples, window_len, seed, pretrain=False)


# ---------------------------------------------------------------------------
# Manifest handling

@dataclass
class ManifestEntry:
    file: str
    kind: str
    split: str  # train | validation


def write_manifest(path, entries, tau_s: float):
    doc = {
        "tau_s": float(tau_s),
        "experiments": [
            {"file": e.file, "kind": e.kind, "split": e.split} for e in entries
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def read_manifest(path):
    """Returns (tau_s, list of ManifestEntry)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or "tau_s" not in doc or "experiments" not in doc:
        raise DataFormatError(f"{path}: not a dataset manifest")
    entries = []
    for rec in doc["experiments"]:
        unknown = set(rec) - {"file", "kind", "split"}
        if unknown:
            raise DataFormatError(f"{path}: unknown manifest keys {sorted(unknown)}")
        if rec["kind"] not in KINDS:
            raise DataFormatError(f"{path}: unknown kind {rec['kind']!r}")
        if rec["split"] not in ("train", "validation"):
            raise DataFormatError(f"{path}: unknown split {rec['split']!r}")
        entries.append(ManifestEntry(file=rec["file"], kind=rec["kind"],
                                     split=rec["split"]))
    return float(doc["tau_s"]), entries


def load_split(manifest_path, split: str, speed_tol: float = DEFAULT_SPEED_TOL,
               window: int = DEFAULT_EQUILIBRIUM_WINDOW) -> list:
    """Load and annotate every experiment of one split of a manifest."""
    manifest_path = Path(manifest_path)
    tau_s, entries = read_manifest(manifest_path)
    experiments = []
    next_id = 0
    for entry in entries:
        if entry.split != split:
            continue
        path = manifest_path.parent / entry.file
        experiments.append(
            load_experiment(path, tau_s, id=next_id, kind=entry.kind,
                            speed_tol=speed_tol, window=window)
        )
        next_id += 1
    return experiments
