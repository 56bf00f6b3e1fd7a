"""
Runtime and memory probe for the attention kernels
time_ns is the best forward (inference) time over the repetitions; base_ns is
the same measurement at feature width baseline_d, which holds the work that
does not grow with d (patch sorting, the softmax over k, per-call overhead);
work_ns = time_ns - base_ns is what the slopes are fitted on. peak_bytes is the
traced allocation peak of one forward + backward pass.
"""

import time
import tracemalloc
from typing import Iterable, List, Sequence

import numpy as np
import pandas as pd

from attention.kernels import AttentionLayer
from attention.kinds import AttentionKind
from attention.neighborhood import knn
from diffcore import ops
from diffcore.nn import ParameterSet
from diffcore.tensor import Tensor, backward, no_grad

DEFAULT_KINDS = (
    AttentionKind.NORMALIZED_MATRIX,
    AttentionKind.SCALAR_DOT,
    AttentionKind.VECTOR,
    AttentionKind.POINT_CONV,
)

COLUMNS = ["kind", "k", "d", "time_ns", "base_ns", "work_ns", "peak_bytes"]


def _best_time(layer: AttentionLayer, features: np.ndarray, nbr, reps: int) -> int:
    best = None
    with no_grad():
        layer(Tensor(features), nbr)  # warm-up
        for _ in range(reps):
            start = time.perf_counter_ns()
            layer(Tensor(features), nbr)
            elapsed = time.perf_counter_ns() - start
            best = elapsed if best is None else min(best, elapsed)
    return best


def _peak_bytes(layer: AttentionLayer, features: np.ndarray, nbr) -> int:
    tracemalloc.start()
    try:
        tracemalloc.reset_peak()
        x = Tensor(features, requires_grad=True)
        loss = ops.sum(layer(x, nbr))
        backward(loss)
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    return peak


def complexity_probe(
    kinds: Iterable[AttentionKind] = DEFAULT_KINDS,
    k_values: Sequence[int] = (16,),
    d_values: Sequence[int] = (8, 12, 16, 24, 32),
    n_points: int = 1024,
    reps: int = 5,
    hidden: int = 8,
    seed: int = 0,
    baseline_d: int = 1,
    verbose: bool = False,
) -> pd.DataFrame:
    """
    Time and memory of every kernel over a (k, d) grid

    Weight networks use a fixed hidden width so the measured growth in d comes
    from the kernels themselves.

    Args:
        kinds: Kernels to measure
        k_values: Patch sizes
        d_values: Feature widths
        n_points: Anchors per instance
        reps: Timed repetitions (best is kept)
        hidden: Weight-network hidden width
        seed: Seed for points, features and parameters
        baseline_d: Feature width of the per-(kind, k) baseline timing
        verbose: Print one line per measurement

    Returns:
        DataFrame with columns kind, k, d, time_ns, base_ns, work_ns, peak_bytes
    """
    kinds = [AttentionKind(kind) for kind in kinds]
    if not kinds or not list(k_values) or not list(d_values):
        raise ValueError("complexity_probe needs at least one kind, one k and one d")
    if baseline_d < 1:
        raise ValueError(f"baseline_d must be >= 1, got {baseline_d}")
    rng = np.random.default_rng(seed)
    points = rng.uniform(-0.5, 0.5, size=(n_points, 3))
    base_features = rng.normal(size=(n_points, baseline_d))

    def layer_for(kind: AttentionKind, d: int) -> AttentionLayer:
        return AttentionLayer(ParameterSet(), "probe", kind, d, np.random.default_rng(seed), hidden=hidden)

    rows: List[dict] = []
    for k in k_values:
        nbr = knn(points, k)
        base = {kind: _best_time(layer_for(kind, baseline_d), base_features, nbr, reps) for kind in kinds}
        for d in d_values:
            features = rng.normal(size=(n_points, d))
            for kind in kinds:
                layer = layer_for(kind, d)
                time_ns = _best_time(layer, features, nbr, reps)
                peak = _peak_bytes(layer, features, nbr)
                rows.append(
                    {
                        "kind": kind.value,
                        "k": k,
                        "d": d,
                        "time_ns": time_ns,
                        "base_ns": base[kind],
                        "work_ns": max(time_ns - base[kind], 1),
                        "peak_bytes": peak,
                    }
                )
                if verbose:
                    print(
                        f"[bench] {kind.value:<20} k={k:<3} d={d:<3} {time_ns / 1e6:9.3f} ms "
                        f"(base {base[kind] / 1e6:.3f} ms) {peak / 2**20:9.2f} MiB"
                    )
    return pd.DataFrame(rows, columns=COLUMNS)


def fit_slopes(table: pd.DataFrame) -> pd.DataFrame:
    """
    Log-log slopes of kernel time against d (per fixed k) and against k (per fixed d)

    Fits use work_ns when the table has it, time_ns otherwise.

    Returns:
        DataFrame indexed by kind with d_slope and k_slope (mean over the fixed
        values that have at least two points; NaN when none do)
    """
    measure = "work_ns" if "work_ns" in table.columns else "time_ns"

    def slope(frame: pd.DataFrame, by: str, against: str) -> float:
        fits = []
        for _, group in frame.groupby(by):
            if group[against].nunique() >= 2:
                fits.append(np.polyfit(np.log(group[against]), np.log(group[measure]), 1)[0])
        return float(np.mean(fits)) if fits else float("nan")

    rows = []
    for kind, frame in table.groupby("kind", sort=False):
        rows.append({"kind": kind, "d_slope": slope(frame, "k", "d"), "k_slope": slope(frame, "d", "k")})
    return pd.DataFrame(rows).set_index("kind")


def doubling_ratios(table: pd.DataFrame, over: str = "k") -> pd.DataFrame:
    """
    Kernel-time ratio between a value of `over` and half that value, others fixed

    Returns:
        DataFrame with kind, the fixed column, `over` (the larger value) and ratio
    """
    if over not in ("k", "d"):
        raise ValueError(f"over must be 'k' or 'd', got {over!r}")
    fixed = "d" if over == "k" else "k"
    measure = "work_ns" if "work_ns" in table.columns else "time_ns"
    times = table.set_index(["kind", fixed, over])[measure]
    rows = []
    for (kind, held, value), current in times.items():
        if value % 2 == 0 and (kind, held, value // 2) in times.index:
            rows.append({"kind": kind, fixed: held, over: value, "ratio": current / times[(kind, held, value // 2)]})
    return pd.DataFrame(rows, columns=["kind", fixed, over, "ratio"])
