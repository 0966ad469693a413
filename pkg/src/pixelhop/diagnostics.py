"""Saab energy curves and convergence of covariance and filters with data size."""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cascade import PixelHop, fit_unit, gather_neighborhood, max_pool
from .exceptions import ArgumentError
from .saab import CovarianceAccumulator, cov_delta, dc_kernel, filter_cosine, select_kernel_count

ENERGY_MARKERS = (0.95, 0.96, 0.97, 0.98, 0.99)


def energy_curve(eigenvalues, thresholds=ENERGY_MARKERS):
    """Cumulative AC energy ratio and the kernel count each threshold selects.

    A spectrum with no energy yields an all-ones curve and zero kernels.
    """
    ev = np.clip(np.asarray(eigenvalues, dtype=np.float64), 0.0, None)
    total = ev.sum()
    cumulative = np.cumsum(ev) / total if total > 0 else np.ones_like(ev)
    markers = {float(t): select_kernel_count(ev, t) for t in thresholds}
    return cumulative, markers


@dataclass
class EnergyDiagnostics:
    group: int
    unit: int
    eigenvalues: np.ndarray
    cumulative: np.ndarray
    markers: dict
    kept: int


def diagnostics_energy(cascades, thresholds=ENERGY_MARKERS):
    """Energy curve of every unit of every fitted cascade (a PixelHop or a list of them)."""
    if isinstance(cascades, PixelHop):
        cascades = [cascades]
    out = []
    for g, cascade in enumerate(cascades):
        for u, unit in enumerate(cascade.units_):
            ev = unit.saab.eigenvalues_
            cumulative, markers = energy_curve(ev, thresholds)
            out.append(EnergyDiagnostics(g, u + 1, ev, cumulative, markers,
                                         len(unit.saab.ac_kernels_)))
    return out


def write_energy_csv(diags, out_dir):
    """One ``energy_g<G>_unit<U>.csv`` per unit plus ``energy_markers.csv``; returns paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for d in diags:
        path = out_dir / f"energy_g{d.group}_unit{d.unit}.csv"
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["filter_index", "eigenvalue", "log10_eigenvalue", "cumulative_ratio"])
            for k, (ev, cum) in enumerate(zip(d.eigenvalues, d.cumulative), start=1):
                w.writerow([k, repr(float(ev)),
                            repr(float(np.log10(ev))) if ev > 0 else "-inf", repr(float(cum))])
        paths.append(path)
    path = out_dir / "energy_markers.csv"
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["group", "unit", "threshold", "n_ac_filters"])
        for d in diags:
            for t, k in d.markers.items():
                w.writerow([d.group, d.unit, t, k])
    paths.append(path)
    return paths


def remove_dc(patches):
    """Project out the constant direction of every row."""
    patches = np.asarray(patches, dtype=np.float64)
    dc = dc_kernel(patches.shape[1])
    return patches - np.outer(patches @ dc, dc)


def covariance_deltas(samples, schedule):
    """``cov_delta`` between covariances of consecutive prefixes ``samples[:t]``.

    Returns one value per schedule point after the first.
    """
    schedule = _check_schedule(schedule, len(samples))
    acc = CovarianceAccumulator(np.asarray(samples).shape[1])
    previous, deltas, done = None, [], 0
    for t in schedule:
        acc.push_batch(samples[done:t])
        done = t
        cov = acc.covariance()
        if previous is not None:
            deltas.append(cov_delta(previous, cov))
        previous = cov
    return np.array(deltas)


def _check_schedule(schedule, limit):
    schedule = [int(t) for t in schedule]
    if not schedule:
        raise ArgumentError("schedule is empty")
    if any(b <= a for a, b in zip(schedule, schedule[1:])) or schedule[0] < 1:
        raise ArgumentError(f"schedule must be strictly increasing positive counts, got {schedule}")
    if schedule[-1] > limit:
        raise ArgumentError(f"schedule point {schedule[-1]} exceeds the {limit} available samples")
    return schedule


@dataclass
class ConvergenceDiagnostics:
    unit: int
    schedule: list
    n_patches: list
    delta_mean: np.ndarray
    delta_std: np.ndarray
    cosine_mean: np.ndarray
    cosine_min: np.ndarray
    reference_kernels: int
    runs: int = 5
    extra: dict = field(default_factory=dict)


def _unit_inputs(cascade, X, upto, batch_size=500):
    """Inputs of units ``1..upto`` for images ``X`` (float32, list indexed by unit)."""
    maps = [np.asarray(X, dtype=np.float32)]
    for unit in cascade.units_[:upto - 1]:
        cur = maps[-1]
        nxt = np.empty((len(cur), cur.shape[1] // 2, cur.shape[2] // 2, unit.output_spectral),
                       dtype=np.float32)
        for s in range(0, len(cur), batch_size):
            nxt[s:s + batch_size] = max_pool(unit.apply(cur[s:s + batch_size]))
        maps.append(nxt)
    return maps


def diagnostics_convergence(X, schedule, n_units=4, energy_threshold=0.95,
                            patch_sample_limit=None, padding="edge", runs=5, n_filters=5,
                            random_state=0, compute_delta=True, units=None, batch_size=500):
    """Covariance and filter convergence as the number of training images grows.

    A reference cascade is fitted on all images. For each run, images are
    visited in a seeded random order; at every schedule point ``t`` (image
    counts) unit ``i`` is refitted on the first ``t`` images, using the
    reference cascade to produce that unit's inputs, and its leading AC
    filters are compared with the reference ones. The covariance of the
    DC-removed 3x3 cuboids is accumulated along the same order and the
    dimension-normalised Frobenius change between consecutive schedule
    points is recorded. Results are averaged over ``runs`` seeds.

    Parameters
    ----------
    X : ndarray of shape (N, S, S, C)
    schedule : increasing image counts, the last at most ``N``
    patch_sample_limit : int or None, default=None
        Patches per unit fit. ``None`` uses every patch, for the reference
        and for each subset, so differences reflect the image count alone.
    n_filters : int
        Number of leading AC filters compared.
    units : iterable of 1-based unit numbers, default all
    """
    X = np.asarray(X)
    schedule = _check_schedule(schedule, len(X))
    units = list(units or range(1, n_units + 1))
    if any(not 1 <= u <= n_units for u in units):
        raise ArgumentError(f"units must lie in 1..{n_units}, got {units}")
    reference = PixelHop(n_units=n_units, energy_threshold=energy_threshold, padding=padding,
                         patch_sample_limit=patch_sample_limit, batch_size=batch_size,
                         random_state=random_state).fit(X)
    unit_seeds = np.random.SeedSequence(random_state).generate_state(n_units)
    run_seeds = np.random.SeedSequence([random_state, 1]).generate_state(runs)
    t_max = schedule[-1]
    results = {u: {"delta": [], "cos": []} for u in units}
    for r in range(runs):
        order = np.random.default_rng(run_seeds[r]).permutation(len(X))[:t_max]
        maps = _unit_inputs(reference, X[order], max(units), batch_size)
        for u in units:
            ref_kernels = reference.units_[u - 1].saab.ac_kernels_
            m = min(n_filters, len(ref_kernels))
            inputs = maps[u - 1]
            cos_rows = []
            for t in schedule:
                # sorted subset: at t = N this is exactly the reference training set
                subset = inputs[np.argsort(order[:t], kind="stable")]
                unit = fit_unit(subset, u, energy_threshold, patch_sample_limit, padding,
                                int(unit_seeds[u - 1]))
                kernels = unit.saab.ac_kernels_
                row = [filter_cosine(kernels[k], ref_kernels[k]) if k < len(kernels) else 0.0
                       for k in range(m)]
                cos_rows.append(row)
            results[u]["cos"].append(cos_rows)
            if compute_delta:
                results[u]["delta"].append(_delta_series(inputs, schedule, padding, batch_size))
    out = []
    for u in units:
        cos = np.array(results[u]["cos"])  # runs x schedule x filters
        sizes = reference.spatial_sizes_[u - 1] ** 2
        delta = np.array(results[u]["delta"]) if compute_delta else np.full((runs, len(schedule) - 1), np.nan)
        out.append(ConvergenceDiagnostics(
            unit=u, schedule=schedule, n_patches=[t * sizes for t in schedule],
            delta_mean=delta.mean(axis=0), delta_std=delta.std(axis=0),
            cosine_mean=cos.mean(axis=0), cosine_min=cos.min(axis=0),
            reference_kernels=len(reference.units_[u - 1].saab.ac_kernels_), runs=runs))
    return out


def _delta_series(maps, schedule, padding, batch_size):
    k = maps.shape[3]
    acc = CovarianceAccumulator(9 * k)
    done, previous, deltas = 0, None, []
    for t in schedule:
        for s in range(done, t, batch_size):
            patches = gather_neighborhood(maps[s:min(s + batch_size, t)], padding)
            acc.push_batch(remove_dc(patches.reshape(-1, 9 * k)))
        done = t
        cov = acc.covariance()
        if previous is not None:
            deltas.append(cov_delta(previous, cov))
        previous = cov
    return deltas


def write_convergence_csv(diags, out_dir):
    """``delta_unit<U>.csv`` and ``cosine_unit<U>.csv`` per unit; returns paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for d in diags:
        path = out_dir / f"delta_unit{d.unit}.csv"
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["n_images", "n_patches", "delta_mean", "delta_std"])
            for i in range(1, len(d.schedule)):
                w.writerow([d.schedule[i], d.n_patches[i], repr(float(d.delta_mean[i - 1])),
                            repr(float(d.delta_std[i - 1]))])
        paths.append(path)
        path = out_dir / f"cosine_unit{d.unit}.csv"
        n = d.cosine_mean.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["n_images"] + [f"filter{k + 1}_mean" for k in range(n)]
                       + [f"filter{k + 1}_min" for k in range(n)])
            for i, t in enumerate(d.schedule):
                w.writerow([t] + [repr(float(v)) for v in d.cosine_mean[i]]
                           + [repr(float(v)) for v in d.cosine_min[i]])
        paths.append(path)
    return paths
