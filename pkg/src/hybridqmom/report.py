"""Error reports and plot-data tables comparing closure runs with Monte Carlo.

A *group* is one closure configuration, named ``"<mode>_n<N>"`` (for example
``baseline_n4`` or ``hybrid_n5``).  Errors of every group are compared with
the 4-node baseline, which is the reference for Q and C.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field

import numpy as np

from . import io
from .metrics import UndefinedMetric, default_edges, histogram, improvement_q, l2_error, window_slice
from .qbmm import MOMENT_NAMES, TARGET_NAMES

ALL_NAMES = MOMENT_NAMES + TARGET_NAMES
REFERENCE_GROUP = "baseline_n4"
GROUP_RE = re.compile(r"^(baseline|hybrid)_n(\d+)$")
N_SERIES_CASES = 4


def group_name(mode, n_nodes):
    return f"{mode}_n{int(n_nodes)}"


def parse_group(name):
    m = GROUP_RE.match(name)
    if not m:
        raise ValueError(f"not a run group name: {name!r}")
    return m.group(1), int(m.group(2))


def _clean(x):
    """JSON-safe float (NaN/inf become None)."""
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


@dataclass
class CaseResult:
    index: int
    split: str
    eps: dict = field(default_factory=dict)      # group -> {moment: eps or None}
    failed: dict = field(default_factory=dict)   # group -> error message


@dataclass
class ErrorReport:
    groups: list
    cases: list
    window: tuple | None
    q: dict = field(default_factory=dict)        # group -> case index -> {moment: Q}
    c: dict = field(default_factory=dict)        # group -> {moment: C}
    histograms: dict = field(default_factory=dict)

    def to_dict(self):
        summary = {}
        for g in self.groups:
            summary[g] = {}
            for split in ("train", "test"):
                rows = [c for c in self.cases if c.split == split and g in c.eps]
                entry = {"count": len(rows), "failed": sum(1 for c in self.cases if c.split == split and g in c.failed)}
                for name in ALL_NAMES:
                    vals = [c.eps[g][name] for c in rows if c.eps[g].get(name) is not None]
                    entry[f"mean_eps_{name}"] = _clean(np.mean(vals)) if vals else None
                    entry[f"median_eps_{name}"] = _clean(np.median(vals)) if vals else None
                    qs = [self.q[g][c.index][name] for c in rows
                          if g in self.q and c.index in self.q[g] and self.q[g][c.index].get(name) is not None]
                    if qs and g != REFERENCE_GROUP:
                        entry[f"mean_Q_{name}"] = _clean(np.mean(qs))
                        entry[f"frac_Q_above_50_{name}"] = _clean(np.mean(np.asarray(qs) > 50.0))
                summary[g][split] = entry
        return {
            "schema_version": io.SCHEMA_VERSION,
            "reference_group": REFERENCE_GROUP,
            "groups": list(self.groups),
            "moments": list(ALL_NAMES),
            "window": list(self.window) if self.window else None,
            "cases": [
                {
                    "index": c.index,
                    "split": c.split,
                    "eps": {g: {k: _clean(v) for k, v in e.items()} for g, e in sorted(c.eps.items())},
                    "Q": {g: {k: _clean(v) for k, v in self.q[g][c.index].items()}
                          for g in sorted(self.q) if c.index in self.q[g]},
                    "failed": dict(sorted(c.failed.items())),
                }
                for c in self.cases
            ],
            "summary": summary,
            "C_test": {g: {k: _clean(v) for k, v in cs.items()} for g, cs in sorted(self.c.items())},
        }


def case_errors(run_series, mc_series, times, window=None):
    """``{moment: eps}`` over the nine compared moments; None where undefined."""
    mask = window_slice(times, window)
    mask[0] = False
    out = {}
    for k, name in enumerate(ALL_NAMES):
        pred, ref = run_series[mask, k], mc_series[mask, k]
        try:
            val = l2_error(pred, ref)
        except UndefinedMetric:
            val = None
        out[name] = val if val is None or math.isfinite(val) else None
    return out


def q_values(eps_ref, eps_new):
    out = {}
    for name in ALL_NAMES:
        a, b = eps_ref.get(name), eps_new.get(name)
        out[name] = None if a is None or b is None or a == 0 else improvement_q(a, b)
    return out


def c_values(cases, group, split="test"):
    out = {}
    for name in ALL_NAMES:
        ml, ref = [], []
        for c in cases:
            if c.split != split or group not in c.eps or REFERENCE_GROUP not in c.eps:
                continue
            a, b = c.eps[group].get(name), c.eps[REFERENCE_GROUP].get(name)
            if a is not None and b is not None:
                ml.append(a)
                ref.append(b)
        den = float(np.median(ref)) if ref else 0.0
        out[name] = float(np.median(ml)) / den if den > 0 else None
    return out


def build_report(runs, mc, split, window=None):
    """Assemble an ``ErrorReport``.

    ``runs`` maps group -> index -> ``(times, table (nt, 9))`` or an error
    string for failed runs; ``mc`` maps index -> ``(times, table, cp)``;
    ``split`` maps index -> ``"train"`` or ``"test"``.
    """
    groups = sorted(runs, key=lambda g: (parse_group(g)[0] != "baseline", parse_group(g)[1]))
    cases = []
    for idx in sorted(mc):
        times, ref = mc[idx][:2]
        case = CaseResult(idx, split.get(idx, "unused"))
        for g in groups:
            entry = runs[g].get(idx)
            if entry is None:
                continue
            if isinstance(entry, str):
                case.failed[g] = entry
                continue
            rt, table = entry
            if len(rt) != len(times) or np.max(np.abs(rt - times)) > 1e-9:
                case.failed[g] = "time grid differs from the Monte Carlo record"
                continue
            case.eps[g] = case_errors(table, ref, times, window)
        cases.append(case)
    rep = ErrorReport(groups, cases, tuple(window) if window else None)
    for g in groups:
        if g == REFERENCE_GROUP:
            continue
        rep.q[g] = {c.index: q_values(c.eps[REFERENCE_GROUP], c.eps[g])
                    for c in cases if g in c.eps and REFERENCE_GROUP in c.eps}
        rep.c[g] = c_values(cases, g)
        test_q = {name: [rep.q[g][c.index][name] for c in cases
                         if c.split == "test" and c.index in rep.q[g] and rep.q[g][c.index][name] is not None]
                  for name in ALL_NAMES}
        rep.histograms[g] = {}
        for name, vals in test_q.items():
            edges = default_edges(vals)
            rep.histograms[g][name] = (edges, histogram(vals, edges))
    return rep


# -- output --------------------------------------------------------------------


def series_window(times, window):
    if window is not None:
        return window_slice(times, window)
    t_end = float(times[-1])
    return window_slice(times, (max(0.0, t_end - 10.0), t_end))


def write_report(out_dir, rep, runs, mc, manifest):
    """Write ``report.json``, histogram tables and plot-data tables."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def put_csv(name, columns, table):
        io.write_series_csv(os.path.join(out_dir, name), columns, table)
        written.append(name)

    # improvement histograms over the test set
    for g, per in sorted(rep.histograms.items()):
        for name, (edges, counts) in per.items():
            put_csv(f"hist_Q_{g}_{name}.csv", ("bin_lo", "bin_hi", "count"),
                    np.column_stack([edges[:-1], edges[1:], counts]))

    hybrid_groups = [g for g in rep.groups if parse_group(g)[0] == "hybrid"]
    test_cases = [c for c in rep.cases if c.split == "test"]

    # per-case errors of the low-order and target moments
    for fig, names in (("moments", MOMENT_NAMES), ("targets", TARGET_NAMES)):
        for name in names:
            cols = ["case"] + [f"eps_{g}" for g in rep.groups]
            rows = []
            for c in test_cases:
                rows.append([c.index] + [
                    np.nan if c.eps.get(g, {}).get(name) is None else c.eps[g][name] for g in rep.groups
                ])
            if rows:
                put_csv(f"{fig}_eps_{name}.csv", cols, np.array(rows, dtype=float))

    # time series on the comparison window for the first few test cases
    shown = [c for c in test_cases if all(g in c.eps for g in rep.groups)][:N_SERIES_CASES]
    for c in shown:
        times, ref = mc[c.index][:2]
        mask = series_window(times, rep.window)
        for fig, names, offset in (("moments", MOMENT_NAMES, 0), ("targets", TARGET_NAMES, len(MOMENT_NAMES))):
            for k, name in enumerate(names):
                cols = ["t", "mc"] + list(rep.groups)
                table = [times[mask], ref[mask, offset + k]]
                table += [runs[g][c.index][1][mask, offset + k] for g in rep.groups]
                put_csv(f"{fig}_series_case{c.index:03d}_{name}.csv", cols, np.column_stack(table))
        put_csv(f"moments_series_case{c.index:03d}_cp.csv", ("t", "cp"),
                np.column_stack([times[mask], mc_cp(mc, c.index)[mask]]))

    # median error ratio against node count
    if hybrid_groups:
        cols = ["n_nodes"] + [f"C_{name}" for name in ALL_NAMES]
        rows = [[parse_group(g)[1]] + [np.nan if rep.c[g][n] is None else rep.c[g][n] for n in ALL_NAMES]
                for g in hybrid_groups]
        put_csv("c_by_nodes.csv", cols, np.array(rows, dtype=float))

    doc = rep.to_dict()
    doc["files"] = sorted(written)
    doc["provenance"] = manifest
    io.write_json(os.path.join(out_dir, "report.json"), doc)
    return doc


def mc_cp(mc, index):
    entry = mc[index]
    return entry[2] if len(entry) > 2 else np.full(len(entry[0]), np.nan)
