"""File-level pipeline steps behind the command line.

Every step reads its inputs from disk, writes its outputs atomically and
leaves a JSON manifest next to them.  Directory layout::

    forcings.json (+ forcings.manifest.json)
    data/      mc_000.csv ...           manifest.json
    model.ckpt (+ model.manifest.json)
    runs/      baseline_n4_000.csv ...  baseline_n4.manifest.json
               hybrid_n4_000.csv ...    hybrid_n4.manifest.json
    report/    report.json, hist_Q_*.csv, *_eps_*.csv, *_series_*.csv, c_by_nodes.csv
"""

from __future__ import annotations

import glob
import logging
import os

import numpy as np

from . import io
from .closure import checkpoint
from .closure.training import Hyperparams, train
from .errors import (
    ConfigError, DomainError, IntegrationError, MissingInputError, NonRealizableMoments, SchemaError,
)
from .ensemble import EnsembleConfig, check_record, ensemble_seeds, run_many, split_indices
from .forcing import sample_forcings
from .integrator import IntegratorConfig, gaussian_initial_moments
from .integrator import run as evolve_moments
from .report import REFERENCE_GROUP, GROUP_RE, build_report, group_name, write_report

log = logging.getLogger(__name__)

MC_MANIFEST = "manifest.json"

SCALES = {
    # seconds; exercises every step
    "smoke": dict(count=4, n_train=2, n_bubbles=50, t_end=2.0, epochs=2, window=64, learning_rate=1e-3, nodes=(4,)),
    # the desk-scale reproduction used by the acceptance suite
    "desk": dict(count=20, n_train=10, n_bubbles=200, t_end=20.0, epochs=100, window=256, learning_rate=1e-3, nodes=(4,)),
    # full study size; days on a single core
    "full": dict(count=200, n_train=50, n_bubbles=1000, t_end=50.0, epochs=500, window=256, learning_rate=1e-5,
                  nodes=(4, 5, 6, 7)),
}


def _as_dict(cfg, what):
    if cfg is None:
        return {}
    if isinstance(cfg, (str, os.PathLike)):
        cfg = io.read_json(cfg)
    if not isinstance(cfg, dict):
        raise ConfigError(f"{what} must be a JSON object")
    return dict(cfg)


# -- forcing -------------------------------------------------------------------


def forcing_sample(count, seed, out, mode="cap"):
    if count < 1:
        raise ConfigError("count must be positive")
    signals = sample_forcings(count, seed, mode)
    io.write_forcings(out, signals)
    man = io.RunManifest("forcing sample", config={"count": count, "mode": mode}, seeds={"master": seed},
                         outputs=[os.path.basename(out)])
    man.write(io.manifest_path(out))
    return signals


# -- Monte Carlo ---------------------------------------------------------------


def mc_config(cfg):
    """Split an MC config object into ``(EnsembleConfig, n_train)``."""
    d = _as_dict(cfg, "MC config")
    n_train = d.pop("n_train", None)
    return EnsembleConfig.from_dict(d), n_train


def mc_run(forcings_path, config, out_dir):
    signals = io.read_forcings(forcings_path)
    cfg, n_train = mc_config(config)
    count = len(signals)
    if count < 2:
        raise ConfigError("need at least two forcings to form a train/test split")
    n_train = count // 2 if n_train is None else int(n_train)
    train_idx, test_idx = split_indices(count, n_train, cfg.seed)
    seeds = ensemble_seeds(count, cfg.seed)
    records = run_many(cfg, signals, seeds)
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for k, rec in enumerate(records):
        try:
            check_record(rec)
        except ValueError as exc:
            raise IntegrationError(f"ensemble {k}: {exc}") from exc
        name = f"mc_{k:03d}.csv"
        io.write_record(os.path.join(out_dir, name), rec)
        entries.append({"index": k, "file": name, "forcing_seed": signals[k].seed, "ensemble_seed": seeds[k]})
    man = io.RunManifest(
        "mc run",
        config={**cfg.to_dict(), "n_train": n_train},
        seeds={"master": cfg.seed, "forcing": [s.seed for s in signals], "ensemble": seeds},
        outputs=[e["file"] for e in entries],
        extra={
            "kind": "mc",
            "records": entries,
            "split": {"train": train_idx, "test": test_idx},
            "config_hash": cfg.digest(),
            "non_source_defaults": ["sigma_R", "sigma_Rdot"],
        },
    )
    man.add_input(forcings_path, "forcings")
    man.write(os.path.join(out_dir, MC_MANIFEST))
    return records


def load_mc(data_dir):
    """Return ``(manifest, {index: TrajectoryRecord})``."""
    io.require_dir(data_dir)
    path = os.path.join(data_dir, MC_MANIFEST)
    man = io.read_json(path)
    io.check_schema_version(man, path)
    if man.get("kind") != "mc":
        raise SchemaError(f"{path}: not a Monte Carlo manifest")
    records = {}
    try:
        for e in man["records"]:
            records[int(e["index"])] = io.read_record(os.path.join(data_dir, e["file"]), e)
        man["split"]["train"], man["split"]["test"]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"{path}: missing field {exc}") from exc
    return man, records


# -- training ------------------------------------------------------------------


def hyper_config(cfg):
    """Split a hyperparameter object into ``(Hyperparams, seed)``."""
    d = _as_dict(cfg, "hyperparameters")
    seed = int(d.pop("seed", 0))
    return Hyperparams.from_dict(d), seed


def train_model(data_dir, hyper, out, seed=None, progress=None):
    man, records = load_mc(data_dir)
    hp, cfg_seed = hyper_config(hyper)
    seed = cfg_seed if seed is None else seed
    train_recs = [records[i] for i in man["split"]["train"]]
    model, history = train(train_recs, hp, seed=seed, callback=progress)
    checkpoint.save(model, out)
    tm = io.RunManifest("train", config=hp.to_dict(), seeds={"train": seed},
                        outputs=[os.path.basename(out)], extra={"loss_history": history})
    tm.add_input(data_dir, "data")
    tm.write(io.manifest_path(out))
    return model, history


# -- evolution -----------------------------------------------------------------


def integrator_config(cfg, **overrides):
    d = _as_dict(cfg, "integrator config")
    d.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return IntegratorConfig(**d)
    except TypeError as exc:
        raise ConfigError(f"invalid integrator config: {exc}") from exc


def evolve(mode, forcings_path, out_dir, model_path=None, mc_dir=None, config=None, n_nodes=None):
    """Integrate the moment equations for every forcing in a file.

    Initial moments come from the matching Monte Carlo record at ``t = 0``
    when ``mc_dir`` is given, otherwise from independent normals with the
    ensemble defaults.  A run that fails numerically is recorded as failed
    in the manifest and skipped; the step itself still succeeds.
    """
    if mode not in ("baseline", "hybrid"):
        raise ConfigError(f"unknown mode {mode!r}")
    signals = io.read_forcings(forcings_path)
    model = None
    if mode == "hybrid":
        if model_path is None:
            raise ConfigError("hybrid mode needs a model checkpoint")
        if not os.path.exists(model_path):
            raise MissingInputError(f"input not found: {model_path}")
        model = checkpoint.load(model_path)
        n_nodes = model.n_nodes
    d = _as_dict(config, "integrator config")
    initial = {}
    mc_man = None
    if mc_dir is not None:
        mc_man, records = load_mc(mc_dir)
        if len(records) != len(signals):
            raise ConfigError(f"{len(signals)} forcings but {len(records)} Monte Carlo records")
        for e in mc_man["records"]:
            if e["forcing_seed"] != signals[e["index"]].seed:
                raise ConfigError(f"forcing {e['index']} does not match the Monte Carlo data")
        initial = {k: rec.moments[0] for k, rec in records.items()}
        d.setdefault("t_end", float(mc_man["config"]["t_end"]))
    cfg = integrator_config(d, n_nodes=n_nodes)
    ens = EnsembleConfig()
    group = group_name(mode, cfg.n_nodes)
    os.makedirs(out_dir, exist_ok=True)
    runs = []
    for k, sig in enumerate(signals):
        y0 = initial.get(k)
        if y0 is None:
            y0 = gaussian_initial_moments(ens.sigma_R, ens.sigma_Rdot)
        entry = {"index": k, "forcing_seed": sig.seed}
        try:
            res = evolve_moments(y0, sig, model, cfg)
        except (IntegrationError, NonRealizableMoments, DomainError) as exc:
            log.warning("%s run %d failed: %s", group, k, exc)
            entry.update(status="failed", error=str(exc), file=None)
            runs.append(entry)
            continue
        name = f"{group}_{k:03d}.csv"
        io.write_trajectory(os.path.join(out_dir, name), res.times, res.moments, res.target_moments, res.cp)
        entry.update(status="ok", file=name, flagged=res.flagged, rejected=int(res.rejected),
                     steps=len(res.step_sizes), min_dt=float(min(res.step_sizes)) if res.step_sizes else None)
        runs.append(entry)
    cfg_dict = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    man = io.RunManifest("evolve", config=cfg_dict, outputs=[r["file"] for r in runs if r["file"]],
                         extra={"kind": "runs", "mode": mode, "group": group, "runs": runs,
                                "initial": "mc" if mc_dir is not None else "gaussian"})
    man.add_input(forcings_path, "forcings")
    if model_path is not None:
        man.add_input(model_path, "model")
    man.write(os.path.join(out_dir, f"{group}.manifest.json"))
    return runs


def load_runs(runs_dir):
    """``{group: {index: (times, table (nt, 9)) or error string}}``."""
    io.require_dir(runs_dir)
    out = {}
    for path in sorted(glob.glob(os.path.join(runs_dir, "*.manifest.json"))):
        group = os.path.basename(path)[: -len(".manifest.json")]
        if not GROUP_RE.match(group):
            continue
        man = io.read_json(path)
        io.check_schema_version(man, path)
        entries = {}
        for r in man.get("runs", []):
            if r.get("status") != "ok":
                entries[int(r["index"])] = r.get("error", "failed")
                continue
            times, moments, targets, _ = io.read_trajectory(os.path.join(runs_dir, r["file"]))
            entries[int(r["index"])] = (times, np.column_stack([moments, targets]))
        out[group] = entries
    if not out:
        raise SchemaError(f"{runs_dir}: no run manifests found")
    if REFERENCE_GROUP not in out:
        raise SchemaError(f"{runs_dir}: the 4-node baseline runs ({REFERENCE_GROUP}) are required")
    return out


def report(runs_dir, mc_dir, out_dir, window=None):
    runs = load_runs(runs_dir)
    mc_man, records = load_mc(mc_dir)
    mc = {k: (rec.times, np.column_stack([rec.moments, rec.target_moments]), rec.cp) for k, rec in records.items()}
    split = {i: "train" for i in mc_man["split"]["train"]}
    split.update({i: "test" for i in mc_man["split"]["test"]})
    rep = build_report(runs, mc, split, window)
    # no timestamps, paths or manifest digests: the report must be byte-reproducible
    prov = io.RunManifest("report", config={"window": list(window) if window else None})
    prov.add_input(runs_dir, "runs", skip_manifests=True)
    prov.add_input(mc_dir, "mc", skip_manifests=True)
    return write_report(out_dir, rep, runs, mc, prov.to_dict(timestamps=False))


# -- full pipeline -------------------------------------------------------------


def repro(scale, seed, out, progress=None):
    if scale not in SCALES:
        raise ConfigError(f"unknown scale {scale!r}; choose from {sorted(SCALES)}")
    sc = SCALES[scale]
    os.makedirs(out, exist_ok=True)
    top = io.RunManifest("repro", config={"scale": scale, **{k: list(v) if isinstance(v, tuple) else v
                                                              for k, v in sc.items()}},
                         seeds={"master": seed})
    forcings = os.path.join(out, "forcings.json")
    forcing_sample(sc["count"], seed, forcings)

    mc_cfg = {"n_bubbles": sc["n_bubbles"], "t_end": sc["t_end"], "seed": seed, "n_train": sc["n_train"]}
    io.write_json(os.path.join(out, "mc.json"), mc_cfg)
    data = os.path.join(out, "data")
    mc_run(forcings, mc_cfg, data)

    runs = os.path.join(out, "runs")
    evolve("baseline", forcings, runs, mc_dir=data, n_nodes=4)
    for n in sc["nodes"]:
        hyper = {**Hyperparams(epochs=sc["epochs"], window=sc["window"], learning_rate=sc["learning_rate"],
                               n_nodes=n).to_dict(), "seed": seed}
        io.write_json(os.path.join(out, f"hyper_n{n}.json"), hyper)
        ckpt = os.path.join(out, f"model_n{n}.ckpt")
        train_model(data, hyper, ckpt, progress=progress)
        evolve("hybrid", forcings, runs, model_path=ckpt, mc_dir=data)
    doc = report(runs, data, os.path.join(out, "report"))
    top.outputs = ["forcings.json", "data", "runs", "report"] + [f"model_n{n}.ckpt" for n in sc["nodes"]]
    top.write(os.path.join(out, "manifest.json"))
    return doc
