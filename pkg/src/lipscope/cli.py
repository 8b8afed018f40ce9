"""Command line entry points: train, audit, regions, reproduce.

The train command expands a JSON experiment config into one run per
(task variant x seed), each living in its own directory with every
artifact an audit needs later. Audits, region maps and the figure
recipes are thin compositions over those directories; nothing here
computes anything the library modules cannot.

Exit codes: 0 ok, 2 invalid config or plane, 3 divergence, 4 missing
run artifacts (names the fix), 5 a bound refused to certify.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .errors import RefusalError
from .lipschitz import (
    audit_corollary2,
    audit_corollary3,
    audit_theorem1,
    first_layer_bound,
    write_summary,
)
from .network import forward_many, load_network, random_network
from .region_algebra import PatternMatrix, audit_theorem2, build_certificate
from .regionviz import SlicePlane, convergence_check, emit_svg, scan_regions, write_regions_csv
from .tasks import gen_corrupted_blobs, gen_sinusoid, load_dataset, save_dataset
from .training import DivergenceError, TrainConfig, load_run_log, run_training, save_run_log

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_MISSING = 4
EXIT_REFUSED = 5

# test sets draw fresh points from the task stream at seed + this offset
TEST_SEED_OFFSET = 0x7E57

AUDIT_NAMES = ("theorem1", "corollary2", "corollary3", "theorem2", "theorem3", "firstlayer")


class ConfigError(Exception):
    """Invalid experiment config; the message names the offending field."""


# ===== Config parsing =====
#
# Strict by design: unknown keys are errors, so a typoed field never
# silently falls back to a default.

_TRAIN_KEYS = {
    "lr", "epochs", "iterations", "batch_size", "loss", "dropout",
    "freeze_first_weights", "checkpoint_stride_epochs", "record_bias_trace",
    "stop_train_mse",
}

_AUDIT_DEFAULTS = {
    "tau_epochs": None,
    "delta": None,
    "windows": None,
    "n_probes": 200,
    "probe_seed": 0,
    "k_epochs": 10,
    "delta_conf": 0.05,
    "solve_budget": 40,
    "save_bias_trace": True,
}


def _require(mapping, key, path):
    if key not in mapping:
        raise ConfigError("%s.%s is required" % (path, key))
    return mapping[key]


def _check_keys(mapping, allowed, path):
    for key in mapping:
        if key not in allowed:
            raise ConfigError("%s.%s is not a recognized field" % (path, key))


def _int_field(value, path, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError("%s must be an integer" % path)
    if minimum is not None and value < minimum:
        raise ConfigError("%s must be >= %d" % (path, minimum))
    return int(value)


def _number_list(value, path):
    if not isinstance(value, list) or not value:
        raise ConfigError("%s must be a nonempty list" % path)
    out = []
    for i, v in enumerate(value):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError("%s[%d] must be a number" % (path, i))
        out.append(float(v))
    return out


def validate_config(raw):
    """Normalize a parsed experiment config; raises ConfigError."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(raw, {"task", "network", "train", "audit", "out_dir"}, "config")

    task = _require(raw, "task", "config")
    if not isinstance(task, dict):
        raise ConfigError("config.task must be an object")
    _check_keys(task, {"kind", "n_points", "seeds", "frequencies", "corruptions", "dim"}, "task")
    kind = _require(task, "kind", "task")
    if kind not in ("sinusoid", "blobs"):
        raise ConfigError("task.kind must be 'sinusoid' or 'blobs'")
    n_points = _int_field(_require(task, "n_points", "task"), "task.n_points", 1)
    seeds_raw = _require(task, "seeds", "task")
    if not isinstance(seeds_raw, list) or not seeds_raw:
        raise ConfigError("task.seeds must be a nonempty list")
    seeds = [_int_field(s, "task.seeds[%d]" % i) for i, s in enumerate(seeds_raw)]
    dim = _int_field(task.get("dim", 10), "task.dim", 2)
    if kind == "sinusoid":
        if "corruptions" in task:
            raise ConfigError("task.corruptions does not apply to sinusoid tasks")
        variants = _number_list(_require(task, "frequencies", "task"), "task.frequencies")
    else:
        if "frequencies" in task:
            raise ConfigError("task.frequencies does not apply to blob tasks")
        variants = _number_list(_require(task, "corruptions", "task"), "task.corruptions")
        for i, c in enumerate(variants):
            if not 0.0 <= c <= 1.0:
                raise ConfigError("task.corruptions[%d] must lie in [0, 1]" % i)

    net_spec = _require(raw, "network", "config")
    if not isinstance(net_spec, dict):
        raise ConfigError("config.network must be an object")
    _check_keys(net_spec, {"hidden", "head", "first_layer_identity", "seed_offset"}, "network")
    hidden_raw = _require(net_spec, "hidden", "network")
    if not isinstance(hidden_raw, list):
        raise ConfigError("network.hidden must be a list of layer widths")
    hidden = [_int_field(h, "network.hidden[%d]" % i, 1) for i, h in enumerate(hidden_raw)]
    head = _require(net_spec, "head", "network")
    if head not in ("identity", "sigmoid"):
        raise ConfigError("network.head must be 'identity' or 'sigmoid'")
    identity_first = net_spec.get("first_layer_identity", False)
    if not isinstance(identity_first, bool):
        raise ConfigError("network.first_layer_identity must be a boolean")
    seed_offset = _int_field(net_spec.get("seed_offset", 5000), "network.seed_offset")

    train = _require(raw, "train", "config")
    if not isinstance(train, dict):
        raise ConfigError("config.train must be an object")
    _check_keys(train, _TRAIN_KEYS, "train")
    if "seed" in train:
        raise ConfigError("train.seed is set per run from task.seeds")
    try:
        TrainConfig(seed=0, **train)
    except (TypeError, ValueError) as exc:
        raise ConfigError("train: %s" % exc) from exc
    loss = train.get("loss", "mse")
    if loss == "mse" and head != "identity":
        raise ConfigError("train.loss 'mse' needs network.head 'identity'")
    if loss == "bce":
        if head != "sigmoid":
            raise ConfigError("train.loss 'bce' needs network.head 'sigmoid'")
        if kind != "blobs":
            raise ConfigError("train.loss 'bce' needs binary labels (task.kind 'blobs')")

    audit = raw.get("audit", {})
    if not isinstance(audit, dict):
        raise ConfigError("config.audit must be an object")
    _check_keys(audit, set(_AUDIT_DEFAULTS), "audit")
    audit_spec = dict(_AUDIT_DEFAULTS)
    audit_spec.update(audit)
    if audit_spec["tau_epochs"] is not None:
        audit_spec["tau_epochs"] = _int_field(audit_spec["tau_epochs"], "audit.tau_epochs", 0)
    for key in ("n_probes", "probe_seed", "k_epochs", "solve_budget"):
        audit_spec[key] = _int_field(audit_spec[key], "audit.%s" % key)
    if audit_spec["n_probes"] < 1:
        raise ConfigError("audit.n_probes must be >= 1")
    if audit_spec["windows"] is not None:
        wins = audit_spec["windows"]
        if not isinstance(wins, list) or not wins:
            raise ConfigError("audit.windows must be a nonempty list of [start, end] epochs")
        for i, w in enumerate(wins):
            if (not isinstance(w, list) or len(w) != 2
                    or any(isinstance(v, bool) or not isinstance(v, int) for v in w)):
                raise ConfigError("audit.windows[%d] must be [start_epoch, end_epoch]" % i)
            if not 0 <= w[0] < w[1]:
                raise ConfigError("audit.windows[%d] must satisfy 0 <= start < end" % i)

    out_dir = raw.get("out_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise ConfigError("config.out_dir must be a string path")

    return {
        "task": {"kind": kind, "n_points": n_points, "seeds": seeds, "dim": dim,
                 ("frequencies" if kind == "sinusoid" else "corruptions"): variants},
        "network": {"hidden": hidden, "head": head,
                    "first_layer_identity": identity_first, "seed_offset": seed_offset},
        "train": dict(train),
        "audit": audit_spec,
        "out_dir": out_dir,
    }


def load_config(path):
    if not os.path.exists(path):
        raise ConfigError("config file %s does not exist" % path)
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("config is not valid JSON: %s" % exc) from exc
    return validate_config(raw)


# ===== Run execution =====


def make_dataset(task, variant, seed):
    if task["kind"] == "sinusoid":
        return gen_sinusoid(task["n_points"], variant, seed, embed_dim=task["dim"])
    return gen_corrupted_blobs(task["n_points"], variant, seed, n_dim=task["dim"])


def build_network(net_spec, dim, seed):
    if net_spec["first_layer_identity"]:
        sizes = [dim, dim] + list(net_spec["hidden"]) + [1]
    else:
        sizes = [dim] + list(net_spec["hidden"]) + [1]
    net = random_network(sizes, head=net_spec["head"], seed=seed)
    if net_spec["first_layer_identity"]:
        net.weights[0] = np.eye(dim)
    return net


def variant_name(kind, variant, seed):
    prefix = "w" if kind == "sinusoid" else "c"
    return "%s%g-s%d" % (prefix, variant, seed)


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def run_one(cfg, variant, seed, run_dir):
    """Train one (variant, seed) cell and persist its run directory.

    Returns a manifest entry; divergence comes back as an error entry
    instead of an exception so the result survives a process boundary.
    """
    task = cfg["task"]
    dataset = make_dataset(task, variant, seed)
    net = build_network(cfg["network"], task["dim"], cfg["network"]["seed_offset"] + seed)
    config = TrainConfig(seed=seed, **cfg["train"])
    try:
        log = run_training(net, dataset, config)
    except DivergenceError as exc:
        return {"name": variant_name(task["kind"], variant, seed),
                "error": "divergence", "iteration": exc.iteration, "message": str(exc)}

    os.makedirs(run_dir, exist_ok=True)
    save_run_log(log, run_dir)
    if not cfg["audit"]["save_bias_trace"]:
        trace = os.path.join(run_dir, "bias_trace.npy")
        if os.path.exists(trace):
            os.remove(trace)
    save_dataset(dataset, os.path.join(run_dir, "dataset"))
    if len(log) > 0:
        write_summary(log, dataset, run_dir, k_epochs=cfg["audit"]["k_epochs"])
    per_run = {
        "task": {"kind": task["kind"], "n_points": task["n_points"], "dim": task["dim"],
                 "variant": variant, "seed": seed},
        "network": cfg["network"],
        "train": config.normalized(),
        "audit": cfg["audit"],
    }
    with open(os.path.join(run_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(per_run, fh, indent=1)
        fh.write("\n")
    out = forward_many(log.final_net, dataset.X)[0]
    if config.loss == "mse":
        fit = float(np.mean((out - dataset.y) ** 2)) if len(log) else None
    else:
        fit = float(np.mean((out > 0.5) == (dataset.y > 0.5))) if len(log) else None
    return {
        "name": variant_name(task["kind"], variant, seed),
        "variant": variant,
        "seed": seed,
        "dir": os.path.basename(run_dir),
        "iterations": len(log),
        "digest": log.digest(),
        "fit": fit,
    }


def _thread_count():
    value = os.environ.get("LIPSCOPE_THREADS", "1")
    try:
        n = int(value)
    except ValueError:
        raise ConfigError("LIPSCOPE_THREADS must be an integer, got %r" % value)
    return max(1, n)


def _manifest_files(out_dir):
    """Hashes of the deterministic artifacts under out_dir (no npz: zip timestamps)."""
    files = {}
    for root, _dirs, names in os.walk(out_dir):
        for name in sorted(names):
            if name == "manifest.json" or name.endswith(".npz"):
                continue
            if not name.endswith((".json", ".csv", ".npy", ".svg")):
                continue
            path = os.path.join(root, name)
            rel = os.path.relpath(path, out_dir)
            files[rel.replace(os.sep, "/")] = _sha256_file(path)
    return files


def execute_runs(cfg, out_dir):
    """Run the config's grid under out_dir; returns (manifest, failures)."""
    task = cfg["task"]
    variants = task["frequencies" if task["kind"] == "sinusoid" else "corruptions"]
    jobs = []
    for variant in variants:
        for seed in task["seeds"]:
            name = variant_name(task["kind"], variant, seed)
            jobs.append((variant, seed, os.path.join(out_dir, "runs", name)))
    os.makedirs(out_dir, exist_ok=True)

    workers = min(_thread_count(), len(jobs)) if jobs else 1
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(run_one, [cfg] * len(jobs),
                                    [j[0] for j in jobs], [j[1] for j in jobs],
                                    [j[2] for j in jobs]))
    else:
        entries = [run_one(cfg, v, s, d) for v, s, d in jobs]

    failures = [e for e in entries if "error" in e]
    normalized = json.dumps(cfg, sort_keys=True)
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=1)
        fh.write("\n")
    manifest = {
        "kind": "lipscope-run-manifest",
        "config_hash": hashlib.sha256(normalized.encode()).hexdigest(),
        "runs": [e for e in entries if "error" not in e],
        "files": _manifest_files(out_dir),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return manifest, failures


def cmd_train(config_path, out_dir=None):
    """Execute every (variant x seed) run of a config; returns an exit code."""
    try:
        cfg = load_config(config_path)
        out = out_dir or cfg["out_dir"]
        if out is None:
            raise ConfigError("no output directory: set config.out_dir or pass -o")
        manifest, failures = execute_runs(cfg, out)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    for entry in manifest["runs"]:
        fit = "fit %.4g" % entry["fit"] if entry["fit"] is not None else "empty"
        print("run %s: %d iterations, %s" % (entry["name"], entry["iterations"], fit))
    for entry in failures:
        print("run %s: diverged at iteration %d: %s"
              % (entry["name"], entry["iteration"], entry["message"]), file=sys.stderr)
    if failures:
        return EXIT_DIVERGED
    print("wrote %s" % os.path.join(out, "manifest.json"))
    return EXIT_OK


# ===== Audits =====


class MissingArtifact(Exception):
    """A run directory lacks something an audit needs; message names the fix."""


def _load_run(run_dir):
    if not os.path.exists(os.path.join(run_dir, "runlog.json")):
        raise MissingArtifact(
            "%s is not a run directory (no runlog.json); pass a directory "
            "written by lipscope train" % run_dir)
    log = load_run_log(run_dir)
    dataset = load_dataset(os.path.join(run_dir, "dataset"))
    cfg_path = os.path.join(run_dir, "config.json")
    audit_spec = dict(_AUDIT_DEFAULTS)
    if os.path.exists(cfg_path):
        with open(cfg_path, "r", encoding="utf-8") as fh:
            stored = json.load(fh)
        audit_spec.update(stored.get("audit", {}))
    return log, dataset, audit_spec


def _resolve_tau(log, audit_spec):
    T = len(log)
    if audit_spec["tau_epochs"] is not None:
        tau = audit_spec["tau_epochs"] * log.epoch_size
        if tau >= T:
            raise ConfigError(
                "audit.tau_epochs=%d is past the run's %d epochs"
                % (audit_spec["tau_epochs"], T // log.epoch_size))
        return tau
    return max(0, T - audit_spec["k_epochs"] * log.epoch_size)


def _probe_inputs(dataset, n_probes, seed):
    """Task-appropriate off-sample probe points."""
    meta = dataset.meta
    rng = np.random.default_rng(seed)
    if meta.get("kind") == "sinusoid":
        embed = np.asarray(meta["embedding"], dtype=np.float64)
        latents = rng.uniform(-1.2, 1.2, size=(n_probes, 2))
        return latents @ embed.T
    n_dim = int(meta["n_dim"])
    half = float(meta["separation"]) / 2.0
    X = rng.normal(scale=float(meta["sigma"]), size=(n_probes, n_dim))
    X[:, 0] += (rng.integers(0, 2, size=n_probes) * 2 - 1) * half
    return X


def _json_out(path, payload):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def _clean(value):
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if np.isfinite(value) else None
    return value


def _audit_one(run_dir, which):
    """Run one named audit; returns (payload, exit_code) and writes reports."""
    log, dataset, spec = _load_run(run_dir)
    audits_dir = os.path.join(run_dir, "audits")
    T = len(log)
    if T == 0:
        payload = {"status": "empty_run"}
        _json_out(os.path.join(audits_dir, "%s.json" % which), payload)
        return payload, EXIT_OK

    tau = _resolve_tau(log, spec)
    net = log.final_net

    if which == "theorem1":
        if spec["windows"] is None:
            windows = [(0, T)]
        else:
            for a, b in spec["windows"]:
                if a * log.epoch_size >= T:
                    raise ConfigError(
                        "audit window [%d, %d] starts past the run's %d epochs"
                        % (a, b, T // log.epoch_size))
            windows = [(a * log.epoch_size, min(b * log.epoch_size, T))
                       for a, b in spec["windows"]]
        reports = audit_theorem1(log, dataset, windows=windows, delta=spec["delta"])
        payload = {"status": "ok", "all_satisfied": all(w.satisfied for w in reports),
                   "windows": [{
                       "t_start": w.t_start, "t_end": w.t_end, "sum_phi": w.sum_phi,
                       "lower_bound": w.lower_bound, "upper_bound": w.upper_bound,
                       "delta": w.delta, "n_included": w.n_included,
                       "satisfied": w.satisfied, "delta_needed": w.delta_needed,
                   } for w in reports]}
        _json_out(os.path.join(audits_dir, "theorem1.json"), _clean(payload))
        return payload, EXIT_OK

    if which == "corollary2":
        if log.bias1_trace is None:
            raise MissingArtifact(
                "corollary2 needs the bias trace; re-run training with "
                "audit.save_bias_trace true")
        window = (tau, T)
        if window[1] - window[0] < 2:
            raise ConfigError("corollary2 window (%d, %d) is too short" % window)
        rep = audit_corollary2(log, dataset, window, delta=spec["delta"])
        payload = {"status": "ok", "t_start": rep.t_start, "t_end": rep.t_end,
                   "empirical_variance": rep.empirical_variance, "bound": rep.bound,
                   "ratio": rep.ratio, "avg_term": rep.avg_term, "c": rep.c,
                   "delta": rep.delta, "required_window": rep.required_window,
                   "precondition_met": rep.precondition_met}
        _json_out(os.path.join(audits_dir, "corollary2.json"), _clean(payload))
        return payload, EXIT_OK

    if which == "corollary3":
        try:
            if log.bias1_trace is None and not any(t == tau for t, _ in log.checkpoints):
                raise MissingArtifact(
                    "corollary3 needs the bias at iteration %d but the run has "
                    "neither a bias trace nor a checkpoint there; re-run "
                    "training with a checkpoint stride dividing epoch %d or "
                    "with record_bias_trace true"
                    % (tau, max(1, tau // log.epoch_size)))
            rep = audit_corollary3(log, dataset, tau,
                                   delta=spec["delta"] if spec["delta"] is not None else 0.0)
        except RefusalError as exc:
            payload = {"status": "refused", "reason": str(exc)}
            _json_out(os.path.join(audits_dir, "corollary3.json"), payload)
            return payload, EXIT_REFUSED
        payload = {"status": "ok", "tau": rep.tau, "distance": rep.distance,
                   "bound": rep.bound, "satisfied": rep.satisfied, "delta": rep.delta}
        _json_out(os.path.join(audits_dir, "corollary3.json"), _clean(payload))
        return payload, EXIT_OK

    if which == "theorem2":
        pm = PatternMatrix.from_run(log, dataset, window=(tau, T))
        probes = _probe_inputs(dataset, spec["n_probes"], spec["probe_seed"])
        report = audit_theorem2(net, pm, probes, dataset.X)
        payload = {"status": "ok", "n_probes": len(report.probes),
                   "n_occupied": report.n_occupied, "n_infeasible": report.n_infeasible,
                   "n_bounded": report.n_bounded,
                   "feasibility_rate": report.feasibility_rate,
                   "soundness_rate": report.soundness_rate,
                   "violations": report.violations,
                   "median_ratio": report.median_ratio,
                   "gamma": pm.gamma, "tau": tau}
        _json_out(os.path.join(audits_dir, "theorem2.json"), _clean(payload))
        os.makedirs(audits_dir, exist_ok=True)
        with open(os.path.join(audits_dir, "theorem2_probes.csv"), "w",
                  encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["probe_id", "status", "actual_lipschitz", "bound", "ratio"])
            for i, probe in enumerate(report.probes):
                actual = "" if probe.actual is None else repr(float(probe.actual))
                bound = "" if probe.bound is None else repr(float(probe.bound))
                ratio = "" if probe.ratio is None else repr(float(probe.ratio))
                w.writerow([i, probe.status, actual, bound, ratio])
        return payload, EXIT_OK

    if which == "theorem3":
        if log.config.loss != "bce" or net.head != "sigmoid" or log.config.dropout != "half":
            payload = {"status": "not_applicable",
                       "reason": "certificates need a sigmoid classifier trained "
                                 "with bce and half dropout"}
            _json_out(os.path.join(audits_dir, "theorem3.json"), payload)
            return payload, EXIT_OK
        try:
            cert = build_certificate(net, log, dataset, tau, delta_conf=spec["delta_conf"])
        except RefusalError as exc:
            payload = {"status": "refused", "reason": str(exc)}
            _json_out(os.path.join(audits_dir, "theorem3.json"), payload)
            return payload, EXIT_REFUSED
        payload = {"status": "ok", "r": cert.r, "covering_number": cert.covering_number,
                   "er_emp": cert.er_emp, "bound": cert.bound,
                   "ingredients": dict(cert.ingredients)}
        _json_out(os.path.join(audits_dir, "theorem3.json"), _clean(payload))
        return payload, EXIT_OK

    if which == "firstlayer":
        try:
            rep = first_layer_bound(log, dataset, tau, n_probes=spec["n_probes"],
                                    seed=spec["probe_seed"])
        except RefusalError as exc:
            payload = {"status": "refused", "reason": str(exc)}
            _json_out(os.path.join(audits_dir, "firstlayer.json"), payload)
            return payload, EXIT_REFUSED
        except ValueError as exc:
            payload = {"status": "not_applicable", "reason": str(exc)}
            _json_out(os.path.join(audits_dir, "firstlayer.json"), payload)
            return payload, EXIT_OK
        payload = {"status": "ok", "theta": rep.theta, "beta": rep.beta,
                   "delta": rep.delta, "bound": rep.bound, "measured": rep.measured,
                   "satisfied": rep.satisfied, "n_probes": rep.n_probes}
        _json_out(os.path.join(audits_dir, "firstlayer.json"), _clean(payload))
        return payload, EXIT_OK

    raise ConfigError("unknown audit %r; pick from %s or all" % (which, ", ".join(AUDIT_NAMES)))


def cmd_audit(target, which="all"):
    """Audit one run directory, or every run under a train output dir."""
    if which != "all" and which not in AUDIT_NAMES:
        print("config error: unknown audit %r" % which, file=sys.stderr)
        return EXIT_CONFIG
    run_dirs = [target]
    manifest_path = os.path.join(target, "manifest.json")
    if not os.path.exists(os.path.join(target, "runlog.json")) and os.path.exists(manifest_path):
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        run_dirs = [os.path.join(target, "runs", e["dir"]) for e in manifest["runs"]]

    names = AUDIT_NAMES if which == "all" else (which,)
    code = EXIT_OK
    try:
        for run_dir in run_dirs:
            for name in names:
                payload, rc = _audit_one(run_dir, name)
                code = max(code, rc)
                print("%s %s: %s" % (os.path.basename(run_dir.rstrip(os.sep)),
                                     name, payload["status"]))
    except MissingArtifact as exc:
        print("missing artifact: %s" % exc, file=sys.stderr)
        return EXIT_MISSING
    except (ConfigError, ValueError) as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    return code


# ===== Region maps =====


def load_plane(path):
    if not os.path.exists(path):
        raise ConfigError("plane file %s does not exist" % path)
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("plane spec must be a JSON object")
    _check_keys(raw, {"origin", "axes", "extent", "resolution"}, "plane")
    for key in ("origin", "axes", "extent"):
        _require(raw, key, "plane")
    try:
        return SlicePlane(
            origin=np.asarray(raw["origin"], dtype=np.float64),
            axes=np.asarray(raw["axes"], dtype=np.float64),
            extent=tuple(float(v) for v in raw["extent"]),
            resolution=tuple(int(v) for v in raw.get("resolution", (400, 400))),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError("plane: %s" % exc) from exc


def _embedding_plane(meta, extent, resolution):
    embed = np.asarray(meta["embedding"], dtype=np.float64)
    return SlicePlane(origin=np.zeros(embed.shape[0]), axes=embed.T,
                      extent=extent, resolution=resolution)


def cmd_regions(target, plane_path=None, out_dir=None, solve_budget=None,
                resolution=(160, 160), check_convergence=False):
    """Map linear regions over a slice; writes SVGs and regions.csv."""
    try:
        if not os.path.exists(target):
            print("missing artifact: %s does not exist" % target, file=sys.stderr)
            return EXIT_MISSING
        pm = None
        projection = None
        if os.path.isdir(target):
            log, dataset, spec = _load_run(target)
            if len(log) == 0:
                print("empty run: no regions to map", file=sys.stderr)
                return EXIT_OK
            net = log.final_net
            if solve_budget is None:
                solve_budget = spec["solve_budget"]
            tau = _resolve_tau(log, spec)
            pm = PatternMatrix.from_run(log, dataset, window=(tau, len(log)))
            if plane_path is not None:
                plane = load_plane(plane_path)
            elif dataset.meta.get("kind") == "sinusoid":
                plane = _embedding_plane(dataset.meta, (-1.1, 1.1, -1.1, 1.1), resolution)
            else:
                raise ConfigError("pass --plane for non-sinusoid runs")
            projection = plane.project(dataset.X)
            out = out_dir or os.path.join(target, "regions")
        else:
            net = load_network(target)
            if plane_path is not None:
                plane = load_plane(plane_path)
            elif net.input_dim == 2:
                plane = SlicePlane.axis_aligned(resolution=resolution)
            else:
                raise ConfigError("pass --plane for networks with input_dim != 2")
            out = out_dir or (os.path.splitext(target)[0] + "_regions")
        if solve_budget is None:
            solve_budget = 0

        cells = scan_regions(net, plane, pm=pm, solve_budget=solve_budget)
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "regions_lambda.svg"), "w", encoding="utf-8") as fh:
            fh.write(emit_svg(cells, plane, dataset_projection=projection, mode="lambda"))
        if pm is not None:
            with open(os.path.join(out, "regions_bound.svg"), "w", encoding="utf-8") as fh:
                fh.write(emit_svg(cells, plane, dataset_projection=projection, mode="bound"))
        write_regions_csv(cells, os.path.join(out, "regions.csv"))
        report = {"n_regions": len(cells),
                  "n_occupied": sum(1 for c in cells if c.contains_training_point),
                  "n_bounded": sum(1 for c in cells if c.theorem2_status == "feasible"),
                  "resolution": list(plane.resolution)}
        if check_convergence:
            conv = convergence_check(net, plane)
            report["converged"] = conv.converged
            report["count_doubled"] = conv.count_doubled
        _json_out(os.path.join(out, "regions.json"), report)
        print("mapped %d regions -> %s" % (len(cells), out))
        return EXIT_OK
    except MissingArtifact as exc:
        print("missing artifact: %s" % exc, file=sys.stderr)
        return EXIT_MISSING
    except (ConfigError, ValueError) as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG


# ===== Figure recipes =====

_FIG_FREQUENCIES = (0.25, 0.5, 0.75, 1.0)


def fig1_config(seeds, epochs, stop_mse):
    return validate_config({
        "task": {"kind": "sinusoid", "n_points": 100, "seeds": list(seeds),
                 "frequencies": list(_FIG_FREQUENCIES), "dim": 10},
        "network": {"hidden": [64, 64], "head": "identity",
                    "first_layer_identity": True},
        "train": {"lr": 0.001, "epochs": int(epochs), "loss": "mse",
                  "freeze_first_weights": True, "checkpoint_stride_epochs": 10,
                  "record_bias_trace": True, "stop_train_mse": stop_mse},
        "audit": {"save_bias_trace": False},
    })


def fig5_config(seed=0):
    return validate_config({
        "task": {"kind": "sinusoid", "n_points": 200, "seeds": [int(seed)],
                 "frequencies": [0.5], "dim": 10},
        "network": {"hidden": [16, 16], "head": "identity"},
        "train": {"lr": 0.001, "epochs": 4000, "loss": "mse",
                  "checkpoint_stride_epochs": 100, "record_bias_trace": False,
                  "stop_train_mse": 0.05},
        "audit": {"solve_budget": 80},
    })


def _reuse_or_train(cfg, out_dir):
    """Train the grid unless a manifest for this exact config already exists."""
    manifest_path = os.path.join(out_dir, "manifest.json")
    normalized = json.dumps(cfg, sort_keys=True)
    want = hashlib.sha256(normalized.encode()).hexdigest()
    if os.path.exists(manifest_path):
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        if manifest.get("config_hash") == want:
            return manifest, []
    return execute_runs(cfg, out_dir)


def _epoch_mean(values, epoch_size):
    T = (len(values) // epoch_size) * epoch_size
    if T == 0:
        return np.zeros(0)
    return np.asarray(values[:T]).reshape(-1, epoch_size).mean(axis=1)


def _test_loss_series(log, dataset, test_set):
    ts, losses = [], []
    for t, net in log.checkpoints:
        out = forward_many(net, test_set.X)[0]
        ts.append(t // log.epoch_size)
        losses.append(float(np.mean((out - test_set.y) ** 2)))
    return ts, losses


def _seed_mean_rows(per_seed):
    """Average aligned (epoch, value) series across seeds (truncate to shortest)."""
    n = min(len(v) for v in per_seed)
    stack = np.vstack([np.asarray(v[:n], dtype=np.float64) for v in per_seed])
    return stack.mean(axis=0)


def _write_series_csv(path, rows, header):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, (str, int)) else repr(float(v))
                        for v in row])


def _collect_fig1(cfg, out_dir):
    """Per-frequency seed-mean series from the trained grid."""
    task = cfg["task"]
    series = {"train_loss": {}, "sum_phi": {}, "test_loss": {}}
    for omega in task["frequencies"]:
        train_runs, phi_runs, test_runs = [], [], []
        for seed in task["seeds"]:
            run_dir = os.path.join(out_dir, "runs",
                                   variant_name("sinusoid", omega, seed))
            log = load_run_log(run_dir)
            dataset = load_dataset(os.path.join(run_dir, "dataset"))
            # recorded loss is 0.5 (f - y)^2; report plain squared error
            train_runs.append(2.0 * _epoch_mean(log.loss, log.epoch_size))
            with open(os.path.join(run_dir, "summary.json"), "r", encoding="utf-8") as fh:
                summary = json.load(fh)
            phi_runs.append(np.asarray(summary["sum_phi_per_epoch"]))
            test_set = make_dataset(task, omega, seed + TEST_SEED_OFFSET)
            _, losses = _test_loss_series(log, dataset, test_set)
            test_runs.append(np.asarray(losses))
        series["train_loss"][omega] = _seed_mean_rows(train_runs)
        series["sum_phi"][omega] = _seed_mean_rows(phi_runs)
        stride = cfg["train"]["checkpoint_stride_epochs"]
        mean_test = _seed_mean_rows(test_runs)
        series["test_loss"][omega] = (np.arange(len(mean_test)) * stride, mean_test)
    return series


def cmd_reproduce(figure, out_dir, seeds=None, epochs=None, stop_mse=0.05):
    """Desk-scale figure recipes composed from train + audit + regions."""
    try:
        if figure in ("fig1", "fig2", "fig-total-trajectory"):
            seeds = list(range(10)) if seeds is None else list(seeds)
            epochs = 2500 if epochs is None else int(epochs)
            cfg = fig1_config(seeds, epochs, stop_mse)
            _, failures = _reuse_or_train(cfg, out_dir)
            if failures:
                for entry in failures:
                    print("run %s diverged: %s" % (entry["name"], entry["message"]),
                          file=sys.stderr)
                return EXIT_DIVERGED
            series = _collect_fig1(cfg, out_dir)
            if figure == "fig1":
                _emit_fig1(series, out_dir)
            elif figure == "fig-total-trajectory":
                _emit_total_trajectory(series, out_dir)
            else:
                _emit_fig2(cfg, out_dir)
            return EXIT_OK
        if figure == "fig5":
            return _reproduce_fig5(out_dir, epochs=epochs)
        print("config error: unknown figure %r" % figure, file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG


def _emit_fig1(series, out_dir):
    for metric in ("train_loss", "sum_phi", "test_loss"):
        rows = []
        plot = {}
        for omega, values in sorted(series[metric].items()):
            if metric == "test_loss":
                epochs_axis, values = values
            else:
                epochs_axis = np.arange(len(values))
            rows.extend((("%g" % omega), int(e), float(v))
                        for e, v in zip(epochs_axis, values))
            plot["w=%g" % omega] = (np.asarray(epochs_axis, dtype=np.float64),
                                    np.asarray(values, dtype=np.float64))
        _write_series_csv(os.path.join(out_dir, "fig1_%s.csv" % metric),
                          rows, ["omega", "epoch", metric])
        log_y = metric != "sum_phi"
        svg = _line_svg(plot, xlabel="epoch", ylabel=metric.replace("_", " "),
                        log_y=log_y)
        with open(os.path.join(out_dir, "fig1_%s.svg" % metric), "w",
                  encoding="utf-8") as fh:
            fh.write(svg)
    print("wrote fig1 series and plots under %s" % out_dir)


def _emit_total_trajectory(series, out_dir):
    rows = []
    plot = {}
    for omega, values in sorted(series["sum_phi"].items()):
        total = np.cumsum(values)
        rows.extend((("%g" % omega), int(e), float(v)) for e, v in enumerate(total))
        plot["w=%g" % omega] = (np.arange(len(total), dtype=np.float64), total)
    _write_series_csv(os.path.join(out_dir, "fig_total_trajectory.csv"),
                      rows, ["omega", "epoch", "total_trajectory"])
    svg = _line_svg(plot, xlabel="epoch", ylabel="total trajectory", log_y=False)
    with open(os.path.join(out_dir, "fig_total_trajectory.svg"), "w",
              encoding="utf-8") as fh:
        fh.write(svg)
    print("wrote total-trajectory series under %s" % out_dir)


def _emit_fig2(cfg, out_dir):
    task = cfg["task"]
    variances, distances = [], []
    for omega in task["frequencies"]:
        var_seeds, dist_seeds = [], []
        for seed in task["seeds"]:
            run_dir = os.path.join(out_dir, "runs",
                                   variant_name("sinusoid", omega, seed))
            with open(os.path.join(run_dir, "summary.json"), "r", encoding="utf-8") as fh:
                summary = json.load(fh)
            var_seeds.append(summary["variance_last_k_epochs"])
            dist_seeds.append(summary["distance_to_init_series"][-1])
        variances.append((omega, float(np.mean(var_seeds))))
        distances.append((omega, float(np.mean(dist_seeds))))
    _write_series_csv(os.path.join(out_dir, "fig2_variance.csv"), variances,
                      ["omega", "variance_last_10_epochs"])
    _write_series_csv(os.path.join(out_dir, "fig2_distance.csv"), distances,
                      ["omega", "distance_to_init"])
    for name, rows, ylabel in (("variance", variances, "bias variance"),
                               ("distance", distances, "distance to init")):
        xs = np.asarray([r[0] for r in rows])
        ys = np.asarray([r[1] for r in rows])
        svg = _line_svg({"task 1": (xs, ys)}, xlabel="frequency", ylabel=ylabel,
                        log_y=False, markers=True)
        with open(os.path.join(out_dir, "fig2_%s.svg" % name), "w",
                  encoding="utf-8") as fh:
            fh.write(svg)
    print("wrote fig2 summaries under %s" % out_dir)


def _reproduce_fig5(out_dir, epochs=None):
    cfg = fig5_config()
    if epochs is not None:
        cfg["train"]["epochs"] = int(epochs)
    _, failures = _reuse_or_train(cfg, out_dir)
    if failures:
        print("fig5 training diverged", file=sys.stderr)
        return EXIT_DIVERGED
    run_dir = os.path.join(out_dir, "runs", variant_name("sinusoid", 0.5, 0))
    log, dataset, spec = _load_run(run_dir)
    net = log.final_net
    plane = _embedding_plane(dataset.meta, (-1.1, 1.1, -1.1, 1.1), (150, 150))
    tau = _resolve_tau(log, spec)
    pm = PatternMatrix.from_run(log, dataset, window=(tau, len(log)))
    projection = plane.project(dataset.X)

    from .tasks import sinusoid_labels

    centers = plane.cell_centers_uv()
    truth = sinusoid_labels(centers, 0.5)
    learned = forward_many(net, plane.to_input(centers))[0]
    lo, hi = float(truth.min()), float(truth.max())
    with open(os.path.join(out_dir, "fig5_truth.svg"), "w", encoding="utf-8") as fh:
        fh.write(_field_svg(truth, plane, projection, lo, hi))
    with open(os.path.join(out_dir, "fig5_learned.svg"), "w", encoding="utf-8") as fh:
        fh.write(_field_svg(learned, plane, projection, lo, hi))

    cells = scan_regions(net, plane, pm=pm, solve_budget=spec["solve_budget"])
    with open(os.path.join(out_dir, "fig5_lambda.svg"), "w", encoding="utf-8") as fh:
        fh.write(emit_svg(cells, plane, dataset_projection=projection, mode="lambda"))
    with open(os.path.join(out_dir, "fig5_bound.svg"), "w", encoding="utf-8") as fh:
        fh.write(emit_svg(cells, plane, dataset_projection=projection, mode="bound"))
    write_regions_csv(cells, os.path.join(out_dir, "fig5_regions.csv"))
    print("wrote fig5 panels under %s" % out_dir)
    return EXIT_OK


# ===== Hand-rolled SVG plots =====


_SERIES_COLORS = ("#440154", "#31688e", "#35b779", "#fde725", "#fd9668", "#d04545")


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = np.linspace(lo, hi, n)
    return [float(v) for v in raw]


def _line_svg(plot, xlabel="", ylabel="", log_y=False, markers=False):
    """Minimal multi-series line chart; plot maps label -> (x, y) arrays."""
    W, H = 640, 420
    ml, mr, mt, mb = 70, 20, 20, 50
    iw, ih = W - ml - mr, H - mt - mb

    xs = np.concatenate([v[0] for v in plot.values()]) if plot else np.zeros(1)
    ys = np.concatenate([v[1] for v in plot.values()]) if plot else np.zeros(1)
    if log_y:
        ys = ys[ys > 0]
        if ys.size == 0:
            ys = np.ones(1)
        ys = np.log10(ys)
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0

    def sx(x):
        return ml + (x - x_lo) / (x_hi - x_lo) * iw

    def sy(y):
        return mt + ih - (y - y_lo) / (y_hi - y_lo) * ih

    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" width="%d" height="%d" '
        'viewBox="0 0 %d %d">' % (W, H, W, H),
        '<rect width="%d" height="%d" fill="#ffffff"/>' % (W, H),
        '<g stroke="#cccccc" stroke-width="1">',
    ]
    for tx in _ticks(x_lo, x_hi):
        parts.append('<line x1="%.1f" y1="%d" x2="%.1f" y2="%d"/>'
                     % (sx(tx), mt, sx(tx), mt + ih))
    for ty in _ticks(y_lo, y_hi):
        parts.append('<line x1="%d" y1="%.1f" x2="%d" y2="%.1f"/>'
                     % (ml, sy(ty), ml + iw, sy(ty)))
    parts.append("</g>")
    parts.append('<g font-family="sans-serif" font-size="11" fill="#333333">')
    for tx in _ticks(x_lo, x_hi):
        parts.append('<text x="%.1f" y="%d" text-anchor="middle">%g</text>'
                     % (sx(tx), mt + ih + 16, tx))
    for ty in _ticks(y_lo, y_hi):
        label = 10.0 ** ty if log_y else ty
        parts.append('<text x="%d" y="%.1f" text-anchor="end">%.3g</text>'
                     % (ml - 6, sy(ty) + 4, label))
    parts.append('<text x="%d" y="%d" text-anchor="middle" font-size="13">%s</text>'
                 % (ml + iw // 2, H - 12, xlabel))
    parts.append('<text x="16" y="%d" text-anchor="middle" font-size="13" '
                 'transform="rotate(-90 16 %d)">%s</text>'
                 % (mt + ih // 2, mt + ih // 2, ylabel))
    parts.append("</g>")

    for i, (label, (x, y)) in enumerate(plot.items()):
        color = _SERIES_COLORS[i % len(_SERIES_COLORS)]
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if log_y:
            keep = y > 0
            x, y = x[keep], np.log10(y[keep])
        pts = " ".join("%.2f,%.2f" % (sx(a), sy(b)) for a, b in zip(x, y))
        parts.append('<polyline fill="none" stroke="%s" stroke-width="1.8" '
                     'points="%s"/>' % (color, pts))
        if markers:
            for a, b in zip(x, y):
                parts.append('<circle cx="%.2f" cy="%.2f" r="3.5" fill="%s"/>'
                             % (sx(a), sy(b), color))
        parts.append('<g font-family="sans-serif" font-size="12">'
                     '<rect x="%d" y="%d" width="14" height="3" fill="%s"/>'
                     '<text x="%d" y="%d">%s</text></g>'
                     % (ml + 10, mt + 14 + 18 * i, color,
                        ml + 30, mt + 19 + 18 * i, label))
    parts.append('<rect x="%d" y="%d" width="%d" height="%d" fill="none" '
                 'stroke="#333333" stroke-width="1"/>' % (ml, mt, iw, ih))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _field_svg(values, plane, projection, vmin, vmax):
    """Scalar field over the slice grid, same geometry as region maps."""
    from .regionviz import _viridis_hex

    g_u, g_v = plane.resolution
    span = vmax - vmin if vmax > vmin else 1.0
    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" width="640" height="%d" '
        'viewBox="-0.5 -0.5 %d %d">' % (round(640 * g_v / g_u), g_u + 1, g_v + 1),
        '<g shape-rendering="crispEdges">',
    ]
    values = np.asarray(values, dtype=np.float64).reshape(g_u, g_v)
    for i in range(g_u):
        for j in range(g_v):
            frac = (values[i, j] - vmin) / span
            color = _viridis_hex(min(1.0, max(0.0, frac)))
            parts.append('<rect x="%d" y="%d" width="1" height="1" fill="%s"/>'
                         % (i, g_v - 1 - j, color))
    parts.append("</g>")
    if projection is not None and len(projection):
        u0, u1, v0, v1 = plane.extent
        r = max(g_u, g_v) / 120.0
        parts.append('<g fill="#ff5252" stroke="#7f1d1d" stroke-width="%.3f">' % (r / 4))
        for u, v in np.atleast_2d(projection):
            if not (u0 <= u <= u1 and v0 <= v <= v1):
                continue
            ci = (u - u0) / (u1 - u0) * g_u
            cj = (v - v0) / (v1 - v0) * g_v
            parts.append('<circle cx="%.4f" cy="%.4f" r="%.4f"/>' % (ci, g_v - cj, r))
        parts.append("</g>")
    parts.append('<rect x="-0.5" y="-0.5" width="%d" height="%d" fill="none" '
                 'stroke="#333333" stroke-width="0.25"/>' % (g_u + 1, g_v + 1))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ===== Entry point =====


def main(argv=None):
    parser = argparse.ArgumentParser(prog="lipscope",
                                     description="train, audit and map ReLU nets")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run an experiment config")
    p_train.add_argument("-c", "--config", required=True)
    p_train.add_argument("-o", "--out")

    p_audit = sub.add_parser("audit", help="audit a run directory")
    p_audit.add_argument("target")
    p_audit.add_argument("--which", default="all",
                         choices=list(AUDIT_NAMES) + ["all"])

    p_regions = sub.add_parser("regions", help="map linear regions over a slice")
    p_regions.add_argument("target", help="run directory or network JSON file")
    p_regions.add_argument("--plane", help="slice plane JSON file")
    p_regions.add_argument("-o", "--out")
    p_regions.add_argument("--solve-budget", type=int, default=None)
    p_regions.add_argument("--resolution", type=int, nargs=2, default=(160, 160),
                           metavar=("GU", "GV"))
    p_regions.add_argument("--check-convergence", action="store_true")

    p_rep = sub.add_parser("reproduce", help="desk-scale figure recipes")
    p_rep.add_argument("figure",
                       choices=["fig1", "fig2", "fig5", "fig-total-trajectory"])
    p_rep.add_argument("-o", "--out", required=True)
    p_rep.add_argument("--seeds", type=int, default=None,
                       help="use seeds 0..K-1 instead of the full ten")
    p_rep.add_argument("--epochs", type=int, default=None,
                       help="override the epoch cap")
    p_rep.add_argument("--stop-mse", default=None,
                       help="train-MSE early-stop threshold, or 'none'")

    args = parser.parse_args(argv)
    if args.command == "train":
        return cmd_train(args.config, args.out)
    if args.command == "audit":
        return cmd_audit(args.target, args.which)
    if args.command == "regions":
        return cmd_regions(args.target, plane_path=args.plane, out_dir=args.out,
                           solve_budget=args.solve_budget,
                           resolution=tuple(args.resolution),
                           check_convergence=args.check_convergence)
    if args.command == "reproduce":
        seeds = None if args.seeds is None else list(range(args.seeds))
        stop = 0.05
        if args.stop_mse is not None:
            stop = None if args.stop_mse == "none" else float(args.stop_mse)
        return cmd_reproduce(args.figure, args.out, seeds=seeds,
                             epochs=args.epochs, stop_mse=stop)
    parser.error("unknown command")


if __name__ == "__main__":
    sys.exit(main())
