"""Command-line driver: configuration, seeding, outputs and run manifests.

Each subcommand reads ``key = value`` settings from an optional config file
(a ``[common]`` section plus one section per subcommand), lets command-line
flags override them, and writes its results into ``--out``.  Result files
embed the resolved config; wall-clock and other run facts go to a separate
``manifest.json`` so that result files are byte-identical across reruns.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(ValueError):
    pass


# name -> (type, default, help); the table drives both argparse and config-file validation
COMMON = {
    "seed": (int, 0, "master seed"),
    "out": (str, "gradlab_out", "output directory (a file path for `sample` snapshots)"),
    "threads": (int, 1, "worker threads (exported as GRADLAB_THREADS)"),
    "potential": (str, "quadratic", "quadratic or cos_perturbed"),
    "eps": (float, None, "perturbation strength for cos_perturbed"),
}

OPTIONS = {
    "sample": {
        "n": (int, 8, "half-width N of Q_N"),
        "samples": (int, 100, "number of stored samples"),
        "burnin": (int, None, "burn-in sweeps (heuristic default when omitted)"),
        "thin": (int, None, "sweeps between samples (heuristic default when omitted)"),
        "moves": (str, "multilevel", "site, multilevel or exact"),
    },
    "clt": {
        "n": (int, 16, "half-width N of Q_N"),
        "samples": (int, 2000, "number of samples of phi(0)"),
        "tmax": (float, 6.0, "largest t on the characteristic-function grid"),
        "nt": (int, 61, "points on the t grid"),
        "method": (str, "conditional", "density estimator: conditional, kde or histogram"),
        "g_hat": (float, None, "reference variance (estimated when omitted)"),
        "g_samples": (int, 2000, "samples for estimating the reference variance"),
        "g_n": (int, 32, "domain size for estimating the reference variance"),
        "burnin": (int, None, "burn-in sweeps"),
        "thin": (int, None, "sweeps between samples"),
    },
    "charfn": {
        "n": (int, 16, "half-width N of Q_N"),
        "samples": (int, 2000, "number of samples of phi(0)"),
        "tmax": (float, 6.0, "largest t"),
        "nt": (int, 61, "points on the t grid"),
        "scaling": (str, "sqrt_log_N", "raw or sqrt_log_N"),
        "burnin": (int, None, "burn-in sweeps"),
        "thin": (int, None, "sweeps between samples"),
    },
    "homog": {
        "levels": (int, 3, "largest triadic level m"),
        "samples": (int, 16, "coefficient fields in the ensemble"),
    },
    "mw": {
        "t_grid": (str, "0.5,1,2,4", "comma-separated t values"),
        "C": (float, 1.0, "ratio-condition constant"),
        "m": (int, None, "number of arc pairs (smallest admissible when omitted)"),
        "grid": (int, 4096, "circle grid size"),
    },
    "poincare": {
        "m": (int, 3, "largest triadic level"),
        "trials": (int, 20, "random functions per family and level"),
        "green_n": (int, 0, "also export the Green function of Q_n at 0 when > 0"),
    },
    "decouple": {
        "n": (int, 16, "half-width N of Q_N"),
        "k": (int, 1, "scale index"),
        "samples": (int, 500, "samples per boundary condition"),
        "f_amp": (float, 1.0, "amplitude of the random bounded boundary data"),
        "boot": (int, 199, "bootstrap resamples"),
    },
}


@dataclass
class ExperimentConfig:
    subcommand: str
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def resolved(self) -> dict:
        return {"subcommand": self.subcommand, **self.values}


@dataclass
class RunManifest:
    config: dict
    version: str = __version__
    wall_clock: float = 0.0
    ess: dict = field(default_factory=dict)
    solver_iterations: int = 0
    warnings: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"config": self.config, "version": self.version, "wall_clock": self.wall_clock,
                           "ess": self.ess, "solver_iterations": self.solver_iterations,
                           "warnings": self.warnings}, indent=2, sort_keys=True)


# ----------------------------------------------------------------- parsing


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gradlab", description="Two-dimensional gradient interface laboratory.")
    sub = ap.add_subparsers(dest="subcommand")
    for name, opts in OPTIONS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="key = value config file")
        for key, (typ, _, hlp) in {**COMMON, **opts}.items():
            sp.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None, help=hlp)
    return ap


def _read_file(path: str, subcommand: str) -> dict:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    allowed = {**COMMON, **OPTIONS[subcommand]}
    out = {}
    for section in cp.sections():
        if section not in ("common", subcommand):
            if section in OPTIONS:
                continue
            raise UsageError(f"unknown config section [{section}]")
        for key, raw in cp.items(section):
            k = key.replace("-", "_")
            if k not in allowed:
                raise UsageError(f"unknown key {key!r} in [{section}]")
            try:
                out[k] = allowed[k][0](raw)
            except ValueError as exc:
                raise UsageError(f"bad value for {key}: {raw!r}") from exc
    return out


def parse_config(argv, config_file: str | None = None) -> ExperimentConfig:
    """Flags override the file, the file overrides the defaults; every default is explicit afterwards."""
    argv = list(argv)
    ap = _parser()
    if not argv:
        raise UsageError(ap.format_usage().strip())
    try:
        ns = ap.parse_args(argv)
    except SystemExit as exc:
        raise UsageError("invalid arguments") from exc
    if ns.subcommand is None:
        raise UsageError(ap.format_usage().strip())
    sub = ns.subcommand
    table = {**COMMON, **OPTIONS[sub]}
    values = {k: v[1] for k, v in table.items()}
    path = ns.config or config_file
    if path:
        values.update(_read_file(path, sub))
    for k in table:
        v = getattr(ns, k)
        if v is not None:
            values[k] = v
    _validate(sub, values)
    return ExperimentConfig(sub, values)


def _validate(sub: str, v: dict) -> None:
    if v["potential"] == "quadratic" and v["eps"] not in (None, 0.0):
        raise UsageError("conflicting potential: quadratic takes no eps")
    if v["potential"] == "cos_perturbed" and v["eps"] is None:
        raise UsageError("cos_perturbed needs --eps")
    if v["potential"] not in ("quadratic", "cos_perturbed"):
        raise UsageError(f"unknown potential {v['potential']!r}")
    if v["threads"] < 1:
        raise UsageError("threads must be positive")
    for key in ("n", "samples", "trials", "nt"):
        if key in v and v[key] is not None and v[key] < 1:
            raise UsageError(f"{key} must be positive")
    if sub == "sample" and v["moves"] not in ("site", "multilevel", "exact"):
        raise UsageError(f"unknown move set {v['moves']!r}")
    if sub == "sample" and v["moves"] == "exact" and v["potential"] != "quadratic":
        raise UsageError("exact sampling needs the quadratic potential")
    if sub == "clt" and v["method"] not in ("conditional", "kde", "histogram"):
        raise UsageError(f"unknown density method {v['method']!r}")
    if sub == "charfn" and v["scaling"] not in ("raw", "sqrt_log_N"):
        raise UsageError(f"unknown scaling {v['scaling']!r}")
    if sub == "mw":
        try:
            ts = [float(s) for s in v["t_grid"].split(",") if s.strip()]
        except ValueError as exc:
            raise UsageError(f"bad t grid {v['t_grid']!r}") from exc
        if not ts or min(ts) <= 0:
            raise UsageError("t grid needs positive values")


# ----------------------------------------------------------------- output helpers


def _provenance(cfg: ExperimentConfig) -> str:
    return json.dumps({"version": __version__, **cfg.resolved()}, sort_keys=True)


def _atomic_write(path: Path, data: str | bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode, **({} if isinstance(data, bytes) else {"newline": ""})) as fh:
        fh.write(data)
    os.replace(tmp, path)


def _csv_text(cfg: ExperimentConfig, header, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# config: {_provenance(cfg)}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _json_text(cfg: ExperimentConfig, payload: dict) -> str:
    return json.dumps({"config": json.loads(_provenance(cfg)), **payload}, indent=2, sort_keys=True) + "\n"


def _potential(cfg: ExperimentConfig):
    from .potential import from_config
    return from_config(cfg["potential"], cfg["eps"])


def _outdir(cfg: ExperimentConfig) -> Path:
    d = Path(cfg["out"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _sample_phi0(cfg: ExperimentConfig, manifest: RunManifest, n: int, samples: int, observe=None):
    from .lattice import build_square
    from .sampler import exact_gaussian_sample, sample_batch
    p = _potential(cfg)
    dom = build_square(n)
    if p.name == "quadratic":
        batch = exact_gaussian_sample(dom, None, samples, seed=cfg["seed"], observe=observe, store=False)
    else:
        batch = sample_batch(dom, None, p, samples, burn_in=cfg.values.get("burnin"),
                             thinning=cfg.values.get("thin"), seed=cfg["seed"], observe=observe, store=False)
    manifest.ess.update({f"N{n}:{k}": v for k, v in batch.ess.items()})
    manifest.warnings.extend(batch.warnings)
    return batch


# ----------------------------------------------------------------- subcommands


def cmd_sample(cfg: ExperimentConfig, manifest: RunManifest) -> None:
    from .lattice import build_square
    from .sampler import exact_gaussian_sample, sample_batch, write_snapshot
    p = _potential(cfg)
    dom = build_square(cfg["n"])
    if cfg["moves"] == "exact":
        batch = exact_gaussian_sample(dom, None, cfg["samples"], seed=cfg["seed"])
    else:
        batch = sample_batch(dom, None, p, cfg["samples"], burn_in=cfg["burnin"], thinning=cfg["thin"],
                             seed=cfg["seed"], moves=cfg["moves"])
    out = Path(cfg["out"])
    if out.suffix == "":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "snapshot.grdf"
    write_snapshot(out, batch.values, cfg["n"])
    rows = [(i, float(x)) for i, x in enumerate(batch.observables["phi0"])]
    _atomic_write(out.with_suffix(".csv"), _csv_text(cfg, ["index", "phi0"], rows))
    _atomic_write(out.with_suffix(".json"), _json_text(cfg, {"burn_in": batch.burn_in, "thinning": batch.thinning,
                                                             "count": batch.count, "moves": batch.moves}))
    manifest.ess.update(batch.ess)
    manifest.warnings.extend(batch.warnings)


def _t_grid(cfg) -> np.ndarray:
    return np.linspace(0.0, cfg["tmax"], cfg["nt"])


def cmd_clt(cfg: ExperimentConfig, manifest: RunManifest) -> None:
    from .cltlab import GaussianReference, char_fn, mw_char_probe, neighbor_observer, neighbors_from, sample_gap
    from .homogenize import estimate_g
    from .lattice import build_square
    p = _potential(cfg)
    n = cfg["n"]
    if cfg["g_hat"] is not None:
        ref = GaussianReference(cfg["g_hat"], "config")
    else:
        rep = estimate_g(p, [cfg["g_n"]], 1, samples=cfg["g_samples"], seed=cfg["seed"] + 1)
        manifest.ess["g_hat"] = rep.entries[-1].ess
        ref = GaussianReference.from_g_report(rep)
    batch = _sample_phi0(cfg, manifest, n, cfg["samples"], neighbor_observer(build_square(n)))
    corr = batch.moves != "exact"
    x = batch.observables["phi_v"]
    cf = char_fn(x, _t_grid(cfg), "sqrt_log_N", n, correlated=corr)
    gap = sample_gap(x, ref, n, cfg["method"], neighbors_from(batch.observables), p, seed=cfg["seed"],
                     correlated=corr)
    s_grid = np.linspace(0.0, 3.0, 31)
    mw = mw_char_probe(x, s_grid, n, correlated=corr)
    d = _outdir(cfg)
    _atomic_write(d / "charfn.csv", _csv_text(cfg, ["t", "re", "im", "se"], cf.rows()))
    dens = zip(gap.grid, gap.gap_curve + ref.density(gap.grid)) if cfg["method"] != "histogram" else []
    _atomic_write(d / "density.csv", _csv_text(cfg, ["x", "density"], [(float(a), float(b)) for a, b in dens]))
    _atomic_write(d / "summary.json", _json_text(cfg, {
        "g_hat": ref.g_hat, "sup_gap": gap.sup_gap, "sup_gap_band": list(gap.band), "eps1_fit": mw.eps1,
        "C_fit": mw.C, "g_source": ref.source}))


def cmd_charfn(cfg: ExperimentConfig, manifest: RunManifest) -> None:
    from .cltlab import char_fn
    batch = _sample_phi0(cfg, manifest, cfg["n"], cfg["samples"])
    cf = char_fn(batch.observables["phi0"], _t_grid(cfg), cfg["scaling"], cfg["n"],
                 correlated=batch.moves != "exact")
    _atomic_write(_outdir(cfg) / "charfn.csv", _csv_text(cfg, ["t", "re", "im", "se"], cf.rows()))


def cmd_homog(cfg: ExperimentConfig, manifest: RunManifest) -> None:
    from .homogenize import coefficient_ensemble, homog_rows
    p = _potential(cfg)
    ens = coefficient_ensemble(p, cfg["samples"], cfg["levels"], seed=cfg["seed"])
    rows = homog_rows(ens, range(1, cfg["levels"] + 1))
    cols = ["level", "p", "nu", "ahom_xx", "ahom_xy", "ahom_yy", "flux_var"]
    _atomic_write(_outdir(cfg) / "homog.csv", _csv_text(cfg, cols, [[r[c] for c in cols] for r in rows]))


def cmd_mw(cfg: ExperimentConfig, manifest: RunManifest) -> None:
    from .mermin import certified_bound, wrapped_gaussian
    C = cfg["C"]
    rows = []
    for t in (float(s) for s in cfg["t_grid"].split(",") if s.strip()):
        f = wrapped_gaussian(C / t ** 2, n=cfg["grid"])
        cb = certified_bound(f, t, C, cfg["m"])
        rows.append((t, cb.integral, cb.bound))
    _atomic_write(_outdir(cfg) / "mw.csv", _csv_text(cfg, ["t", "integral", "bound"], rows))


def cmd_poincare(cfg: ExperimentConfig, manifest: RunManifest) -> None:
    from .elliptic import POINCARE_CONSTANT, green, poincare_suite
    from .lattice import build_square
    suite = poincare_suite(cfg["m"], cfg["trials"], cfg["seed"])
    rows = [(m, suite.poincare[m], suite.oscillation[m]) for m in sorted(suite.poincare)]
    d = _outdir(cfg)
    _atomic_write(d / "poincare.csv", _csv_text(cfg, ["m", "poincare_C", "oscillation_C"], rows))
    _atomic_write(d / "poincare.json", _json_text(cfg, {"constant": suite.constant,
                                                        "calibrated_constant": POINCARE_CONSTANT,
                                                        "violations": suite.violations(POINCARE_CONSTANT)}))
    if cfg["green_n"] > 0:
        dom = build_square(cfg["green_n"])
        G = green(dom, (0, 0))
        X, Y = dom.coords
        rows = [(int(a), int(b), float(g)) for a, b, g in zip(X.ravel(), Y.ravel(), G.ravel())]
        _atomic_write(d / "green.csv", _csv_text(cfg, ["x", "y", "value"], rows))


def cmd_decouple(cfg: ExperimentConfig, manifest: RunManifest) -> None:
    from .lattice import build_square
    from .multiscale import coupling_probe
    from .sampler import BoundaryCondition
    p = _potential(cfg)
    dom = build_square(cfg["n"])
    rng = np.random.default_rng(cfg["seed"])
    vals = np.where(dom.boundary_mask, rng.uniform(-cfg["f_amp"], cfg["f_amp"], dom.shape), 0.0)
    rep = coupling_probe(dom, BoundaryCondition.explicit(dom, vals), p, cfg["k"], cfg["samples"],
                         seed=cfg["seed"], n_boot=cfg["boot"])
    _atomic_write(_outdir(cfg) / "decouple.json", _json_text(cfg, {
        "ks_stat": rep.ks_stat, "ks_pvalue": rep.ks_pvalue, "bootstrap_pvalue": rep.bootstrap_pvalue,
        "n": rep.n, "mean_f": rep.mean_f, "mean_zero": rep.mean_zero, "max_abs_f": rep.max_abs_f}))


COMMANDS = {"sample": cmd_sample, "clt": cmd_clt, "charfn": cmd_charfn, "homog": cmd_homog, "mw": cmd_mw,
            "poincare": cmd_poincare, "decouple": cmd_decouple}


def run(cfg: ExperimentConfig) -> int:
    from .elliptic import SOLVER_STATS
    os.environ["GRADLAB_THREADS"] = str(cfg["threads"])
    manifest = RunManifest(cfg.resolved())
    it0 = SOLVER_STATS["iterations"]
    start = time.perf_counter()
    try:
        COMMANDS[cfg.subcommand](cfg, manifest)
    except Exception as exc:  # stage context for the user, exit 1
        print(f"gradlab {cfg.subcommand}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    manifest.wall_clock = time.perf_counter() - start
    manifest.solver_iterations = SOLVER_STATS["iterations"] - it0
    out = Path(cfg["out"])
    target = (out.parent if out.suffix else out) / "manifest.json"
    try:
        _atomic_write(target, manifest.to_json() + "\n")
    except OSError as exc:
        print(f"gradlab: cannot write manifest: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_config(argv)
    except UsageError as exc:
        print(f"gradlab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
