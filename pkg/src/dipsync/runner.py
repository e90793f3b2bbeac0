"""Sweep orchestration: build systems from a configuration, run an engine per point, persist results."""

from __future__ import annotations

import logging
import platform
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import config as cfgmod
from . import cumulant, master, meanfield, observables, symmetric, trajectories
from . import io as dio
from .geometry import Collective, Dipolar, LatticeSpec, PowerLaw, build_lattice, coupling_matrices

log = logging.getLogger(__name__)


@dataclass
class PointResult:
    index: int
    params: dict
    row: dict
    tables: dict = field(default_factory=dict)
    ok: bool = True
    error: str = ""


@dataclass
class RunRecord:
    config_hash: str
    code_version: str
    seed: int
    wall_time: float
    points: list
    out_dir: Path | None = None

    @property
    def n_failed(self) -> int:
        return sum(not p.ok for p in self.points)

    def table(self) -> list[dict]:
        return [dict(index=p.index, **p.params, **p.row, status="ok" if p.ok else "failed") for p in self.points]


def point_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


# -- system construction ------------------------------------------------------------

def detunings_for(sysc: dict, n: int, seed: int) -> np.ndarray:
    det = sysc["detuning"]
    kind, w, c = det["kind"], float(det["width"]), float(det["center"])
    rng = np.random.default_rng(seed)
    if kind == "delta":
        return np.full(n, c)
    if kind == "uniform":
        return c + rng.uniform(-w, w, n)
    if kind == "lorentzian":
        return c + w * np.tan(np.pi * (rng.random(n) - 0.5))
    vals = np.asarray(det["values"], dtype=float)
    if vals.size != n:
        raise cfgmod.ConfigError(f"detuning list has {vals.size} entries for {n} sites")
    return vals


def build_system(sysc: dict, seed: int):
    """Return ``(array, couplings, detunings)`` for a merged system block."""
    n = int(sysc["n"])
    det = detunings_for(sysc, n, seed)
    arr = build_lattice(LatticeSpec(n, int(sysc["dim"]), float(sysc["spacing_over_lambda"]),
                                    float(sysc["theta"]), det))
    arr.gamma = float(sysc["gamma"])
    mode = sysc["mode"]
    if mode == "lattice":
        m = Dipolar()
    elif mode == "collective":
        m = Collective(float(sysc["f_eff"]), sysc["diagonal"])
    else:
        m = PowerLaw(float(sysc["alpha"]), float(sysc["prefactor"]))
    return arr, coupling_matrices(arr, m), det


def _apply_point(cfg: dict, point: dict) -> tuple[dict, dict]:
    sysc = dict(cfg["system"])
    sysc["detuning"] = dict(sysc["detuning"])
    for k, v in point.items():
        if k == "width":
            sysc["detuning"]["width"] = v
        elif k == "n":
            sysc["n"] = int(round(v))
        else:
            sysc[k] = v
    return sysc, cfg["solver"]


# -- engines -----------------------------------------------------------------------------

def _pair_metrics(rho2, row, correlations):
    if correlations:
        row["mutual_information"] = observables.mutual_information(rho2)
        row["discord"] = observables.quantum_discord(rho2)


def run_meanfield(sysc, sol, seed):
    arr, cm, det = build_system(sysc, seed)
    W = float(sysc["W"])
    p = meanfield.MFParams.from_couplings(cm, W, det)
    init = meanfield.BlochState.random_phases(cm.n, np.random.default_rng(seed))
    res = meanfield.integrate_mf(init, p, t_final=sol["t_final"], tol=sol["rtol"], atol=sol["atol"])
    row = {"Z": float(res.Z[-1]), "Phi": float(res.Phi[-1]), "mean_sz": float(res.mean_sz[-1]),
           "omega_bar": float(res.omega_bar), "steady": res.steady, "stop_reason": res.stop_reason}
    if sysc["mode"] == "collective":
        kappa = float(sysc["f_eff"]) * (cm.n - 1) / cm.n
        row["Z_closed_form"] = float(meanfield.z_closed_form(kappa, W, cm.gamma))
    series = [{"t": t, "Z": z, "Phi": ph, "mean_Sz": s} for t, z, ph, s in zip(res.t, res.Z, res.Phi, res.mean_sz)]
    return row, {"series": series}


def run_selfconsistent(sysc, sol, seed):
    det = sysc["detuning"]
    dist = meanfield.DetuningDistribution(det["kind"], float(det["width"]),
                                          det["values"], float(det["center"]))
    r = meanfield.self_consistent_solve(float(sysc["f_eff"]), float(sysc["g_eff"]), float(sysc["W"]),
                                        float(sysc["gamma"]), dist)
    return {"Z": r.Z, "omega_bar": r.omega_bar, "multiple_roots": r.multiple}, {}


def run_master(sysc, sol, seed, out_dir=None, index=0):
    arr, cm, det = build_system(sysc, seed)
    L = master.Liouvillian(cm, float(sysc["W"]), det)
    rho = master.steady_state(L)
    n = cm.n
    C = master.pair_correlators(rho, n) if n > 1 else np.zeros((1, 1))
    row = {"mean_sz": float(np.mean(master.site_sz(rho, n)))}
    if n > 1:
        row["Z_Q"], row["Z_Q_raw"] = observables.zq(C, return_raw=True)
        a, b = sol["pair"]
        _pair_metrics(master.reduced_state(rho, n, [a, b]), row, sol["correlations"])
        if sol["correlations"]:
            row["qfi_ensemble"] = observables.qfi_mixed(rho, observables.collective_spin_ops(n))
    if sol["dump_state"] and out_dir is not None:
        path = Path(out_dir) / f"rho_{index:05d}.bin"
        dio.dump_density_matrix(path, rho)
        row["state_file"] = path.name
    return row, {}


def run_symmetric(sysc, sol, seed):
    n = int(sysc["n"])
    gen = symmetric.symmetric_generator(n, float(sysc["f_eff"]), float(sysc["W"]), float(sysc["gamma"]),
                                        sysc["diagonal"])
    st = symmetric.steady_state_symmetric(gen)
    row = {"mean_sz": st.sz()}
    if n > 1:
        c = st.pair_correlator()
        row["Z_Q_raw"] = float(c.real)
        row["Z_Q"] = st.zq()
        _pair_metrics(symmetric.reduced_pair_state(st), row, sol["correlations"])
        if sol["correlations"] and n <= 12:
            row["qfi_ensemble"] = observables.qfi_mixed(symmetric.to_dense(st), observables.collective_spin_ops(n))
    return row, {}


def _decayed_two_time(st, p, rate, floor=1e-2, n_tau=801, t_cap=4000.0):
    """Collective correlation on a window extended until it has decayed below ``floor``."""
    span = 20.0 / rate
    while True:
        tau = np.linspace(0.0, span, n_tau)
        g = cumulant.collective_two_time_cumulant(st, p, tau)
        if abs(g[-1]) < floor * abs(g[0]) or span >= t_cap:
            return tau, g
        span *= 2


def run_cumulant(sysc, sol, seed):
    arr, cm, det = build_system(sysc, seed)
    W = float(sysc["W"])
    p = cumulant.CumulantParams.from_couplings(cm, W, det)
    st = cumulant.steady_state_cumulant(p, sol["truncation"]).final
    row = {"Z_Q": st.zq(), "Z_Q_raw": st.zq_raw(), "mean_sz": float(np.mean(st.sz))}
    tables = {}
    if sol["clusters"]:
        rows = []
        for d in sol["clusters"]:
            rows.append({"d": int(d), "alpha": float(sysc["alpha"]), "W": W,
                         "Z_Q_d": observables.zq_cluster(st.C, int(d), arr.positions)})
        tables["clusters"] = rows
    if sol["correlations"]:
        tau, g = _decayed_two_time(st, p, cm.gamma + W)
        wc = observables.carrier_frequency(tau, g)
        fit = observables.fit_two_time(tau, (g * np.exp(-1j * wc * tau)).real, oscillating=False)
        row.update({"two_time_gamma": fit.gamma_fit, "two_time_A": fit.A, "carrier": wc,
                    "fit_residual": fit.residual})
        tables["two_time"] = [{"W": W, "tau": t, "re": v.real, "im": v.imag} for t, v in zip(tau, g)]
    if sol["entrainment"]:
        targets, fits, wc = cumulant.entrainment_fits(st, p)
        hist = observables.frequency_histogram(fits)
        row["entrained_fraction"] = hist.entrained_fraction
        row["carrier"] = wc
        tables["entrainment"] = [dict(b=b, W=W, **ft.as_row()) for b, ft in zip(targets, fits)]
        tables["histogram"] = [{"W": W, "nu": c, "count": int(k)} for c, k in zip(hist.centers, hist.counts)]
    return row, tables


def _record_times(sol, default_final):
    t_final = default_final if sol["t_final"] is None else float(sol["t_final"])
    t_burn = min(float(sol["t_burn"]), t_final)
    return np.linspace(t_burn, t_final, int(sol["n_records"]))


def run_jump(sysc, sol, seed):
    arr, cm, det = build_system(sysc, seed)
    dt = 0.02 if sol["dt"] is None else float(sol["dt"])
    js = trajectories.JumpSystem(cm, float(sysc["W"]), det, dt=dt)
    rec = _record_times(sol, 45.0)
    ens = trajectories.run_jump_ensemble(js, rec, int(sol["n_traj"]), seed=seed, pair=tuple(sol["pair"]))
    z2 = ens.zq_samples()
    m = len(z2)
    row = {"Z_Q": float(np.sqrt(max(z2.mean(), 0.0))), "Z_Q_raw": float(z2.mean()),
           "Z_Q_raw_se": float(z2.std(ddof=1) / np.sqrt(m)) if m > 1 else float("nan"),
           "mean_sz": float(ens.sz.mean()), "jumps_mean": float(ens.jumps.mean()), "n_traj": m}
    _pair_metrics(ens.pair_states.mean(axis=(0, 1)), row, sol["correlations"])
    return row, {}


def run_qsd(sysc, sol, seed):
    arr, cm, det = build_system(sysc, seed)
    q = trajectories.QSDSystem(cm, float(sysc["W"]), det)
    rec = _record_times(sol, 1.5)
    res = trajectories.run_qsd(q, rec, int(sol["n_traj"]), seed=seed, dt=sol["dt"])
    per = res.qfi.mean(axis=1)
    n = cm.n
    lo, hi = observables.witness_bounds(n)
    row = {"qfi_conditional": float(per.mean()), "qfi_conditional_se": float(per.std(ddof=1) / np.sqrt(per.size)),
           "qfi_conditional_max": float(res.qfi.max()), "separable_bound": lo, "ceiling": hi,
           "Z_Q": float(np.sqrt(max(res.zq2.mean(), 0.0))), "dt": res.dt}
    if sysc["mode"] == "collective" and n <= 12 and sysc["detuning"]["kind"] == "delta":
        gen = symmetric.symmetric_generator(n, float(sysc["f_eff"]), float(sysc["W"]), float(sysc["gamma"]),
                                            sysc["diagonal"])
        rho = symmetric.to_dense(symmetric.steady_state_symmetric(gen))
        row["qfi_ensemble"] = observables.qfi_mixed(rho, observables.collective_spin_ops(n))
    return row, {}


ENGINE_FUNCS = {
    "meanfield": run_meanfield,
    "selfconsistent": run_selfconsistent,
    "master": run_master,
    "symmetric": run_symmetric,
    "cumulant": run_cumulant,
    "jump": run_jump,
    "qsd": run_qsd,
}


def run_point(cfg: dict, index: int, point: dict, seed: int, out_dir=None) -> PointResult:
    sysc, sol = _apply_point(cfg, point)
    s = point_seed(seed, index)
    try:
        fn = ENGINE_FUNCS[sol["engine"]]
        if sol["engine"] == "master":
            row, tables = fn(sysc, sol, s, out_dir, index)
        else:
            row, tables = fn(sysc, sol, s)
        return PointResult(index, point, row, tables)
    except Exception as exc:  # a failed point must not abort the sweep
        log.error("point %d failed: %s", index, exc)
        return PointResult(index, point, {"error": f"{type(exc).__name__}: {exc}"}, {}, False,
                           traceback.format_exc())


def _run_point_args(args):
    return run_point(*args)


def run(cfg: dict, seed: int | None = None, workers: int = 1, out_dir=None) -> RunRecord:
    """Execute every sweep point and write ``points.csv``, extra tables and ``run.json``."""
    cfg = cfgmod.validate(cfg)
    seed = int(cfg["system"]["seed"] if seed is None else seed)
    out = Path(cfg["output"]["directory"] if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pts = cfgmod.sweep_points(cfg)
    t0 = time.time()
    args = [(cfg, i, p, seed, out) for i, p in enumerate(pts)]
    if workers > 1 and len(pts) > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_run_point_args, args))
    else:
        results = [_run_point_args(a) for a in args]
    results.sort(key=lambda r: r.index)
    rec = RunRecord(cfgmod.config_hash(cfg), __version__, seed, time.time() - t0, results, out)
    fmts = cfg["output"]["formats"]
    if "csv" in fmts:
        dio.write_table(out / "points.csv", rec.table())
        names = sorted({k for r in results for k in r.tables})
        for name in names:
            rows = [dict(index=r.index, **row) for r in results for row in r.tables.get(name, [])]
            dio.write_table(out / f"{name}.csv", rows)
    if "json" in fmts:
        dio.write_json(out / "run.json", {
            "config": cfg, "config_hash": rec.config_hash, "code_version": rec.code_version, "seed": seed,
            "wall_time_s": rec.wall_time, "n_points": len(results), "n_failed": rec.n_failed,
            "failures": {r.index: r.row.get("error") for r in results if not r.ok},
            "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
        })
    return rec


# -- cross-engine validation --------------------------------------------------------

def validate_cross_engine(kind: str, n: int | None = None, seed: int = 0) -> dict:
    """Run two engines on one system and compare observables against declared tolerances.

    ``kind`` is ``exact-symmetric`` (N=4, tol 1e-8), ``exact-cumulant``
    (N=2, tol 1e-6) or ``jump-exact`` (N=6, three bootstrap standard errors).
    """
    if kind == "exact-symmetric":
        n = 4 if n is None else n
        f_eff, W = 6.0, 3.0
        cm = coupling_matrices(build_lattice(LatticeSpec(n)), Collective(f_eff))
        tg = np.linspace(0.0, 3.0, 31)
        L = master.Liouvillian(cm, W)
        ex = master.evolve(master.all_down(n), L, tg)
        gen = symmetric.symmetric_generator(n, f_eff, W)
        sy = symmetric.evolve_symmetric(symmetric.all_down_state(gen.basis), gen, tg)
        sz_ex = np.array([master.site_sz(r, n).mean() for r in ex.rhos])
        c_ex = np.array([master.pair_correlators(r, n)[0, 1] for r in ex.rhos])
        dev = {"sz": float(np.max(np.abs(sz_ex - sy.sz))), "correlator": float(np.max(np.abs(c_ex - sy.correlator)))}
        tol = 1e-8
    elif kind == "exact-cumulant":
        n = 2 if n is None else n
        arr = build_lattice(LatticeSpec(n, 1, 0.1, 0.6, [0.3, -0.2][:n] if n == 2 else None))
        cm = coupling_matrices(arr)
        W = 2.0
        tg = np.linspace(0.0, 3.0, 31)
        L = master.Liouvillian(cm, W, arr.detunings)
        ex = master.evolve(master.all_down(n), L, tg)
        p = cumulant.CumulantParams.from_couplings(cm, W, arr.detunings)
        cu = cumulant.evolve_cumulant(p, tg, truncation="full", rtol=1e-10, atol=1e-12)
        sz_dev = max(float(np.max(np.abs(master.site_sz(r, n) - cu.state(k).sz))) for k, r in enumerate(ex.rhos))
        c_dev = max(float(np.max(np.abs((master.pair_correlators(r, n) - cu.state(k).C)[~np.eye(n, dtype=bool)])))
                    for k, r in enumerate(ex.rhos))
        dev = {"sz": sz_dev, "correlator": c_dev}
        tol = 1e-6
    elif kind == "jump-exact":
        n = 6 if n is None else n
        f_eff, W = 5.0, 2.5
        cm = coupling_matrices(build_lattice(LatticeSpec(n)), Collective(f_eff))
        rho = master.steady_state(master.Liouvillian(cm, W))
        ref = master.reduced_state(rho, n, [0, 1])
        ens = trajectories.run_jump_ensemble(trajectories.JumpSystem(cm, W, dt=0.02), [10.0], 1000, seed=seed)
        samples = ens.pair_states[:, -1]
        td = trajectories.trace_distance(ens.mean_pair_state(), ref)
        se = trajectories.bootstrap_trace_distance(samples)
        dev = {"pair_trace_distance": td}
        tol = 3 * se
    else:
        raise ValueError(f"unknown validation {kind!r}")
    return {"kind": kind, "n": n, "deviation": dev, "tolerance": tol,
            "passed": all(v <= tol for v in dev.values())}
