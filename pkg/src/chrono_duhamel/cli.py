"""Batch driver.

``chrono-duhamel <command> --config <path> [--out <dir>] [--seed <u64>]``

Commands: propagate, evolve, invariance, certify, trees, selftest.
Configuration is a plain-text INI file with sections; every field has a
default (see DEFAULTS).  Outputs are deterministic for a fixed
config+seed, and every CSV carries the fully resolved configuration in
its header comment.  Exit status: 0 success, 1 numerical failure,
2 configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import chrono, dynamics, propagator, series, symfun

DEFAULTS: dict[str, dict[str, str]] = {
    "grid": {"m": "32", "lx": str(2 * math.pi)},
    "dispersion": {"kind": "klein_gordon", "mass": "1.0"},
    "nonlinearity": {"3": "1.0"},
    "initial": {"kind": "cosine", "amplitude": "0.05", "mode": "1", "file": ""},
    "times": {"t1": "0.0", "t2": "1.0", "steps": "100"},
    "functional": {
        "kind": "point_eval",
        "t_point": "0.0",
        "x_index": "0",
        "weights": "",
        "tensor_file": "",
    },
    "caps": {"degree_cap": "5", "tree_order": "2"},
    "tolerances": {
        "s": "0.0",
        "m_ref": "1.0",
        "flow_floor": "1e-12",
        "certify_radius": "0.2",
        "certify_floor": "0.05",
        "x_coeffs": "",
        "substeps": "1",
    },
    "output": {"directory": "out", "seed": "0", "snapshots": "0"},
}


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    raw: dict[str, dict[str, str]] = field(default_factory=dict)

    @staticmethod
    def load(path: str | None) -> "RunConfig":
        merged = {sec: dict(vals) for sec, vals in DEFAULTS.items()}
        if path:
            if not os.path.exists(path):
                raise ConfigError(f"config file not found: {path}")
            parser = configparser.ConfigParser()
            try:
                parser.read(path)
            except configparser.Error as exc:
                raise ConfigError(f"config parse error: {exc}") from exc
            for sec in parser.sections():
                if sec not in merged:
                    raise ConfigError(f"unknown config section [{sec}]")
                for key, val in parser.items(sec):
                    if sec != "nonlinearity" and key not in merged[sec]:
                        raise ConfigError(f"unknown field {key!r} in section [{sec}]")
                    merged[sec][key] = val
            if parser.has_section("nonlinearity"):
                merged["nonlinearity"] = dict(parser.items("nonlinearity"))
        return RunConfig(merged)

    # -- typed accessors ----------------------------------------------------

    def _get(self, sec: str, key: str, cast):
        try:
            return cast(self.raw[sec][key])
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad or missing field [{sec}] {key}: {exc}") from exc

    @property
    def grid(self) -> propagator.Grid:
        try:
            return propagator.Grid(self._get("grid", "m", int), self._get("grid", "lx", float))
        except ValueError as exc:
            raise ConfigError(f"bad grid: {exc}") from exc

    @property
    def disp(self) -> propagator.DispersionRelation:
        try:
            return propagator.DispersionRelation(
                self.raw["dispersion"]["kind"], self._get("dispersion", "mass", float)
            )
        except ValueError as exc:
            raise ConfigError(f"bad dispersion: {exc}") from exc

    @property
    def nonlin(self) -> dynamics.NonlinearitySpec:
        try:
            coeffs = {int(k): float(v) for k, v in self.raw["nonlinearity"].items()}
        except ValueError as exc:
            raise ConfigError(f"bad nonlinearity coefficient: {exc}") from exc
        return dynamics.NonlinearitySpec(coeffs)

    @property
    def times(self) -> tuple[float, float, int]:
        return (
            self._get("times", "t1", float),
            self._get("times", "t2", float),
            self._get("times", "steps", int),
        )

    @property
    def seed(self) -> int:
        return self._get("output", "seed", int)

    @property
    def out_dir(self) -> str:
        return self.raw["output"]["directory"]

    def tol(self, key: str, cast=float):
        return self._get("tolerances", key, cast)

    def resolved_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True)

    def initial_data(self) -> propagator.CauchyData:
        grid, disp = self.grid, self.disp
        kind = self.raw["initial"]["kind"]
        t1 = self.times[0]
        if kind == "file":
            path = self.raw["initial"]["file"]
            if not path or not os.path.exists(path):
                raise ConfigError(f"initial data file not found: {path!r}")
            _, data = propagator.load_snapshot(path)
            return data
        amp = self._get("initial", "amplitude", float)
        if kind == "cosine":
            mode = self._get("initial", "mode", int)
            psi = amp * np.cos(2 * np.pi * mode * grid.x / grid.Lx)
        elif kind == "random":
            rng = np.random.default_rng(self.seed)
            psi = amp * rng.standard_normal(grid.M)
        else:
            raise ConfigError(f"unknown initial kind {kind!r}")
        chi = np.zeros(grid.M) if disp.second_order else None
        if disp.kind == propagator.SCHRODINGER:
            psi = psi.astype(complex)
        return propagator.CauchyData(grid, psi, chi, t1)

    def functional(self, chart: chrono.ChartMap) -> symfun.SymFunctional:
        kind = self.raw["functional"]["kind"]
        if kind == "point_eval":
            return chrono.point_eval_functional(
                chart,
                self._get("functional", "t_point", float),
                self._get("functional", "x_index", int),
            )
        if kind == "linear_weights":
            txt = self.raw["functional"]["weights"]
            try:
                w = np.array([float(v) for v in txt.split(",")])
            except ValueError as exc:
                raise ConfigError(f"bad functional weights: {exc}") from exc
            if w.size != chart.grid.M:
                raise ConfigError("functional weights length must equal the grid size")
            t_pt = self._get("functional", "t_point", float)
            row = (w * chart.grid.dx) @ chart.sampling_rows(t_pt)
            return symfun.SymFunctional([symfun.SymTensor(1, chart.dim, row)])
        if kind == "tensor_file":
            path = self.raw["functional"]["tensor_file"]
            if not path or not os.path.exists(path):
                raise ConfigError(f"functional tensor file not found: {path!r}")
            return symfun.SymFunctional([symfun.load_tensor(path)])
        raise ConfigError(f"unknown functional kind {kind!r}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _write_csv(path: str, header: str, lines: list[str], cfg: RunConfig) -> None:
    with open(path, "w") as fh:
        fh.write(f"# config {cfg.resolved_json()}\n")
        fh.write(header + "\n")
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def cmd_propagate(cfg: RunConfig, out: str) -> None:
    grid, disp = cfg.grid, cfg.disp
    t1, t2, steps = cfg.times
    data = cfg.initial_data()
    s, m_ref = cfg.tol("s"), cfg.tol("m_ref")
    lines = []
    for tau in np.linspace(t1, t2, steps + 1):
        snap = propagator.propagate(disp, data, float(tau))
        nrm = propagator.cau_norm(disp, snap, s, m_ref)
        en = propagator.energy(disp, snap) if disp.second_order else float("nan")
        lines.append(f"{float(tau)!r},{nrm!r},{en!r}")
        if cfg._get("output", "snapshots", int):
            propagator.save_snapshot(disp, snap, os.path.join(out, f"field_{tau:.6f}.csv"))
    _write_csv(os.path.join(out, "propagate.csv"), "t,cau_norm,energy", lines, cfg)


def cmd_evolve(cfg: RunConfig, out: str) -> list[dynamics.EvolutionState]:
    t1, t2, steps = cfg.times
    dt = abs(t2 - t1) / steps if steps else 1.0
    traj = dynamics.evolve(cfg.initial_data(), t1, t2, dt, cfg.disp, cfg.nonlin)
    dynamics.trajectory_csv(
        traj,
        os.path.join(out, "trajectory.csv"),
        s=cfg.tol("s"),
        m_ref=cfg.tol("m_ref"),
        header_comment=f"config {cfg.resolved_json()}",
    )
    if cfg._get("output", "snapshots", int):
        last = traj[-1]
        snap = propagator.sample_at(last.disp, last.current, last.time)
        propagator.save_snapshot(last.disp, snap, os.path.join(out, "final_field.csv"))
    return traj


def cmd_invariance(cfg: RunConfig, out: str) -> float:
    t1, t2, steps = cfg.times
    chart = chrono.ChartMap(cfg.grid, cfg.disp, cfg.tol("s"), cfg.tol("m_ref"))
    traj = dynamics.evolve(
        cfg.initial_data(), t1, t2, abs(t2 - t1) / steps, cfg.disp, cfg.nonlin
    )
    f = cfg.functional(chart)
    cap = cfg._get("caps", "degree_cap", int)
    times, values, drift, events = chrono.invariance_scan(
        f, traj, t1, t2, chart, substeps=cfg.tol("substeps", int), cap=cap
    )
    stage_times = np.linspace(t1, t2, 2 * (len(times) - 1) + 1) if len(times) > 1 else [t1]
    X = chrono.transport_majorant(cfg.nonlin, chart, stage_times)
    rec = chrono.certify_window(
        symfun.majorant_of(f, chart.norm_spec),
        X,
        cfg.tol("certify_radius"),
        abs(t2 - t1),
        floor=cfg.tol("flow_floor"),
    )
    chrono.invariance_csv(
        times,
        values,
        rec.certified_radius,
        events,
        os.path.join(out, "invariance.csv"),
        header_comment=f"config {cfg.resolved_json()}",
    )
    return drift


def cmd_certify(cfg: RunConfig, out: str) -> chrono.CertificationRecord:
    t1, t2, steps = cfg.times
    chart = chrono.ChartMap(cfg.grid, cfg.disp, cfg.tol("s"), cfg.tol("m_ref"))
    f = cfg.functional(chart)
    preset = cfg.raw["tolerances"]["x_coeffs"]
    if preset:
        try:
            X = series.MajorantSeries([float(v) for v in preset.split(",")])
        except ValueError as exc:
            raise ConfigError(f"bad x_coeffs: {exc}") from exc
    else:
        stage_times = np.linspace(t1, t2, 2 * max(steps, 1) + 1)
        X = chrono.transport_majorant(cfg.nonlin, chart, stage_times)
    R = cfg.tol("certify_radius")
    floor = cfg.tol("certify_floor")
    t_bar = series.guaranteed_time(X, R, floor) if not X.is_zero else math.inf
    span = abs(t2 - t1)
    rec = chrono.certify_window(symfun.majorant_of(f, chart.norm_spec), X, R, span)
    lines = [
        f"{R!r},{span!r},{rec.certified_radius!r},{int(rec.window_ok)},"
        f"{rec.f_majorant_at_R!r},{t_bar!r}"
    ]
    _write_csv(
        os.path.join(out, "certify.csv"),
        "radius_in,span,certified_radius,window_ok,f_majorant_at_R,guaranteed_time",
        lines,
        cfg,
    )
    return rec


def cmd_trees(cfg: RunConfig, out: str) -> float:
    t1, t2, _ = cfg.times
    chart = chrono.ChartMap(cfg.grid, cfg.disp, cfg.tol("s"), cfg.tol("m_ref"))
    f = cfg.functional(chart)
    K = cfg._get("caps", "tree_order", int)
    u = propagator.make_free_solution(cfg.disp, cfg.initial_data())
    trees, _ = chrono.tree_expand(f, t1, t2, K, cfg.disp, cfg.nonlin, chart)
    lines = []
    total = 0.0
    for tree in trees:
        contrib = chrono.evaluate_trees([tree], f, u, t1, t2, cfg.disp, cfg.nonlin, chart)
        total += contrib
        lines.append(f"{tree.order},{'-'.join(map(str, tree.parents))},{tree.multiplicity},{contrib!r}")
    lines.append(f"total,,,{total!r}")
    _write_csv(os.path.join(out, "trees.csv"), "order,parents,multiplicity,value", lines, cfg)
    return total


def cmd_selftest(cfg: RunConfig, out: str) -> bool:
    """Quick pass/fail ledger over the package invariants."""
    rng = np.random.default_rng(cfg.seed)
    grid = propagator.Grid(8, 2 * math.pi)
    disp = propagator.DispersionRelation("klein_gordon", 1.0)
    cubic = dynamics.NonlinearitySpec.cubic(1.0)
    chart = chrono.ChartMap(grid, disp)
    checks: list[tuple[str, bool]] = []

    def data(scale=0.05):
        return propagator.CauchyData(
            grid, scale * rng.standard_normal(grid.M), scale * rng.standard_normal(grid.M), 0.0
        )

    d = data()
    back = propagator.propagate(disp, propagator.propagate(disp, d, 1.3), 0.0)
    checks.append(("propagator_time_reversal", float(np.max(np.abs(back.psi - d.psi))) < 1e-12))
    e0 = propagator.energy(disp, d)
    e1 = propagator.energy(disp, propagator.propagate(disp, d, 2.1))
    checks.append(("energy_conservation", abs(e1 - e0) <= 1e-12 * max(e0, 1.0)))

    traj = dynamics.evolve(data(), 0.0, 0.5, 0.05, disp, dynamics.NonlinearitySpec.zero())
    fixed = all(
        np.allclose(st.current.chart_data.psi, traj[0].current.chart_data.psi, atol=1e-13)
        for st in traj
    )
    checks.append(("free_dynamics_chart_fixed_point", fixed))

    bench = propagator.CauchyData(
        grid, 0.05 * np.cos(2 * np.pi * grid.x / grid.Lx), np.zeros(grid.M), 0.0
    )
    res_c, _ = dynamics.duhamel_residual(dynamics.evolve(bench, 0, 1, 0.1, disp, cubic), 0, 1)
    res_f, _ = dynamics.duhamel_residual(dynamics.evolve(bench, 0, 1, 0.05, disp, cubic), 0, 1)
    checks.append(("duhamel_residual_order4", res_c / max(res_f, 1e-300) > 8.0))

    f = chrono.point_eval_functional(chart, 0.0, 0)
    traj = dynamics.evolve(bench, 0.0, 0.3, 0.025, disp, cubic)
    _, values, drift, _ = chrono.invariance_scan(f, traj, 0.0, 0.3, chart)
    checks.append(("main_invariance_small_drift", drift < 1e-6))

    X = series.MajorantSeries([0, 0, 0, 2.0])
    tbar = series.guaranteed_time(X, 1.0, 0.5)
    checks.append(("guaranteed_time_closed_form", abs(tbar - 0.75) < 1e-6))

    ok = True
    for name, passed in checks:
        print(f"{name}: {'PASS' if passed else 'FAIL'}")
        ok &= passed
    return ok


COMMANDS = {
    "propagate": cmd_propagate,
    "evolve": cmd_evolve,
    "invariance": cmd_invariance,
    "certify": cmd_certify,
    "trees": cmd_trees,
    "selftest": cmd_selftest,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="chrono-duhamel", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", default=None, help="INI configuration file")
    parser.add_argument("--out", default=None, help="output directory override")
    parser.add_argument("--seed", type=int, default=None, help="rng seed override")
    args = parser.parse_args(argv)

    try:
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            cfg.raw["output"]["seed"] = str(args.seed)
        out = args.out or cfg.out_dir
        os.makedirs(out, exist_ok=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        result = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (dynamics.DivergenceError, FloatingPointError) as exc:
        print(f"numerical failure in {args.command}: {exc}", file=sys.stderr)
        return 1
    if args.command == "selftest" and not result:
        return 1
    if args.command == "invariance":
        print(f"invariance drift: {result!r}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
