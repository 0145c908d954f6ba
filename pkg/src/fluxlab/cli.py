"""Command line front end over every backend and the transport solver.

One invocation runs one subcommand (closed-form fluid, integral-equation
models, ring diagonalization, transport, or a generic check sweep) and writes
the same artifact triple: report.json with every check result, tables/*.csv
with plot-ready data, and summary.txt. Exit code 0 means all checks passed,
1 is a scientific failure, 2 a usage problem. Values come from a TOML config
file, command line flags, or built-in defaults, in increasing precedence;
reports are assembled in a fixed order so a pinned seed reproduces report.json
byte for byte.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import tomli

from . import core, hydro
from .cft import CftBackend, CftState
from .edchain import (ChainSpec, EdBackend, check_first_moment, check_kms,
                      check_tangent, random_local_observable)
from .errors import ConfigError, FluxlabError
from .potentials import PotentialVector
from .tba import (QuadratureGrid, TbaBackend, check_asymptotic,
                  check_unitarity, free_classical, free_fermion, hard_rods,
                  lieb_liniger)

THERMO_CHECKS = ("ekms", "g1-equals-f", "b-symmetry", "c-psd",
                 "identity-a", "identity-b", "identity-c", "identity-d")
TBA_STRUCTURE_CHECKS = ("unitarity", "asymptotic")
ED_CHECKS = ("kms", "tangent", "first-moment")
HYDRO_CHECKS = ("stationarity", "entropy-budget")
KNOWN_CHECKS = frozenset(THERMO_CHECKS + TBA_STRUCTURE_CHECKS + ED_CHECKS
                         + HYDRO_CHECKS)

TBA_MODEL_NAMES = ("free-fermion", "free-classical", "hard-rods",
                   "lieb-liniger")

# closed forms tolerate tight bounds; differenced routes get loose ones.
# for the two transport checks the number is a required convergence order,
# not a residual bound.
DEFAULT_TOLS = {
    "cft": {"ekms": 1e-10, "g1-equals-f": 1e-12, "b-symmetry": 1e-10,
            "c-psd": 1e-10, "identity-a": 1e-10, "identity-b": 1e-10,
            "identity-c": 1e-10, "identity-d": 1e-10},
    "tba": {"ekms": 1e-10, "g1-equals-f": 1e-9, "b-symmetry": 1e-6,
            "c-psd": 1e-6, "identity-a": 1e-6, "identity-b": 1e-6,
            "identity-c": 1e-7, "identity-d": 1e-7,
            "unitarity": 1e-10, "asymptotic": 1e-12},
    "ed": {"kms": 1e-10, "tangent": 1e-8, "first-moment": 1e-3,
           "b-symmetry": 1e-6, "c-psd": 1e-6, "identity-b": 1e-6},
    "hydro": {"stationarity": 1.8, "entropy-budget": 1.8},
}


# ---------------------------------------------------------------------------
# config plumbing

def _load_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        # tomli messages carry "(at line N, column M)"
        raise ConfigError(f"{path}: {exc}") from None


def _section(cfg: dict, name: str, allowed: set[str]) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table, got {type(sec).__name__}")
    unknown = sorted(set(sec) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {', '.join(unknown)}")
    return sec


def _coerce(key: str, kind, value):
    if value is None:
        return None
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{key}' must be a number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"'{key}' must be an integer, got {value!r}")
        return int(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"'{key}' must be a string, got {value!r}")
        return value
    if kind is list:
        if isinstance(value, str):
            return [value]
        if not isinstance(value, list) or not all(
                isinstance(v, (str, int)) and not isinstance(v, bool)
                for v in value):
            raise ConfigError(f"'{key}' must be a list of names, got {value!r}")
        return [str(v) for v in value]
    raise AssertionError(kind)


# per-subcommand parameter schema: dest -> (type, default)
SCHEMAS = {
    "checks": {"backend": (str, "cft"), "samples": (int, 5),
               "check": (list, None), "d": (int, 2), "a": (float, 1.0),
               "coupling": (float, 1.0), "rod_length": (float, 1.0),
               "grid_size": (int, 400), "N": (int, 10)},
    "tba": {"model": (str, "hard-rods"), "coupling": (float, 1.0),
            "rod_length": (float, 1.0), "grid_size": (int, 400),
            "beta0": (float, None), "beta1": (float, None),
            "beta2": (float, None), "beta4": (float, None),
            "samples": (int, 3), "check": (list, None),
            "grid_scan": (int, 0)},
    "cft": {"d": (int, 2), "a": (float, 1.0), "beta_rest": (float, 1.0),
            "theta": (float, 0.3), "beta1": (float, None),
            "beta2": (float, None), "samples": (int, 5),
            "check": (list, None)},
    "edchain": {"N": (int, 10), "beta0": (float, None),
                "beta2": (float, None), "beta4": (float, None),
                "samples": (int, 3), "pair": (list, None),
                "check": (list, None)},
    "hydro": {"backend": (str, "cft"), "d": (int, 2), "a": (float, 1.0),
              "coupling": (float, 1.0), "rod_length": (float, 1.0),
              "grid_size": (int, 96), "cells": (int, 32),
              "refinements": (int, 2), "t_end": (float, 0.5),
              "beta_bar": (float, 1.0), "mu_bar": (float, 0.0),
              "scheme": (str, "central"), "cfl": (float, 0.4),
              "amplitude": (float, 0.2), "center": (float, 0.3),
              "width": (float, 4.0), "velocity_amplitude": (float, 0.08),
              "check": (list, None), "mock_offset": (float, None)},
}


def _merge_params(args: argparse.Namespace, cfg: dict, sub: str) -> SimpleNamespace:
    schema = SCHEMAS[sub]
    sec = _section(cfg, sub, allowed=set(schema))
    merged = {}
    for key, (kind, default) in schema.items():
        value = getattr(args, key, None)
        if value is None:
            value = _coerce(key, kind, sec.get(key))
        if value is None:
            value = default
        merged[key] = value
    return SimpleNamespace(**merged)


def _tol_overrides(args: argparse.Namespace, cfg: dict) -> dict[str, float]:
    out: dict[str, float] = {}
    table = _section(cfg, "tolerances", allowed=KNOWN_CHECKS | {"c-psd"})
    for name, value in table.items():
        out[name] = _coerce(f"tolerances.{name}", float, value)
    for item in getattr(args, "tol", None) or []:
        name, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--tol expects NAME=VAL, got '{item}'")
        if name not in KNOWN_CHECKS:
            raise ConfigError(f"unknown check name in --tol: '{name}'")
        try:
            out[name] = float(value)
        except ValueError:
            raise ConfigError(f"--tol {name}: '{value}' is not a number") from None
    return out


def _resolve_tols(kind: str, overrides: dict[str, float]) -> dict[str, float]:
    tols = dict(DEFAULT_TOLS[kind])
    for name, value in overrides.items():
        if name in tols:
            tols[name] = value
    return tols


def _validate_checks(names: list[str], allowed: tuple[str, ...], context: str):
    for name in names:
        if name not in KNOWN_CHECKS:
            raise ConfigError(f"unknown check '{name}'")
        if name not in allowed:
            raise ConfigError(f"check '{name}' is not available for {context}")


# ---------------------------------------------------------------------------
# backend construction

def _tba_model(name: str, ns: SimpleNamespace):
    if name == "free-fermion":
        return free_fermion()
    if name == "free-classical":
        return free_classical()
    if name == "hard-rods":
        return hard_rods(ns.rod_length)
    if name == "lieb-liniger":
        return lieb_liniger(ns.coupling)
    raise ConfigError(f"unknown model '{name}' (expected one of "
                      f"{', '.join(TBA_MODEL_NAMES)})")


def _state_from_flags(ns: SimpleNamespace, keys: tuple[int, ...],
                      fallback: dict[int, float]) -> PotentialVector:
    given = {k: getattr(ns, f"beta{k}") for k in keys
             if getattr(ns, f"beta{k}", None) is not None}
    return PotentialVector.of(given or fallback)


# ---------------------------------------------------------------------------
# check drivers

def _run_thermo_checks(backend, samples, names, tols) -> list[core.CheckReport]:
    reports = []
    if "ekms" in names:
        reports.append(core.check_ekms(backend, samples, tols["ekms"]))
    for idx, beta in enumerate(samples):
        batch = []
        if "g1-equals-f" in names:
            batch.append(core.check_g1_equals_f(backend, beta,
                                                tols["g1-equals-f"]))
        if "b-symmetry" in names:
            batch.append(core.check_b_symmetry(backend, beta,
                                               tols["b-symmetry"]))
        if "c-psd" in names:
            batch.append(core.check_c_psd(backend, beta, tols["c-psd"]))
        # identities sharing a tolerance run off one current table
        groups: dict[float, list[str]] = {}
        for name in names:
            if name.startswith("identity-"):
                groups.setdefault(tols[name], []).append(name.split("-")[1])
        for tol_value, letters in sorted(groups.items()):
            batch.extend(core.check_identities(backend, beta, tol_value,
                                               which=tuple(sorted(letters))))
        for rep in batch:
            rep.details["sample"] = idx
        reports.extend(batch)
    return reports


def run_checks(ns, tols_overrides, rng):
    name = ns.backend
    if name == "cft":
        backend = CftBackend(d=ns.d, a=ns.a)
        allowed, kind = THERMO_CHECKS, "cft"
        default = list(THERMO_CHECKS)
    elif name in TBA_MODEL_NAMES:
        backend = TbaBackend(_tba_model(name, ns), size=ns.grid_size)
        allowed, kind = THERMO_CHECKS + TBA_STRUCTURE_CHECKS, "tba"
        default = ["ekms", "g1-equals-f", "unitarity", "asymptotic"]
    elif name == "ed":
        backend = EdBackend(ChainSpec(ns.N))
        allowed = ED_CHECKS + ("b-symmetry", "c-psd", "identity-b")
        kind = "ed"
        default = list(ED_CHECKS)
    else:
        raise ConfigError(f"unknown backend '{name}'")
    names = ns.check or default
    _validate_checks(names, allowed, f"backend '{name}'")
    tols = _resolve_tols(kind, tols_overrides)

    if ns.samples < 2 and "ekms" in names:
        raise ConfigError("ekms compares states, use --samples >= 2")
    samples = [backend.sample_state(rng) for _ in range(ns.samples)]
    thermo_names = [n for n in names if n in THERMO_CHECKS]
    reports = _run_thermo_checks(backend, samples, thermo_names, tols)

    if "unitarity" in names:
        grid = QuadratureGrid.build(24.0, backend.size)
        reports.append(check_unitarity(backend.model, grid, tols["unitarity"]))
    if "asymptotic" in names:
        for idx, beta in enumerate(samples):
            rep = check_asymptotic(backend.solved(beta), tols["asymptotic"])
            rep.details["sample"] = idx
            reports.append(rep)
    if kind == "ed":
        reports.extend(_ed_reports(backend, samples, names, tols, rng))
    return reports, {}, {"backend": backend.name, "samples": ns.samples}


def _ed_reports(backend: EdBackend, samples, names, tols, rng):
    reports = []
    chain = backend.chain
    directions = backend.charge_indices
    for idx, beta in enumerate(samples):
        ens = backend.ensemble(beta)
        batch = []
        if "kms" in names:
            o1 = random_local_observable(rng, chain)
            o2 = random_local_observable(rng, chain)
            batch.append(check_kms(ens, o1, o2, tols["kms"]))
        if "tangent" in names:
            direction = directions[idx % len(directions)]
            batch.append(check_tangent(ens, random_local_observable(rng, chain),
                                       direction, tols["tangent"]))
        if "first-moment" in names:
            batch.append(check_first_moment(ens, 2, 4, tols["first-moment"],
                                            min_sites=8))
        for rep in batch:
            rep.details["sample"] = idx
        reports.extend(batch)
    return reports


def run_tba(ns, tols_overrides, rng):
    model = _tba_model(ns.model, ns)
    backend = TbaBackend(model, size=ns.grid_size)
    tols = _resolve_tols("tba", tols_overrides)
    names = ns.check or ["ekms", "g1-equals-f", "unitarity", "asymptotic"]
    _validate_checks(names, THERMO_CHECKS + TBA_STRUCTURE_CHECKS,
                     f"model '{ns.model}'")
    state = _state_from_flags(ns, (0, 1, 2, 4), {1: 0.1, 2: 1.0, 4: 0.2})
    state = state.padded(backend.charge_indices)
    extra = max(0, ns.samples - 1) if "ekms" not in names else \
        max(1, ns.samples - 1)
    samples = [state] + [backend.sample_state(rng) for _ in range(extra)]

    thermo_names = [n for n in names if n in THERMO_CHECKS]
    reports = _run_thermo_checks(backend, samples, thermo_names, tols)
    if "unitarity" in names:
        grid = QuadratureGrid.build(24.0, backend.size)
        reports.append(check_unitarity(model, grid, tols["unitarity"]))
    if "asymptotic" in names:
        for idx, beta in enumerate(samples):
            rep = check_asymptotic(backend.solved(beta), tols["asymptotic"])
            rep.details["sample"] = idx
            reports.append(rep)

    tables = {"state.csv": core.assemble_report(backend, state).to_csv()}
    if ns.grid_scan > 0:
        rows = ["grid_size,ekms_residual"]
        for level in range(ns.grid_scan + 1):
            size = ns.grid_size * 2 ** level
            scan_backend = TbaBackend(model, size=size)
            rep = core.check_ekms(scan_backend, samples, tols["ekms"])
            rows.append(f"{size},{rep.residual!r}")
        tables["grid_scan.csv"] = "\n".join(rows) + "\n"
    return reports, tables, {"backend": backend.name,
                             "state": state.as_dict(),
                             "grid_size": ns.grid_size}


def run_cft(ns, tols_overrides, rng):
    backend = CftBackend(d=ns.d, a=ns.a)
    tols = _resolve_tols("cft", tols_overrides)
    names = ns.check or list(THERMO_CHECKS)
    _validate_checks(names, THERMO_CHECKS, "the closed-form fluid")
    if ns.beta1 is not None or ns.beta2 is not None:
        state = PotentialVector.of({1: ns.beta1 or 0.0, 2: ns.beta2 or 0.0})
        if not backend.admissible(state):
            raise ConfigError(
                f"state {state} is outside the timelike wedge u > |v|")
    else:
        state = CftState(ns.d, ns.beta_rest, ns.theta, ns.a).beta
    extra = max(1, ns.samples - 1) if "ekms" in names else max(0, ns.samples - 1)
    samples = [state] + [backend.sample_state(rng) for _ in range(extra)]
    reports = _run_thermo_checks(backend, samples, names, tols)
    tables = {"state.csv": core.assemble_report(backend, state).to_csv()}
    return reports, tables, {"backend": backend.name, "state": state.as_dict()}


def run_edchain(ns, tols_overrides, rng):
    tols = _resolve_tols("ed", tols_overrides)
    names = ns.check or list(ED_CHECKS)
    _validate_checks(names, ED_CHECKS + ("b-symmetry", "c-psd", "identity-b"),
                     "the ring backend")
    beta = _state_from_flags(ns, (0, 2, 4), {2: 0.2})
    backend = EdBackend(ChainSpec(ns.N))
    if not backend.admissible(beta):
        raise ConfigError(f"state {beta} is outside the ensemble bound "
                          f"|beta| <= {backend.beta_bound}")
    pair = tuple(int(p) for p in (ns.pair or ["2", "4"]))
    if len(pair) != 2 or any(p not in backend.charge_indices for p in pair):
        raise ConfigError(f"--pair must name two carried charges, got {pair}")

    reports = []
    ens = backend.ensemble(beta)
    for idx in range(ns.samples):
        if "kms" in names:
            rep = check_kms(ens, random_local_observable(rng, backend.chain),
                            random_local_observable(rng, backend.chain),
                            tols["kms"])
            rep.details["sample"] = idx
            reports.append(rep)
        if "tangent" in names:
            direction = backend.charge_indices[idx % len(backend.charge_indices)]
            rep = check_tangent(ens, random_local_observable(rng, backend.chain),
                                direction, tols["tangent"])
            rep.details["sample"] = idx
            reports.append(rep)

    tables = {}
    if "first-moment" in names:
        rows = ["N,residual,lhs,rhs"]
        for n_sites in range(8, ns.N + 1, 2):
            scan_ens = ens if n_sites == ns.N else \
                EdBackend(ChainSpec(n_sites)).ensemble(beta)
            rep = check_first_moment(scan_ens, *pair, tols["first-moment"],
                                     min_sites=8)
            rows.append(f"{n_sites},{rep.residual!r},"
                        f"{rep.details['lhs']!r},{rep.details['rhs']!r}")
            if n_sites == ns.N:
                reports.append(rep)
        tables["nscan.csv"] = "\n".join(rows) + "\n"

    thermo_names = [n for n in names if n in THERMO_CHECKS]
    if thermo_names:
        reports.extend(_run_thermo_checks(backend, [beta], thermo_names, tols))
    return reports, tables, {"backend": backend.name, "state": beta.as_dict(),
                             "pair": list(pair)}


# ---------------------------------------------------------------------------
# transport runs

def _hydro_eos(ns) -> hydro.CellEos:
    if ns.backend == "cft":
        return hydro.CftCellEos(d=ns.d, a=ns.a)
    if ns.backend in TBA_MODEL_NAMES:
        return hydro.TbaCellEos(_tba_model(ns.backend, ns), indices=(0, 1, 2),
                                size=ns.grid_size)
    raise ConfigError(f"unknown transport backend '{ns.backend}'")


def _hydro_fields(ns, indices) -> hydro.FieldProfile:
    spec = {1: {"base": 0.0, "terms": [{"kind": "cosine", "mode": 1,
                                        "amplitude": ns.velocity_amplitude}]},
            2: {"base": 1.0, "terms": [{"kind": "bump",
                                        "amplitude": ns.amplitude,
                                        "center": ns.center,
                                        "width": ns.width}]}}
    if 0 in indices:
        spec[0] = 1.0
    return hydro.FieldProfile.build(1.0, spec)


def _off_family_state(eos, grid, fields, ns) -> hydro.HydroState:
    beta = hydro.stationary_potentials(fields, grid, eos.indices,
                                       ns.beta_bar, ns.mu_bar)
    x = grid.centers
    p1 = eos.indices.index(1)
    p2 = eos.indices.index(2)
    beta[:, p1] = beta[:, p1] + 0.05 * np.cos(2 * np.pi * x / grid.length)
    beta[:, p2] = beta[:, p2] * (1.0 + 0.12 * np.cos(2 * np.pi * (x - 0.15)
                                                     / grid.length))
    return hydro.state_from_potentials(eos, grid, beta)


def run_hydro(ns, tols_overrides, rng):
    tols = _resolve_tols("hydro", tols_overrides)
    names = ns.check or ["stationarity"]
    _validate_checks(names, HYDRO_CHECKS, "the transport solver")
    eos = _hydro_eos(ns)
    if ns.mu_bar != 0.0 and 0 not in eos.indices:
        raise ConfigError("--mu-bar needs a backend carrying charge 0")
    if ns.mock_offset is not None:
        n = len(eos.indices)
        offset = ns.mock_offset * (0.75 * np.ones((n, n)) + 0.5 * np.eye(n))
        eos = hydro.with_current_offset(eos, offset)
    if ns.refinements < 2:
        raise ConfigError("order measurement needs --refinements >= 2")

    fields = _hydro_fields(ns, eos.indices)
    cells_list = [ns.cells * 2 ** level for level in range(ns.refinements)]
    drifts, nets, dxs = [], [], []
    finest = None
    for cells in cells_list:
        grid = hydro.Grid1D(1.0, cells)
        if "entropy-budget" in names:
            state = _off_family_state(eos, grid, fields, ns)
        else:
            state = hydro.stationary_state(eos, grid, fields,
                                           ns.beta_bar, ns.mu_bar)
        U = fields.sample(grid, eos.indices)[0]
        v_max = float(hydro.cell_speeds(eos, state.beta, U).max())
        n_steps = max(1, math.ceil(ns.t_end / (ns.cfl * grid.dx / v_max)))
        dt = ns.t_end / n_steps
        traj = hydro.evolve(eos, state, fields, dt=dt, t_end=ns.t_end,
                            scheme=ns.scheme,
                            record_every=max(1, n_steps // 10))
        drifts.append(float(np.max(np.abs(traj.frames[-1].q
                                          - traj.frames[0].q))))
        nets.append(hydro.entropy_budget(traj).net_change)
        dxs.append(grid.dx)
        finest = traj

    reports = []
    if "stationarity" in names:
        reports.append(_order_report("stationarity", eos.name, drifts,
                                     cells_list, tols["stationarity"]))
    if "entropy-budget" in names:
        reports.append(_order_report("entropy-budget", eos.name, nets,
                                     cells_list, tols["entropy-budget"]))

    tables = {"convergence.csv": "\n".join(
        ["cells,dx,drift,net_entropy"]
        + [f"{c},{dx!r},{dr!r},{ne!r}"
           for c, dx, dr, ne in zip(cells_list, dxs, drifts, nets)]) + "\n"}
    for i in range(len(finest.frames)):
        tables[f"frame_{i:03d}.csv"] = finest.frame_csv(i)
    return reports, tables, {"backend": eos.name,
                             "manifest": finest.manifest()}


def _order_report(name, backend_name, values, cells_list, required_order):
    floor = 1e-14
    ratios, orders = [], []
    for coarse, fine in zip(values[:-1], values[1:]):
        if coarse <= floor and fine <= floor:
            ratios.append(0.0)  # both at roundoff: trivially converged
            orders.append(None)
        elif coarse <= floor:
            ratios.append(math.inf)
            orders.append(None)
        else:
            ratios.append(fine / coarse)
            orders.append(math.log2(coarse / fine) if fine > 0 else None)
    residual = max(ratios)
    tolerance = 2.0 ** (-required_order)
    return core.CheckReport(
        name, backend_name, residual <= tolerance, float(residual), tolerance,
        details={"cells": list(cells_list), "values": list(values),
                 "orders": orders, "required_order": required_order})


# ---------------------------------------------------------------------------
# artifact assembly

def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _residual_table(reports) -> str:
    rows = ["check,backend,sample,residual,tolerance,passed"]
    for rep in reports:
        sample = rep.details.get("sample", "")
        rows.append(f"{rep.name},{rep.backend},{sample},"
                    f"{rep.residual!r},{rep.tolerance!r},{rep.passed}")
    return "\n".join(rows) + "\n"


def _summary_text(sub: str, seed: int, reports) -> str:
    lines = [f"fluxlab {sub}  seed={seed}"]
    lines.extend(rep.line() for rep in reports)
    passed = sum(1 for rep in reports if rep.passed)
    tail = f"{passed}/{len(reports)} checks passed"
    failing = sorted({rep.name for rep in reports if not rep.passed})
    if failing:
        tail += "; FAILING: " + ", ".join(failing)
    lines.append(tail)
    return "\n".join(lines) + "\n"


def _write_artifacts(out_dir: Path, payload: dict, tables: dict, summary: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default)
    (out_dir / "report.json").write_text(text + "\n")
    tables_dir = out_dir / "tables"
    tables_dir.mkdir(exist_ok=True)
    for name, content in tables.items():
        (tables_dir / name).write_text(content)
    (out_dir / "summary.txt").write_text(summary)


RUNNERS = {"checks": run_checks, "tba": run_tba, "cft": run_cft,
           "edchain": run_edchain, "hydro": run_hydro}


# ---------------------------------------------------------------------------
# argument parsing

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False,
                                     argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="TOML config file; flags override it")
    common.add_argument("--out", help="output directory (default: artifacts)")
    common.add_argument("--seed", type=int, help="RNG seed (default: 0)")
    common.add_argument("--tol", action="append", metavar="NAME=VAL",
                        help="override a check tolerance; for stationarity "
                             "and entropy-budget the value is the required "
                             "convergence order")

    parser = argparse.ArgumentParser(
        prog="fluxlab", parents=[common],
        description="identity checks and transport runs over all backends")
    subs = parser.add_subparsers(dest="subcommand")

    p = subs.add_parser("checks", parents=[common],
                        help="run a named check sweep on one backend")
    p.add_argument("--backend", help="cft, ed, or a model name")
    p.add_argument("--samples", type=int)
    p.add_argument("--check", action="append", help="check name (repeatable)")
    p.add_argument("--d", type=int)
    p.add_argument("--a", type=float)
    p.add_argument("--coupling", type=float)
    p.add_argument("--rod-length", type=float, dest="rod_length")
    p.add_argument("--grid-size", type=int, dest="grid_size")
    p.add_argument("--N", type=int, dest="N")

    p = subs.add_parser("tba", parents=[common],
                        help="integral-equation models: state table and checks")
    p.add_argument("--model", choices=TBA_MODEL_NAMES)
    p.add_argument("--coupling", type=float)
    p.add_argument("--rod-length", type=float, dest="rod_length")
    p.add_argument("--grid-size", type=int, dest="grid_size")
    for k in (0, 1, 2, 4):
        p.add_argument(f"--beta{k}", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--check", action="append")
    p.add_argument("--grid-scan", type=int, dest="grid_scan",
                   help="tabulate the ekms residual over this many grid doublings")

    p = subs.add_parser("cft", parents=[common],
                        help="closed-form fluid: state table and checks")
    p.add_argument("--d", type=int)
    p.add_argument("--a", type=float)
    p.add_argument("--beta-rest", type=float, dest="beta_rest")
    p.add_argument("--theta", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--check", action="append")

    p = subs.add_parser("edchain", parents=[common],
                        help="ring diagonalization checks with an N-scan")
    p.add_argument("--N", type=int, dest="N")
    for k in (0, 2, 4):
        p.add_argument(f"--beta{k}", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--pair", nargs=2, metavar=("I", "J"),
                   help="charge pair for the first-moment sum")
    p.add_argument("--check", action="append")

    p = subs.add_parser("hydro", parents=[common],
                        help="transport runs with convergence checks")
    p.add_argument("--backend")
    p.add_argument("--d", type=int)
    p.add_argument("--a", type=float)
    p.add_argument("--coupling", type=float)
    p.add_argument("--rod-length", type=float, dest="rod_length")
    p.add_argument("--grid-size", type=int, dest="grid_size")
    p.add_argument("--cells", type=int)
    p.add_argument("--refinements", type=int)
    p.add_argument("--t-end", type=float, dest="t_end")
    p.add_argument("--beta-bar", type=float, dest="beta_bar")
    p.add_argument("--mu-bar", type=float, dest="mu_bar")
    p.add_argument("--scheme", choices=("central", "rusanov"))
    p.add_argument("--cfl", type=float)
    p.add_argument("--amplitude", type=float)
    p.add_argument("--center", type=float)
    p.add_argument("--width", type=float)
    p.add_argument("--velocity-amplitude", type=float,
                   dest="velocity_amplitude")
    p.add_argument("--check", action="append", choices=HYDRO_CHECKS)
    p.add_argument("--mock-offset", type=float, dest="mock_offset",
                   help="add a symmetric constant current offset of this "
                        "size; breaks the entropy budget off the stationary "
                        "family")
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config_path = getattr(args, "config", None)
        cfg = _load_config(config_path) if config_path else {}
        known_top = set(SCHEMAS) | {"subcommand", "seed", "out", "tolerances"}
        unknown = sorted(k for k in cfg if k not in known_top)
        if unknown:
            raise ConfigError(f"unknown top-level config keys: "
                              f"{', '.join(unknown)}")
        sub = args.subcommand
        if sub is None:
            sub = cfg.get("subcommand")
            if not isinstance(sub, str) or sub not in RUNNERS:
                raise ConfigError(
                    "no subcommand on the command line or in the config")
            args = parser.parse_args(argv + [sub])

        seed = getattr(args, "seed", None)
        if seed is None:
            seed = _coerce("seed", int, cfg.get("seed")) or 0
        out_dir = Path(getattr(args, "out", None) or cfg.get("out") or "artifacts")
        overrides = _tol_overrides(args, cfg)
        ns = _merge_params(args, cfg, sub)

        rng = np.random.default_rng(seed)
        reports, tables, extras = RUNNERS[sub](ns, overrides, rng)
        reports.sort(key=lambda rep: rep.name)

        failing = sorted({rep.name for rep in reports if not rep.passed})
        payload = {"command": sub, "seed": seed,
                   "parameters": {k: v for k, v in vars(ns).items()},
                   "tolerance_overrides": overrides,
                   "reports": [rep.to_json_dict() for rep in reports],
                   "summary": {"total": len(reports),
                               "passed": sum(r.passed for r in reports),
                               "failing": failing}}
        payload.update(extras)
        tables = {"residuals.csv": _residual_table(reports), **tables}
        summary = _summary_text(sub, seed, reports)
        _write_artifacts(out_dir, payload, tables, summary)
        sys.stdout.write(summary)
        return 0 if not failing else 1
    except ConfigError as exc:
        print(f"fluxlab: config error: {exc}", file=sys.stderr)
        return 2
    except FluxlabError as exc:
        print(f"fluxlab: run failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
