"""Batch front end: ``mfglab <command> [config] [--section.key=value ...]``.

Commands: solve, forward, simulate, converge, nashgap, selftest.  Exit codes:
0 success, 1 failed self-test, 2 configuration error, 3 numerical failure.
Errors are also written to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field as PField, ValidationError, field_validator, model_validator

from . import __version__, kernels
from .model import BETA_RANGE_MESSAGE, CATALOG, builtin_model

log = logging.getLogger("mfglab")

EXIT_OK, EXIT_SELFTEST, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("solve", "forward", "simulate", "converge", "nashgap", "selftest")


# -- configuration -----------------------------------------------------------


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Section):
    name: str = "congestion"
    params: dict[str, float] = PField(default_factory=dict)
    beta: float | None = None
    T: float | None = None

    @field_validator("name")
    @classmethod
    def _known(cls, v):
        if v not in CATALOG:
            raise ValueError(f"unknown model {v!r}; catalog: {', '.join(CATALOG)}")
        return v

    @field_validator("beta")
    @classmethod
    def _beta(cls, v):
        if v is not None and not 0.0 < v < 0.5:
            raise ValueError(f"{BETA_RANGE_MESSAGE}, got {v}")
        return v


class GridSection(_Section):
    dim: Literal[1, 2] = 1
    L: float | None = None
    n: int = 256

    @field_validator("n")
    @classmethod
    def _pow2(cls, v):
        if v < 16 or v & (v - 1):
            raise ValueError("n must be a power of two >= 16")
        return v


class SolverSection(_Section):
    M: int = PField(50, ge=1)
    tol: float = PField(1e-8, gt=0)
    max_iter: int = PField(200, ge=1)
    damping: float = PField(1.0, gt=0, le=1)


class SimSection(_Section):
    N: list[int] = PField(default_factory=lambda: [100, 400, 1600, 6400])
    M_sim: int = PField(200, ge=1)
    seeds: int = PField(8, ge=1)
    replications: int = PField(8, ge=1)
    root_seed: int = 0

    @field_validator("N")
    @classmethod
    def _players(cls, v):
        if not v or min(v) < 2:
            raise ValueError("every N must be >= 2")
        return v


class StudySection(_Section):
    nash_N: list[int] = PField(default_factory=lambda: [100, 400, 1600])
    nash_seeds: int = PField(8, ge=1)
    nash_R: int = PField(12, ge=2)
    nash_steps: int = PField(100, ge=1)
    control_variate: bool = True
    cv_paths: int = PField(100_000, ge=2)
    mc_paths: int = PField(10_000, ge=2)
    gamma: float = PField(0.4, gt=0, le=1)


class ForwardSection(_Section):
    alpha: Literal["alpha_star", "zero", "constant"] = "alpha_star"
    value: float = 0.0


class RunConfig(_Section):
    model: ModelSection = PField(default_factory=ModelSection)
    grid: GridSection = PField(default_factory=GridSection)
    solver: SolverSection = PField(default_factory=SolverSection)
    sim: SimSection = PField(default_factory=SimSection)
    study: StudySection = PField(default_factory=StudySection)
    forward: ForwardSection = PField(default_factory=ForwardSection)
    output: str = "runs"

    @model_validator(mode="after")
    def _dims(self):
        pd = self.model.params.get("dim")
        if pd is not None and int(pd) != self.grid.dim:
            raise ValueError(f"model dim {int(pd)} differs from grid dim {self.grid.dim}")
        return self

    def build_model(self):
        params = dict(self.model.params)
        params["dim"] = self.grid.dim
        if self.model.beta is not None:
            params["beta"] = self.model.beta
        if self.model.T is not None:
            params["T"] = self.model.T
        return builtin_model(self.model.name, params)

    def build_grid(self, m):
        from .grid import Grid

        L = self.grid.L if self.grid.L is not None else float(np.ceil(m.suggested_half_width(1.0)))
        return Grid(self.grid.dim, L, self.grid.n)


class ConfigError(ValueError):
    pass


def shipped_configs() -> dict[str, Path]:
    root = resources.files("mfglab") / "configs"
    return {p.name.rsplit(".", 1)[0]: Path(str(p)) for p in root.iterdir() if p.name.endswith((".yaml", ".yml", ".json"))}


def _coerce_scalar(text: str):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def load_config(path: str | None, overrides: list[str] = ()) -> tuple[RunConfig, bytes]:
    """Parse, apply ``--a.b=value`` overrides, validate."""
    raw = b""
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            shipped = shipped_configs()
            if path in shipped:
                p = shipped[path]
            else:
                raise ConfigError(f"config {path!r} not found; shipped configs: {', '.join(sorted(shipped))}")
        raw = p.read_bytes()
        try:
            data = yaml.safe_load(raw.decode("utf-8")) or {}
        except (yaml.YAMLError, UnicodeDecodeError) as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
    for item in overrides:
        if not item.startswith("--") or "=" not in item:
            raise ConfigError(f"bad override {item!r}; expected --section.key=value")
        key, value = item[2:].split("=", 1)
        parts = key.split(".")
        node = data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a scalar")
        node[parts[-1]] = _coerce_scalar(value)
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from exc
    return cfg, raw


def _format_validation(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"])
        msg = err["msg"].removeprefix("Value error, ")
        parts.append(f"{loc}: {msg}" if loc else msg)
    return "; ".join(parts)


# -- run directory and manifest ----------------------------------------------


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _run_dir(cfg: RunConfig, command: str) -> Path:
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    out = Path(cfg.output) / command / stamp
    out.mkdir(parents=True, exist_ok=False)
    return out


def write_manifest(out: Path, command: str, cfg: RunConfig, raw: bytes, threads: int, seeds: dict) -> None:
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    manifest = {
        "command": command,
        "version": __version__,
        "backend": kernels.BACKEND,
        "threads": threads,
        "config": cfg.model_dump(mode="json"),
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "input_blob": git_blob_hash(raw),
        "seeds": seeds,
        "argv": sys.argv[1:],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))


def _emit(payload: dict):
    print(json.dumps(payload, indent=2, default=float))


# -- commands ----------------------------------------------------------------


def _solve(cfg: RunConfig, m, grid):
    from .solver import SolverError, solve_mfg

    sol = solve_mfg(m, grid, cfg.solver.M, cfg.solver.tol, cfg.solver.max_iter, cfg.solver.damping)
    if not sol.converged:
        raise SolverError(
            f"Picard did not converge in {sol.iterations} iterations (residual {sol.residual_history[-1]:.3g})"
        )
    return sol


def cmd_solve(cfg: RunConfig, raw: bytes, threads: int) -> int:
    from .semigroup import HeatOperator
    from .solver import hopf_cole_floor, solve_hopf_cole, verify_mild_residual

    m = cfg.build_model()
    grid = cfg.build_grid(m)
    out = _run_dir(cfg, "solve")
    write_manifest(out, "solve", cfg, raw, threads, {})
    sol = _solve(cfg, m, grid)
    hc = solve_hopf_cole(m, grid, cfg.solver.M, cfg.solver.tol, cfg.solver.max_iter, cfg.solver.damping)
    r_u, r_p = verify_mild_residual(m, HeatOperator(grid), sol)
    sol.write(out)
    summary = sol.summary() | {
        "hopf_cole": {
            "converged": hc.converged,
            "iterations": hc.iterations,
            "max_abs_u_difference": float(np.abs(hc.u_from_w.frames - sol.u.frames).max()),
            "min_w": hc.min_w,
            "w_floor": hopf_cole_floor(m, grid, sol.p),
        },
        "mild_residual": {"r_u": r_u, "r_p": r_p},
        "output": str(out),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    _emit(summary)
    return EXIT_OK


def cmd_forward(cfg: RunConfig, raw: bytes, threads: int) -> int:
    from .analysis import admissibility_bound
    from .forward import solve_forward
    from .grid import FieldFlow
    from .grid import write_fields

    m = cfg.build_model()
    grid = cfg.build_grid(m)
    out = _run_dir(cfg, "forward")
    write_manifest(out, "forward", cfg, raw, threads, {})
    shape = (cfg.solver.M + 1, grid.dim) + grid.shape
    bound = None
    if cfg.forward.alpha == "alpha_star":
        sol = _solve(cfg, m, grid)
        alpha = sol.alpha_star
        bound = admissibility_bound(sol)
    else:
        frames = np.zeros(shape)
        if cfg.forward.alpha == "constant":
            frames[:, 0] = cfg.forward.value
        alpha = FieldFlow(grid, 0.0, m.T, frames, vector=True)
    lim = solve_forward(m, alpha, grid, cfg.solver.M, cfg.solver.tol, cfg.solver.max_iter, cfg.solver.damping,
                        bound=bound)
    write_fields(out / "p.mfgf", grid, list(lim.p.frames))
    summary = {
        "alpha": cfg.forward.alpha,
        "converged": lim.converged,
        "iterations": lim.iterations,
        "residual": lim.residual,
        "output": str(out),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    _emit(summary)
    return EXIT_OK if lim.converged else EXIT_NUMERIC


def cmd_simulate(cfg: RunConfig, raw: bytes, threads: int) -> int:
    from .grid import write_fields
    from .particles import FeedbackProfile, SimConfig, empirical_density, simulate, write_trajectories

    m = cfg.build_model()
    grid = cfg.build_grid(m)
    out = _run_dir(cfg, "simulate")
    names = {N: f"sim-N{N}-seed0" for N in cfg.sim.N}
    write_manifest(out, "simulate", cfg, raw, threads, {"root": cfg.sim.root_seed, "streams": list(names.values())})
    sol = _solve(cfg, m, grid)
    stride = cfg.sim.M_sim // cfg.solver.M if cfg.sim.M_sim % cfg.solver.M == 0 else 1
    runs = []
    for N in sorted(cfg.sim.N):
        sc = SimConfig(N, cfg.sim.M_sim, cfg.sim.root_seed, threads=threads, stream_name=names[N])
        ens = simulate(m, sc, FeedbackProfile(sol.alpha_star))
        write_trajectories(out / f"traj-N{N}.mfgt", ens)
        emp = empirical_density(ens, m, grid, stride)
        write_fields(out / f"density-N{N}.mfgf", grid, list(emp.frames.frames))
        runs.append({"N": N, "escaped": ens.escaped, "max_mass_error": float(np.abs(emp.masses() - 1).max())})
    summary = {"runs": runs, "output": str(out)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    _emit(summary)
    return EXIT_OK


def cmd_converge(cfg: RunConfig, raw: bytes, threads: int) -> int:
    from .analysis import convergence_study, write_report

    m = cfg.build_model()
    grid = cfg.build_grid(m)
    out = _run_dir(cfg, "converge")
    streams = [f"sim-N{N}-seed{s}" for N in sorted(cfg.sim.N) for s in range(cfg.sim.seeds)]
    write_manifest(out, "converge", cfg, raw, threads, {"root": cfg.sim.root_seed, "streams": streams})
    sol = _solve(cfg, m, grid)
    rep = convergence_study(m, sol, cfg.sim.N, cfg.sim.seeds, cfg.sim.M_sim, cfg.sim.root_seed,
                            cfg.study.gamma, threads)
    write_report(out, rep)
    _emit(rep.to_dict() | {"output": str(out)})
    return EXIT_OK


def cmd_nashgap(cfg: RunConfig, raw: bytes, threads: int) -> int:
    from .analysis import nash_gap_study, write_report

    m = cfg.build_model()
    grid = cfg.build_grid(m)
    out = _run_dir(cfg, "nashgap")
    st = cfg.study
    streams = [f"nash-N{N}-seed{s}-rep{r}" for N in sorted(st.nash_N) for s in range(st.nash_seeds) for r in range(st.nash_R)]
    write_manifest(out, "nashgap", cfg, raw, threads, {"root": cfg.sim.root_seed, "streams": streams})
    sol = _solve(cfg, m, grid)
    rep = nash_gap_study(m, sol, st.nash_N, None, st.nash_seeds, st.nash_R, st.nash_steps, cfg.sim.root_seed,
                         threads=threads, control_variate=st.control_variate, cv_paths=st.cv_paths)
    write_report(out, rep)
    _emit(rep.to_dict() | {"output": str(out)})
    return EXIT_OK


def cmd_selftest(cfg: RunConfig | None = None, raw: bytes = b"", threads: int = 1) -> int:
    from .selftest import run_selftest

    return EXIT_OK if run_selftest(print) else EXIT_SELFTEST


_DISPATCH = {
    "solve": cmd_solve,
    "forward": cmd_forward,
    "simulate": cmd_simulate,
    "converge": cmd_converge,
    "nashgap": cmd_nashgap,
    "selftest": cmd_selftest,
}


def resolve_threads(flag: int | None) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get("MFG_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"MFG_THREADS must be an integer, got {env!r}") from exc
    return 1


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "exit_code": code, "message": message}), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="mfglab", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("config", nargs="?", help="YAML/JSON config path or shipped config name")
    parser.add_argument("--threads", type=int, default=None, help="worker threads (env MFG_THREADS)")
    parser.add_argument("-v", "--verbose", action="store_true")
    args, overrides = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    from .solver import SolverError

    try:
        threads = resolve_threads(args.threads)
        if args.command == "selftest":
            return cmd_selftest(None, b"", threads)
        cfg, raw = load_config(args.config, overrides)
        return _DISPATCH[args.command](cfg, raw, threads)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except (SolverError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, "numerical", str(exc))
    except ValueError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
