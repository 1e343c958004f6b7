"""Command-line front end: ``nltransfer {transfer,scatter,verify} --config run.yaml``.

Exit codes: 0 success, 1 a certificate or internal check failed (reports are
still written), 2 invalid configuration or arguments.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, ValidationError
from threadpoolctl import threadpool_limits

from . import __version__
from .bounds import (
    certify_g_identity,
    certify_lemma2,
    certify_lemma3,
    certify_lemma5,
    certify_nilpotency,
    certify_term_bounds,
    certify_theorem3,
    certify_theorem4,
    default_envelope_samples,
)
from .certificate import BoundCertificate, _jsonable, combine
from .evolution import evolve
from .grid import InvalidArgument, StateVector, build_grid, operator_norm
from .potential import FAMILIES, NormProfile, builtin_model
from .scatter import (
    IllPosedScattering,
    assemble_transfer,
    emit_cross_section,
    envelope_tail,
    kernel_refinement_gap,
    scatter,
    transfer_between,
)

OUT_ENV = "NLTRANSFER_OUT"
CERTIFICATES = (
    "norm-envelope",
    "product-norm",
    "nilpotency",
    "dyson-partial-sums",
    "dyson-term-bounds",
    "tail-constants",
    "g-identity",
    "zeta-bounds",
)


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


# -- configuration -----------------------------------------------------------------


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PotentialBlock(_Block):
    family: Literal[FAMILIES]  # type: ignore[valid-type]
    v0: float | tuple[float, float] = 1.0
    a: PositiveFloat = 1.0
    decay: PositiveFloat = 4.0
    alpha: PositiveFloat
    beta: float | Literal["auto"]
    sigma: PositiveFloat

    @property
    def v0_complex(self) -> complex:
        return complex(*self.v0) if isinstance(self.v0, tuple) else complex(self.v0)


class GridBlock(_Block):
    k: PositiveFloat = 1.0
    n: int = Field(32, ge=2)
    rule: Literal["gauss-legendre-theta", "gauss-legendre-p"] = "gauss-legendre-theta"


class EvolutionBlock(_Block):
    scheme: Literal["dyson", "product", "rk4"] = "rk4"
    tol: PositiveFloat = 1e-9
    steps_per_unit: int = Field(256, ge=1)
    max_order: int = Field(40, ge=1)
    quad_order: int = Field(16, ge=1)


class ScatterBlock(_Block):
    theta0: list[float] = [0.0]
    eps: PositiveFloat = 1e-3
    smin_threshold: PositiveFloat = 1e-8


class TransferBlock(_Block):
    refine: bool = True
    widen: bool = True


class VerifyBlock(_Block):
    certificates: list[Literal[CERTIFICATES]] = list(CERTIFICATES)  # type: ignore[valid-type]
    samples: int = Field(20, ge=1)
    tuples: int = Field(50, ge=1)
    states: int = Field(10, ge=1)
    x_range: tuple[float, float] = (-6.0, 6.0)


class OutputBlock(_Block):
    directory: str = "nltransfer-out"
    formats: list[Literal["json", "csv"]] = ["json", "csv"]


class RunConfig(_Block):
    potential: PotentialBlock
    grid: GridBlock = GridBlock()
    evolution: EvolutionBlock = EvolutionBlock()
    scatter: ScatterBlock = ScatterBlock()
    transfer: TransferBlock = TransferBlock()
    verify: VerifyBlock = VerifyBlock()
    output: OutputBlock = OutputBlock()


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "\n".join(lines)


def load_config(path: str | os.PathLike) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return parse_config(raw if raw is not None else {})


def parse_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>: config must be a mapping")
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def config_hash(cfg: RunConfig, seed: int) -> str:
    payload = json.dumps({"config": cfg.model_dump(mode="json"), "seed": seed}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def build_model(block: PotentialBlock, transfer_ready: bool):
    beta = None if block.beta == "auto" else float(block.beta)
    if beta is not None and beta < 0:
        raise ConfigError("potential.beta: must be nonnegative or 'auto'")
    if transfer_ready and not block.sigma > 3:
        raise ConfigError(f"potential.sigma: must exceed 3 for transfer/scatter runs, got {block.sigma}")
    try:
        return builtin_model(
            block.family,
            block.v0_complex,
            a=block.a,
            decay=block.decay,
            alpha=block.alpha,
            sigma=block.sigma,
            beta=beta,
            transfer_ready=transfer_ready,
        )
    except InvalidArgument as exc:
        raise ConfigError(f"potential: {exc}") from None


# -- output ------------------------------------------------------------------------


class Run:
    """Shared state for one command: config, identity stamp, output directory, pool."""

    def __init__(self, cfg: RunConfig, command: str, out_dir: Path, seed: int, threads: int):
        self.cfg = cfg
        self.command = command
        self.out = out_dir
        self.seed = seed
        self.threads = threads
        self.hash = config_hash(cfg, seed)

    @property
    def meta(self) -> dict:
        return {"tool": "nltransfer", "version": __version__, "command": self.command, "config_hash": self.hash, "seed": self.seed}

    def map(self, jobs: list[Callable]) -> list:
        """Run jobs on the pool; results come back in submission order."""
        if self.threads <= 1 or len(jobs) <= 1:
            return [job() for job in jobs]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            futures = [pool.submit(job) for job in jobs]
            return [f.result() for f in futures]

    def write_json(self, name: str, body: dict) -> Path:
        if "json" not in self.cfg.output.formats:
            return None
        path = self.out / name
        doc = {"meta": self.meta, **body}
        path.write_text(json.dumps(_clean(doc), sort_keys=True, indent=2) + "\n", encoding="utf-8")
        return path

    def write_csv(self, name: str, text: str) -> Path:
        if "csv" not in self.cfg.output.formats:
            return None
        path = self.out / name
        path.write_text(text, encoding="utf-8")
        return path

    def csv_comments(self, **extra) -> dict:
        return {"tool": "nltransfer", "version": __version__, "config_hash": self.hash, **extra}


def _clean(obj):
    """JSON-safe copy: arrays to lists, complex to [re, im], non-finite floats to null."""
    obj = _jsonable(obj)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _table_csv(columns, rows, comments: dict) -> str:
    lines = [f"# {k}={v}" for k, v in comments.items()]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


# -- commands ----------------------------------------------------------------------


def _evolve_kw(cfg: RunConfig) -> dict:
    ev = cfg.evolution
    kw = {"scheme": ev.scheme, "tol": ev.tol}
    if ev.scheme == "dyson":
        kw.update(max_order=ev.max_order, quad_order=ev.quad_order)
    else:
        kw.update(steps_per_unit=ev.steps_per_unit)
    return kw


def cmd_transfer(run: Run) -> int:
    cfg = run.cfg
    model = build_model(cfg.potential, transfer_ready=True)
    grid = build_grid(cfg.grid.k, cfg.grid.n, cfg.grid.rule)
    kw = _evolve_kw(cfg)
    eps = cfg.scatter.eps

    jobs = [lambda: assemble_transfer(model, grid, eps, **kw)]
    if cfg.transfer.refine:
        if cfg.grid.rule != "gauss-legendre-theta":
            raise ConfigError("transfer.refine: grid refinement comparison needs grid.rule = gauss-legendre-theta")
        fine_grid = build_grid(cfg.grid.k, 2 * cfg.grid.n, cfg.grid.rule)
        jobs.append(lambda: assemble_transfer(model, fine_grid, eps, **kw))
    results = run.map(jobs)
    tm = results[0]
    failures = []

    widening = None
    if cfg.transfer.widen:
        X = tm.x_plus
        wide = transfer_between(model, grid, -2 * X, 2 * X, **kw)
        diff = operator_norm(wide.T - tm.T)
        widening = {"X": X, "diff_to_2X": diff, "tail_estimate": tm.tail_estimate, "tail_estimate_2X": envelope_tail(model, 2 * X)}
        if not wide.diagnostics["converged"]:
            failures.append("widened evolution did not reach tolerance")
    refinement = None
    if cfg.transfer.refine:
        gap = kernel_refinement_gap(tm, results[1])
        refinement = {"n": grid.n, "n_fine": 2 * grid.n, "kernel_sup_gap": gap}
        if not results[1].diagnostics["converged"]:
            failures.append("refined-grid evolution did not reach tolerance")

    norms = tm.block_norms()
    if not tm.diagnostics["converged"]:
        failures.append("evolution did not reach tolerance on every segment")
    if cfg.potential.v0_complex == 0 and norms["T"] > 1e-12:
        failures.append(f"zero potential produced ||T|| = {norms['T']}")
    if not all(math.isfinite(v) for v in norms.values()):
        failures.append("non-finite transfer-matrix entries")

    run.write_json(
        "transfer.json",
        {
            "grid": {"k": grid.k, "n": grid.n, "rule": grid.rule},
            "truncation": tm.diagnostics.get("truncation"),
            "tail_estimate": tm.tail_estimate,
            "block_norms": norms,
            "segments": tm.diagnostics["segments"],
            "widening": widening,
            "refinement": refinement,
            "failures": failures,
            "pass": not failures,
        },
    )
    run.write_csv(
        "transfer_blocks.csv",
        _table_csv(("block_row", "block_col", "norm"), [(i, j, norms[f"T{i}{j}"]) for i in (1, 2) for j in (1, 2)], run.csv_comments()),
    )
    for msg in failures:
        print(f"error: {msg}", file=sys.stderr)
    return 1 if failures else 0


def cmd_scatter(run: Run) -> int:
    cfg = run.cfg
    model = build_model(cfg.potential, transfer_ready=True)
    grid = build_grid(cfg.grid.k, cfg.grid.n, cfg.grid.rule)
    tm = assemble_transfer(model, grid, cfg.scatter.eps, **_evolve_kw(cfg))
    thr = cfg.scatter.smin_threshold

    def job(theta):
        try:
            return scatter(tm, theta, thr)
        except (IllPosedScattering, InvalidArgument) as exc:
            return exc

    results = run.map([lambda t=t: job(t) for t in cfg.scatter.theta0])
    bundle, failures = [], []
    for i, (theta, res) in enumerate(zip(cfg.scatter.theta0, results)):
        if isinstance(res, Exception):
            failures.append(f"theta0={theta!r}: {res}")
            bundle.append({"theta0": theta, "error": str(res)})
            continue
        bundle.append(res.to_dict())
        run.write_csv(f"cross_section_{i:03d}.csv", emit_cross_section(res, run.csv_comments(theta0=repr(float(theta)))))
    if not tm.diagnostics["converged"]:
        failures.append("transfer-matrix evolution did not reach tolerance")
    run.write_json(
        "scatter.json",
        {
            "grid": {"k": grid.k, "n": grid.n, "rule": grid.rule},
            "truncation": tm.diagnostics.get("truncation"),
            "tail_estimate": tm.tail_estimate,
            "results": bundle,
            "failures": failures,
            "pass": not failures,
        },
    )
    for msg in failures:
        print(f"error: {msg}", file=sys.stderr)
    return 1 if failures else 0


def _random_states(rng: np.random.Generator, grid, count: int) -> list[StateVector]:
    out = []
    for _ in range(count):
        v = rng.standard_normal(2 * grid.n) + 1j * rng.standard_normal(2 * grid.n)
        s = StateVector.from_stacked(grid, v)
        out.append(s * (1.0 / s.norm()))
    return out


def verify_jobs(cfg: RunConfig, seed: int) -> list[tuple[str, Callable[[], BoundCertificate]]]:
    """The selected certificates as (name, job) pairs; random inputs drawn up front from ``seed``."""
    vb = cfg.verify
    names = list(dict.fromkeys(vb.certificates))
    needs_transfer = "tail-constants" in names
    model = build_model(cfg.potential, transfer_ready=needs_transfer)
    grid = build_grid(cfg.grid.k, cfg.grid.n, cfg.grid.rule)
    x0, x1 = vb.x_range
    if not x0 < x1:
        raise ConfigError("verify.x_range: need lower < upper")
    rng = np.random.default_rng(seed)
    tuples = [np.sort(rng.uniform(x0, x1, size=1 + i % 3)) for i in range(vb.tuples)]
    states = _random_states(rng, grid, vb.states)
    profile = NormProfile(model, grid)
    evolutions = {}

    def dyson_runs():
        if not evolutions:
            for i, s in enumerate(states):
                evolutions[i] = evolve(model, grid, x0, x1, "dyson", cfg.evolution.tol, phi0=s, max_order=cfg.evolution.max_order, quad_order=cfg.evolution.quad_order, profile=profile)
        return [evolutions[i] for i in range(len(states))]

    table = {
        "norm-envelope": lambda: certify_lemma2(model, grid, default_envelope_samples(model, vb.samples)),
        "product-norm": lambda: certify_lemma5(model, grid, tuples),
        "nilpotency": lambda: certify_nilpotency(model, grid, np.linspace(x0, x1, vb.samples)),
        "dyson-partial-sums": lambda: combine("dyson-partial-sums", [certify_theorem3(r) for r in dyson_runs()]),
        "dyson-term-bounds": lambda: combine("dyson-term-bounds", [certify_term_bounds(r, profile) for r in dyson_runs()]),
        "tail-constants": lambda: certify_theorem4(model, grid),
        "g-identity": lambda: certify_g_identity(profile, x0, x1),
        "zeta-bounds": lambda: combine("zeta-bounds", [certify_lemma3(s, np.linspace(x0, x1, 50)) for s in states]),
    }
    return [(n, table[n]) for n in names]


def cmd_verify(run: Run) -> int:
    jobs = verify_jobs(run.cfg, run.seed)
    # the two Dyson-based certificates share evolutions; keep them on one worker
    dyson = [j for n, j in jobs if n.startswith("dyson-")]
    rest = [(n, j) for n, j in jobs if not n.startswith("dyson-")]
    grouped: list[Callable] = [lambda j=j: [j()] for _, j in rest]
    if dyson:
        grouped.append(lambda: [j() for j in dyson])
    flat = [c for group in run.map(grouped) for c in group]
    by_name = {c.name: c for c in flat}
    certs = [by_name[n] for n, _ in jobs]
    ok = all(c.passed for c in certs)
    run.write_json("verify.json", {"certificates": [c.to_dict() for c in certs], "pass": ok})
    run.write_csv(
        "verify.csv",
        "\n".join(
            [f"# {k}={v}" for k, v in run.csv_comments().items()]
            + ["name,pass,samples,margin"]
            + [f"{c.name},{int(c.passed)},{c.lhs.size},{repr(c.margin)}" for c in certs]
        )
        + "\n",
    )
    for c in certs:
        print(c.summary())
    return 0 if ok else 1


COMMANDS = {"transfer": cmd_transfer, "scatter": cmd_scatter, "verify": cmd_verify}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nltransfer", description="Transfer matrices and certificates for nonlocal 2D potentials.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "transfer": "assemble the transfer matrix and write block norms, truncation and refinement data",
        "scatter": "compute scattering amplitudes and cross-section tables",
        "verify": "run the selected certificates; exit 0 iff all pass",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and output.directory)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for independent jobs")
        p.add_argument("--seed", type=int, default=0, help="seed for sampled inputs")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config)
        out = Path(args.out or os.environ.get(OUT_ENV) or cfg.output.directory)
        out.mkdir(parents=True, exist_ok=True)
        run = Run(cfg, args.command, out, args.seed, args.threads)
        # one BLAS thread per worker keeps every result independent of --threads
        with threadpool_limits(limits=1):
            return COMMANDS[args.command](run)
    except ConfigError as exc:
        print(f"config error:\n{exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
