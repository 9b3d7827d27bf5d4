"""Batch front door: ``fibermercer <command> --config run.json``.

Commands write deterministic report files (fixed 17-digit float formatting,
fixed ordering, no timestamps) into the output directory. Exit status:
0 success, 2 kernel validation failure, 3 parse/config error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .alignment import SpectralField, align_spectra, continuity_report
from .errors import (
    FiberMercerError,
    GridMismatch,
    InvalidArgument,
    KernelValidationError,
    NumericalFailure,
    ParseError,
)
from .fiberspec import decompose_all, fiber_diagnostics
from .grid import Interval, check_same_pgrid, check_same_quadrature, gauss_legendre, parameter_grid, trapezoid_rule
from .kernel import (
    DiscreteKernel,
    Factor,
    KernelSpec,
    _polyval,
    discretize,
    format_real,
    parse_blocks,
    parse_grid_header,
    pikt_text,
    read_pikt_lines,
    validate_kernel,
)
from .mercer import reconstruct, reconstruction_error, trace_identity_defect, truncation_rank_for_energy
from .operators import EquivalenceTolerances, ModuleElement, apply_T, equivalence_report, l2inf_norm

COMMANDS = ("validate", "decompose", "reconstruct", "verify", "apply")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PARSE = 3
EXIT_NUMERICAL = 4

EIGENVALUES_CSV = "eigenvalues.csv"
EIGENFUNCTIONS_FILE = "eigenfunctions.pikf"
PROVENANCE_CSV = "provenance.csv"


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    kernel: dict[str, Any]
    fiber_nodes: int = 32
    fiber_rule: str = "gauss_legendre"
    omega_samples: int = 8
    s_interval: tuple[float, float] = (0.0, 1.0)
    omega_interval: tuple[float, float] = (0.0, 1.0)
    eps_rel: float = 1e-10
    tol_sym: float = 1e-12
    tol_psd: float = 1e-12
    tau: float = 1e-12
    equiv_tol: float = 1e-8
    truncation: dict[str, float] = field(default_factory=lambda: {"energy": 1.0})
    output_dir: str = "out"
    apply_input: dict[str, Any] | None = None
    base_dir: str = "."
    explicit: frozenset[str] = frozenset()

    FIELDS = (
        "kernel", "fiber_nodes", "fiber_rule", "omega_samples", "s_interval", "omega_interval",
        "eps_rel", "tol_sym", "tol_psd", "tau", "equiv_tol", "truncation", "output_dir", "apply_input",
    )

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ParseError(f"cannot read config: {exc.strerror}", path) from None
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
        try:
            return cls.from_dict(raw, base_dir=os.path.dirname(os.path.abspath(path)))
        except (InvalidArgument, TypeError, ValueError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"bad config: {exc}", path) from None

    @classmethod
    def from_dict(cls, raw: Any, base_dir: str = ".") -> "RunConfig":
        if not isinstance(raw, dict):
            raise InvalidArgument("config must be a JSON object")
        unknown = sorted(set(raw) - set(cls.FIELDS))
        if unknown:
            raise InvalidArgument(f"unknown config keys {unknown}")
        if "kernel" not in raw:
            raise InvalidArgument("config needs a 'kernel' entry")
        cfg = cls(**raw, base_dir=base_dir, explicit=frozenset(raw))
        cfg._check()
        return cfg

    def _check(self):
        if not isinstance(self.kernel, dict):
            raise InvalidArgument("kernel must be an object")
        for name in ("fiber_nodes", "omega_samples"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise InvalidArgument(f"{name} must be an integer >= 1")
        if self.fiber_rule not in ("gauss_legendre", "trapezoid"):
            raise InvalidArgument("fiber_rule must be 'gauss_legendre' or 'trapezoid'")
        for name in ("tol_sym", "tol_psd", "tau", "equiv_tol"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not (v > 0 and math.isfinite(v)):
                raise InvalidArgument(f"{name} must be a positive real")
        if not isinstance(self.eps_rel, (int, float)) or not 0 <= self.eps_rel < 1:
            raise InvalidArgument("eps_rel must lie in [0, 1)")
        for name in ("s_interval", "omega_interval"):
            v = getattr(self, name)
            if not isinstance(v, (list, tuple)) or len(v) != 2:
                raise InvalidArgument(f"{name} must be a pair [lo, hi]")
            setattr(self, name, (float(v[0]), float(v[1])))
        if not isinstance(self.truncation, dict) or len(self.truncation) != 1 \
                or next(iter(self.truncation)) not in ("rank", "energy"):
            raise InvalidArgument("truncation must be exactly one of {'rank': N} or {'energy': eta}")
        mode, value = next(iter(self.truncation.items()))
        if mode == "rank" and (isinstance(value, bool) or not isinstance(value, int) or value < 0):
            raise InvalidArgument("truncation rank must be a nonnegative integer")
        if mode == "energy" and not (isinstance(value, (int, float)) and 0 < value <= 1):
            raise InvalidArgument("truncation energy must lie in (0, 1]")
        if not isinstance(self.output_dir, str):
            raise InvalidArgument("output_dir must be a string")

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="ascii", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_text(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _csv_text(header: list[str], rows: list[list[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _read_csv(path: str) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, "r", encoding="ascii", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ParseError(f"cannot read: {exc.strerror}", path) from None
    if not rows:
        raise ParseError("empty CSV", path, 1)
    return rows[0], rows[1:]


def _real(text: str, path: str, line: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"bad real {text!r}", path, line) from None
    if not math.isfinite(v):
        raise ParseError("non-finite value", path, line)
    return v


def field_files_text(fld: SpectralField) -> dict[str, str]:
    """Lossless text renderings of a spectral field: eigenvalue curves, eigenfunctions, provenance."""
    m, n = fld.lambdas.shape
    p = fld.quad.size
    header = ["omega"] + [f"lambda_{k + 1}" for k in range(n)]
    rows = [[format_real(fld.pgrid.points[j])] + [format_real(v) for v in fld.lambdas[j]] for j in range(m)]

    def row(values) -> str:
        return " ".join(format_real(v) for v in values)

    lines = [f"PIKF 1 {m} {n} {p}", row(fld.pgrid.points), row(fld.pgrid.weights),
             row(fld.quad.nodes), row(fld.quad.weights)]
    for j in range(m):
        lines.extend(row(fld.eigenfunctions[j, k]) for k in range(n))

    prov = [
        [str(j), str(k + 1), str(int(fld.source_index[j, k])), str(int(fld.flipped[j, k])), str(int(fld.rotated[j, k]))]
        for j in range(m) for k in range(n)
    ]
    return {
        EIGENVALUES_CSV: _csv_text(header, rows),
        EIGENFUNCTIONS_FILE: "\n".join(lines) + "\n",
        PROVENANCE_CSV: _csv_text(["fiber", "curve", "source_index", "flipped", "rotated"], prov),
    }


def load_field(directory: str, summary: dict[str, Any]) -> SpectralField:
    """Rebuild a spectral field from the files written by ``decompose``."""
    fpath = os.path.join(directory, EIGENFUNCTIONS_FILE)
    lines = read_pikt_lines(fpath)
    (m, n, p), pgrid, quad, line = parse_grid_header(lines, fpath, "PIKF", 3)
    funcs = parse_blocks(lines, line, fpath, m, n, p).reshape(m, n, p)

    lpath = os.path.join(directory, EIGENVALUES_CSV)
    header, rows = _read_csv(lpath)
    if len(header) != n + 1 or len(rows) != m:
        raise ParseError(f"expected {m} rows of {n + 1} columns", lpath, 1)
    lambdas = np.empty((m, n))
    for j, r in enumerate(rows):
        if len(r) != n + 1:
            raise ParseError(f"expected {n + 1} columns", lpath, j + 2)
        lambdas[j] = [_real(v, lpath, j + 2) for v in r[1:]]

    ppath = os.path.join(directory, PROVENANCE_CSV)
    _, prow = _read_csv(ppath)
    if len(prow) != m * n:
        raise ParseError(f"expected {m * n} provenance rows", ppath, 1)
    source = np.full((m, n), -1, dtype=np.int64)
    flipped = np.zeros((m, n), dtype=bool)
    rotated = np.zeros((m, n), dtype=bool)
    for k, r in enumerate(prow):
        try:
            j, c, src, fl, ro = (int(v) for v in r)
        except ValueError:
            raise ParseError("bad provenance row", ppath, k + 2) from None
        source[j, c - 1], flipped[j, c - 1], rotated[j, c - 1] = src, bool(fl), bool(ro)

    return SpectralField(
        pgrid=pgrid, quad=quad, lambdas=lambdas, eigenfunctions=funcs,
        source_index=source, flipped=flipped, rotated=rotated,
        thresholds=np.array(summary["thresholds"], dtype=np.float64),
        discarded_mass=np.array(summary["discarded_mass"], dtype=np.float64),
        discarded_signed=np.array(summary["discarded_signed"], dtype=np.float64),
        ambiguous_steps=tuple(summary["ambiguous_steps"]),
    )


def element_csv_text(f: ModuleElement) -> str:
    header = ["omega"] + [format_real(t) for t in f.quad.nodes]
    rows = [[format_real(f.pgrid.points[j])] + [format_real(v) for v in f.values[j]] for j in range(f.pgrid.size)]
    return _csv_text(header, rows)


def load_element_csv(path: str, dk: DiscreteKernel) -> ModuleElement:
    """Read a ModuleElement CSV; its node header and omega column must match the kernel grids."""
    header, rows = _read_csv(path)
    p, m = dk.quad.size, dk.pgrid.size
    nodes = [_real(v, path, 1) for v in header[1:]]
    if len(nodes) != p or not np.array_equal(nodes, dk.quad.nodes):
        raise GridMismatch(f"{path}: node header does not match the kernel quadrature")
    if len(rows) != m:
        raise ParseError(f"expected {m} rows, found {len(rows)}", path, len(rows) + 1)
    vals = np.empty((m, p))
    for j, r in enumerate(rows):
        if len(r) != p + 1:
            raise ParseError(f"expected {p + 1} columns", path, j + 2)
        if _real(r[0], path, j + 2) != dk.pgrid.points[j]:
            raise GridMismatch(f"{path}:{j + 2}: omega does not match the parameter grid")
        vals[j] = [_real(v, path, j + 2) for v in r[1:]]
    return ModuleElement(dk.pgrid, dk.quad, vals)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


@dataclass
class Context:
    cfg: RunConfig
    out: str
    threads: int | None
    spec: KernelSpec | None = None
    dk: DiscreteKernel | None = None

    def write(self, name: str, text: str):
        _atomic_write(os.path.join(self.out, name), text)

    def write_json(self, name: str, obj: Any):
        self.write(name, _json_text(obj))


def _build_kernel(ctx: Context) -> DiscreteKernel:
    cfg = ctx.cfg
    s_int = Interval(*cfg.s_interval)
    o_int = Interval(*cfg.omega_interval)
    spec = KernelSpec.from_dict(cfg.kernel, s_int, o_int, base_dir=cfg.base_dir)
    if spec.variant == "tabulated":
        table = spec.table
        for key, size in (("fiber_nodes", table.quad.size), ("omega_samples", table.pgrid.size)):
            if key in cfg.explicit and getattr(cfg, key) != size:
                raise InvalidArgument(f"{key}={getattr(cfg, key)} but the tabulated kernel has {size}")
        quad, pgrid = table.quad, table.pgrid
    else:
        rule = gauss_legendre if cfg.fiber_rule == "gauss_legendre" else trapezoid_rule
        quad = rule(cfg.fiber_nodes, s_int)
        pgrid = parameter_grid(cfg.omega_samples, o_int)
    ctx.spec = spec
    ctx.dk = discretize(spec, quad, pgrid)
    return ctx.dk


def _grid_summary(ctx: Context) -> dict[str, Any]:
    dk = ctx.dk
    return {
        "kernel": ctx.spec.to_dict(),
        "fiber_rule": "tabulated" if ctx.spec.variant == "tabulated" else ctx.cfg.fiber_rule,
        "fiber_nodes": dk.quad.size,
        "omega_samples": dk.pgrid.size,
        "omega_sampling": "cell midpoints; ess-sup taken as max over the omega samples",
    }


def _validated(ctx: Context) -> bool:
    report = validate_kernel(_build_kernel(ctx), ctx.cfg.tol_sym, ctx.cfg.tol_psd)
    ctx.write_json("validation.json", {"command": "validate", **_grid_summary(ctx), "validation": report.to_dict()})
    if not report.passed:
        print(f"kernel validation failed: {', '.join(report.failed_conditions())}", file=sys.stderr)
    return report.passed


def _field(ctx: Context) -> SpectralField:
    spectra = decompose_all(ctx.dk, ctx.cfg.eps_rel, ctx.cfg.tol_sym, ctx.threads)
    return align_spectra(spectra, ctx.dk.pgrid), spectra


def cmd_validate(ctx: Context) -> int:
    return EXIT_OK if _validated(ctx) else EXIT_VALIDATION


def cmd_decompose(ctx: Context) -> int:
    if not _validated(ctx):
        return EXIT_VALIDATION
    fld, spectra = _field(ctx)
    for name, text in field_files_text(fld).items():
        ctx.write(name, text)
    diags = [fiber_diagnostics(s, ctx.dk) for s in spectra]
    ctx.write_json("decompose.json", {
        "command": "decompose",
        **_grid_summary(ctx),
        "eps_rel": ctx.cfg.eps_rel,
        "rank": fld.rank,
        "fiber_ranks": fld.fiber_ranks.tolist(),
        "thresholds": fld.thresholds.tolist(),
        "discarded_mass": fld.discarded_mass.tolist(),
        "discarded_signed": fld.discarded_signed.tolist(),
        "ambiguous_steps": list(fld.ambiguous_steps),
        "flips_per_curve": fld.flips_per_curve().tolist(),
        "fiber_diagnostics": [d.to_dict() for d in diags],
        "continuity": continuity_report(fld).to_dict(),
        "trace_identity_defect": trace_identity_defect(fld, ctx.dk).tolist(),
    })
    return EXIT_OK


def _stored_field(ctx: Context) -> SpectralField | None:
    summary_path = os.path.join(ctx.out, "decompose.json")
    files = [os.path.join(ctx.out, f) for f in (EIGENVALUES_CSV, EIGENFUNCTIONS_FILE, PROVENANCE_CSV)]
    if not all(os.path.exists(f) for f in files + [summary_path]):
        return None
    with open(summary_path, "r", encoding="utf-8") as fh:
        summary = json.load(fh)
    fld = load_field(ctx.out, summary)
    check_same_pgrid(fld.pgrid, ctx.dk.pgrid, "stored spectral field and kernel parameter grids")
    check_same_quadrature(fld.quad, ctx.dk.quad, "stored spectral field and kernel quadrature")
    return fld


def cmd_reconstruct(ctx: Context) -> int:
    if not _validated(ctx):
        return EXIT_VALIDATION
    fld = _stored_field(ctx)
    source = "stored"
    if fld is None:
        fld, _ = _field(ctx)
        source = "computed"
    mode, value = next(iter(ctx.cfg.truncation.items()))
    n_terms = int(value) if mode == "rank" else truncation_rank_for_energy(fld, float(value))
    approx = reconstruct(fld, n_terms)
    err = reconstruction_error(ctx.dk, approx, n_terms)
    ctx.write("reconstructed.pikt", pikt_text(approx))
    ctx.write_json("reconstruct.json", {
        "command": "reconstruct",
        **_grid_summary(ctx),
        "truncation": {mode: value},
        "field_source": source,
        "field_rank": fld.rank,
        "error": err.to_dict(),
    })
    return EXIT_OK


def cmd_verify(ctx: Context) -> int:
    if not _validated(ctx):
        return EXIT_VALIDATION
    fld, _ = _field(ctx)
    tol = EquivalenceTolerances(parseval=ctx.cfg.equiv_tol, tau=ctx.cfg.tau, reconstruction=ctx.cfg.equiv_tol)
    report = equivalence_report(fld, ctx.dk, tol)
    ctx.write_json("verify.json", {
        "command": "verify",
        **_grid_summary(ctx),
        "eps_rel": ctx.cfg.eps_rel,
        "equivalence": report.to_dict(),
        "trace_identity_defect": trace_identity_defect(fld, ctx.dk).tolist(),
    })
    return EXIT_OK


def _apply_input(ctx: Context) -> ModuleElement:
    spec = ctx.cfg.apply_input or {"factor": {"kind": "constant"}}
    if not isinstance(spec, dict):
        raise InvalidArgument("apply_input must be an object")
    if "csv" in spec:
        if set(spec) != {"csv"}:
            raise InvalidArgument("apply_input with 'csv' takes no other keys")
        return load_element_csv(ctx.cfg.resolve(spec["csv"]), ctx.dk)
    extra = set(spec) - {"factor", "amplitude"}
    if extra:
        raise InvalidArgument(f"unknown apply_input keys {sorted(extra)}")
    factor = Factor.from_dict(spec.get("factor", {}))
    amplitude = tuple(float(a) for a in spec.get("amplitude", (1.0,)))
    return ModuleElement.from_function(
        lambda om, t: _polyval(amplitude, om) * factor(t), ctx.dk.pgrid, ctx.dk.quad)


def cmd_apply(ctx: Context) -> int:
    if not _validated(ctx):
        return EXIT_VALIDATION
    f = _apply_input(ctx)
    out = apply_T(ctx.dk, f)
    ctx.write("apply.csv", element_csv_text(out))
    ctx.write_json("apply.json", {
        "command": "apply",
        **_grid_summary(ctx),
        "input_norm": l2inf_norm(f).to_dict(),
        "output_norm": l2inf_norm(out).to_dict(),
    })
    return EXIT_OK


HANDLERS = {
    "validate": cmd_validate,
    "decompose": cmd_decompose,
    "reconstruct": cmd_reconstruct,
    "verify": cmd_verify,
    "apply": cmd_apply,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fibermercer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument("--threads", type=int, default=None, help="worker threads for fiber solves (default: all cores)")
        p.add_argument("--output", default=None, help="output directory; overrides output_dir from the config")
    return parser


def run(command: str, config: str, threads: int | None = None, output: str | None = None) -> int:
    try:
        cfg = RunConfig.load(config)
        out = output if output is not None else cfg.resolve(cfg.output_dir)
        if threads is not None and threads < 1:
            raise InvalidArgument("--threads must be >= 1")
        return HANDLERS[command](Context(cfg, out, threads))
    except KernelValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (InvalidArgument, GridMismatch) as exc:
        print(f"error: {config}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except FiberMercerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_PARSE


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.command, args.config, args.threads, args.output)


if __name__ == "__main__":
    sys.exit(main())
