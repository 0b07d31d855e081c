"""Scenario files and the command-line front end.

A scenario is a single text file of named blocks with ``key = value`` lines
(``#`` starts a comment).  Unknown blocks or keys are rejected so that typos
cannot silently change a run.  Blocks:

  [aggregate]  n_monomers, epsilon, coupling_v, dipoles, polarization
  [bath]       huang_rhys or gamma_amp, omega, gamma   (parallel lists,
               replicated for every monomer; omit the block for no coupling)
  [run]        method, dt, t_max, eta, nu_min/nu_max/nu_step, pm_caps,
               pm_tolerance, doubling, v_values, max_states
  [scan]       v_min, v_max, v_steps, keep_spectra

Subcommands: ``spectrum`` writes spectrum_<method>.tsv and trace_<method>.tsv;
``vscan`` writes overlap.tsv over a coupling scan (method must be ``both``);
``converge`` certifies pseudomode caps and writes the converged spectrum.
Output files are plain TSV with ``#`` headers and 17-significant-digit
numbers, byte-identical across reruns; ``--threads`` only changes wall time.

Exit codes: 0 ok, 1 config error, 2 solver error, 3 partial scan.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import AggregateSpec, LorentzianBath, huang_rhys_to_gamma
from .propagation import PropagationConfig, PropagationError, default_time_step
from .pseudomode import converge_caps, default_nu_grid, pm_correlation
from .spectra import absorption_from_trace, overlap
from .zofe import propagate_zofe

__all__ = ["ConfigError", "ScenarioConfig", "load_scenario", "run_spectrum",
           "run_vscan", "run_converge", "main"]


class ConfigError(Exception):
    """Scenario file is malformed or inconsistent."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Fully resolved scenario: model, method and numerical settings."""

    aggregate: AggregateSpec
    bath: LorentzianBath
    method: str
    propagation: PropagationConfig
    eta: float
    nu: np.ndarray
    pm_caps: tuple | None  # None means auto (converge_caps)
    pm_tolerance: float
    doubling: bool
    max_states: int
    v_values: tuple | None
    scan: tuple | None  # (v_min, v_max, v_steps)
    keep_spectra: bool


_KNOWN_KEYS = {
    "aggregate": {"n_monomers", "epsilon", "coupling_v", "dipoles", "polarization"},
    "bath": {"huang_rhys", "gamma_amp", "omega", "gamma"},
    "run": {
        "method", "dt", "t_max", "eta", "nu_min", "nu_max", "nu_step",
        "pm_caps", "pm_tolerance", "doubling", "v_values", "max_states",
    },
    "scan": {"v_min", "v_max", "v_steps", "keep_spectra"},
}


def _read_blocks(text, source):
    blocks = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in _KNOWN_KEYS:
                raise ConfigError(f"{source}:{lineno}: unknown block [{name}]")
            if name in blocks:
                raise ConfigError(f"{source}:{lineno}: duplicate block [{name}]")
            blocks[name] = {}
            current = name
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if current is None:
            raise ConfigError(f"{source}:{lineno}: key outside of any block")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KNOWN_KEYS[current]:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}' in [{current}]")
        if key in blocks[current]:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'")
        blocks[current][key] = value
    return blocks


def _floats(value, context):
    try:
        return [float(tok) for tok in value.split()]
    except ValueError as exc:
        raise ConfigError(f"{context}: expected numbers, got '{value}'") from exc


def _float(value, context):
    nums = _floats(value, context)
    if len(nums) != 1:
        raise ConfigError(f"{context}: expected a single number")
    return nums[0]


def _int(value, context):
    try:
        return int(value)
    except ValueError as exc:
        raise ConfigError(f"{context}: expected an integer, got '{value}'") from exc


def _bool(value, context):
    lowered = value.strip().lower()
    if lowered in ("true", "on", "yes", "1"):
        return True
    if lowered in ("false", "off", "no", "0"):
        return False
    raise ConfigError(f"{context}: expected true/false, got '{value}'")


def _build_aggregate(block):
    if "n_monomers" not in block:
        raise ConfigError("[aggregate]: n_monomers is required")
    n = _int(block["n_monomers"], "n_monomers")
    epsilon = _floats(block.get("epsilon", "0"), "epsilon")
    coupling_v = _float(block.get("coupling_v", "0"), "coupling_v")
    polarization = _floats(block.get("polarization", "1 0 0"), "polarization")
    if len(polarization) != 3:
        raise ConfigError("polarization: expected three numbers")
    dip_spec = block.get("dipoles", "equal-parallel").strip()
    if dip_spec == "equal-parallel":
        pol = np.asarray(polarization)
        norm = np.linalg.norm(pol)
        if norm == 0:
            raise ConfigError("polarization must be nonzero")
        dipoles = np.tile(pol / norm, (n, 1))
    else:
        rows = [_floats(row, "dipoles") for row in dip_spec.split(";")]
        if len(rows) != n or any(len(r) != 3 for r in rows):
            raise ConfigError(f"dipoles: expected {n} rows of three numbers")
        dipoles = np.asarray(rows)
    try:
        return AggregateSpec(n, epsilon, coupling_v, dipoles, polarization)
    except ValueError as exc:
        raise ConfigError(f"[aggregate]: {exc}") from exc


def _build_bath(block, n_monomers):
    if not block:
        return LorentzianBath(tuple(() for _ in range(n_monomers)))
    has_x = "huang_rhys" in block
    has_g = "gamma_amp" in block
    if has_x == has_g:
        raise ConfigError("[bath]: give exactly one of huang_rhys or gamma_amp")
    if "omega" not in block or "gamma" not in block:
        raise ConfigError("[bath]: omega and gamma are required")
    omega = _floats(block["omega"], "omega")
    gamma = _floats(block["gamma"], "gamma")
    strengths = _floats(block["huang_rhys" if has_x else "gamma_amp"], "bath strengths")
    if not len(strengths) == len(omega) == len(gamma):
        raise ConfigError("[bath]: huang_rhys/gamma_amp, omega and gamma must have equal lengths")
    terms = []
    for s, om, gm in zip(strengths, omega, gamma):
        amp = huang_rhys_to_gamma(s, om) if has_x else s
        if amp == 0.0:
            continue  # zero-strength terms carry no coupling
        terms.append((amp, om, gm))
    try:
        return LorentzianBath.uniform(n_monomers, terms)
    except ValueError as exc:
        raise ConfigError(f"[bath]: {exc}") from exc


def load_scenario(path, method_override=None) -> ScenarioConfig:
    """Parse and validate a scenario file into a ScenarioConfig."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    blocks = _read_blocks(text, path.name)
    if "aggregate" not in blocks:
        raise ConfigError("missing [aggregate] block")
    agg = _build_aggregate(blocks["aggregate"])
    bath = _build_bath(blocks.get("bath", {}), agg.n_monomers)
    run = blocks.get("run", {})

    method = method_override or run.get("method", "both")
    if method not in ("zofe", "pm", "both"):
        raise ConfigError(f"method must be zofe, pm or both, got '{method}'")

    dt = _float(run["dt"], "dt") if "dt" in run else default_time_step(agg, bath)
    t_max = _float(run.get("t_max", "150"), "t_max")
    try:
        propagation = PropagationConfig(dt=dt, t_max=t_max)
    except ValueError as exc:
        raise ConfigError(f"[run]: {exc}") from exc
    eta = _float(run.get("eta", "0.01"), "eta")
    if eta < 0:
        raise ConfigError("eta must be >= 0")

    scan = None
    if "scan" in blocks:
        sblock = blocks["scan"]
        for key in ("v_min", "v_max", "v_steps"):
            if key not in sblock:
                raise ConfigError(f"[scan]: {key} is required")
        v_min = _float(sblock["v_min"], "v_min")
        v_max = _float(sblock["v_max"], "v_max")
        v_steps = _int(sblock["v_steps"], "v_steps")
        if v_steps < 1 or (v_steps > 1 and not v_max > v_min):
            raise ConfigError("[scan]: need v_max > v_min and v_steps >= 1")
        scan = (v_min, v_max, v_steps)
    keep_spectra = _bool(blocks.get("scan", {}).get("keep_spectra", "false"), "keep_spectra")

    v_values = None
    if "v_values" in run:
        v_values = tuple(_floats(run["v_values"], "v_values"))
        if not v_values:
            raise ConfigError("v_values must not be empty")

    # The frequency grid must cover every coupling the scenario will visit.
    v_extent = abs(agg.coupling_v)
    if scan is not None:
        v_extent = max(v_extent, abs(scan[0]), abs(scan[1]))
    if v_values:
        v_extent = max(v_extent, max(abs(v) for v in v_values))
    explicit_nu = [key for key in ("nu_min", "nu_max", "nu_step") if key in run]
    if explicit_nu and len(explicit_nu) != 3:
        raise ConfigError("give all of nu_min, nu_max, nu_step or none")
    if explicit_nu:
        nu_min = _float(run["nu_min"], "nu_min")
        nu_max = _float(run["nu_max"], "nu_max")
        nu_step = _float(run["nu_step"], "nu_step")
        if not (nu_step > 0 and nu_max > nu_min):
            raise ConfigError("need nu_max > nu_min and nu_step > 0")
        count = int(np.floor((nu_max - nu_min) / nu_step)) + 1
        nu = nu_min + nu_step * np.arange(count)
    else:
        wide = dataclasses.replace(agg, coupling_v=v_extent)
        nu = default_nu_grid(wide, bath)

    caps_spec = run.get("pm_caps", "auto").strip()
    if caps_spec == "auto":
        pm_caps = None
    else:
        values = caps_spec.split()
        if len(values) not in (1, 2):
            raise ConfigError("pm_caps: expected 'auto', one cap, or 'b_tot b_mode'")
        caps = [_int(v, "pm_caps") for v in values]
        if any(c < 0 for c in caps):
            raise ConfigError("pm_caps must be >= 0")
        pm_caps = (caps[0], caps[-1])
    pm_tolerance = _float(run.get("pm_tolerance", "1e-3"), "pm_tolerance")
    if not pm_tolerance > 0:
        raise ConfigError("pm_tolerance must be positive")
    doubling = _bool(run.get("doubling", "true"), "doubling")
    max_states = _int(run.get("max_states", "2000000"), "max_states")

    return ScenarioConfig(
        aggregate=agg, bath=bath, method=method, propagation=propagation,
        eta=eta, nu=nu, pm_caps=pm_caps, pm_tolerance=pm_tolerance,
        doubling=doubling, max_states=max_states, v_values=v_values,
        scan=scan, keep_spectra=keep_spectra,
    )


def _format(x):
    return f"{x:.17g}"


def _write_tsv(path, header, rows):
    # space-separated column names in the comment header, tab-separated data
    lines = ["# " + " ".join(header)]
    for row in rows:
        lines.append("\t".join(_format(x) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def _resolve_caps(cfg: ScenarioConfig, agg: AggregateSpec):
    """Explicit caps from the config, or a cap ladder run when auto."""
    if cfg.pm_caps is not None:
        return cfg.pm_caps
    b_tot, b_mode, _ = converge_caps(
        agg, cfg.bath, cfg.propagation, cfg.pm_tolerance, eta=cfg.eta,
        nu=cfg.nu, doubling=cfg.doubling, max_states=cfg.max_states,
    )
    return (b_tot, b_mode)


def _solve(method, agg, cfg: ScenarioConfig, caps=None):
    if method == "zofe":
        return propagate_zofe(agg, cfg.bath, cfg.propagation)
    caps = caps if caps is not None else _resolve_caps(cfg, agg)
    return pm_correlation(
        agg, cfg.bath, cfg.propagation, caps=caps,
        doubling=cfg.doubling, max_states=cfg.max_states,
    )


def run_spectrum(cfg: ScenarioConfig, out_dir) -> list:
    """Write spectrum_<method>[.V..].tsv and trace_<method>[.V..].tsv files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    methods = ("zofe", "pm") if cfg.method == "both" else (cfg.method,)
    couplings = cfg.v_values if cfg.v_values else (None,)
    written = []
    for v in couplings:
        agg = cfg.aggregate if v is None else dataclasses.replace(cfg.aggregate, coupling_v=v)
        suffix = "" if v is None else f"_V{v:g}"
        caps = None
        for method in methods:
            if method == "pm" and caps is None:
                caps = _resolve_caps(cfg, agg)
            trace = _solve(method, agg, cfg, caps=caps)
            spectrum = absorption_from_trace(trace, cfg.eta, cfg.nu)
            written.append(_write_tsv(
                out / f"trace_{method}{suffix}.tsv", ("t", "ReM", "ImM"),
                zip(trace.times, trace.samples.real, trace.samples.imag),
            ))
            written.append(_write_tsv(
                out / f"spectrum_{method}{suffix}.tsv", ("nu", "A"),
                zip(spectrum.nu, spectrum.values),
            ))
    return written


def _zofe_with_step_ladder(agg, cfg: ScenarioConfig, halvings=3):
    """Deterministic retry: halve dt (up to ``halvings`` times) when the
    norm guard aborts a run.

    The auxiliary feedback of the reduced-space method has narrow coupling
    windows with sharp transients; a scan should resolve them with a smaller
    step instead of failing, and the ladder keeps results independent of how
    the scan is parallelized.
    """
    dt = cfg.propagation.dt
    while True:
        try:
            return propagate_zofe(
                agg, cfg.bath, PropagationConfig(dt=dt, t_max=cfg.propagation.t_max)
            )
        except PropagationError:
            if halvings == 0:
                raise
            halvings -= 1
            dt /= 2.0


def _vscan_point(payload):
    """One scan point; returns (v, overlap or nan, error, spectra or None)."""
    cfg, v, caps = payload
    agg = dataclasses.replace(cfg.aggregate, coupling_v=v)
    try:
        trace_z = _zofe_with_step_ladder(agg, cfg)
        trace_p = _solve("pm", agg, cfg, caps=caps)
        spec_z = absorption_from_trace(trace_z, cfg.eta, cfg.nu)
        spec_p = absorption_from_trace(trace_p, cfg.eta, cfg.nu)
        value = overlap(spec_z, spec_p)
    except (PropagationError, ValueError) as exc:
        return v, float("nan"), str(exc), None
    kept = (spec_z.values, spec_p.values) if cfg.keep_spectra else None
    return v, value, None, kept


def run_vscan(cfg: ScenarioConfig, out_dir, threads=1):
    """Overlap between the two methods over the coupling scan.

    Writes overlap.tsv (ascending V); failed points are recorded as nan.
    Returns (paths, n_failed).
    """
    if cfg.scan is None:
        raise ConfigError("vscan needs a [scan] block")
    if cfg.method != "both":
        raise ConfigError("vscan requires method = both")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    v_min, v_max, v_steps = cfg.scan
    if v_steps == 1:
        v_grid = np.array([v_min])
    else:
        v_grid = v_min + (v_max - v_min) * np.arange(v_steps) / (v_steps - 1)
    # Caps are certified once, at the strongest coupling visited, and reused
    # for every point so the scan is consistent and reproducible.
    caps_agg = dataclasses.replace(
        cfg.aggregate, coupling_v=float(v_grid[np.argmax(np.abs(v_grid))])
    )
    caps = _resolve_caps(cfg, caps_agg)
    payloads = [(cfg, float(v), caps) for v in v_grid]
    if threads > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_vscan_point, payloads, chunksize=1))
    else:
        results = [_vscan_point(p) for p in payloads]

    written = []
    n_failed = 0
    rows = []
    for v, value, error, kept in results:
        rows.append((v, value))
        if error is not None:
            n_failed += 1
            print(f"scan point V = {v:g} failed: {error}", file=sys.stderr)
        elif kept is not None:
            written.append(_write_tsv(out / f"spectrum_zofe_V{v:g}.tsv",
                                      ("nu", "A"), zip(cfg.nu, kept[0])))
            written.append(_write_tsv(out / f"spectrum_pm_V{v:g}.tsv",
                                      ("nu", "A"), zip(cfg.nu, kept[1])))
    written.insert(0, _write_tsv(out / "overlap.tsv", ("V", "overlap_percent"), rows))
    return written, n_failed


def run_converge(cfg: ScenarioConfig, out_dir):
    """Certify pseudomode caps and write the converged spectrum and trace."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    b_tot, b_mode, trace = converge_caps(
        cfg.aggregate, cfg.bath, cfg.propagation, cfg.pm_tolerance,
        eta=cfg.eta, nu=cfg.nu, doubling=cfg.doubling, max_states=cfg.max_states,
    )
    spectrum = absorption_from_trace(trace, cfg.eta, cfg.nu)
    written = [
        _write_tsv(out / "converged_caps.tsv", ("b_tot", "b_mode"), [(b_tot, b_mode)]),
        _write_tsv(out / "trace_pm.tsv", ("t", "ReM", "ImM"),
                   zip(trace.times, trace.samples.real, trace.samples.imag)),
        _write_tsv(out / "spectrum_pm.tsv", ("nu", "A"),
                   zip(spectrum.nu, spectrum.values)),
    ]
    print(f"converged caps: b_tot = {b_tot}, b_mode = {b_mode}")
    return written


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="aggspec",
        description="Absorption spectra of linear aggregates: reduced-space "
                    "(zofe) and exact pseudomode (pm) propagation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("spectrum", "compute spectra and traces for one scenario"),
        ("vscan", "overlap between the methods over a coupling scan"),
        ("converge", "certify pseudomode caps for a scenario"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="scenario file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--method", choices=("zofe", "pm", "both"),
                       help="override the configured method")
        p.add_argument("--threads", type=int, default=1,
                       help="worker processes (used by scan points; never "
                            "changes file contents)")
    args = parser.parse_args(argv)

    try:
        cfg = load_scenario(args.config, method_override=args.method)
        if args.command == "vscan" and cfg.method != "both":
            raise ConfigError("vscan requires method = both")
        if args.command == "vscan" and cfg.scan is None:
            raise ConfigError("vscan needs a [scan] block")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    try:
        if args.command == "spectrum":
            run_spectrum(cfg, args.out)
        elif args.command == "vscan":
            _, n_failed = run_vscan(cfg, args.out, threads=args.threads)
            if n_failed:
                return 3
        else:
            run_converge(cfg, args.out)
    except (PropagationError, ValueError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
