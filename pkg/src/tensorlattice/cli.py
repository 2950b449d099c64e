"""Command-line experiments: ``kernel``, ``solve``, ``bench`` and ``energy``.

Each subcommand reads a flat ``dotted.key = value`` configuration file and
writes CSV tables plus gnuplot scripts into ``--out``.  Every output file
starts with the fully resolved configuration as ``#`` comments.
"""

from __future__ import annotations

import argparse
import configparser
import io
import os
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import (
    BoundsError,
    ConfigError,
    DimensionError,
    NumericalError,
    ResourceCapError,
    StructureError,
    TensorLatticeError,
)

THREADS_ENV = "TENSORLATTICE_THREADS"
DEFAULT_DENSE_CAP = 4096
DEFAULT_MATERIALIZE_CAP = 2**24

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CAP = 0, 2, 3, 4


def _floats(s):
    return [float(x) for x in s.replace(",", " ").split()]


def _ints(s):
    return [int(x) for x in s.replace(",", " ").split()]


def _rows(s):
    return [_floats(r) for r in s.split(";") if r.strip()]


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key -> (parser, default or None when required)
SCHEMA = {
    "lattice.b": (float, None),
    "lattice.L": (_ints, "1 1 1"),
    "grid.n": (int, "16"),
    "grid.nbar": (int, "16"),
    "quadrature.M": (int, "30"),
    "quadrature.rule": (str, "double_exponential"),
    "boundary": (str, "periodic"),
    "nuclei.positions": (_rows, None),
    "nuclei.charges": (_floats, None),
    "basis.centers": (_rows, None),
    "basis.exponents": (_floats, None),
    "basis.degrees": (_rows, ""),
    "overlap.eps": (float, "1e-8"),
    "overlap.L0": (str, "auto"),
    "solve.n_occ": (int, "1"),
    "solve.eigenvectors": (_bool, "false"),
    "kernel.M": (_ints, ""),
    "kernel.samples": (int, "12"),
    "bench.L": (_ints, "128 256 512 1024"),
    "bench.repeats": (int, "5"),
    "energy.L": (_ints, "8 16 32 64"),
    "caps.dense": (int, str(DEFAULT_DENSE_CAP)),
    "caps.materialize": (int, str(DEFAULT_MATERIALIZE_CAP)),
    "caps.acknowledge": (_bool, "false"),
    "run.threads": (str, ""),
}


@dataclass
class ExperimentConfig:
    values: dict
    raw: dict

    def __getitem__(self, key):
        return self.values[key]

    def header(self) -> str:
        lines = [f"# {k} = {self.raw[k]}" for k in sorted(self.raw)]
        return "\n".join(lines) + "\n"

    def system(self, L=None):
        from .galerkin import GtoBasis, LatticeSystem
        from .newton_kernel import NucleiSet

        v = self.values
        degrees = v["basis.degrees"] or None
        return LatticeSystem(
            b=v["lattice.b"],
            L=tuple(L if L is not None else v["lattice.L"]),
            nuclei=NucleiSet(v["nuclei.positions"], v["nuclei.charges"]),
            basis=GtoBasis(v["basis.centers"], v["basis.exponents"], degrees),
            n=v["grid.n"],
            nbar=v["grid.nbar"],
            M=v["quadrature.M"],
            eps_ov=v["overlap.eps"],
            rule=v["quadrature.rule"],
            L0_override=None if v["overlap.L0"] == "auto" else int(v["overlap.L0"]),
            dense_cap=v["caps.dense"],
        )


def parse_config_text(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(
        delimiters=("=",), comment_prefixes=("#",), inline_comment_prefixes=("#",),
        interpolation=None, strict=True,
    )
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from exc
    given = dict(parser["config"])
    unknown = sorted(set(given) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    raw, values, errors = {}, {}, []
    for key, (conv, default) in SCHEMA.items():
        if key in given:
            text_value = given[key].strip()
        elif default is None:
            errors.append(f"{key}: required")
            continue
        else:
            text_value = default
        raw[key] = text_value
        try:
            values[key] = conv(text_value)
        except (ValueError, TypeError) as exc:
            errors.append(f"{key}: {exc}")
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    _validate(values, errors)
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    return ExperimentConfig(values, raw)


def _validate(v, errors):
    if not v["lattice.b"] > 0:
        errors.append("lattice.b: must be positive")
    if len(v["lattice.L"]) != 3 or min(v["lattice.L"], default=0) < 1:
        errors.append("lattice.L: need three positive integers")
    for key in ("grid.n", "grid.nbar", "quadrature.M", "solve.n_occ", "bench.repeats", "kernel.samples"):
        if v[key] < 1:
            errors.append(f"{key}: must be a positive integer")
    if v["quadrature.rule"] not in ("double_exponential", "exponential"):
        errors.append("quadrature.rule: expected double_exponential or exponential")
    if v["boundary"] not in ("box", "periodic", "both"):
        errors.append("boundary: expected box, periodic or both")
    pos, z = v["nuclei.positions"], v["nuclei.charges"]
    if any(len(p) != 3 for p in pos):
        errors.append("nuclei.positions: each position needs three coordinates (rows separated by ';')")
    elif len(pos) != len(z):
        errors.append("nuclei.charges: need one charge per position")
    elif any(c <= 0 for c in z):
        errors.append("nuclei.charges: must be positive")
    elif v["lattice.b"] > 0 and np.max(np.abs(pos)) > v["lattice.b"] / 2:
        errors.append("nuclei.positions: must lie inside [-b/2, b/2]^3")
    c, a = v["basis.centers"], v["basis.exponents"]
    if any(len(p) != 3 for p in c):
        errors.append("basis.centers: each center needs three coordinates")
    elif len(c) != len(a) or not a:
        errors.append("basis.exponents: need one exponent per center")
    elif any(x <= 0 for x in a):
        errors.append("basis.exponents: must be positive")
    d = v["basis.degrees"]
    if d and (len(d) != len(c) or any(len(r) != 3 or min(r) < 0 for r in d)):
        errors.append("basis.degrees: need one nonnegative triple per center")
    if v["overlap.L0"] != "auto":
        try:
            if int(v["overlap.L0"]) < 0:
                raise ValueError
        except ValueError:
            errors.append("overlap.L0: expected 'auto' or a nonnegative integer")
    if not v["overlap.eps"] > 0:
        errors.append("overlap.eps: must be positive")
    if any(M < 1 for M in v["kernel.M"]):
        errors.append("kernel.M: must be positive integers")
    if any(L < 1 for L in v["bench.L"] + v["energy.L"]):
        errors.append("bench.L / energy.L: must be positive integers")
    needs_ack = v["caps.dense"] > DEFAULT_DENSE_CAP or v["caps.materialize"] > DEFAULT_MATERIALIZE_CAP
    if needs_ack and not v["caps.acknowledge"]:
        errors.append("caps: raising a resource cap above its default requires caps.acknowledge = true")
    if v["run.threads"]:
        try:
            if int(v["run.threads"]) < 1:
                raise ValueError
        except ValueError:
            errors.append("run.threads: expected a positive integer")


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    return parse_config_text(text)


def resolve_threads(cfg: ExperimentConfig) -> int | None:
    if cfg["run.threads"]:
        return int(cfg["run.threads"])
    env = os.environ.get(THREADS_ENV, "").strip()
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV}: expected a positive integer, got {env!r}") from None
        if n < 1:
            raise ConfigError(f"{THREADS_ENV}: expected a positive integer, got {env!r}")
        return n
    return None


def fmt(x) -> str:
    return f"{float(x):.17g}"


def write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: Path, cfg: ExperimentConfig, columns, rows, extra_header=()):
    buf = io.StringIO()
    buf.write(cfg.header())
    for line in extra_header:
        buf.write(f"# {line}\n")
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(fmt(x) if isinstance(x, (float, np.floating)) else str(x) for x in row) + "\n")
    write_atomic(path, buf.getvalue())


def write_gnuplot(path: Path, cfg: ExperimentConfig, body: str):
    write_atomic(path, cfg.header() + body)


def _check_periodic(system):
    for l, (L, active) in enumerate(zip(system.L, system.active)):
        if active and L <= 2 * system.L0:
            raise ConfigError(
                f"lattice.L: periodic model needs L > 2*L0 = {2 * system.L0} in direction {l + 1}, got {L}"
            )


def _check_box(system, cap):
    if system.Nb > cap:
        raise ResourceCapError("box model size N_b", system.Nb, cap)


def cmd_kernel(cfg: ExperimentConfig, out: Path):
    from scipy.integrate import nquad

    from .newton_kernel import build_sinc_quadrature, lattice_potential_box, newton_master_tensor
    from .tensor_core import Grid1D

    system = cfg.system()
    n, h, b = system.n, system.h, system.b
    Ms = cfg["kernel.M"] or [cfg["quadrature.M"]]
    size = 3 * n + (n % 2)
    rng = np.random.default_rng(0)
    cells = []
    while len(cells) < cfg["kernel.samples"]:
        c = tuple(int(x) for x in rng.integers(-(size // 2), size // 2, 3))
        if np.linalg.norm(np.array(c) + 0.5) >= 3 and c not in cells:
            cells.append(c)
    exact = {}
    for c in cells:
        lo = [k * h for k in c]
        exact[c] = nquad(lambda x, y, z: 1.0 / np.sqrt(x * x + y * y + z * z),
                         [[lo[i], lo[i] + h] for i in range(3)],
                         opts={"epsabs": 0, "epsrel": 1e-12})[0]
    zs = np.geomspace(0.5 * h, np.sqrt(3) * size * h, 200)
    rows = []
    for M in Ms:
        quad = build_sinc_quadrature(M, rule=cfg["quadrature.rule"])
        master = newton_master_tensor(Grid1D(size, h), quad)
        mid = size // 2
        err = max(
            abs(quad.weights @ np.prod([master.factors[l][mid + c[l]] for l in range(3)], axis=0) / exact[c] - 1)
            for c in cells
        )
        sizes = [2 * n * (L + system.W) for L in system.L]
        big = newton_master_tensor([Grid1D(s, h) for s in sizes], quad)
        t0 = time.perf_counter()
        pot = lattice_potential_box(big, system.nuclei, system.L, n, h, pad=system.W)
        dt = time.perf_counter() - t0
        bound = system.nuclei.count * quad.rank
        if pot.rank > bound:
            raise NumericalError(f"lattice tensor rank {pot.rank} exceeds bound {bound}")
        rows.append((M, quad.rank, quad.max_relative_error(zs), err, pot.rank, bound, dt))
    write_csv(out / "kernel.csv", cfg,
              ["M", "rank", "quad_max_rel_error", "kernel_max_rel_error", "lattice_rank", "rank_bound",
               "assembly_seconds"], rows,
              [f"quadrature error over z in [{zs[0]:.3g}, {zs[-1]:.3g}]; kernel error over "
               f"{len(cells)} cells with rho >= 3h against adaptive integration"])
    write_gnuplot(out / "kernel.gp", cfg,
                  "set datafile separator ','\nset logscale y\nset xlabel 'M'\nset ylabel 'max rel. error'\n"
                  "plot 'kernel.csv' using 1:3 with linespoints title 'quadrature', "
                  "'' using 1:4 with linespoints title 'kernel cells'\n")


def _spectrum_rows_periodic(spec):
    rows = []
    for kp, vals in zip(spec.kpoints, spec.values):
        k = list(kp) + [0] * (3 - len(kp))
        for m, lam in enumerate(vals):
            rows.append((k[0], k[1], k[2], m, float(lam)))
    return rows


def cmd_solve(cfg: ExperimentConfig, out: Path):
    from .eigensolver import (
        periodic_hamiltonian,
        reconstruct_eigenvectors,
        solve_box_dense,
        solve_periodic,
        spectral_bands,
    )
    from .galerkin import box_circulant_defect, hamiltonian_box, hamiltonian_periodic

    system = cfg.system()
    boundary = cfg["boundary"]
    want_vec = cfg["solve.eigenvectors"]
    results = {}
    if boundary in ("periodic", "both"):
        _check_periodic(system)
        A, V, S = hamiltonian_periodic(system)
        spec = solve_periodic(periodic_hamiltonian(A, V), S, vectors=want_vec)
        results["periodic"] = spec.sorted_values()
        name = "spectrum.csv" if boundary == "periodic" else "spectrum_periodic.csv"
        write_csv(out / name, cfg, ["k1", "k2", "k3", "band", "eigenvalue"], _spectrum_rows_periodic(spec))
        bands = spectral_bands(spec)
        rows = [(m, j, float(lam)) for m in range(bands.count) for j, lam in enumerate(bands.bands[m])]
        write_csv(out / "bands.csv", cfg, ["band", "k_linear", "eigenvalue"], rows)
        write_gnuplot(out / "bands.gp", cfg,
                      "set datafile separator ','\nset xlabel 'k (linear index)'\nset ylabel 'eigenvalue'\n"
                      "plot 'bands.csv' using 2:3:1 with points palette title 'bands'\n")
        if want_vec:
            U = reconstruct_eigenvectors(spec)
            vrows = [(e, i, float(U[i, e].real), float(U[i, e].imag))
                     for e in range(U.shape[1]) for i in range(U.shape[0])]
            write_csv(out / "eigenvectors_periodic.csv", cfg, ["eigen_index", "coefficient", "re", "im"], vrows)
    if boundary in ("box", "both"):
        _check_box(system, cfg["caps.dense"])
        H, S = hamiltonian_box(system)
        dense = solve_box_dense(H, S, vectors=want_vec, cap=cfg["caps.dense"])
        results["box"] = dense.values
        name = "spectrum.csv" if boundary == "box" else "spectrum_box.csv"
        write_csv(out / name, cfg, ["k1", "k2", "k3", "band", "eigenvalue"],
                  [(0, 0, 0, i, float(lam)) for i, lam in enumerate(dense.values)],
                  ["box model: k = (0,0,0), band = global eigenvalue index"])
        if want_vec:
            vrows = [(e, i, float(dense.vectors[i, e]), 0.0)
                     for e in range(dense.vectors.shape[1]) for i in range(dense.vectors.shape[0])]
            write_csv(out / "eigenvectors_box.csv", cfg, ["eigen_index", "coefficient", "re", "im"], vrows)
    if boundary == "both":
        _, rel = box_circulant_defect(system, "nuclear")
        rows = [("nuclear", rel)]
        for which in ("laplace", "mass"):
            rows.append((which, box_circulant_defect(system, which)[1]))
        write_csv(out / "defect.csv", cfg, ["operator", "relative_frobenius"], rows)
        diff = results["box"] - results["periodic"]
        m0 = system.m0
        K = len(diff) // m0
        prow = [(m, float(np.max(np.abs(diff[m * K:(m + 1) * K])))) for m in range(m0)]
        write_csv(out / "pollution.csv", cfg, ["band", "max_abs_discrepancy"], prow,
                  ["sorted box minus sorted periodic eigenvalues, grouped into m0 bands of L1*L2*L3 values"])
        write_gnuplot(out / "spectra.gp", cfg,
                      "set datafile separator ','\nset xlabel 'index'\nset ylabel 'eigenvalue'\n"
                      "plot 'spectrum_box.csv' using 4:5 with points title 'box', "
                      "'bands.csv' using 0:3 with points title 'periodic'\n")


def _median_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def fit_exponent(sizes, seconds) -> float:
    """Least-squares slope of ``log(seconds)`` against ``log(sizes)``."""
    sizes, seconds = np.asarray(sizes, float), np.asarray(seconds, float)
    return float(np.polyfit(np.log(sizes), np.log(seconds), 1)[0])


def run_bench(cfg: ExperimentConfig, Ls=None, repeats=None, dense_repeats=None):
    """Timing rows ``(Nb, path, seconds)`` for ``(L,1,1)`` chains.

    Only the solve stage is timed; assembly happens beforehand.
    """
    from .eigensolver import periodic_hamiltonian, solve_box_dense, solve_periodic
    from .galerkin import hamiltonian_box, hamiltonian_periodic

    v = cfg.values
    Ls = Ls or v["bench.L"]
    repeats = repeats or v["bench.repeats"]
    dense_repeats = dense_repeats or repeats
    L23 = v["lattice.L"][1:]
    rows = []
    for L in Ls:
        system = cfg.system((L,) + tuple(L23))
        _check_periodic(system)
        A, V, S = hamiltonian_periodic(system)
        Hg = periodic_hamiltonian(A, V)
        t = _median_time(lambda: solve_periodic(Hg, S), repeats)
        rows.append((system.Nb, "fft", t))
        if system.Nb <= v["caps.dense"]:
            H, Sd = hamiltonian_box(system)
            t = _median_time(lambda: solve_box_dense(H, Sd, vectors=True, cap=v["caps.dense"]), dense_repeats)
            rows.append((system.Nb, "dense", t))
            del H, Sd
    return rows


def cmd_bench(cfg: ExperimentConfig, out: Path):
    rows = run_bench(cfg)
    fits = []
    for path in ("dense", "fft"):
        pts = [(nb, s) for nb, p, s in rows if p == path]
        if len(pts) >= 2:
            nb, s = zip(*pts)
            fits.append((path, fit_exponent(nb, s), min(nb), max(nb)))
    write_csv(out / "bench.csv", cfg, ["Nb", "path", "seconds"], rows,
              [f"fitted exponent {p}: {e:.3f} over Nb in [{a}, {b}]" for p, e, a, b in fits])
    write_csv(out / "bench_exponents.csv", cfg, ["path", "exponent", "Nb_min", "Nb_max"], fits)
    write_gnuplot(out / "bench.gp", cfg,
                  "set datafile separator ','\nset logscale xy\nset xlabel 'N_b'\nset ylabel 'seconds'\n"
                  "plot 'bench.csv' using 1:(strcol(2) eq 'dense' ? $3 : 1/0) with linespoints title 'dense', "
                  "'' using 1:(strcol(2) eq 'fft' ? $3 : 1/0) with linespoints title 'fft'\n")


def run_energy(cfg: ExperimentConfig, Ls=None):
    """Rows ``(L1, L2, L3, boundary, E_per_cell)`` for a sweep over ``L1``."""
    from .eigensolver import average_energy_per_cell, periodic_hamiltonian, solve_box_dense, solve_periodic
    from .galerkin import hamiltonian_box, hamiltonian_periodic

    v = cfg.values
    Ls = Ls or v["energy.L"]
    L23 = tuple(v["lattice.L"][1:])
    modes = ("box", "periodic") if v["boundary"] == "both" else (v["boundary"],)
    rows = []
    for L in Ls:
        system = cfg.system((L,) + L23)
        ncell = int(np.prod(system.L))
        for mode in modes:
            if mode == "periodic":
                _check_periodic(system)
                A, V, S = hamiltonian_periodic(system)
                vals = solve_periodic(periodic_hamiltonian(A, V), S).all_values()
            else:
                _check_box(system, v["caps.dense"])
                H, S = hamiltonian_box(system)
                vals = solve_box_dense(H, S, vectors=False, cap=v["caps.dense"]).values
            rows.append((system.L[0], system.L[1], system.L[2], mode,
                         average_energy_per_cell(vals, ncell, v["solve.n_occ"])))
    return rows


def cmd_energy(cfg: ExperimentConfig, out: Path):
    rows = run_energy(cfg)
    write_csv(out / "energy.csv", cfg, ["L1", "L2", "L3", "boundary", "E_per_cell"], rows,
              [f"E_per_cell = (sum of the lowest n_occ*L1*L2*L3 eigenvalues) / (L1*L2*L3), "
               f"n_occ = {cfg['solve.n_occ']}, raw (unregularized) lattice sums"])
    write_gnuplot(out / "energy.gp", cfg,
                  "set datafile separator ','\nset logscale x\nset xlabel 'L'\nset ylabel 'E per cell'\n"
                  "plot 'energy.csv' using 1:(strcol(4) eq 'box' ? $5 : 1/0) with linespoints title 'box', "
                  "'' using 1:(strcol(4) eq 'periodic' ? $5 : 1/0) with linespoints title 'periodic'\n")


COMMANDS = {"kernel": cmd_kernel, "solve": cmd_solve, "bench": cmd_bench, "energy": cmd_energy}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tensorlattice", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="configuration file")
        s.add_argument("--out", required=True, help="output directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        threads = resolve_threads(cfg)
        out = Path(args.out)
        with threadpool_limits(limits=threads):
            COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceCapError as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (DimensionError, BoundsError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, StructureError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except TensorLatticeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
