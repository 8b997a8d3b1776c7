"""Command-line frontend: ``tlrgeo <command> [options]``.

Every command resolves one :class:`ExperimentConfig` (defaults, then a
``--config`` JSON file, then a ``--preset``, then explicit flags), validates
it before any computation, and embeds it with the toolkit version in every
file it writes.

Exit codes: 0 success, 2 configuration error, 3 input/output error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    ORDERING_METHODS,
    BivariateMaternParams,
    FactorizationError,
    IngestError,
    InvalidArgument,
    MaternParams,
    OptimizationError,
    TghParams,
    apply_permutation,
    generate_uniform_locations,
    read_field_csv,
    read_locations_csv,
    write_field_csv,
    write_permutation,
)
from .kernels import KERNELS

log = logging.getLogger("tlrgeo")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

COMMANDS = ("generate", "order", "compress", "factorize", "mle", "bench", "ingest")

PRESETS = {
    "weak-small": {"sigma2": 1.0, "beta": 0.03, "nu": 0.5},
    "medium-small": {"sigma2": 1.0, "beta": 0.1, "nu": 0.5},
    "strong-small": {"sigma2": 1.0, "beta": 0.3, "nu": 0.5},
    "smooth-weak": {"sigma2": 1.0, "beta": 0.025, "nu": 1.0},
    "smooth-medium": {"sigma2": 1.0, "beta": 0.075, "nu": 1.0},
    "smooth-strong": {"sigma2": 1.0, "beta": 0.2, "nu": 1.0},
}
for _k in ("weak", "medium", "strong"):
    PRESETS[f"rough-{_k}"] = PRESETS[f"{_k}-small"]


@dataclass
class ExperimentConfig:
    command: str = "bench"
    n: int = 1600
    nb: int = 320
    epsilon: float = 1e-7
    ordering: str = "hilbert"
    orderings: list = field(default_factory=lambda: ["none", "morton", "hilbert", "kdtree"])
    kernel: str = "matern"
    preset: str | None = None
    sigma2: float = 1.0
    beta: float = 0.1
    nu: float = 0.5
    tgh_xi: float = 0.0
    tgh_omega: float = 1.0
    tgh_g: float = 0.0
    tgh_h: float = 0.0
    sigma11: float = 1.0
    sigma22: float = 1.0
    a: float = 0.1
    nu11: float = 0.5
    nu22: float = 0.5
    beta12: float = 0.5
    initial: list = field(default_factory=lambda: [1.0, 0.1, 0.5])
    lower: list = field(default_factory=lambda: [0.01, 0.001, 0.1])
    upper: list = field(default_factory=lambda: [100.0, 3.0, 5.0])
    tolerance: float = 1e-9
    max_evals: int = 2000
    replicates: int = 1
    runs: int = 5
    seed: int = 0
    threads: int = 1
    bits: int = 16
    sparsify_tau: float | None = None
    output_dir: str = "."
    format: str = "json"
    input: str | None = None
    lon_col: str = "lon"
    lat_col: str = "lat"
    value_col: str = "value"
    missing: str | None = None
    subset: int | None = None
    dump_matrix: bool = False

    def validate(self) -> "ExperimentConfig":
        """Raise :class:`InvalidArgument` on the first inconsistent setting."""
        def need(cond, msg):
            if not cond:
                raise InvalidArgument(msg)

        need(self.command in COMMANDS, f"unknown command {self.command!r}")
        need(isinstance(self.n, int) and self.n >= 1, "n must be a positive integer")
        need(isinstance(self.nb, int) and self.nb >= 1, "nb must be a positive integer")
        need(self.epsilon > 0, "epsilon must be positive")
        for o in [self.ordering, *self.orderings]:
            need(o in ORDERING_METHODS, f"unknown ordering {o!r}; expected one of {'|'.join(ORDERING_METHODS)}")
        need(self.kernel in KERNELS, f"unknown kernel {self.kernel!r}; expected one of {'|'.join(KERNELS)}")
        need(self.preset is None or self.preset in PRESETS, f"unknown preset {self.preset!r}")
        need(self.replicates >= 0 and self.runs >= 1, "replicates must be >= 0 and runs >= 1")
        need(isinstance(self.seed, int) and 0 <= self.seed < 2**64, "seed must be an unsigned 64-bit integer")
        need(self.threads >= 1, "threads must be >= 1")
        need(1 <= self.bits <= 32, "bits must be in [1, 32]")
        need(self.sparsify_tau is None or self.sparsify_tau > 0, "sparsify-tau must be positive")
        need(self.format in ("json", "csv"), "format must be json or csv")
        need(self.subset is None or self.subset >= 1, "subset must be >= 1")
        if self.command == "ingest":
            need(self.input is not None, "ingest needs --input")
        if self.ordering in ("rcm", "mindegree") and self.command in ("order", "compress", "factorize", "mle"):
            need(self.sparsify_tau is not None, f"ordering {self.ordering!r} needs --sparsify-tau")
        self.kernel_params()
        self.optimizer()
        return self

    def matern(self) -> MaternParams:
        return MaternParams(self.sigma2, self.beta, self.nu)

    def kernel_params(self):
        if self.kernel == "matern":
            return self.matern()
        if self.kernel == "tgh-matern":
            return (self.matern(), TghParams(self.tgh_xi, self.tgh_omega, self.tgh_g, self.tgh_h))
        return BivariateMaternParams(self.sigma11, self.sigma22, self.a, self.nu11, self.nu22, self.beta12)

    def optimizer(self):
        from .mle import OptimizerConfig

        return OptimizerConfig(
            tuple(self.lower), tuple(self.upper), tuple(self.initial),
            ftol_rel=self.tolerance, max_evals=self.max_evals,
        )

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def resolve_config(command: str, explicit: dict, config_path: str | None = None) -> ExperimentConfig:
    """Merge defaults, config file, preset and explicit flags, then validate."""
    merged: dict = {}
    if config_path:
        try:
            data = json.loads(Path(config_path).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"{config_path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise InvalidArgument(f"{config_path}: expected a JSON object")
        unknown = set(data) - _FIELDS
        if unknown:
            raise InvalidArgument(f"{config_path}: unknown keys {sorted(unknown)}")
        merged.update(data)
    preset = explicit.get("preset", merged.get("preset"))
    if preset is not None:
        if preset not in PRESETS:
            raise InvalidArgument(f"unknown preset {preset!r}; expected one of {'|'.join(PRESETS)}")
        merged.update(PRESETS[preset])
        merged["kernel"] = "matern"
    merged.update(explicit)
    merged["command"] = command
    try:
        cfg = ExperimentConfig(**merged)
    except TypeError as exc:
        raise InvalidArgument(str(exc)) from None
    return cfg.validate()


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _provenance(cfg: ExperimentConfig) -> list[str]:
    return [f"tlrgeo {__version__}", "config: " + json.dumps(cfg.as_dict(), sort_keys=True)]


def _write_json(path: Path, cfg: ExperimentConfig, payload: dict) -> None:
    doc = {"tlrgeo_version": __version__, "config": cfg.as_dict(), **payload}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _write_csv(path: Path, cfg: ExperimentConfig, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        for line in _provenance(cfg):
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def _emit(cfg: ExperimentConfig, summary: dict) -> None:
    if cfg.format == "json":
        print(json.dumps(summary, indent=2, sort_keys=True, default=_json_default))
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["key", "value"])
        for k, v in summary.items():
            w.writerow([k, json.dumps(v, default=_json_default) if isinstance(v, (dict, list)) else v])


def _outdir(cfg: ExperimentConfig) -> Path:
    d = Path(cfg.output_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _locations(cfg: ExperimentConfig):
    if cfg.input:
        return read_locations_csv(cfg.input)
    return generate_uniform_locations(cfg.n, cfg.seed)


def _order(cfg: ExperimentConfig, locs, method: str):
    from .ordering import order_locations

    return order_locations(
        locs, method, bits=cfg.bits, tau=cfg.sparsify_tau,
        kernel=cfg.kernel, params=cfg.kernel_params(), nb=min(cfg.nb, locs.n),
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_generate(cfg: ExperimentConfig) -> dict:
    from .covgen import build_covariance, simulate_field, write_matrix_dump

    out = _outdir(cfg)
    locs = _locations(cfg)
    z = simulate_field(locs, cfg.kernel, cfg.kernel_params(), cfg.seed)
    if cfg.kernel == "bivariate-matern":
        path = out / "field_bivariate.csv"
        rows = ((x, y, a, b) for (x, y), a, b in zip(locs.coords.tolist(), z[0::2], z[1::2]))
        _write_csv(path, cfg, ["x", "y", "z1", "z2"], rows)
    else:
        path = out / "field.csv"
        write_field_csv(path, locs, z, comment="\n".join(_provenance(cfg)))
    summary = {"n": locs.n, "kernel": cfg.kernel, "field": str(path)}
    if cfg.dump_matrix:
        dump = out / "covariance.bin"
        write_matrix_dump(dump, build_covariance(locs, cfg.kernel, cfg.kernel_params(), nb=min(cfg.nb, locs.n * (2 if cfg.kernel == "bivariate-matern" else 1))))
        summary["matrix_dump"] = str(dump)
    return summary


def cmd_order(cfg: ExperimentConfig) -> dict:
    from .ordering import bandwidth, sparsify

    out = _outdir(cfg)
    locs = _locations(cfg)
    perm = _order(cfg, locs, cfg.ordering)
    write_permutation(out / "permutation.txt", perm)
    summary = {"n": locs.n, "method": perm.method, "permutation": str(out / "permutation.txt")}
    if cfg.sparsify_tau is not None and cfg.kernel != "bivariate-matern":
        from .covgen import build_covariance

        g = sparsify(build_covariance(locs, cfg.kernel, cfg.kernel_params(), nb=min(cfg.nb, locs.n)), cfg.sparsify_tau)
        summary["bandwidth_before"] = bandwidth(g)
        summary["bandwidth_after"] = bandwidth(g, perm)
    _write_json(out / "order.json", cfg, summary)
    return summary


def _rank_report(cfg, locs, method):
    from .tlr import compress_covariance, rank_stats

    perm = _order(cfg, locs, method)
    a = compress_covariance(apply_permutation(locs, perm), cfg.kernel, cfg.kernel_params(), cfg.nb, cfg.epsilon, cfg.threads)
    return a, rank_stats(a)


_RANK_HEADER = ["ordering", "n", "nb", "epsilon", "min", "median", "mean", "max", "mem_tlr_mb", "mem_dense_mb"]


def _rank_row(method, rep):
    d = rep.as_dict(method)
    return [d[k] for k in _RANK_HEADER]


def _write_heatmap(out: Path, cfg, method, rep) -> Path:
    path = out / f"heatmap_{method}.csv"
    _write_csv(path, cfg, ["tile_i", "tile_j", "rank"], ([i, j, r] for (i, j), r in sorted(rep.grid.items())))
    return path


def cmd_compress(cfg: ExperimentConfig) -> dict:
    out = _outdir(cfg)
    locs = _locations(cfg)
    _, rep = _rank_report(cfg, locs, cfg.ordering)
    _write_heatmap(out, cfg, cfg.ordering, rep)
    summary = rep.as_dict(cfg.ordering)
    summary["flagged_tiles"] = len(rep.flagged)
    _write_json(out / "rank_report.json", cfg, summary)
    return summary


def cmd_factorize(cfg: ExperimentConfig) -> dict:
    from .tlr_linalg import logdet, time_factorization

    out = _outdir(cfg)
    locs = _locations(cfg)
    a, rep = _rank_report(cfg, locs, cfg.ordering)
    rec, factor = time_factorization(
        a, cfg.runs, cfg.threads, ordering=cfg.ordering, kernel=cfg.kernel, params=_params_dict(cfg),
    )
    summary = {**rec, "logdet": logdet(factor), "max_rank": rep.max}
    _write_json(out / "timing.json", cfg, summary)
    return summary


def _params_dict(cfg):
    p = cfg.kernel_params()
    if isinstance(p, tuple):
        return {**p[0].as_dict(), **dataclasses.asdict(p[1])}
    return p.as_dict() if isinstance(p, MaternParams) else dataclasses.asdict(p)


def _write_estimation(out: Path, cfg, report) -> None:
    report.write_csv(out / "estimation.csv", _provenance(cfg))
    _write_json(out / "estimation_summary.json", cfg, {
        "metadata": report.metadata, "summary": report.summary(), "failures": report.failures,
    })


def cmd_mle(cfg: ExperimentConfig) -> dict:
    from .mle import REPORT_COLUMNS, EstimationReport, fit_matern, identifiable_f, run_replicates

    if cfg.kernel != "matern":
        raise InvalidArgument("mle fits the univariate Matérn kernel only")
    out = _outdir(cfg)
    if cfg.input:
        locs, z = read_field_csv(cfg.input, provenance="ingested")
        perm = _order(cfg, locs, cfg.ordering)
        res = fit_matern(apply_permutation(locs, perm), z[perm.map], min(cfg.nb, locs.n), cfg.epsilon, cfg.optimizer(), cfg.threads)
        th = res.theta_hat
        report = EstimationReport(metadata={"input": cfg.input, "n": locs.n})
        report.rows.append(dict(zip(REPORT_COLUMNS, (
            0, cfg.seed, cfg.ordering, th.sigma2, th.beta, th.nu, res.f_hat, res.iterations, res.converged, 0.0,
        ))))
        _write_estimation(out, cfg, report)
        return {"theta_hat": th.as_dict(), "f_hat": res.f_hat, "loglik": res.loglik_at_opt,
                "iterations": res.iterations, "converged": res.converged}
    theta = cfg.matern()
    report = run_replicates(
        n=cfg.n, nb=cfg.nb, theta=theta, replicates=max(cfg.replicates, 1), seed_base=cfg.seed,
        orderings=[cfg.ordering], epsilon=cfg.epsilon, config=cfg.optimizer(), threads=cfg.threads,
        metadata={"preset": cfg.preset},
    )
    _write_estimation(out, cfg, report)
    return {"true_theta": theta.as_dict(), "true_f": identifiable_f(theta),
            "median_f_hat": report.median("f_hat"), "median_nu_hat": report.median("nu_hat")}


def cmd_bench(cfg: ExperimentConfig) -> dict:
    from .mle import identifiable_f, run_replicates
    from .tlr_linalg import time_factorization

    if cfg.kernel != "matern":
        raise InvalidArgument("bench runs the univariate Matérn kernel only")
    out = _outdir(cfg)
    theta = cfg.matern()
    locs = generate_uniform_locations(cfg.n, cfg.seed)
    rank_rows, memory_rows, timings = [], [], []
    for method in cfg.orderings:
        a, rep = _rank_report(cfg, locs, method)
        _write_heatmap(out, cfg, method, rep)
        rank_rows.append(_rank_row(method, rep))
        memory_rows.append([method, rep.mem_dense_mb, rep.mem_tlr_mb])
        rec, _ = time_factorization(a, cfg.runs, cfg.threads, ordering=method, kernel=cfg.kernel, params=theta.as_dict())
        timings.append(dict(rec))
    _write_csv(out / "rank_stats.csv", cfg, _RANK_HEADER, rank_rows)
    _write_csv(out / "memory.csv", cfg, ["ordering", "mem_dense_mb", "mem_tlr_mb"], memory_rows)
    meta = {"preset": cfg.preset, "true_theta": theta.as_dict(), "true_f": identifiable_f(theta)}
    _write_json(out / "timing.json", cfg, {"metadata": meta, "records": timings})
    summary = {**meta, "rank_stats": {r[0]: dict(zip(_RANK_HEADER[1:], r[1:])) for r in rank_rows}}
    if cfg.replicates > 0:
        report = run_replicates(
            n=cfg.n, nb=cfg.nb, theta=theta, replicates=cfg.replicates, seed_base=cfg.seed,
            orderings=cfg.orderings, epsilon=cfg.epsilon, config=cfg.optimizer(), threads=cfg.threads,
            metadata={"preset": cfg.preset},
        )
        _write_estimation(out, cfg, report)
        summary["median_f_hat"] = {o: report.median("f_hat", o) for o in report.orderings()}
    return summary


def cmd_ingest(cfg: ExperimentConfig) -> dict:
    from .ingest import ingest_csv, subset_random

    out = _outdir(cfg)
    data = ingest_csv(cfg.input, cfg.lon_col, cfg.lat_col, cfg.value_col, cfg.missing)
    if cfg.subset is not None:
        data = subset_random(data, cfg.subset, cfg.seed)
    summary = {"counts": data.counts, "transform": data.transform, "n": data.n}
    write_field_csv(out / "ingested.csv", data.locs, data.values,
                    comment="\n".join([*_provenance(cfg), "counts: " + json.dumps(data.counts, sort_keys=True)]))
    _write_json(out / "ingest.json", cfg, summary)
    return summary


_HANDLERS = {
    "generate": cmd_generate, "order": cmd_order, "compress": cmd_compress,
    "factorize": cmd_factorize, "mle": cmd_mle, "bench": cmd_bench, "ingest": cmd_ingest,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",")]


def _names(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--seed", type=int, default=S)
    g.add_argument("--threads", type=int, default=S)
    g.add_argument("--output-dir", dest="output_dir", default=S)
    g.add_argument("--format", choices=("json", "csv"), default=S)
    g.add_argument("--config", dest="config_file", default=S, help="JSON file with ExperimentConfig fields")
    g.add_argument("-v", "--verbose", action="store_true", default=S)

    model = argparse.ArgumentParser(add_help=False)
    m = model.add_argument_group("model")
    m.add_argument("--n", type=int, default=S)
    m.add_argument("--nb", type=int, default=S)
    m.add_argument("--epsilon", type=float, default=S)
    m.add_argument("--kernel", choices=KERNELS, default=S)
    m.add_argument("--preset", choices=sorted(PRESETS), default=S)
    for name in ("sigma2", "beta", "nu", "sigma11", "sigma22", "a", "nu11", "nu22", "beta12"):
        m.add_argument(f"--{name}", type=float, default=S)
    for name in ("xi", "omega", "g", "h"):
        m.add_argument(f"--tgh-{name}", dest=f"tgh_{name}", type=float, default=S)
    m.add_argument("--input", default=S)
    m.add_argument("--method", dest="ordering", choices=ORDERING_METHODS, default=S)
    m.add_argument("--bits", type=int, default=S)
    m.add_argument("--sparsify-tau", dest="sparsify_tau", type=float, default=S)

    fit = argparse.ArgumentParser(add_help=False)
    f = fit.add_argument_group("estimation")
    f.add_argument("--replicates", type=int, default=S)
    f.add_argument("--initial", type=_floats, default=S, help="sigma2,beta,nu")
    f.add_argument("--lower", type=_floats, default=S)
    f.add_argument("--upper", type=_floats, default=S)
    f.add_argument("--tolerance", type=float, default=S)
    f.add_argument("--max-evals", dest="max_evals", type=int, default=S)

    p = argparse.ArgumentParser(prog="tlrgeo", description=__doc__.splitlines()[0], parents=[common])
    p.add_argument("--version", action="version", version=f"tlrgeo {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("generate", parents=[common, model], help="simulate a field at random or given locations")
    sp.add_argument("--dump-matrix", dest="dump_matrix", action="store_true", default=S)
    sub.add_parser("order", parents=[common, model], help="compute a location permutation")
    sub.add_parser("compress", parents=[common, model], help="compress a covariance matrix and report tile ranks")
    sp = sub.add_parser("factorize", parents=[common, model], help="time the TLR Cholesky factorization")
    sp.add_argument("--runs", type=int, default=S)
    sub.add_parser("mle", parents=[common, model, fit], help="maximum-likelihood estimation")
    sp = sub.add_parser("bench", parents=[common, model, fit], help="rank, memory, timing and estimation study")
    sp.add_argument("--orderings", type=_names, default=S)
    sp.add_argument("--runs", type=int, default=S)
    sp = sub.add_parser("ingest", parents=[common], help="normalize a lon/lat/value CSV")
    sp.add_argument("--input", default=S, required=True)
    sp.add_argument("--lon-col", dest="lon_col", default=S)
    sp.add_argument("--lat-col", dest="lat_col", default=S)
    sp.add_argument("--value-col", dest="value_col", default=S)
    sp.add_argument("--missing", default=S)
    sp.add_argument("--subset", type=int, default=S)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = vars(parser.parse_args(argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    command = ns.pop("command")
    verbose = ns.pop("verbose", False)
    config_file = ns.pop("config_file", None)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(command, ns, config_file)
        summary = _HANDLERS[command](cfg)
    except InvalidArgument as exc:
        print(f"tlrgeo: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, IngestError) as exc:
        print(f"tlrgeo: io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FactorizationError, OptimizationError) as exc:
        print(f"tlrgeo: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    _emit(cfg, summary)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
