"""
Command-line experiment runner.

Every subcommand reads grid-function, jump-set and exponent files (or builtin exponent
specs), runs one experiment and writes CSV to ``--output`` or stdout. Logs and the
closing summary line go to stderr, so identical runs produce identical CSV bytes.

Exit codes: 0 on success, 1 for invalid input, 2 for a numerical failure or a
result that did not converge.
"""

from __future__ import annotations

import argparse
import io
import logging
import sys
from collections.abc import Callable, Sequence
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import IO, Any, Literal, NoReturn, cast

from exceptiongroup import ExceptionGroup

from vexp.corpus import CorpusStore, verify_corpus, write_corpus
from vexp.denoise import DenoiseProblem, denoise
from vexp.energy import relaxed_energy
from vexp.errors import InvalidInputError, NumericalFailure
from vexp.exponent import ExponentField, log_holder_report
from vexp.grid import DEFAULT_SEED, GridDomain, GridFunction
from vexp.integrand import integrand_from_spec
from vexp.modular import associate_norm, luxemburg_norm, modular
from vexp.phi import VariableExponentPhi, certify
from vexp.relax import upper_sequence
from vexp.serializers import GridFunctionSerializer, JumpSetSerializer, format_number, write_csv
from vexp.variation import PiecewiseBVFunction, dual_variation

logger: logging.Logger = logging.getLogger("vexp.cli")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2

Command = Literal[
    "check-exponent", "check-phi", "norm", "variation", "energy", "relax", "denoise", "corpus"
]
NormMode = Literal["modular", "norm", "associate"]

RADII_COUNT = 6


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise InvalidInputError(f"Expected comma-separated numbers, got {text!r}") from None


def _extent(text: str) -> tuple[float, float]:
    values = _floats(text)
    if len(values) != 2:
        raise InvalidInputError(f"Extent needs two numbers a,b, got {text!r}")
    return values[0], values[1]


def _mode(text: str) -> NormMode:
    if text not in ("modular", "norm", "associate"):
        raise InvalidInputError(f"Unknown norm mode {text!r}")
    return cast(NormMode, text)


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Resolved settings of one run.

    ``exponent`` is either a path to a grid-function file with ``m = 1`` or a builtin
    spec such as ``constant:2``. Builtin specs need a domain, taken from ``input`` when
    given and from ``dim``, ``resolution`` and ``extent`` otherwise.
    """

    command: Command
    input: Path | None = None
    jumps: Path | None = None
    exponent: str | None = None
    integrand: str = "euclidean"
    resolution: int = 256
    extent: tuple[float, float] = (-1.0, 1.0)
    dim: int = 1
    deltas: tuple[float, ...] | None = None
    mode: NormMode = "norm"
    fidelity: float = 10.0
    eps: float | None = None
    iterations: int = 2000
    trace: Path | None = None
    output: Path | None = None
    seed: int = DEFAULT_SEED
    verbosity: int = 0


# Keys accepted in a ``--config`` file, with their parsers.
CONFIG_KEYS: dict[str, Callable[[str], Any]] = {
    "input": Path,
    "jumps": Path,
    "exponent": str,
    "integrand": str,
    "resolution": int,
    "extent": _extent,
    "dim": int,
    "deltas": _floats,
    "mode": _mode,
    "fidelity": float,
    "lambda": float,
    "eps": float,
    "iterations": int,
    "iters": int,
    "trace": Path,
    "output": Path,
    "seed": int,
}

_ALIASES = {"lambda": "fidelity", "iters": "iterations"}


def read_config_file(path: Path) -> dict[str, Any]:
    """
    Parse ``key = value`` lines. ``#`` starts a comment; blank lines are skipped.

    Raises:
        InvalidInputError: for unknown keys, lines without ``=`` or unparsable values
    """
    values: dict[str, Any] = {}
    for number, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep:
            raise InvalidInputError(f"{path}:{number}: expected 'key = value'")
        if key not in CONFIG_KEYS:
            raise InvalidInputError(f"{path}:{number}: unknown key {key!r}")
        try:
            values[_ALIASES.get(key, key)] = CONFIG_KEYS[key](value)
        except ValueError:
            raise InvalidInputError(f"{path}:{number}: bad value {value!r} for {key}") from None
    return values


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise InvalidInputError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="File of 'key = value' defaults")
    common.add_argument(
        "-v", "--verbose", action="count", dest="verbosity", help="-v for INFO, -vv for DEBUG"
    )
    common.add_argument("--output", type=Path, help="Output file (default: stdout)")
    common.add_argument("--seed", type=int, help=f"Random seed (default: {DEFAULT_SEED})")

    inputs = _Parser(add_help=False)
    inputs.add_argument("--input", type=Path, help="Grid-function file")
    inputs.add_argument("--jumps", type=Path, help="Jump-set file for --input")
    inputs.add_argument(
        "--exponent", help="Exponent grid file or builtin spec: constant:q, ramp:a,b, ..."
    )

    domain = _Parser(add_help=False)
    domain.add_argument("--resolution", type=int, help="Cells per axis for builtin exponents")
    domain.add_argument("--extent", type=_extent, help="Axis extent a,b (default: -1,1)")
    domain.add_argument("--dim", type=int, choices=(1, 2), help="Dimension (default: 1)")

    integrand = _Parser(add_help=False)
    integrand.add_argument(
        "--integrand", help="euclidean | smoothed:eps | weighted:a11,a12,... (default: euclidean)"
    )

    parser = _Parser(prog="vexp", description="Variable-exponent relaxation experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser(
        "check-exponent",
        parents=[common, inputs, domain],
        help="log-Hölder constant, strong modulus table and ball constant",
    )
    sub.add_parser(
        "check-phi",
        parents=[common, inputs, domain],
        help="A0, A1, aInc and aDec certificates for t^p(x)",
    )
    norm = sub.add_parser(
        "norm", parents=[common, inputs, domain], help="Modular, Luxemburg or associate norm"
    )
    modes = norm.add_mutually_exclusive_group()
    for mode in ("modular", "norm", "associate"):
        modes.add_argument(f"--{mode}", dest="mode", action="store_const", const=mode)
    sub.add_parser("variation", parents=[common, inputs, domain], help="Dual variation V_φ(u)")
    sub.add_parser(
        "energy", parents=[common, inputs, domain, integrand], help="Relaxed energy F(u)"
    )
    relax = sub.add_parser(
        "relax",
        parents=[common, inputs, domain, integrand],
        help="Lower and upper bounds of the relaxed functional",
    )
    relax.add_argument("--deltas", type=_floats, help="Comma-separated mollifier radii")
    den = sub.add_parser("denoise", parents=[common, inputs, domain], help="Variable-exponent ROF")
    den.add_argument("--lambda", dest="fidelity", type=float, help="Fidelity weight λ")
    den.add_argument("--eps", type=float, help="Smoothing ε (default: 1e-3 × data range)")
    den.add_argument("--iters", dest="iterations", type=int, help="Iteration budget")
    den.add_argument("--trace", type=Path, help="Energy trace CSV")
    sub.add_parser("corpus", parents=[common], help="Write the fixture files to --output")
    return parser


def parse_config(argv: Sequence[str] | None = None) -> ExperimentConfig:
    """Flags override the ``--config`` file, which overrides the defaults."""
    namespace = build_parser().parse_args(argv)
    values: dict[str, Any] = {}
    if namespace.config is not None:
        values.update(read_config_file(namespace.config))
    known = {f.name for f in fields(ExperimentConfig)}
    for key, value in vars(namespace).items():
        if key in known and value is not None:
            values[key] = value
    return ExperimentConfig(**values)


def _read_grid(path: Path) -> GridFunction:
    return GridFunctionSerializer().deserialize(path.read_text())


def _default_domain(config: ExperimentConfig) -> GridDomain:
    a, b = config.extent
    if config.dim == 1:
        return GridDomain.interval(a, b, config.resolution)
    return GridDomain.square(a, b, config.resolution)


def load_function(config: ExperimentConfig) -> PiecewiseBVFunction:
    if config.input is None:
        raise InvalidInputError(f"{config.command} needs --input")
    smooth = _read_grid(config.input)
    jumps = []
    if config.jumps is not None:
        serializer = JumpSetSerializer(smooth.domain.dim, smooth.codim)
        jumps = serializer.deserialize(config.jumps.read_text())
    return PiecewiseBVFunction(smooth, jumps)


def load_exponent(config: ExperimentConfig, domain: GridDomain | None = None) -> ExponentField:
    """An exponent from a grid file, or from a builtin spec on ``domain``."""
    if config.exponent is None:
        raise InvalidInputError(f"{config.command} needs --exponent")
    path = Path(config.exponent)
    if path.is_file():
        grid = _read_grid(path)
        if grid.codim != 1:
            raise InvalidInputError("Exponent files must have m = 1")
        if domain is not None and grid.domain != domain:
            raise InvalidInputError("Exponent file and input live on different grids")
        return ExponentField(grid.domain, grid.values)
    return ExponentField.from_spec(config.exponent, domain or _default_domain(config))


def _domain_and_exponent(config: ExperimentConfig) -> ExponentField:
    domain = _read_grid(config.input).domain if config.input is not None else None
    return load_exponent(config, domain)


@dataclass
class Outcome:
    header: Sequence[str]
    rows: list[Sequence[Any]]
    summary: str
    converged: bool = True


def _check_exponent(config: ExperimentConfig) -> Outcome:
    p = _domain_and_exponent(config)
    domain = p.domain
    radii = [domain.diameter / 4 / 2**k for k in range(RADII_COUNT)]
    radii = [r for r in radii if r >= domain.min_spacing] or [domain.min_spacing]
    report = log_holder_report(p, radii, seed=config.seed)
    table = report.strong_modulus
    omegas = list(table.omega) if len(table) else [0.0] * len(radii)
    header = [
        "C_logHolder",
        *(f"omega({format_number(r)})" for r in radii),
        "ballConstant",
    ]
    summary = f"C_logHolder={format_number(report.constant)}"
    if table.diverging:
        summary += " (strong modulus does not decay)"
    return Outcome(header, [[report.constant, *omegas, report.ball_constant]], summary)


def _check_phi(config: ExperimentConfig) -> Outcome:
    p = _domain_and_exponent(config)
    points = p.domain.node_points()
    rows: list[Sequence[Any]] = []
    for certificate in certify(VariableExponentPhi(p)):
        witness = certificate.witness
        where = ""
        t = ""
        if witness is not None:
            where = ";".join(format_number(c) for c in points[witness.site])
            t = format_number(witness.t)
        rows.append(
            [
                certificate.condition,
                "true" if certificate.passed else "false",
                certificate.constant,
                where,
                t,
            ]
        )
    passed = sum(1 for row in rows if row[1] == "true")
    return Outcome(
        ["condition", "pass", "beta_or_L", "witness_x", "witness_t"],
        rows,
        f"{passed}/{len(rows)} conditions hold",
    )


def _norm(config: ExperimentConfig) -> Outcome:
    u = load_function(config).discretize()
    phi = VariableExponentPhi(load_exponent(config, u.domain))
    if config.mode == "modular":
        value = float(modular(phi, u))
    elif config.mode == "associate":
        value = associate_norm(phi, u)
    else:
        value = luxemburg_norm(phi, u)
    return Outcome([config.mode], [[value]], f"{config.mode}={format_number(value)}")


def _variation(config: ExperimentConfig) -> Outcome:
    u = load_function(config).discretize()
    phi = VariableExponentPhi(load_exponent(config, u.domain))
    result = dual_variation(u, phi)
    row = [
        result.value,
        str(result.certified).lower(),
        str(result.converged).lower(),
        str(result.iterations),
    ]
    return Outcome(
        ["value", "certified", "converged", "iterations"],
        [row],
        f"V={format_number(result.value)} after {result.iterations} ascent steps",
        result.converged,
    )


def _energy(config: ExperimentConfig) -> Outcome:
    U = load_function(config)
    p = load_exponent(config, U.domain)
    f = integrand_from_spec(config.integrand, (U.codim, U.domain.dim))
    energy = relaxed_energy(U, f, p)
    return Outcome(
        ["bulk", "singular", "total"],
        [[energy.bulk, energy.singular, energy.total]],
        f"F={format_number(energy.total)}",
    )


def _relax(config: ExperimentConfig) -> Outcome:
    U = load_function(config)
    p = load_exponent(config, U.domain)
    f = integrand_from_spec(config.integrand, (U.codim, U.domain.dim))
    bracket = upper_sequence(U, f, p, config.deltas)
    rows = [
        [
            s.delta,
            s.energy_bulkzone,
            s.energy_yzone,
            s.omega,
            s.corrected,
            bracket.lower,
            bracket.upper,
            bracket.gap,
        ]
        for s in bracket.samples
    ]
    return Outcome(
        [
            "delta",
            "energy_bulkzone",
            "energy_Yzone",
            "omega",
            "corrected",
            "lower",
            "upper",
            "gap",
        ],
        rows,
        f"lower={format_number(bracket.lower)} upper={format_number(bracket.upper)} "
        f"gap={format_number(bracket.gap)}",
        bracket.valid,
    )


def _denoise(config: ExperimentConfig, stdout: IO[str]) -> Outcome:
    data = load_function(config).discretize()
    problem = DenoiseProblem(
        data=data,
        exponent=load_exponent(config, data.domain),
        fidelity=config.fidelity,
        eps=config.eps,
        iterations=config.iterations,
        seed=config.seed,
    )
    result = denoise(problem)
    text = GridFunctionSerializer().serialize(result.solution)
    if config.output is not None:
        config.output.write_text(text)
    else:
        stdout.write(text)
    rows: list[Sequence[Any]] = [[str(i), e] for i, e in enumerate(result.energies)]
    return Outcome(
        ["iteration", "energy"],
        rows,
        f"energy={format_number(result.energy)} after {result.iterations} iterations",
        result.converged,
    )


def _corpus(config: ExperimentConfig) -> Outcome:
    directory = config.output if config.output is not None else Path("corpus")
    store = CorpusStore(directory)
    keys = write_corpus(store)
    mismatched = verify_corpus(store)
    if mismatched:
        raise InvalidInputError(f"Fixtures in {directory} do not read back: {', '.join(mismatched)}")
    return Outcome(["fixture"], [[key] for key in keys], f"{len(keys)} fixtures in {directory}")


_RUNNERS: dict[str, Callable[[ExperimentConfig], Outcome]] = {
    "check-exponent": _check_exponent,
    "check-phi": _check_phi,
    "norm": _norm,
    "variation": _variation,
    "energy": _energy,
    "relax": _relax,
    "corpus": _corpus,
}


def _emit(config: ExperimentConfig, outcome: Outcome, stdout: IO[str]) -> None:
    buffer = io.StringIO()
    write_csv(buffer, outcome.header, outcome.rows)
    if config.command == "denoise":
        if config.trace is not None:
            config.trace.write_text(buffer.getvalue())
    elif config.command == "norm":
        stdout.write(format_number(outcome.rows[0][0]) + "\n")
    elif config.output is not None and config.command != "corpus":
        config.output.write_text(buffer.getvalue())
    else:
        stdout.write(buffer.getvalue())


def _exit_code(error: BaseException) -> int:
    if isinstance(error, ExceptionGroup):
        codes = [_exit_code(member) for member in error.exceptions]
        return max(codes, default=EXIT_INVALID)
    if isinstance(error, NumericalFailure):
        return EXIT_NUMERICAL
    return EXIT_INVALID


def _report(error: BaseException) -> None:
    if isinstance(error, ExceptionGroup):
        logger.error("%s", error.message)
        for member in error.exceptions:
            _report(member)
    else:
        logger.error("%s", error)


def run(config: ExperimentConfig, stdout: IO[str] | None = None) -> int:
    """Execute one subcommand and return its exit code."""
    stdout = stdout if stdout is not None else sys.stdout
    try:
        if config.command == "denoise":
            outcome = _denoise(config, stdout)
        else:
            outcome = _RUNNERS[config.command](config)
        _emit(config, outcome, stdout)
    except (InvalidInputError, NumericalFailure, OSError, ExceptionGroup) as error:
        _report(error)
        return _exit_code(error)
    print(outcome.summary, file=sys.stderr)
    if not outcome.converged:
        logger.warning("%s did not converge", config.command)
        return EXIT_NUMERICAL
    return EXIT_OK


def _configure_logging(verbosity: int) -> None:
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG)
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )


def main(argv: Sequence[str] | None = None) -> int:
    try:
        config = parse_config(argv)
    except (InvalidInputError, OSError) as error:
        _configure_logging(0)
        logger.error("%s", error)
        return EXIT_INVALID
    _configure_logging(config.verbosity)
    if config.command == "relax" and config.deltas is not None:
        config = replace(config, deltas=tuple(sorted(config.deltas, reverse=True)))
    return run(config)
