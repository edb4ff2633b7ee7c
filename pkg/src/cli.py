"""
Command-line interface

Commands:
    ingest            event log TSV -> tensor dump + vocabularies
    simulate          forward-sample a tensor from the prior, a planted state or a checkpoint
    fit               run a sampler, writing a trace and checkpoints
    evaluate          held-out comparison of models on top-active masks
    benchmark-alloc   joint vs compositional allocation cost and timings
    export            TSV tables of a fitted BPTD state
    geweke            joint-distribution test of a sampler

Library errors are reported as one line on stderr; the exit code comes from the
exception class (2 usage, 3 data, 4 numerical).
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, List, Optional, Sequence

from src.core.config import AllocationMode, ModelTag, RunConfig, get_settings
from src.core.errors import BPTDError, ConfigError, DataError
from src.models.core import BinningMode, TimeBinning
from src.models.params import BPTDState, Hyperparams, ModelDims
from src.services import bptd_model, evaluation, exports
from src.services.benchmark import DEFAULT_GRID, benchmark_allocation, write_benchmark
from src.services.distributions import RngStream
from src.services.event_store import (
    build_tensor,
    dump_tensor,
    dump_vocabulary,
    load_tensor,
    load_vocabulary,
    parse_events,
)
from src.services.geweke import geweke_test
from src.services.orchestrator import FitSettings, make_adapter, run_chain
from src.services.trace_logger import TraceLogger
from src.utils.checkpoint import read_checkpoint, write_checkpoint
from src.utils.tsv import format_value, write_rows

logger = logging.getLogger(__name__)

MASK_CHOICES = ("top15", "inverse-top15", "both")


def _run_config(args: argparse.Namespace) -> RunConfig:
    return RunConfig.from_file(
        args.config,
        dims=args.dims,
        sweeps=getattr(args, "sweeps", None),
        burn_in=getattr(args, "burn_in", None),
        save_every=getattr(args, "save_every", None),
        seed=args.seed,
        alloc=getattr(args, "alloc", None),
        model=getattr(args, "model", None),
        workers=args.workers,
        eps0=args.eps0,
        gamma0=args.gamma0,
    )


def _hyper(config: RunConfig) -> Hyperparams:
    return Hyperparams(
        eps0=config.eps0,
        gamma0=config.resolved_gamma0,
        fixed_delta=config.fixed_delta,
        fixed_zeta=config.fixed_zeta,
    )


def _model_dims(config: RunConfig, n_countries: int, n_actions: int, n_steps: int) -> ModelDims:
    c, k, r = config.dims
    return ModelDims(
        n_countries=n_countries, n_actions=n_actions, n_steps=n_steps,
        n_communities=c, n_topics=k, n_regimes=r,
    )


def _csv(value: Optional[str], cast: Callable = str) -> List:
    if not value:
        return []
    return [cast(part.strip()) for part in value.split(",") if part.strip()]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> int:
    if args.anchor:
        binning = TimeBinning(mode=BinningMode.MONTHLY, anchor=args.anchor, n_steps=args.steps)
    else:
        binning = TimeBinning(mode=BinningMode.FIXED_WIDTH, width=args.bin_width, origin=args.origin, n_steps=args.steps)
    countries, actions, tokens, report = parse_events(
        args.input, time_binning=binning, strict=args.strict, canonical=args.canonical,
    )
    tensor = build_tensor(tokens, (len(countries), len(countries), len(actions), report.n_steps))
    out = Path(args.out)
    dump_tensor(tensor, out / "tensor.tsv")
    dump_vocabulary(countries, out / "countries.tsv")
    dump_vocabulary(actions, out / "actions.tsv")
    print(
        f"events={report.parsed} countries={len(countries)} actions={len(actions)} steps={report.n_steps} "
        f"self_loops={report.self_loops} malformed={report.malformed}"
    )
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _run_config(args)
    rng = RngStream(config.require_seed())
    if args.checkpoint:
        model, _, arrays = read_checkpoint(args.checkpoint)
        if model != ModelTag.BPTD.value:
            raise ConfigError(f"simulate needs a BPTD checkpoint, got {model}")
        state = BPTDState.from_arrays(arrays)
    else:
        dims = _model_dims(config, args.countries, args.actions, args.steps)
        if args.planted:
            state = bptd_model.planted_state(
                dims, rng,
                n_active_communities=min(3, dims.n_communities, dims.n_countries),
                n_active_topics=min(2, dims.n_topics, dims.n_actions),
                n_active_regimes=1,
                total_events=args.events,
                hyper=_hyper(config),
            )
        else:
            state = bptd_model.sample_prior(dims, _hyper(config), rng)
    tensor = bptd_model.simulate(state, None, rng)
    out = Path(args.out)
    dump_tensor(tensor, out / "tensor.tsv")
    write_checkpoint(out / "state.ckpt", ModelTag.BPTD.value, state.dims().model_dump(), state.to_arrays())
    print(f"tokens={tensor.total} nonzero={tensor.nnz} dims={'x'.join(str(d) for d in tensor.dims)}")
    return 0


def cmd_fit(args: argparse.Namespace) -> int:
    config = _run_config(args)
    tensor_path = args.tensor or config.tensor_path
    if tensor_path is None:
        raise ConfigError("fit needs --tensor (or tensor_path in the config file)")
    tensor = load_tensor(tensor_path)
    rng = RngStream(config.require_seed())
    v, _, a, t = tensor.dims
    settings = get_settings()
    adapter = make_adapter(
        config.model, _model_dims(config, v, a, t), _hyper(config),
        allocation=config.alloc, workers=config.workers,
        chunk_elements=settings.joint_chunk_elements, threshold_fraction=config.threshold_fraction,
    )
    schedule = FitSettings(sweeps=config.sweeps, burn_in=config.effective_burn_in, save_every=config.save_every)
    out = Path(args.out or config.out_dir)
    with TraceLogger(out / "trace.tsv") as trace:
        result = run_chain(adapter, tensor, schedule, rng, trace=trace, out_dir=out)
    print(
        f"model={result.model.value} sweeps={result.sweeps} saved={result.saved_samples} "
        f"log_likelihood={format_value(result.final_log_likelihood)} eff_dims={result.eff_dims}"
    )
    return 0


def _masks(tensor, choice: str, n_top: int):
    mask = evaluation.mask_top_active(tensor, n_top)
    if choice == "top15":
        return [mask]
    if choice == "inverse-top15":
        return [mask.inverted()]
    return [mask, mask.inverted()]


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _run_config(args)
    tensor = load_tensor(args.tensor)
    seeds = _csv(args.seeds, int) or [config.require_seed()]
    models = [ModelTag(m) for m in _csv(args.models)] or list(ModelTag)
    protocol = evaluation.EvaluationProtocol(
        train_sweeps=args.train_sweeps, test_sweeps=args.test_sweeps,
        test_burn_in=args.test_burn_in, save_every=config.save_every,
        include_zeros=not args.exclude_zeros,
    )
    masks = _masks(tensor, args.mask, args.n_top)
    _, test = evaluation.split_train_test(tensor, protocol.holdout_steps)
    for mask in masks:
        summary = evaluation.mask_summary(test, mask)
        logger.info(f"Mask {mask.name}: {summary.model_dump()}")
    rows = evaluation.compare_models(
        tensor, masks, models, seeds, protocol, config.dims, _hyper(config),
        allocation=config.alloc, workers=config.workers,
    )
    target = args.out if args.out else sys.stdout
    evaluation.write_comparison(rows, target)
    return 0


def cmd_benchmark(args: argparse.Namespace) -> int:
    grid = [tuple(int(x) for x in point.split(",")) for point in args.grid.split(";")] if args.grid else list(DEFAULT_GRID)
    if any(len(point) != 3 or min(point) < 1 for point in grid):
        raise ConfigError("--grid expects 'C,K,R;C,K,R;...' with positive integers")
    rows = benchmark_allocation(
        grid, RngStream(args.seed if args.seed is not None else 0),
        n_tokens=args.tokens, sweeps=args.sweeps, workers=args.workers or 1,
    )
    write_benchmark(rows, args.out if args.out else sys.stdout)
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    model, _, arrays = read_checkpoint(args.checkpoint)
    if model != ModelTag.BPTD.value:
        raise ConfigError(f"export needs a BPTD checkpoint, got {model}")
    state = BPTDState.from_arrays(arrays)
    countries = load_vocabulary(args.countries) if args.countries else None
    actions = load_vocabulary(args.actions) if args.actions else None
    threshold = args.threshold if args.threshold is not None else get_settings().threshold_fraction
    tokens = assignments = None
    if args.tensor:
        tokens, assignments = exports.reallocate(state, load_tensor(args.tensor), RngStream(args.seed))
    paths = exports.export_state(state, Path(args.out), countries, actions, threshold, tokens, assignments)
    c_eff, k_eff, r_eff = bptd_model.effective_dims(state, threshold)
    print(f"tables={len(paths)} effective_dims={c_eff},{k_eff},{r_eff}")
    return 0


def cmd_geweke(args: argparse.Namespace) -> int:
    config = _run_config(args)
    dims = _model_dims(config, args.countries, args.actions, args.steps)
    hyper = Hyperparams(
        eps0=config.eps0, gamma0=config.resolved_gamma0,
        fixed_delta=config.fixed_delta if args.free_scalars else config.fixed_delta or 1.0,
        fixed_zeta=config.fixed_zeta if args.free_scalars else config.fixed_zeta or 1.0,
    )
    result = geweke_test(
        dims, hyper, args.samples, RngStream(config.require_seed()),
        model=config.model, allocation=config.alloc, theta_shape_offset=args.theta_shape_offset,
    )
    rows = (
        (name, z, result.forward_means[name], result.successive_means[name])
        for name, z in result.z_scores.items()
    )
    write_rows(sys.stdout, ("statistic", "z", "forward_mean", "successive_mean"), rows)
    print(f"# max_abs_z={format_value(result.max_abs_z())} passed={result.passed()}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_run_flags(parser: argparse.ArgumentParser, sampler: bool = True) -> None:
    parser.add_argument("--config", type=Path, help="flat key=value config file")
    parser.add_argument("--seed", type=int, help="random seed")
    parser.add_argument("--dims", help="latent dims C,K,R")
    parser.add_argument("--eps0", type=float, help="ε₀ for the gamma priors")
    parser.add_argument("--gamma0", type=float, help="explicit γ₀ (default: solved from the product target)")
    parser.add_argument("--workers", type=int, help="allocation / evaluation workers (env BPTD_WORKERS)")
    if sampler:
        parser.add_argument("--model", choices=[m.value for m in ModelTag])
        parser.add_argument("--alloc", choices=[m.value for m in AllocationMode])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bptd", description="Bayesian Poisson Tucker decomposition toolkit")
    parser.add_argument("--log-level", help="logging level (default from BPTD_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse an event log into a tensor dump and vocabularies")
    p.add_argument("input", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--anchor", help="first month (YYYY-MM) for monthly binning of ISO dates")
    p.add_argument("--bin-width", type=int, default=1)
    p.add_argument("--origin", type=int, default=0)
    p.add_argument("--steps", type=int, help="force the number of time steps")
    p.add_argument("--strict", action="store_true", help="fail on the first malformed line")
    p.add_argument("--canonical", action="store_true", help="sort vocabularies lexicographically")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("simulate", help="forward-sample a count tensor")
    _add_run_flags(p, sampler=False)
    p.add_argument("--countries", type=int, default=30)
    p.add_argument("--actions", type=int, default=6)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--planted", action="store_true", help="block-structured planted state")
    p.add_argument("--events", type=float, default=50_000.0, help="expected tokens of a planted state")
    p.add_argument("--checkpoint", type=Path, help="simulate from a saved BPTD state")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("fit", help="run a sampler on a tensor")
    _add_run_flags(p)
    p.add_argument("--tensor", type=Path)
    p.add_argument("--sweeps", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--save-every", dest="save_every", type=int)
    p.add_argument("--out", type=Path)
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("evaluate", help="held-out comparison on activity masks")
    _add_run_flags(p, sampler=False)
    p.add_argument("--alloc", choices=[m.value for m in AllocationMode])
    p.add_argument("--tensor", type=Path, required=True)
    p.add_argument("--mask", choices=MASK_CHOICES, default="both")
    p.add_argument("--n-top", dest="n_top", type=int, default=15)
    p.add_argument("--models", help="comma-separated model tags (default: all)")
    p.add_argument("--seeds", help="comma-separated seeds (default: --seed)")
    p.add_argument("--train-sweeps", dest="train_sweeps", type=int, default=5000)
    p.add_argument("--test-sweeps", dest="test_sweeps", type=int, default=1000)
    p.add_argument("--test-burn-in", dest="test_burn_in", type=int, default=500)
    p.add_argument("--save-every", dest="save_every", type=int)
    p.add_argument("--exclude-zeros", action="store_true", help="score only nonzero held-out cells")
    p.add_argument("--out", type=Path)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("benchmark-alloc", help="allocation cost table and timings")
    p.add_argument("--grid", help="'C,K,R;C,K,R;...'")
    p.add_argument("--tokens", type=int, default=1000)
    p.add_argument("--sweeps", type=int, default=3)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", type=Path)
    p.set_defaults(handler=cmd_benchmark)

    p = sub.add_parser("export", help="TSV tables of a BPTD checkpoint")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--countries", type=Path, help="country vocabulary TSV")
    p.add_argument("--actions", type=Path, help="action vocabulary TSV")
    p.add_argument("--threshold", type=float, help="effective-dims threshold fraction")
    p.add_argument("--tensor", type=Path, help="training tensor; adds the dyad-topic count table")
    p.add_argument("--seed", type=int, default=0, help="seed of the allocation pass behind the dyad-topic table")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=cmd_export)

    p = sub.add_parser("geweke", help="joint-distribution test of a sampler")
    _add_run_flags(p)
    p.add_argument("--countries", type=int, default=4)
    p.add_argument("--actions", type=int, default=3)
    p.add_argument("--steps", type=int, default=3)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument(
        "--theta-shape-offset", dest="theta_shape_offset", type=float, default=0.0,
        help="add to the θ posterior shape (nonzero breaks the sampler on purpose)",
    )
    p.add_argument(
        "--free-scalars", dest="free_scalars", action="store_true",
        help="resample δ and ζ unless the config fixes them (default holds both at 1)",
    )
    p.set_defaults(handler=cmd_geweke)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    from src.core.logging_config import setup_logging

    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    try:
        return args.handler(args)
    except BPTDError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return DataError.exit_code
    except ValueError as e:
        # pydantic validation of command-line values
        print(f"error: {e}", file=sys.stderr)
        return ConfigError.exit_code
