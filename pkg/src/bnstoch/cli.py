"""Command-line driver: ``generate``, ``run``, ``diagnose`` and ``evaluate``.

Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .benchmark import layered_network, parse_layers
from .bn_core import forward_sample, is_acyclic
from .dataset import (
    CompletedView,
    Dataset,
    MissingMask,
    inject_mcar,
    load_assignment,
    load_csv,
    save_assignment,
    save_csv,
)
from .diagnostics import (
    LOOSE_THRESHOLD,
    STRICT_THRESHOLD,
    EvalReport,
    credible_interval,
    first_below,
    log_loss,
    psrf,
    psrf_curve,
)
from .engines import EngineConfig, RunResult, run
from .errors import BNStochError, CyclicStructure, DegenerateChains, ValidationError
from .moves import MoveConfig
from .netformat import format_network, read_network, write_network
from .scoring import ScoreConfig, fit_parameters, structure_score

log = logging.getLogger("bnstoch")


# -- shared evaluation path (used by `generate` for its manifest and by `evaluate`) -----------


def evaluate_model(netfile, train: Dataset, assignment, test: Dataset, score_config: ScoreConfig) -> EvalReport:
    """Train-set BDe of the model's structure and holdout log loss of its network.

    A bare structure gets posterior-mean parameters fitted on the completed training view.
    """
    if not is_acyclic(netfile.structure):
        raise CyclicStructure("model structure is cyclic")
    mask = MissingMask.of(train)
    if assignment is None:
        if len(mask):
            raise ValidationError("training data has missing cells; an assignment file is required")
        assignment = np.zeros(0, dtype=np.int16)
    view = CompletedView(train, mask, assignment)
    bde = structure_score(netfile.structure, view, score_config).log_score
    net = netfile.network if netfile.network is not None else fit_parameters(netfile.structure, view, score_config)
    return log_loss(net, test, bde_score=bde)


def _write_report(out: Path, stem: str, report: EvalReport) -> None:
    (out / f"{stem}.txt").write_text(report.to_text(), encoding="utf-8")
    with open(out / f"{stem}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerow(["bde_score", repr(report.bde_score)])
        w.writerow(["log_loss", repr(report.log_loss)])
        w.writerow(["impossible_evidence", report.impossible_evidence])
        for k, v in report.per_variable.items():
            w.writerow([f"log_loss[{k}]", repr(v)])


def _score_config(args) -> ScoreConfig:
    return ScoreConfig(prior_kind=args.prior, ess=args.ess, max_parents=args.max_parents,
                       illegal_penalty=args.illegal_penalty, temperature=args.temperature)


# -- generate ---------------------------------------------------------------------------------


def cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    layers = parse_layers(args.layers)
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(args.seed).spawn(4)]
    net = layered_network(layers, streams[0], arity=args.arity, max_parents=args.max_parents)
    write_network(out / "network.txt", net, name=f"layered_{args.layers}")
    # re-read so every number below comes from the file exactly as written
    netfile = read_network(out / "network.txt")
    net = netfile.network
    train_full = forward_sample(net, streams[1], args.train_cases)
    test = forward_sample(net, streams[2], args.test_cases)
    train, mask = inject_mcar(train_full, args.missing_rate, streams[3])
    truth = train_full.cells[mask.cases, mask.variables]
    save_csv(out / "train.csv", train)
    save_csv(out / "test.csv", test)
    save_csv(out / "train_complete.csv", train_full)
    save_assignment(out / "train_truth_assignment.csv", train, mask, truth)
    with open(out / "mask.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case", "variable"])
        for c, v in mask.positions():
            w.writerow([c, train.variables[v].name])

    lines = [
        f"layers = {args.layers}",
        f"variables = {net.n}",
        f"seed = {args.seed}",
        f"train_cases = {args.train_cases}",
        f"test_cases = {args.test_cases}",
        f"missing_rate = {args.missing_rate!r}",
        f"missing_cells = {len(mask)}",
    ]
    if args.test_cases > 0:
        report = evaluate_model(netfile, train, truth, test, _score_config(args))
        lines += [f"generating_train_bde = {report.bde_score!r}", f"generating_test_log_loss = {report.log_loss!r}"]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote benchmark with {net.n} variables to {out}")
    return 0


# -- run ----------------------------------------------------------------------------------------


@dataclass
class RunConfig:
    train: str = ""
    network: str = ""
    out: str = "runs"
    engines: str = "ea,mcmc,mcmc-adaptive,emcmc"
    population_size: int = 20
    iterations: int = 500
    repetitions: int = 5
    seed: int = 0
    crossover_prob: float = 0.5
    mutation_prob: float = 0.2
    tournament_size: int = 2
    data_move_prob: float = 0.5
    sweep: bool = False
    crossover_gene_prob: float = 0.5
    move_weights: str = "1,1,1"
    epsilon: float = 0.05
    prior: str = "k2"
    ess: float = 1.0
    max_parents: int = 3
    illegal_penalty: float = -1e12
    temperature: float = 1.0


def _coerce(name: str, raw, kind):
    if kind is bool or kind == "bool":
        if isinstance(raw, bool):
            return raw
        low = str(raw).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return {"int": int, "float": float, "str": str}.get(kind, kind)(raw)
    except (TypeError, ValueError):
        raise ValidationError(f"{name}: cannot parse {raw!r}") from None


def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; dashes in keys are allowed."""
    known = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, value, known[key])
    return values


def resolve_run_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        for k, v in read_config_file(args.config).items():
            setattr(cfg, k, v)
    known = {f.name: f.type for f in fields(RunConfig)}
    for k in known:
        v = getattr(args, k, None)
        if v is not None:
            setattr(cfg, k, _coerce(k, v, known[k]))
    if not cfg.train:
        raise ValidationError("a training CSV is required (--train or 'train' in the config file)")
    return cfg


def _engine_specs(spec: str):
    out = []
    for name in (s.strip().lower() for s in spec.split(",") if s.strip()):
        kind, _, flavour = name.partition("-")
        if kind not in ("ea", "mcmc", "emcmc") or flavour not in ("", "adaptive"):
            raise ValidationError(f"unknown engine {name!r}; use ea, mcmc, emcmc with optional -adaptive")
        out.append((name, kind, flavour == "adaptive"))
    if not out:
        raise ValidationError("no engines selected")
    return out


def _write_trace(path: Path, result: RunResult) -> None:
    tr = result.trace
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "rep", "best_score", "mean_score", "unique_structures",
                    "accept_rate_structure", "accept_rate_data"])
        for it in range(1, len(tr)):
            st = tr.stats[it]
            w.writerow([it, result.repetition, repr(tr.best_so_far[it]), repr(float(tr.scores[it].mean())),
                        tr.unique_structures[it], repr(st.rate("structure")), repr(st.rate("data"))])


def _write_chains(path: Path, result: RunResult) -> None:
    scores = result.trace.score_matrix()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration"] + [f"chain_{i}" for i in range(scores.shape[1])])
        for it in range(1, scores.shape[0]):
            w.writerow([it] + [repr(float(x)) for x in scores[it]])


def _write_population(out: Path, stem: str, result: RunResult, data: Dataset, mask: MissingMask) -> None:
    blocks = []
    for k, ind in enumerate(result.population):
        blocks.append(f"# individual {k} log_score {ind.score!r}\n"
                      + format_network(data.variables, ind.structure, name=f"individual_{k}"))
    (out / f"{stem}_structures.txt").write_text("\n".join(blocks), encoding="utf-8")
    with open(out / f"{stem}_assignments.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["individual", "case", "variable", "value"])
        for k, ind in enumerate(result.population):
            for (c, v), x in zip(mask.positions(), ind.assignment.tolist()):
                var = data.variables[v]
                w.writerow([k, c, var.name, var.value_labels[x]])
    best = result.best
    (out / f"{stem}_best.txt").write_text(
        f"# best log_score {best.score!r}\n" + format_network(data.variables, best.structure, name="best"),
        encoding="utf-8")
    save_assignment(out / f"{stem}_best_assignment.csv", data, mask, best.assignment)


def cmd_run(args) -> int:
    cfg = resolve_run_config(args)
    variables = read_network(cfg.network).variables if cfg.network else None
    data = load_csv(cfg.train, variables)
    mask = MissingMask.of(data)
    score_config = ScoreConfig(prior_kind=cfg.prior, ess=cfg.ess, max_parents=cfg.max_parents,
                               illegal_penalty=cfg.illegal_penalty, temperature=cfg.temperature)
    try:
        weights = tuple(float(x) for x in cfg.move_weights.split(","))
    except ValueError:
        raise ValidationError(f"bad move weights {cfg.move_weights!r}") from None
    specs = _engine_specs(cfg.engines)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(
        "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in fields(RunConfig)), encoding="utf-8")

    summary_rows, summary_text = [], []
    for name, kind, adaptive in specs:
        engine_config = EngineConfig(
            engine_kind=kind, population_size=cfg.population_size, iterations=cfg.iterations,
            crossover_prob=cfg.crossover_prob, mutation_prob=cfg.mutation_prob,
            tournament_size=cfg.tournament_size, data_move_prob=cfg.data_move_prob, adaptive=adaptive,
            seed=cfg.seed, repetitions=cfg.repetitions, sweep=cfg.sweep)
        move_config = MoveConfig(crossover_gene_prob=cfg.crossover_gene_prob, structure_move_weights=weights,
                                 adaptive=adaptive, epsilon=cfg.epsilon)
        log.info("running %s", name)
        results = run(engine_config, data, mask, score_config, move_config)
        bests = []
        for res in results:
            stem = f"{name}_rep{res.repetition}"
            _write_trace(out / f"trace_{stem}.csv", res)
            _write_chains(out / f"chains_{stem}.csv", res)
            _write_population(out, f"population_{stem}", res, data, mask)
            bests.append(res.trace.best_so_far[-1])
            summary_rows.append([name, res.repetition, repr(res.trace.best_so_far[-1]),
                                 repr(float(res.trace.scores[-1].mean())), res.trace.unique_structures[-1]])
        if len(bests) >= 2:
            low, high = credible_interval(bests, 0.95)
            summary_text.append(f"{name}: best score 95% interval [{low!r}, {high!r}] over {len(bests)} repetitions")
        else:
            summary_text.append(f"{name}: best score {bests[0]!r} (single repetition, no interval)")
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["engine", "rep", "best_score", "final_mean_score", "final_unique_structures"])
        w.writerows(summary_rows)
    (out / "summary.txt").write_text("\n".join(summary_text) + "\n", encoding="utf-8")
    print("\n".join(summary_text))
    return 0


# -- diagnose --------------------------------------------------------------------------------------


def _read_chains(path: str, column: str | None) -> list[np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        header = reader.fieldnames or []
    if column is not None:
        cols = [column]
    else:
        cols = [h for h in header if h.startswith("chain_")] or ["mean_score"]
    missing = [c for c in cols if c not in header]
    if missing:
        raise ValidationError(f"{path}: no column {missing[0]!r}")
    try:
        return [np.array([float(r[c]) for r in rows]) for c in cols]
    except ValueError:
        raise ValidationError(f"{path}: non-numeric trace values") from None


def cmd_diagnose(args) -> int:
    chains = []
    for path in args.traces:
        chains.extend(_read_chains(path, args.column))
    if len(chains) < 2:
        raise ValidationError("need at least two chains (two trace files, or a file with chain_* columns)")
    lengths = {len(c) for c in chains}
    if len(lengths) != 1:
        raise ValidationError(f"traces are misaligned: lengths {sorted(lengths)}")
    x = np.vstack(chains)
    burn_in = args.burn_in
    prefix, values = psrf_curve(x, every=args.every, burn_in=burn_in)
    lines = [f"chains = {x.shape[0]}", f"iterations = {x.shape[1]}", f"burn_in = {burn_in!r}"]
    try:
        final = psrf(x, burn_in)
        lines.append(f"final_rhat = {final:.4f}")
    except DegenerateChains:
        lines.append("final_rhat = degenerate (every chain constant after burn-in; within-chain variance is zero)")
    except ValidationError as exc:
        lines.append(f"final_rhat = undefined ({exc})")
    for label, thr in (("loose", LOOSE_THRESHOLD), ("strict", STRICT_THRESHOLD)):
        hit = first_below(prefix, values, thr)
        lines.append(f"converged_{label} (rhat <= {thr}) = " + (f"at iteration {hit}" if hit else "not reached"))
    text = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "psrf.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "rhat", "status"])
            for length, r in zip(prefix, values):
                w.writerow([length, "" if np.isnan(r) else f"{r:.12g}", "undefined" if np.isnan(r) else "ok"])
        (out / "verdict.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


# -- evaluate ------------------------------------------------------------------------------------


def cmd_evaluate(args) -> int:
    netfile = read_network(args.model)
    train = load_csv(args.train, netfile.variables)
    test = load_csv(args.test, netfile.variables)
    mask = MissingMask.of(train)
    assignment = load_assignment(args.assignment, train, mask, args.individual) if args.assignment else None
    report = evaluate_model(netfile, train, assignment, test, _score_config(args))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_report(out, "evaluation", report)
    print(report.to_text(), end="")
    return 0


# -- parser ------------------------------------------------------------------------------------


def _add_score_flags(p, defaults: bool):
    d = RunConfig()
    kw = (lambda v: {"default": v}) if defaults else (lambda v: {"default": None})
    p.add_argument("--prior", choices=["k2", "bdeu"], **kw(d.prior))
    p.add_argument("--ess", type=float, **kw(d.ess), help="BDeu equivalent sample size")
    p.add_argument("--max-parents", dest="max_parents", type=int, **kw(d.max_parents))
    p.add_argument("--illegal-penalty", dest="illegal_penalty", type=float, **kw(d.illegal_penalty))
    p.add_argument("--temperature", type=float, **kw(d.temperature))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bnstoch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="build a seeded layered benchmark and sample train/test data")
    g.add_argument("--out", required=True)
    g.add_argument("--layers", default="1x3x3")
    g.add_argument("--arity", type=int, default=3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--train-cases", dest="train_cases", type=int, default=1000)
    g.add_argument("--test-cases", dest="test_cases", type=int, default=1000)
    g.add_argument("--missing-rate", dest="missing_rate", type=float, default=0.1)
    _add_score_flags(g, defaults=True)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run the search engines; flags override --config")
    r.add_argument("--config", help="key = value file")
    r.add_argument("--train")
    r.add_argument("--network", help="network/structure file declaring variable labels")
    r.add_argument("--out")
    r.add_argument("--engines", help="comma list of ea, mcmc, emcmc, each optionally suffixed -adaptive")
    for flag, typ in (("population-size", int), ("iterations", int), ("repetitions", int), ("seed", int),
                      ("crossover-prob", float), ("mutation-prob", float), ("tournament-size", int),
                      ("data-move-prob", float), ("crossover-gene-prob", float), ("epsilon", float)):
        r.add_argument(f"--{flag}", dest=flag.replace("-", "_"), type=typ, default=None)
    r.add_argument("--move-weights", dest="move_weights", default=None, help="add,delete,reverse weights")
    r.add_argument("--sweep", action="store_const", const=True, default=None,
                   help="EMCMC: step population_size/2 disjoint pairs per iteration")
    _add_score_flags(r, defaults=False)
    r.set_defaults(func=cmd_run)

    d = sub.add_parser("diagnose", help="Gelman-Rubin convergence report over trace files")
    d.add_argument("traces", nargs="+")
    d.add_argument("--column", default=None, help="scalar column (default: chain_* columns, else mean_score)")
    d.add_argument("--every", type=int, default=25)
    d.add_argument("--burn-in", dest="burn_in", type=float, default=0.5)
    d.add_argument("--out")
    d.set_defaults(func=cmd_diagnose)

    e = sub.add_parser("evaluate", help="train BDe and holdout log loss of a structure or network")
    e.add_argument("--model", required=True, help="network file, with or without cpt lines")
    e.add_argument("--train", required=True)
    e.add_argument("--test", required=True)
    e.add_argument("--assignment", help="imputed values for the training set's missing cells")
    e.add_argument("--individual", type=int, default=None, help="row filter for population assignment files")
    e.add_argument("--out")
    _add_score_flags(e, defaults=True)
    e.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (BNStochError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
