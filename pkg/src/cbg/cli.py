"""Command line: ``cbg {simulate,audit,train,enumerate}``.

Exit codes: 0 success, 1 usage or invalid configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from .agents import (
    MAX_LEARNING_AGENTS,
    LearningConfig,
    RewardScheme,
    learning_curve,
    run_learning,
)
from .audit import AuditInputError, StateMapper, collect, independence_test, negative_control, verify_embedding
from .config import ExperimentConfig, build_config, load_config_file
from .embedding import HistoryClassifier
from .engine import ConfigurationError, Regime
from .exact import EnumerationError, enumerate_game
from .simulate import LogFormatError, make_header, read_log, simulate, summarize, write_log

log = logging.getLogger("cbg")

EXIT_USAGE = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="config file (JSON or key = value lines); flags override it")
    p.add_argument("--agents", dest="n", type=int)
    p.add_argument("--regime", choices=[r.value for r in Regime])
    p.add_argument("--eligibility", choices=["all", "once"])
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--p-accept", dest="p_accept", type=float)
    p.add_argument("--max-rounds", dest="max_rounds", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")


def _audit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mapper", choices=[m.value for m in StateMapper])
    p.add_argument("--classifier", choices=[c.value for c in HistoryClassifier])
    p.add_argument("--alpha", type=float)
    p.add_argument("--min-samples", dest="min_samples", type=int)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cbg", description="Coalitional bargaining simulator and Markov-property auditor")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="play episodes with memoryless random policies and log them")
    _common(sim)
    sim.add_argument("--summary", help="also write the summary JSON here")

    aud = sub.add_parser("audit", help="test the Markov property of a trajectory log")
    _common(aud)
    _audit_flags(aud)
    aud.add_argument("--log", help="trajectory log from `cbg simulate`; simulates from the config if omitted")

    tr = sub.add_parser("train", help="tabular Q-learning on the filtrated game")
    _common(tr)
    tr.add_argument("--learning-rate", dest="learning_rate", type=float)
    tr.add_argument("--discount", type=float)
    tr.add_argument("--epsilon", type=float)
    tr.add_argument("--epsilon-min", dest="epsilon_min", type=float)
    tr.add_argument("--r-acc", dest="r_acc", type=float)
    tr.add_argument("--r-step", dest="r_step", type=float)
    tr.add_argument("--log", help="also write the training trajectories (not auditable)")

    en = sub.add_parser("enumerate", help="exact conditional next-state distributions for n <= 3")
    _common(en)
    return parser


_CONFIG_KEYS = set(ExperimentConfig.__dataclass_fields__)


def _config(args: argparse.Namespace, **defaults) -> ExperimentConfig:
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    flags = {k: v for k, v in vars(args).items() if k in _CONFIG_KEYS}
    base = dict(defaults)
    base.update(file_values)
    return build_config(base, flags)


def _emit(text: str, out: str | None) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def cmd_simulate(args) -> int:
    cfg = _config(args)
    trajectories = simulate(
        cfg.n, cfg.regime, cfg.eligibility, cfg.episodes, cfg.seed, cfg.p_accept,
        workers=cfg.workers, max_rounds=cfg.max_rounds,
    )
    policy = f"random(p_accept={cfg.p_accept!r})"
    header = make_header(cfg.n, cfg.regime, cfg.eligibility, policy, cfg.seed, cfg.episodes)
    if cfg.out in (None, "-"):
        write_log(sys.stdout, header, trajectories)
        summary_stream = sys.stderr
    else:
        with open(cfg.out, "w", encoding="utf-8", newline="\n") as fh:
            write_log(fh, header, trajectories)
        summary_stream = sys.stdout
    summary = json.dumps(summarize(trajectories), indent=2) + "\n"
    summary_stream.write(summary)
    if args.summary:
        Path(args.summary).write_text(summary, encoding="utf-8")
    return 0


def build_audit_document(trajectories, cfg: ExperimentConfig, source: dict) -> dict:
    table = collect(trajectories, cfg.mapper, cfg.classifier)
    report = independence_test(table, cfg.alpha, cfg.min_samples)
    doc = {"source": source, **report.to_dict()}
    if cfg.mapper is StateMapper.EMBEDDED:
        verdict = verify_embedding(trajectories, alpha=cfg.alpha, min_samples=cfg.min_samples)
        doc["embedding"] = {
            "verdict": "holds" if verdict.holds else "counterexample",
            "counterexample": verdict.counterexample.hex() if verdict.counterexample else None,
            "reason": verdict.reason,
            "states": verdict.states,
            "low_power": verdict.low_power,
        }
    elif trajectories and trajectories[0].regime is Regime.REPEAT_ALLOWED:
        nc = negative_control(trajectories, cfg.alpha, cfg.min_samples, cfg.classifier)
        doc["negative_control"] = {
            "fraction_rejected_uncorrected": nc.fraction_rejected,
            "false_positive_bound": nc.bound,
            "within_bound": nc.within_bound,
        }
    return doc


def cmd_audit(args) -> int:
    cfg = _config(args)
    if args.log:
        header, trajectories = read_log(args.log)
        source = {"log": str(args.log), **{k: header[k] for k in ("n", "regime", "eligibility", "policy", "seed", "episodes")}}
    else:
        trajectories = simulate(
            cfg.n, cfg.regime, cfg.eligibility, cfg.episodes, cfg.seed, cfg.p_accept,
            workers=cfg.workers, max_rounds=cfg.max_rounds,
        )
        source = {"simulated": True, "n": cfg.n, "regime": cfg.regime.value, "eligibility": cfg.eligibility.value,
                  "policy": f"random(p_accept={cfg.p_accept!r})", "seed": cfg.seed, "episodes": cfg.episodes}
    doc = build_audit_document(trajectories, cfg, source)
    _emit(json.dumps(doc, indent=1) + "\n", cfg.out)
    return 0


def learning_config(cfg: ExperimentConfig) -> LearningConfig:
    if cfg.n > MAX_LEARNING_AGENTS:
        raise ConfigurationError(f"learning runs are limited to n <= {MAX_LEARNING_AGENTS} (Q tables keyed on full histories)")
    regime = cfg.regime
    return LearningConfig(
        n=cfg.n, regime=regime, eligibility=cfg.eligibility, episodes=cfg.episodes, seed=cfg.seed,
        alpha=cfg.learning_rate, gamma=cfg.discount, epsilon=cfg.epsilon, epsilon_min=cfg.epsilon_min,
        rewards=RewardScheme(cfg.r_acc, cfg.r_step), max_rounds=cfg.max_rounds or 32,
    )


def curve_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["episode", "mean_reward", "mean_rounds", "repeat_rate"])
    for r in rows:
        w.writerow([r["episode"], repr(r["mean_reward"]), repr(r["mean_rounds"]), repr(r["repeat_rate"])])
    return buf.getvalue()


def cmd_train(args) -> int:
    cfg = _config(args, regime="learned", episodes=50_000)
    lc = learning_config(cfg)
    result = run_learning(lc, keep_trajectories=bool(args.log))
    out = Path(cfg.out or "train-out")
    out.mkdir(parents=True, exist_ok=True)
    (out / "learning_curve.csv").write_text(curve_csv(learning_curve(result.stats)), encoding="utf-8")
    for i, q in enumerate(result.tables):
        (out / f"qtable_agent{i}.tsv").write_text("".join(line + "\n" for line in q.export_lines()), encoding="utf-8")
    if args.log:
        header = make_header(cfg.n, lc.regime, cfg.eligibility, lc.fingerprint, cfg.seed, cfg.episodes)
        with open(args.log, "w", encoding="utf-8", newline="\n") as fh:
            write_log(fh, header, result.trajectories)
    print(json.dumps({"episodes": len(result.stats), "q_entries": [len(q) for q in result.tables], "out": str(out)}))
    return 0


def cmd_enumerate(args) -> int:
    cfg = _config(args)
    model = enumerate_game(cfg.n, cfg.regime, cfg.p_accept, cfg.eligibility, cfg.max_rounds)
    _emit(json.dumps(model.to_dict(), indent=1) + "\n", cfg.out)
    return 0


COMMANDS = {"simulate": cmd_simulate, "audit": cmd_audit, "train": cmd_train, "enumerate": cmd_enumerate}


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, EnumerationError) as exc:
        print(f"cbg {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AuditInputError, LogFormatError, OSError) as exc:
        print(f"cbg {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
