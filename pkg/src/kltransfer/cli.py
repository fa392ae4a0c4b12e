"""Experiment driver: seeded end-to-end pipelines with file artifacts.

Subcommands: toy | transfer | analyze | version.  All runs are deterministic
given the config (seeds never come from the clock); outputs land only under
the configured output directory and are written atomically.

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .analysis import gaussian_grid_report, lagrangian_stationarity, soft_q_identity_check
from .config import ExperimentConfig, default_config_yaml, load_config
from .divergence import BACKWARD, FORWARD, Categorical, DivergenceMode, TruncationSpec
from .errors import ConfigError, ConvergenceError, NumericalDivergenceError
from .metrics import (
    TopKHistory,
    bleu,
    dialog_trace,
    novel_topk_count,
    topk_accuracy_sweep,
    write_fig4a_csv,
    write_fig4b_csv,
    write_fig5_csv,
)
from .seq.corpus import GenSpec, OracleTeacher, synth_corpus, write_corpus_file
from .seq.decoding import BeamConfig, beam_search
from .seq.model import ModelParams, save_checkpoint
from .toy import ToyConfig, compare_orders
from .training import (
    ModelTeacher,
    TrainConfig,
    ce_pretrain,
    finetune,
    select_probes,
)

log = logging.getLogger("kltransfer")

_MODE_BY_NAME = {
    "kd": FORWARD,
    "ka": BACKWARD,
}


class CheckFailure(RuntimeError):
    pass


def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _atomic_emit(path: str, writer) -> None:
    """Run ``writer(tmp_path)`` then rename the result into place."""
    tmp = f"{path}.tmp"
    writer(tmp)
    os.replace(tmp, path)


def _mode_for(name: str, jsd_weight: float) -> DivergenceMode:
    if name == "jsd":
        return DivergenceMode.jsd(jsd_weight)
    return _MODE_BY_NAME[name]


def cmd_toy(config: ExperimentConfig, out_dir: str, dry_run: bool) -> int:
    toy = config.toy
    base = ToyConfig(
        mode=FORWARD,
        teacher=tuple(toy.teacher),
        k=toy.k,
        learning_rate=toy.learning_rate,
        epochs=toy.epochs,
        seed=config.seed,
        init=toy.init,
        init_scale=toy.init_scale,
    )
    if dry_run:
        print(f"toy plan: teacher={toy.teacher} k={toy.k} lr={toy.learning_rate} "
              f"epochs={toy.epochs} init={toy.init} seed={config.seed} -> {out_dir}")
        return 0
    os.makedirs(out_dir, exist_ok=True)
    comparison = compare_orders(base)
    for label, trace in (("forward", comparison.forward), ("backward", comparison.backward)):
        path = os.path.join(out_dir, f"toy_{label}_seed{config.seed}.csv")
        _atomic_emit(path, trace.to_csv)
        log.info("wrote %s", path)
    _atomic_write(os.path.join(out_dir, f"toy_comparison_seed{config.seed}.json"),
                  comparison.to_json())
    return 0


def _build_teacher(config: ExperimentConfig, spec: GenSpec, train_pairs):
    if config.model.teacher == "oracle":
        return OracleTeacher(spec)
    rng = np.random.default_rng(config.seed + 7_777)
    params = ModelParams.random(spec.source_content_size + 3,
                                spec.target_vocab_size,
                                config.model.teacher_hidden_dim, rng,
                                config.model.init_scale)
    cfg = TrainConfig(learning_rate=config.train.pretrain_learning_rate,
                      adam_betas=tuple(config.train.adam_betas),
                      adam_eps=config.train.adam_eps,
                      batch_size=config.train.batch_size,
                      seed=config.seed + 7_777,
                      pretrain_epochs=config.model.teacher_pretrain_epochs)
    ce_pretrain(params, train_pairs, cfg)
    return ModelTeacher(params)


def cmd_transfer(config: ExperimentConfig, out_dir: str, dry_run: bool) -> int:
    gen = config.gen
    spec = GenSpec(
        source_class_sizes=tuple(gen.source_class_sizes),
        target_group_sizes=tuple(gen.target_group_sizes),
        emissions=tuple(tuple(row) for row in gen.emissions),
        class_map=tuple(gen.class_map),
        length_range=tuple(gen.length_range),
        noise=gen.noise,
        seed=config.seed,
    )
    modes = list(config.train.modes)
    if dry_run:
        print(f"transfer plan: corpus n={gen.n_pairs} V={spec.target_vocab_size} "
              f"teacher={config.model.teacher} learner_d={config.model.hidden_dim} "
              f"pretrain={config.train.pretrain_epochs} finetune={config.train.epochs} "
              f"lambda={config.train.lambda_weight} modes={modes} seed={config.seed} -> {out_dir}")
        return 0
    os.makedirs(out_dir, exist_ok=True)
    corpus = synth_corpus(spec, gen.n_pairs)
    train_pairs, valid_pairs, test_pairs = corpus.splits()
    _atomic_emit(os.path.join(out_dir, "corpus.tsv"),
                 lambda p: write_corpus_file(corpus, p))
    teacher = _build_teacher(config, spec, train_pairs)
    beam_cfg = BeamConfig(config.beam.beam_size, config.beam.length_penalty,
                          config.beam.max_length)

    def scorer(pairs):
        def run(params: ModelParams) -> float:
            hyps = [list(beam_search(params, p.source, beam_cfg)[0].tokens)
                    for p in pairs]
            return bleu(hyps, [[list(p.target)] for p in pairs])
        return run

    rng = np.random.default_rng(config.seed + 1_000)
    learner = ModelParams.random(spec.source_content_size + 3,
                                 spec.target_vocab_size,
                                 config.model.hidden_dim, rng,
                                 config.model.init_scale)
    base_cfg = TrainConfig(
        lambda_weight=config.train.lambda_weight,
        topk=None if config.train.topk is None else TruncationSpec(config.train.topk),
        learning_rate=config.train.learning_rate,
        adam_betas=tuple(config.train.adam_betas),
        adam_eps=config.train.adam_eps,
        epochs=config.train.epochs,
        batch_size=config.train.batch_size,
        seed=config.seed,
        pretrain_epochs=config.train.pretrain_epochs,
        checkpoint_every=config.train.checkpoint_every,
    )
    pretrain_cfg = replace(base_cfg, learning_rate=config.train.pretrain_learning_rate)
    log.info("pretraining learner: %d epochs", base_cfg.pretrain_epochs)
    _, pre_log = ce_pretrain(learner, train_pairs, pretrain_cfg)
    _atomic_emit(os.path.join(out_dir, "pretrain_metrics.jsonl"), pre_log.to_jsonl)
    _atomic_emit(os.path.join(out_dir, "pretrain_metrics.csv"), pre_log.to_csv)
    _atomic_emit(os.path.join(out_dir, "model_pretrained.json"),
                 lambda p: save_checkpoint(learner, p))
    probes = select_probes(train_pairs, config.metrics.probe_count,
                           seed=config.seed + 2_000)
    summary = {"learner": scorer(test_pairs)(learner)}
    entropy_by_mode = {}
    novel_by_mode = {}
    for mode_name in modes:
        mode = _mode_for(mode_name, config.train.jsd_weight)
        run_cfg = replace(base_cfg, mode=mode)
        tuned = learner.copy()
        log.info("fine-tuning %s: %d epochs", mode_name, run_cfg.epochs)
        _, ft_log = finetune(
            tuned, teacher, train_pairs, run_cfg,
            probes=probes, history_k=config.metrics.history_k,
            evaluate=scorer(valid_pairs),
            checkpoint_path=os.path.join(out_dir, f"checkpoint_{mode_name}.json"),
            checkpoint_tag=f"{mode_name}-seed{config.seed}",
        )
        _atomic_emit(os.path.join(out_dir, f"metrics_{mode_name}.jsonl"), ft_log.to_jsonl)
        _atomic_emit(os.path.join(out_dir, f"metrics_{mode_name}.csv"), ft_log.to_csv)
        _atomic_emit(os.path.join(out_dir, f"model_{mode_name}.json"),
                     lambda p, m=tuned: save_checkpoint(m, p))
        entropy_by_mode[mode_name] = [r["mean_position_entropy"] for r in ft_log.records]
        history = TopKHistory.from_records(ft_log.records, config.metrics.history_k)
        novel_by_mode[mode_name] = novel_topk_count(history).tolist()
        summary[mode_name] = scorer(test_pairs)(tuned)
        traces = []
        for pair in test_pairs[:config.metrics.dialog_pairs]:
            position = pair.target_length // 2
            traces.append(dialog_trace(tuned, teacher, pair, position,
                                       config.metrics.dialog_top_m,
                                       vocab=corpus.tgt_vocab))
        _atomic_write(os.path.join(out_dir, f"dialog_{mode_name}.txt"),
                      "\n\n".join(traces) + "\n")
    _atomic_emit(os.path.join(out_dir, "fig5.csv"),
                 lambda p: write_fig5_csv(p, entropy_by_mode))
    _atomic_emit(os.path.join(out_dir, "fig4b.csv"),
                 lambda p: write_fig4b_csv(p, novel_by_mode))
    if config.metrics.sweep_ks:
        rows = []
        for mode_name in modes:
            mode = _mode_for(mode_name, config.train.jsd_weight)
            rows.extend(topk_accuracy_sweep(
                learner, teacher, train_pairs,
                replace(base_cfg, mode=mode), list(config.metrics.sweep_ks),
                scorer(valid_pairs)))
        _atomic_emit(os.path.join(out_dir, "fig4a.csv"),
                     lambda p: write_fig4a_csv(p, rows))
    columns = ["learner"] + modes
    summary_csv = ",".join(columns) + "\n" + ",".join(
        repr(summary[c]) for c in columns) + "\n"
    _atomic_write(os.path.join(out_dir, "summary.csv"), summary_csv)
    log.info("summary: %s", json.dumps(summary, sort_keys=True))
    return 0


def cmd_analyze(config: ExperimentConfig, out_dir: str, dry_run: bool,
                check_lagrangian: bool, soft_q: int | None) -> int:
    if dry_run:
        print(f"analyze plan: grid={config.analyze.grid_points} "
              f"[{config.analyze.grid_lo}, {config.analyze.grid_hi}] "
              f"check_lagrangian={check_lagrangian} soft_q={soft_q} -> {out_dir}")
        return 0
    os.makedirs(out_dir, exist_ok=True)
    report = gaussian_grid_report(config.analyze.grid_points,
                                  config.analyze.grid_lo, config.analyze.grid_hi)
    _atomic_emit(os.path.join(out_dir, "fig2_grid.csv"), report.to_csv)
    _atomic_emit(os.path.join(out_dir, "fig2_grid.json"), report.to_json)
    if check_lagrangian:
        rng = np.random.default_rng(config.seed)
        teachers = [Categorical(np.array([0.4, 0.3, 0.2, 0.1]))]
        for _ in range(9):
            dim = int(rng.integers(4, 65))
            probs = rng.dirichlet(np.ones(dim)) * 0.9 + 0.1 / dim
            teachers.append(Categorical(probs / probs.sum()))
        failed = False
        for i, teacher in enumerate(teachers):
            try:
                fwd = lagrangian_stationarity(FORWARD, teacher)
                bwd = lagrangian_stationarity(BACKWARD, teacher)
            except ConvergenceError as exc:
                print(f"teacher {i}: FAIL ({exc})")
                failed = True
                continue
            ok = abs(fwd.multiplier - 1.0) < 1e-6 and abs(bwd.multiplier + 1.0) < 1e-6
            failed |= not ok
            print(f"teacher {i} (dim {teacher.support_size}): "
                  f"forward lambda={fwd.multiplier:+.9f} "
                  f"backward lambda={bwd.multiplier:+.9f} "
                  f"{'PASS' if ok else 'FAIL'}")
        if failed:
            raise CheckFailure("a Lagrange multiplier check failed")
    if soft_q is not None:
        rng = np.random.default_rng(config.seed)
        worst = 0.0
        for _ in range(soft_q):
            q_values = rng.uniform(-5.0, 5.0, size=8)
            policy = Categorical(rng.dirichlet(np.ones(8)))
            worst = max(worst, soft_q_identity_check(q_values, policy))
        print(f"soft-Q identity over {soft_q} instances: max residual {worst:.3e}")
        if worst >= 1e-10:
            raise CheckFailure(f"soft-Q residual {worst:.3e} exceeds 1e-10")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kltransfer",
        description="KL knowledge-transfer experiments (toy task, teacher->learner transfer, gradient analysis)",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in (("toy", "run the truncated top-k toy task in both orders"),
                       ("transfer", "synth corpus -> pretrain -> KD/KA/JSD fine-tune -> metrics"),
                       ("analyze", "gradient-analysis reports and identity checks")):
        cmd = sub.add_parser(name, help=desc)
        cmd.add_argument("--config", metavar="PATH",
                         help="YAML config (bundled defaults when omitted)")
        cmd.add_argument("--out", metavar="DIR", help="output directory")
        cmd.add_argument("--seed", type=int, help="override config seed")
        cmd.add_argument("--dry-run", action="store_true",
                         help="validate config and print the plan; write nothing")
        if name == "analyze":
            cmd.add_argument("--check-lagrangian", action="store_true",
                             help="verify the +1/-1 multipliers numerically")
            cmd.add_argument("--soft-q", type=int, metavar="N",
                             help="check the soft-Q identity over N instances")
    sub.add_parser("version", help="print the package version")
    sub.add_parser("print-config", help="print the bundled default config")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = _build_parser().parse_args(argv)
    if args.command == "version":
        print(__version__)
        return 0
    if args.command == "print-config":
        print(default_config_yaml(), end="")
        return 0
    try:
        if args.config is not None:
            config = load_config(args.config)
        else:
            config = ExperimentConfig()
        if args.seed is not None:
            config.seed = args.seed
        out_dir = args.out if args.out is not None else config.out_dir
        if args.command == "toy":
            return cmd_toy(config, out_dir, args.dry_run)
        if args.command == "transfer":
            return cmd_transfer(config, out_dir, args.dry_run)
        return cmd_analyze(config, out_dir, args.dry_run,
                           args.check_lagrangian, args.soft_q)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericalDivergenceError, ConvergenceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except CheckFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
