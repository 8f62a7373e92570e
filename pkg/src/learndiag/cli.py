"""Command-line entry point wiring all stages into reproducible runs.

Every subcommand writes a manifest (resolved flags, input digests, output
paths, timestamps) beside its outputs, atomically, so a run directory is
self-describing and re-runnable.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import dataio, diagnosis, evaluation, interpret
from .diagnosis import LDMConfig
from .errors import (
    AllZeroExerciseRow,
    DuplicateRecord,
    EmptyInput,
    EmptyLearnerOrExercise,
    InvalidRange,
    LearnDiagError,
    MalformedRow,
    NonBinaryCell,
    NonBinaryScore,
    TooFewObservations,
)
from .evaluation import EvaluateConfig
from .psych import EMConfig, MCMCConfig, VARIANT_LDM_HMI, VARIANT_LDM_ID, channels_to_json

VALIDATION_ERRORS = (
    MalformedRow,
    NonBinaryScore,
    NonBinaryCell,
    DuplicateRecord,
    EmptyLearnerOrExercise,
    AllZeroExerciseRow,
    TooFewObservations,
    InvalidRange,
    EmptyInput,
    FileNotFoundError,
)

VARIANTS = {"ldm-id": VARIANT_LDM_ID, "ldm-hmi": VARIANT_LDM_HMI}


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_atomic(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".manifest-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class ManifestWriter:
    def __init__(self, command: str, argv: list[str], flags: dict, out_dir: Path):
        self.payload = {
            "command": command,
            "argv": argv,
            "flags": flags,
            "seed": flags.get("seed"),
            "inputs": {},
            "outputs": [],
            "started_at": datetime.now(timezone.utc).isoformat(),
        }
        self.out_dir = out_dir

    def add_input(self, path: str | Path | None) -> None:
        if path is None:
            return
        path = Path(path)
        self.payload["inputs"][str(path)] = _sha256(path)

    def add_output(self, path: str | Path) -> None:
        self.payload["outputs"].append(str(path))

    def finish(self) -> None:
        self.payload["finished_at"] = datetime.now(timezone.utc).isoformat()
        _write_atomic(self.out_dir / "manifest.json", json.dumps(self.payload, indent=2))


def _merge_config_file(args: argparse.Namespace, argv: list[str]) -> None:
    """Apply --config JSON values; flags typed on the command line win."""
    if not getattr(args, "config", None):
        return
    payload = json.loads(Path(args.config).read_text(encoding="utf-8"))
    typed = {
        token[2:].split("=", 1)[0].replace("-", "_")
        for token in argv
        if token.startswith("--")
    }
    for key, value in payload.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise LearnDiagError(f"config file sets unknown option {key!r}")
        if dest not in typed:
            setattr(args, dest, value)


def _flags_dict(args: argparse.Namespace) -> dict:
    skip = {"func", "parser"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def _ldm_config(args: argparse.Namespace, variant: str, seed: int) -> LDMConfig:
    return LDMConfig(
        variant=variant,
        d4=args.d4,
        attention_channels=args.attn_channels,
        dropout_rate=args.dropout,
        learning_rate=args.lr,
        batch_size=args.batch,
        max_epochs=args.epochs,
        patience=args.patience,
        seed=seed,
        use_attention=not args.no_attention,
        use_deep_feature=not args.no_deep,
        use_shallow_feature=not args.no_shallow,
    )


def _evaluate_config(args: argparse.Namespace) -> EvaluateConfig:
    return EvaluateConfig(
        em=EMConfig(max_iterations=args.em_iterations),
        mcmc=MCMCConfig(sweeps=args.mcmc_sweeps, burn_in=args.mcmc_sweeps // 2),
        mirt_dims=args.mirt_dims,
        bins_per_param=args.bins,
        sae_epochs=args.sae_epochs,
        include_irt_guess=args.include_irt_guess,
    )


def _add_network_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--bins", type=int, default=10)
    sub.add_argument("--d4", type=int, default=64)
    sub.add_argument("--attn-channels", type=int, default=16)
    sub.add_argument("--epochs", type=int, default=50)
    sub.add_argument("--batch", type=int, default=64)
    sub.add_argument("--lr", type=float, default=0.001)
    sub.add_argument("--dropout", type=float, default=0.2)
    sub.add_argument("--patience", type=int, default=5)
    sub.add_argument("--sae-epochs", type=int, default=100)
    sub.add_argument("--mirt-dims", type=int, default=3)
    sub.add_argument("--em-iterations", type=int, default=200)
    sub.add_argument("--mcmc-sweeps", type=int, default=5000)
    sub.add_argument("--include-irt-guess", action="store_true")
    sub.add_argument("--no-attention", action="store_true")
    sub.add_argument("--no-deep", action="store_true")
    sub.add_argument("--no-shallow", action="store_true")


def _load_inputs(args):
    r = dataio.load_response_matrix(args.responses, args.format)
    q = dataio.load_q_matrix(args.q) if args.q else None
    return r, q


# --- subcommands -----------------------------------------------------------------


def cmd_synth(args, argv, parser) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = ManifestWriter("synth", argv, _flags_dict(args), out)
    slip = tuple(float(v) for v in args.slip_range.split(","))
    guess = tuple(float(v) for v in args.guess_range.split(","))
    if args.generator == "dina":
        r, q, gt = dataio.generate_synthetic_dina(
            args.learners, args.exercises, args.knowledge, slip, guess, args.seed
        )
        dataio.write_q_matrix(q, out / "q.csv")
        manifest.add_output(out / "q.csv")
    elif args.generator == "hodina":
        r, q, gt = dataio.generate_synthetic_hodina(
            args.learners, args.exercises, args.knowledge,
            args.lambda0, args.lambda1, slip[0], guess[0], args.seed,
        )
        dataio.write_q_matrix(q, out / "q.csv")
        manifest.add_output(out / "q.csv")
    else:
        r, gt = dataio.generate_synthetic_irt(args.learners, args.exercises, args.seed)
    dataio.write_response_matrix(r, out / "responses.csv")
    gt.save(out / "ground_truth.json")
    manifest.add_output(out / "responses.csv")
    manifest.add_output(out / "ground_truth.json")
    manifest.finish()
    return 0


def cmd_fit_psych(args, argv, parser) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = ManifestWriter("fit-psych", argv, _flags_dict(args), out)
    manifest.add_input(args.responses)
    manifest.add_input(args.q)
    r, q = _load_inputs(args)
    variant = VARIANTS[args.variant]
    config = _evaluate_config(args)
    fits = evaluation.fit_channels(variant, r, q, config.em, config.mcmc, config.mirt_dims)
    meta = {
        "variant": variant,
        "seed": args.seed,
        "fingerprint": fits.fingerprint,
    }
    if fits.irt is not None:
        meta["irt_iterations"] = len(fits.irt.loglik_trace)
        meta["irt_final_loglik"] = fits.irt.loglik_trace[-1] if fits.irt.loglik_trace else None
    if fits.dina is not None:
        meta["dina_iterations"] = len(fits.dina.loglik_trace)
        meta["dina_final_loglik"] = fits.dina.loglik_trace[-1]
    if fits.mirt is not None:
        meta["mirt_iterations"] = len(fits.mirt.loglik_trace)
        meta["mirt_final_loglik"] = fits.mirt.loglik_trace[-1]
    payload = channels_to_json(
        irt_items=fits.irt.items if fits.irt else None,
        irt_learners=fits.irt.learners if fits.irt else None,
        dina_items=fits.dina.items if fits.dina else None,
        dina_learners=fits.dina.learners if fits.dina else None,
        mirt_items=fits.mirt.items if fits.mirt else None,
        mirt_learners=fits.mirt.learners if fits.mirt else None,
        hodina=fits.hodina,
        meta=meta,
    )
    (out / "psychometrics.json").write_text(payload, encoding="utf-8")
    manifest.add_output(out / "psychometrics.json")
    manifest.finish()
    return 0


def cmd_train(args, argv, parser) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = ManifestWriter("train", argv, _flags_dict(args), out)
    manifest.add_input(args.responses)
    manifest.add_input(args.q)
    r, q = _load_inputs(args)
    variant = VARIANTS[args.variant]
    config = _evaluate_config(args)
    ldm_config = _ldm_config(args, variant, args.seed)

    plan = dataio.split_folds(r, max(2, round(1.0 / args.test_fraction)), args.seed)
    rows_te, cols_te = plan.fold_cells(0)
    r_train = r.with_cells_masked(rows_te, cols_te)
    fits = evaluation.fit_channels(variant, r_train, q, config.em, config.mcmc, config.mirt_dims)
    obs_r, obs_c = np.nonzero(r_train.observed_mask)
    train_cells, val_cells = evaluation._carve_validation(
        obs_r, obs_c, config.val_fraction, args.seed
    )
    model = diagnosis.train_ldm_from_fits(
        r_train, q, fits, ldm_config, train_cells, val_cells,
        include_irt_guess=config.include_irt_guess,
        bins_per_param=config.bins_per_param,
        sae_epochs=config.sae_epochs,
    )
    diagnosis.save_model(model, out / "model")
    for name in ("plan.json", "psychometrics.json", "sae_learner.ckpt",
                 "sae_exercise.ckpt", "network.ckpt", "config.json"):
        manifest.add_output(out / "model" / name)
    labels = r.cells[rows_te, cols_te].astype(np.float64)
    scores, _ = diagnosis.predict_cells(model, rows_te, cols_te)
    report = [
        evaluation.MetricReport(
            model="LDM-ID" if variant == VARIANT_LDM_ID else "LDM-HMI",
            fold="holdout",
            auc=evaluation.auc(labels, scores),
            rmse=evaluation.rmse(labels, scores),
            n_cells=labels.size,
            wall_clock_ms=0.0,
        )
    ]
    evaluation.write_reports_json(report, out / "holdout.json")
    manifest.add_output(out / "holdout.json")
    manifest.finish()
    return 0


def cmd_evaluate(args, argv, parser) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = ManifestWriter("evaluate", argv, _flags_dict(args), out)
    manifest.add_input(args.responses)
    manifest.add_input(args.q)
    r, q = _load_inputs(args)
    variant = VARIANTS[args.variant]
    config = _evaluate_config(args)
    ldm_config = _ldm_config(args, variant, args.seed)
    ground_truth = None
    if args.ground_truth:
        manifest.add_input(args.ground_truth)
        ground_truth = dataio.GroundTruth.load(args.ground_truth)

    if args.jobs > 1:
        reports = _parallel_cross_validate(
            variant, r, q, args.folds, args.seed, ldm_config, config, ground_truth, args.jobs
        )
    else:
        reports = evaluation.cross_validate(
            variant, r, q, args.folds, args.seed, ldm_config, config, ground_truth
        )
    evaluation.write_reports_csv(reports, out / "report.csv")
    evaluation.write_metrics_csv(reports, out / "metrics.csv")
    evaluation.write_reports_json(reports, out / "report.json")
    for name in ("report.csv", "metrics.csv", "report.json"):
        manifest.add_output(out / name)
    manifest.finish()
    return 0


def _parallel_cross_validate(variant, r, q, k, seed, ldm_config, config, ground_truth, jobs):
    from concurrent.futures import ProcessPoolExecutor

    plan = dataio.split_folds(r, k, seed)
    tasks = []
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for fold in range(k):
            rows, cols = plan.fold_cells(fold)
            fold_ldm = replace(ldm_config, seed=seed + fold)
            fold_config = replace(config, mcmc=replace(config.mcmc, seed=seed + fold))
            tasks.append(
                pool.submit(
                    evaluation.evaluate_fold, variant, r, q, rows, cols, seed + fold,
                    fold_ldm, fold_config, ground_truth, str(fold),
                )
            )
        reports = [rep for task in tasks for rep in task.result()]
    for model_name in sorted({rep.model for rep in reports}):
        per_fold = [rep for rep in reports if rep.model == model_name]
        reports.append(
            evaluation.MetricReport(
                model=model_name,
                fold="mean",
                auc=float(np.mean([rep.auc for rep in per_fold])),
                rmse=float(np.mean([rep.rmse for rep in per_fold])),
                n_cells=int(sum(rep.n_cells for rep in per_fold)),
                wall_clock_ms=float(np.sum([rep.wall_clock_ms for rep in per_fold])),
            )
        )
    return reports


def cmd_predict(args, argv, parser) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = ManifestWriter("predict", argv, _flags_dict(args), out)
    manifest.add_input(args.pairs)
    model = diagnosis.load_model(args.model)
    records = []
    with Path(args.pairs).open(newline="", encoding="utf-8") as fh:
        import csv as _csv

        reader = _csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header[:2]] != ["learner_id", "exercise_id"]:
            raise MalformedRow(1, f"expected header learner_id,exercise_id, got {header}")
        for row in reader:
            if not row:
                continue
            records.append(diagnosis.predict(model, row[0].strip(), row[1].strip()))
    diagnosis.write_predictions_csv(records, out / "predictions.csv")
    manifest.add_output(out / "predictions.csv")
    manifest.finish()
    return 0


def cmd_diagnose(args, argv, parser) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = ManifestWriter("diagnose", argv, _flags_dict(args), out)
    model = diagnosis.load_model(args.model)
    sets = model.sets

    learner_ids = list(sets.learner_ids[: args.max_learners])
    exercise_ids = list(sets.exercise_ids[: args.max_exercises])
    interpret.write_learner_reports_csv(
        interpret.export_learner_report(sets, learner_ids), out / "learners.csv"
    )
    interpret.write_exercise_reports_csv(
        interpret.export_exercise_report(sets, exercise_ids), out / "exercises.csv"
    )

    rng = np.random.default_rng(args.seed)
    n_cells = min(args.sample_cells, len(sets.learner_ids) * len(sets.exercise_ids))
    rows = rng.integers(0, len(sets.learner_ids), size=n_cells)
    cols = rng.integers(0, len(sets.exercise_ids), size=n_cells)
    corr, degenerate = interpret.latent_correlation(
        model.learner_latents[rows], model.exercise_latents[cols]
    )
    interpret.write_latent_correlation_csv(corr, out / "latent_corr.csv", degenerate)

    cells = [(sets.learner_ids[i], sets.exercise_ids[j]) for i, j in
             zip(rows[: args.attention_cells].tolist(), cols[: args.attention_cells].tolist())]
    weights, header = interpret.export_attention_weights(model, cells)
    interpret.write_attention_csv(weights, header, out / "attention.csv")

    for name in ("learners.csv", "exercises.csv", "latent_corr.csv", "attention.csv"):
        manifest.add_output(out / name)
    manifest.finish()
    return 0


# --- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="learndiag",
        description="Learning diagnosis: psychometric channels fused with a neural predictor.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    def add_sub(name, **kw):
        return subparsers.add_parser(name, **kw)

    synth = add_sub("synth", help="generate synthetic data with ground truth")
    synth.add_argument("--generator", choices=["dina", "irt", "hodina"], required=True)
    synth.add_argument("--learners", type=int, required=True)
    synth.add_argument("--exercises", type=int, required=True)
    synth.add_argument("--knowledge", type=int, default=5)
    synth.add_argument("--slip-range", default="0.1,0.3")
    synth.add_argument("--guess-range", default="0.1,0.3")
    synth.add_argument("--lambda0", type=float, default=0.0)
    synth.add_argument("--lambda1", type=float, default=1.5)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--config", default=None)
    synth.add_argument("--out", required=True)
    synth.set_defaults(func=cmd_synth)

    common = dict(required=True)
    for name, fn in (
        ("fit-psych", cmd_fit_psych),
        ("train", cmd_train),
        ("evaluate", cmd_evaluate),
    ):
        sub = add_sub(name)
        sub.add_argument("--variant", choices=list(VARIANTS), **common)
        sub.add_argument("--responses", **common)
        sub.add_argument("--q", default=None)
        sub.add_argument("--format", choices=["long_csv", "dense_tsv"], default="long_csv")
        sub.add_argument("--seed", type=int, default=0)
        sub.add_argument("--config", default=None)
        sub.add_argument("--out", required=True)
        _add_network_flags(sub)
        if name == "train":
            sub.add_argument("--test-fraction", type=float, default=0.2)
        if name == "evaluate":
            sub.add_argument("--folds", type=int, default=5)
            sub.add_argument("--jobs", type=int, default=1)
            sub.add_argument("--ground-truth", default=None)
        sub.set_defaults(func=fn)

    predict = add_sub("predict")
    predict.add_argument("--model", required=True)
    predict.add_argument("--pairs", required=True)
    predict.add_argument("--config", default=None)
    predict.add_argument("--out", required=True)
    predict.set_defaults(func=cmd_predict)

    diagnose = add_sub("diagnose")
    diagnose.add_argument("--model", required=True)
    diagnose.add_argument("--seed", type=int, default=0)
    diagnose.add_argument("--sample-cells", type=int, default=2000)
    diagnose.add_argument("--attention-cells", type=int, default=200)
    diagnose.add_argument("--max-learners", type=int, default=1000)
    diagnose.add_argument("--max-exercises", type=int, default=1000)
    diagnose.add_argument("--config", default=None)
    diagnose.add_argument("--out", required=True)
    diagnose.set_defaults(func=cmd_diagnose)

    return parser


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        _merge_config_file(args, argv)
        return args.func(args, argv, parser)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except LearnDiagError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
