"""Command-line entry point: ``semges <command> [flags]``.

Every successful run prints one JSON config echo on stdout. Failures print a
JSON error object instead and exit nonzero (2 for refused requests, 1 for
everything else).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import metrics as M
from .checkpoint import load_generator, load_prior, save_generator, save_prior
from .data import Dataset, FeatureBundle, read_dataset, synth_dataset, write_dataset
from .generator import LOSS_COMPONENTS, Stage2Config, train_stage2
from .longseq import GestureOutput, LongSequenceRequest, export_motion, read_motion_file, stitch_generate, write_motion_file
from .oracles import CORE_TOL, GROUPS, negative_control, run_oracles
from .vqvae import VQ_COMPONENTS, Stage1Config, train_stage1

log = logging.getLogger("semges")

ALL_METRICS = ("fgd", "bc", "div", "srgr")


class RefusedError(Exception):
    """A well-formed request the pipeline declines to answer (exit code 2)."""


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _echo(args: argparse.Namespace, argv: list[str], outputs: dict, **extra) -> dict:
    config = {k: v for k, v in vars(args).items() if k != "func"}
    echo = {"command": args.command, "argv": argv, "config": config, "outputs": outputs, **extra}
    print(json.dumps(echo, sort_keys=True))
    return echo


def _write_log(path: Path, columns: tuple[str, ...], history: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("step",) + columns)
        for rec in history:
            w.writerow([rec["step"]] + [repr(float(rec[c])) for c in columns])


def _log_path(args) -> Path:
    return Path(args.log) if args.log else Path(args.out).with_suffix(".csv")


# -- commands -----------------------------------------------------------------

def cmd_synth(args, argv):
    data = synth_dataset(
        args.seed, args.clips, args.speakers, frames=args.frames, relevance=not args.no_relevance
    )
    manifest = write_dataset(data, args.out)
    summary = {
        "clips": len(manifest.entries),
        "speakers": manifest.n_speakers,
        "splits": {t: len(manifest.ids(t)) for t in ("train", "val", "test")},
        "has_relevance": manifest.has_relevance,
    }
    return _echo(args, argv, {args.out: file_sha256(args.out)}, manifest=summary)


def cmd_train_prior(args, argv):
    data = read_dataset(args.data)
    hp = Stage1Config(steps=args.steps, batch_size=args.batch_size, lr=args.lr)
    result = train_stage1(data, args.part, hp, seed=args.seed)
    fp = save_prior(result.prior, args.out)
    log_path = _log_path(args)
    _write_log(log_path, VQ_COMPONENTS, result.log)
    return _echo(
        args,
        argv,
        {args.out: file_sha256(args.out), str(log_path): file_sha256(log_path)},
        data_sha256=file_sha256(args.data),
        fingerprint=fp,
        final_loss=result.log[-1]["total"],
    )


def cmd_train_gen(args, argv):
    data = read_dataset(args.data)
    hands, body = load_prior(args.prior_hands), load_prior(args.prior_body)
    hp = Stage2Config(
        steps=args.steps,
        batch_size=args.batch_size,
        lr=args.lr,
        use_coherence=not args.no_coherence,
        use_relevance=not args.no_relevance,
    )
    result = train_stage2(data, hands, body, hp, seed=args.seed)
    fp = save_generator(result.model, args.out)
    log_path = _log_path(args)
    _write_log(log_path, LOSS_COMPONENTS, result.log)
    return _echo(
        args,
        argv,
        {args.out: file_sha256(args.out), str(log_path): file_sha256(log_path)},
        data_sha256=file_sha256(args.data),
        prior_fingerprints={"hands": hands.fingerprint(), "body": body.fingerprint()},
        fingerprint=fp,
        final_loss=result.log[-1]["total"],
    )


def _select(data: Dataset, split: str | None, clip_ids: list[str] | None):
    if clip_ids:
        missing = sorted(set(clip_ids) - set(data.manifest.ids()))
        if missing:
            raise RefusedError(f"unknown clip ids {missing}")
        return [data.by_id(c) for c in clip_ids]
    return data.split(split) if split != "all" else list(data.samples)


def _concat_bundle(samples) -> FeatureBundle:
    speakers = {s.features.speaker_id for s in samples}
    if len(speakers) != 1:
        raise RefusedError(f"--concat needs clips from a single speaker, got speakers {sorted(speakers)}")
    f = [s.features for s in samples]
    return FeatureBundle(
        np.concatenate([b.audio for b in f]), np.concatenate([b.text for b in f]), f[0].speaker_id
    )


def cmd_generate(args, argv):
    model = load_generator(args.model)
    samples = _select(read_dataset(args.features), args.split, args.clip_ids)
    if not samples:
        raise RefusedError("no clips selected for generation")
    if args.concat:
        streams = {"stream": _concat_bundle(samples)}
    else:
        streams = {s.clip_id: s.features for s in samples}
    outputs: dict[str, GestureOutput] = {
        sid: stitch_generate(LongSequenceRequest(b, model, args.length, args.overlap), seed=args.seed)
        for sid, b in streams.items()
    }
    if args.format == "sgds":
        write_motion_file(args.out, outputs)
    elif len(outputs) == 1:
        export_motion(next(iter(outputs.values())), args.out, format="csv")
    else:
        raise RefusedError("csv export holds one sequence; select one clip or use --concat")
    return _echo(
        args,
        argv,
        {args.out: file_sha256(args.out)},
        model_fingerprint=model.fingerprint(),
        sequences={k: v.frames for k, v in outputs.items()},
    )


def _paired(data: Dataset, generated: dict[str, GestureOutput]):
    pairs = []
    for sid, out in generated.items():
        try:
            s = data.by_id(sid)
        except KeyError:
            raise RefusedError(f"generated sequence {sid!r} has no counterpart in the real dataset") from None
        if out.frames != s.frames:
            raise RefusedError(f"sequence {sid!r}: {out.frames} generated frames vs {s.frames} real frames")
        pairs.append((s, out.motion))
    if not pairs:
        raise RefusedError("motion file holds no sequences")
    return pairs


def cmd_eval(args, argv):
    wanted = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = sorted(set(wanted) - set(ALL_METRICS))
    if unknown:
        raise RefusedError(f"unknown metrics {unknown}; choose from {list(ALL_METRICS)}")
    data = read_dataset(args.real)
    if "srgr" in wanted and not data.manifest.has_relevance:
        raise RefusedError(
            "SRGR is not applicable: the real dataset carries no semantic relevance annotations"
        )
    pairs = _paired(data, read_motion_file(args.gen))
    real = [s.motion() for s, _ in pairs]
    gen = [g for _, g in pairs]
    report = M.MetricReport(
        hashes={"real": file_sha256(args.real), "gen": file_sha256(args.gen)},
        parameters={"metrics": wanted, "sequences": [s.clip_id for s, _ in pairs]},
    )
    if "fgd" in wanted:
        if not args.model:
            raise RefusedError("FGD needs --model to supply the frozen motion encoders")
        model = load_generator(args.model)
        report.fgd = M.fgd(real, gen, M.MotionEmbedder(model.hands, model.body))
        report.hashes["model"] = file_sha256(args.model)
        report.parameters["fgd_embedder"] = "frozen hand and body encoders, flattened latents"
    if "bc" in wanted:
        scores = []
        for s, g in pairs:
            beats = M.audio_beats_from_onsets(s.features.audio, data.manifest.frame_rate)
            if beats.size == 0:
                continue
            if M.motion_beat_times(g, frame_rate=data.manifest.frame_rate).size == 0:
                report.warnings.append(f"{s.clip_id}: no motion beats detected, BC counted as 0")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", M.NoMotionBeatsWarning)
                scores.append(M.beat_consistency(g, beats, sigma=args.sigma, frame_rate=data.manifest.frame_rate))
        if not scores:
            raise RefusedError("no audio beats found in the selected clips")
        report.bc = float(np.mean(scores))
        report.parameters["bc_sigma"] = args.sigma
    if "div" in wanted:
        report.diversity = M.diversity(gen)
    if "srgr" in wanted:
        report.srgr = M.srgr_pooled(real, gen, [s.features.relevance for s, _ in pairs], args.delta)
        report.parameters["srgr_delta"] = args.delta
        report.parameters["srgr_formula"] = (
            "sum_t sum_j lambda_t [L1(g_tj - gen_tj) < delta] / (J sum_t lambda_t), pooled over clips"
        )
    if args.report:
        path = Path(args.report)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report.to_json() + "\n")
    outputs = {args.report: file_sha256(args.report)} if args.report else {}
    return _echo(args, argv, outputs, report=report.to_dict())


def cmd_gradcheck(args, argv):
    results = run_oracles(args.module, args.seeds)
    rows = [
        {"case": r.name, "group": r.group, "seed": r.seed, "error": r.error, "tolerance": r.tolerance, "passed": r.passed}
        for r in results
    ]
    control = negative_control()
    for r in rows:
        log.info("%-28s seed %d  %.2e  %s", r["case"], r["seed"], r["error"], "pass" if r["passed"] else "FAIL")
    by_case: dict[str, dict] = {}
    for r in rows:
        c = by_case.setdefault(r["case"], {"group": r["group"], "worst": 0.0, "tolerance": r["tolerance"], "passed": True})
        c["worst"] = max(c["worst"], r["error"])
        c["passed"] &= r["passed"]
    for name, c in by_case.items():
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {name:28s} worst {c['worst']:.2e}  tol {c['tolerance']:.0e}",
              file=sys.stderr)
    detected = control > CORE_TOL
    return _echo(
        args,
        argv,
        {},
        passed=all(r["passed"] for r in rows) and detected,
        cases=by_case,
        negative_control={"error": control, "detected": detected},
    )


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semges", description="Two-stage co-speech gesture pipeline.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--clips", type=int, default=32)
    s.add_argument("--speakers", type=int, default=4)
    s.add_argument("--frames", type=int, default=34)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-relevance", action="store_true", help="omit relevance annotations")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train-prior", help="train one motion prior")
    s.add_argument("--data", required=True)
    s.add_argument("--part", required=True, choices=("hands", "body"))
    s.add_argument("--steps", type=int, default=200)
    s.add_argument("--batch-size", type=int, default=4)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--log", help="loss CSV (default: next to --out)")
    s.set_defaults(func=cmd_train_prior)

    s = sub.add_parser("train-gen", help="train the generator against frozen priors")
    s.add_argument("--data", required=True)
    s.add_argument("--prior-hands", required=True)
    s.add_argument("--prior-body", required=True)
    s.add_argument("--steps", type=int, default=300)
    s.add_argument("--batch-size", type=int, default=4)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--log", help="loss CSV (default: next to --out)")
    s.add_argument("--no-coherence", action="store_true")
    s.add_argument("--no-relevance", action="store_true")
    s.set_defaults(func=cmd_train_gen)

    s = sub.add_parser("generate", help="generate motion for dataset features")
    s.add_argument("--model", required=True)
    s.add_argument("--features", required=True, help="dataset file supplying audio, text and speaker")
    s.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    s.add_argument("--clip-ids", nargs="+")
    s.add_argument("--concat", action="store_true", help="join the selected clips into one long stream")
    s.add_argument("--length", type=int, default=34, help="clip length in frames")
    s.add_argument("--overlap", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--format", default="sgds", choices=("sgds", "csv"))
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("eval", help="score generated motion against real data")
    s.add_argument("--real", required=True)
    s.add_argument("--gen", required=True)
    s.add_argument("--metrics", default="fgd,bc,div,srgr")
    s.add_argument("--model", help="generator checkpoint whose priors embed clips for FGD")
    s.add_argument("--report")
    s.add_argument("--sigma", type=float, default=M.DEFAULT_SIGMA)
    s.add_argument("--delta", type=float, default=M.DEFAULT_DELTA)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="run the finite-difference oracle suite")
    s.add_argument("--module", default="all", choices=("all",) + GROUPS)
    s.add_argument("--seeds", type=int, default=5)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=os.environ.get("SEMGES_LOG", "WARNING").upper(), stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        result = args.func(args, argv)
    except RefusedError as exc:
        print(json.dumps({"error": "refused", "command": args.command, "message": str(exc)}))
        return 2
    except Exception as exc:  # noqa: BLE001  every failure becomes a JSON error
        log.debug("command failed", exc_info=True)
        print(json.dumps({"error": type(exc).__name__, "command": args.command, "message": str(exc)}))
        return 1
    return 0 if result.get("passed", True) else 1


if __name__ == "__main__":
    sys.exit(main())
