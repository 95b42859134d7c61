"""Command-line entry point.

Commands (one executable, subcommand style):

    gen-data        render the synthetic corpus to <out>
    pretrain-router pretrain the reliability router on the clean train split
    finetune        fine-tune a recognizer variant against a frozen router
    eval            WER/RERR matrix over models and noise conditions
    sweep-scores    mean reliability score per (noise type, SNR)
    ablate          train and evaluate all variants under both conditions
    gradcheck       finite-difference check of every op

All randomness fans out from the config's single seed; reruns with the same
config and seed produce byte-identical primary artifacts. Timestamps only
ever go to the run.log sidecar. Errors exit nonzero with one
machine-parsable line on stderr: `error: <code>: <message>`.

RGF_THREADS (default 1) caps the worker processes `ablate` uses.
"""

from __future__ import annotations

import argparse
import datetime
import os
import sys
from pathlib import Path

from . import config as cfgmod
from . import data as dat
from . import evaluation as ev
from . import fusion as fus
from . import router as rt
from . import training as tr
from .gradcheck import run_gradcheck
from .seeds import derive


class CommandError(Exception):
    def __init__(self, code, message):
        self.code = code
        super().__init__(message)


# CLI flag token -> TrainConfig.noise_condition value
CONDITIONS = {"clean": "clean", "noisy": "noisy_0db_random"}


def _log(out_dir: Path, message: str):
    stamp = datetime.datetime.now().isoformat(timespec="seconds")
    with open(out_dir / "run.log", "a") as f:
        f.write(f"{stamp} {message}\n")


def _prepare_out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config(args) -> dict:
    try:
        return cfgmod.load(args.config)
    except FileNotFoundError:
        raise CommandError("config-missing", f"config file not found: {args.config}")
    except cfgmod.ConfigError as e:
        raise CommandError("config-invalid", str(e))


def _write_resolved(out: Path, resolved: dict):
    (out / "resolved_config.json").write_text(cfgmod.dumps_resolved(resolved))


def _read_corpus_dir(corpus_dir, split: str):
    path = Path(corpus_dir) / f"corpus_{split}.rgfc"
    if not path.exists():
        raise CommandError("corpus-missing", f"no corpus file at {path}")
    try:
        return dat.read_corpus(path)
    except dat.CorpusVersionError as e:
        raise CommandError("corpus-version", str(e))
    except dat.CorpusFormatError as e:
        raise CommandError("corpus-format", str(e))


def _load_router(path, resolved):
    p = Path(path)
    if not p.exists():
        raise CommandError("checkpoint-missing", f"no router checkpoint at {p}")
    try:
        return rt.load_router(p, expect=cfgmod.router_config(resolved))
    except Exception as e:
        raise CommandError("checkpoint-invalid", str(e))


# ----------------------------------------------------------------- commands


def cmd_gen_data(args):
    resolved = _load_config(args)
    out = _prepare_out(args)
    corpus_cfg = cfgmod.corpus_config(resolved)
    train, test = dat.gen_corpus(corpus_cfg)
    dat.write_corpus(out / "corpus_train.rgfc", corpus_cfg, train)
    dat.write_corpus(out / "corpus_test.rgfc", corpus_cfg, test)
    _write_resolved(out, resolved)
    _log(out, f"gen-data: {len(train)} train / {len(test)} test utterances")
    print(f"wrote {len(train)} train and {len(test)} test utterances to {out}")
    return 0


def cmd_pretrain_router(args):
    resolved = _load_config(args)
    out = _prepare_out(args)
    _, train = _read_corpus_dir(args.corpus, "train")
    model, curve = tr.pretrain_router(train, cfgmod.pretrain_config(resolved),
                                      cfgmod.router_config(resolved))
    rt.save_router(model, out / "router.rgfr")
    tr.write_curve(out / "pretrain_curve.csv", curve, tr.PRETRAIN_COLUMNS)
    _write_resolved(out, resolved)
    _log(out, f"pretrain-router: {len(curve)} steps")
    if curve:
        print(f"pretrained router for {len(curve)} steps, "
              f"final total loss {curve[-1]['loss_total']:.4f}")
    else:
        print("pretrained router for 0 steps (returned initialization)")
    return 0


def cmd_finetune(args):
    resolved = _load_config(args)
    out = _prepare_out(args)
    _, train = _read_corpus_dir(args.corpus, "train")
    router_model = _load_router(args.router, resolved)
    fusion_cfg = cfgmod.fusion_config(resolved, args.variant)
    seed = derive(cfgmod.section_seed(resolved, "finetune"), "finetune",
                  args.variant, args.condition, args.seed_offset)
    train_cfg = cfgmod.finetune_config(resolved, CONDITIONS[args.condition],
                                       seed=seed)
    model, curve = tr.finetune(train, router_model, train_cfg, fusion_cfg)
    name = f"model_{args.variant}_{args.condition}.rgfm"
    fus.save_fusion(model, out / name)
    tr.write_curve(out / f"finetune_{args.variant}_{args.condition}.csv",
                   curve, tr.FINETUNE_COLUMNS)
    _write_resolved(out, resolved)
    _log(out, f"finetune: {args.variant}/{args.condition} {len(curve)} steps")
    if curve:
        print(f"fine-tuned {args.variant} ({args.condition}): "
              f"final token accuracy {curve[-1]['token_acc']:.3f}, saved {name}")
    else:
        print(f"fine-tuned {args.variant} ({args.condition}) for 0 steps, saved {name}")
    return 0


def _load_models(model_args, resolved):
    models = {}
    for arg in model_args:
        if "=" not in arg:
            raise CommandError("bad-argument",
                               f"--model expects variant=path, got {arg!r}")
        variant, path = arg.split("=", 1)
        if variant not in fus.VARIANTS:
            raise CommandError("bad-argument", f"unknown variant {variant!r}")
        p = Path(path)
        if not p.exists():
            raise CommandError("checkpoint-missing", f"no model checkpoint at {p}")
        try:
            models[variant] = fus.load_fusion(
                p, expect=cfgmod.fusion_config(resolved, variant))
        except Exception as e:
            raise CommandError("checkpoint-invalid", str(e))
    return models


def cmd_eval(args):
    resolved = _load_config(args)
    out = _prepare_out(args)
    _, test = _read_corpus_dir(args.corpus, "test")
    router_model = _load_router(args.router, resolved)
    models = _load_models(args.model, resolved)
    if not models:
        raise CommandError("bad-argument", "eval needs at least one --model")
    baseline = args.baseline
    if baseline not in models:
        baseline = next(iter(models))
    e = resolved["eval"]
    report = ev.run_matrix(models, router_model, test, e["noise_types"],
                           e["snrs_db"], baseline=baseline,
                           seed=cfgmod.section_seed(resolved, "eval"),
                           max_len=e["max_decode_len"])
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.md").write_text(report.to_markdown())
    _write_resolved(out, resolved)
    _log(out, f"eval: {len(report.rows)} report rows")
    print(report.to_markdown())
    return 0


def cmd_sweep_scores(args):
    resolved = _load_config(args)
    out = _prepare_out(args)
    _, test = _read_corpus_dir(args.corpus, "test")
    router_model = _load_router(args.router, resolved)
    e = resolved["eval"]
    rows = ev.score_sweep(router_model, test, e["noise_types"], e["snrs_db"],
                          seed=cfgmod.section_seed(resolved, "eval"))
    (out / "score_sweep.csv").write_text(ev.sweep_csv(rows))
    (out / "score_sweep.svg").write_text(ev.sweep_svg(rows))
    _write_resolved(out, resolved)
    _log(out, f"sweep-scores: {len(rows)} rows")
    for r in rows:
        cond = "clean" if r["snr_db"] is None else f"{r['snr_db']:g} dB"
        print(f"{r['noise_type']:>10} {cond:>8}: mean s_v = {r['mean_s_v']:.4f}")
    return 0


def _ablate_job(payload):
    """One (variant, condition) fine-tune; top level so it pickles."""
    resolved, corpus_dir, router_path, out_dir, variant, condition = payload
    _, train = dat.read_corpus(Path(corpus_dir) / "corpus_train.rgfc")
    router_model = rt.load_router(router_path)
    fusion_cfg = cfgmod.fusion_config(resolved, variant)
    seed = derive(cfgmod.section_seed(resolved, "finetune"), "finetune",
                  variant, condition, 0)
    train_cfg = cfgmod.finetune_config(resolved, CONDITIONS[condition], seed=seed)
    model, curve = tr.finetune(train, router_model, train_cfg, fusion_cfg)
    out = Path(out_dir)
    name = f"model_{variant}_{condition}.rgfm"
    fus.save_fusion(model, out / name)
    tr.write_curve(out / f"finetune_{variant}_{condition}.csv", curve,
                   tr.FINETUNE_COLUMNS)
    return variant, condition, name


def cmd_ablate(args):
    resolved = _load_config(args)
    out = _prepare_out(args)
    _, test = _read_corpus_dir(args.corpus, "test")
    router_model = _load_router(args.router, resolved)
    threads = int(os.environ.get("RGF_THREADS", "1"))
    if threads < 1:
        raise CommandError("bad-argument", "RGF_THREADS must be >= 1")
    jobs = [
        (resolved, str(args.corpus), str(args.router), str(out), variant, condition)
        for condition in ("clean", "noisy")
        for variant in fus.VARIANTS
    ]
    if threads > 1:
        import concurrent.futures as cf

        with cf.ProcessPoolExecutor(max_workers=threads) as pool:
            done = list(pool.map(_ablate_job, jobs))
    else:
        done = [_ablate_job(j) for j in jobs]
    _log(out, f"ablate: trained {len(done)} models with RGF_THREADS={threads}")

    e = resolved["eval"]
    sections = []
    for condition in ("clean", "noisy"):
        models = {
            variant: fus.load_fusion(out / f"model_{variant}_{condition}.rgfm")
            for variant in fus.VARIANTS
        }
        report = ev.run_matrix(models, router_model, test, e["noise_types"],
                               e["snrs_db"], baseline="self_attn",
                               seed=cfgmod.section_seed(resolved, "eval"),
                               max_len=e["max_decode_len"])
        (out / f"ablation_{condition}.csv").write_text(report.to_csv())
        counts = {v: sum(p.data.size for p in models[v].parameters())
                  for v in fus.VARIANTS}
        lines = [f"## fine-tuned on {condition} data", "",
                 report.to_markdown(),
                 "parameter counts: "
                 + ", ".join(f"{v}={counts[v]}" for v in fus.VARIANTS), ""]
        sections.append("\n".join(lines))
    (out / "ablation.md").write_text("\n".join(sections))
    _write_resolved(out, resolved)
    print(f"ablation matrix written to {out / 'ablation.md'}")
    return 0


def cmd_gradcheck(args):
    results = run_gradcheck(seed=args.seed)
    ok = True
    for name, err, passed in results:
        print(f"{'PASS' if passed else 'FAIL'} {name}: max rel err {err:.3e}")
        ok = ok and passed
    if not ok:
        raise CommandError("gradcheck-failed", "some gradients disagree")
    return 0


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rgfusion",
                                description="router-gated fusion workbench")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, corpus=False, router=False):
        sp.add_argument("--config", required=True, help="JSON run config")
        sp.add_argument("--out", required=True, help="output directory")
        if corpus:
            sp.add_argument("--corpus", required=True,
                            help="directory holding corpus_{train,test}.rgfc")
        if router:
            sp.add_argument("--router", required=True,
                            help="router checkpoint (.rgfr)")

    sp = sub.add_parser("gen-data", help="render the synthetic corpus")
    common(sp)
    sp.set_defaults(fn=cmd_gen_data)

    sp = sub.add_parser("pretrain-router", help="pretrain the reliability router")
    common(sp, corpus=True)
    sp.set_defaults(fn=cmd_pretrain_router)

    sp = sub.add_parser("finetune", help="fine-tune one recognizer variant")
    common(sp, corpus=True, router=True)
    sp.add_argument("--variant", choices=list(fus.VARIANTS), default="ours")
    sp.add_argument("--condition", choices=sorted(CONDITIONS), default="clean")
    sp.add_argument("--seed-offset", type=int, default=0,
                    help="extra label mixed into the fine-tune seed")
    sp.set_defaults(fn=cmd_finetune)

    sp = sub.add_parser("eval", help="evaluate models over noise conditions")
    common(sp, corpus=True, router=True)
    sp.add_argument("--model", action="append", default=[],
                    metavar="VARIANT=PATH",
                    help="model checkpoint to evaluate (repeatable)")
    sp.add_argument("--baseline", default="self_attn")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("sweep-scores", help="reliability score vs SNR sweep")
    common(sp, corpus=True, router=True)
    sp.set_defaults(fn=cmd_sweep_scores)

    sp = sub.add_parser("ablate", help="train + evaluate all variants")
    common(sp, corpus=True, router=True)
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_gradcheck)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CommandError as e:
        print(f"error: {e.code}: {e}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
