"""Recognition scoring: edit distance, corpus WER, relative error-rate
reduction, score-vs-SNR sweeps and the model/condition evaluation matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from . import fusion as fus
from . import router as rt
from .data import corrupt_corpus
from .seeds import derive


def edit_distance(ref, hyp):
    """Minimum-cost token alignment; returns (substitutions, insertions,
    deletions). Equal-cost choices break toward substitution, then deletion,
    then insertion."""
    ref = list(ref)
    hyp = list(hyp)
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = i
    for j in range(1, m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        row = d[i]
        prev = d[i - 1]
        ri = ref[i - 1]
        for j in range(1, m + 1):
            row[j] = min(prev[j - 1] + (ri != hyp[j - 1]),
                         prev[j] + 1,
                         row[j - 1] + 1)
    subs = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            subs += ref[i - 1] != hyp[j - 1]
            i -= 1
            j -= 1
        elif i > 0 and d[i][j] == d[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return subs, ins, dels


def wer(refs, hyps) -> float:
    """Corpus-level word error rate in percent: errors are pooled over the
    whole corpus before dividing by the total reference token count."""
    if len(refs) != len(hyps):
        raise ValueError(f"got {len(refs)} references but {len(hyps)} hypotheses")
    total_ref = sum(len(r) for r in refs)
    if total_ref == 0:
        raise ValueError("empty reference corpus")
    errors = 0
    for r, h in zip(refs, hyps):
        s, i, d = edit_distance(r, h)
        errors += s + i + d
    return 100.0 * errors / total_ref


def rerr(baseline_wer: float, ours_wer: float) -> float:
    """Relative error-rate reduction percent, 100*(base-ours)/base, rounded
    half-up to two decimals."""
    if baseline_wer <= 0:
        raise ValueError("RERR needs a positive baseline WER")
    value = 100.0 * (baseline_wer - ours_wer) / baseline_wer
    return float(Decimal(repr(value)).quantize(Decimal("0.01"), ROUND_HALF_UP))


# -------------------------------------------------------------- score sweep


def score_sweep(router_model, samples, noise_types, snrs_db, seed: int = 0):
    """Mean s_v per (noise type, SNR) over a sample list.

    Returns rows with noise_type, snr_db (None for the shared clean column),
    mean_s_v, n_utterances, n_patches. The clean column is computed once
    and repeated per type unchanged.
    """
    def mean_sv(sample_list):
        vals = [rt.score(router_model, s.audio, s.video).s_v for s in sample_list]
        flat = np.concatenate(vals)
        return float(flat.mean()), len(sample_list), int(flat.size)

    clean_mean, n_utt, n_patch = mean_sv(samples)
    rows = []
    for ntype in noise_types:
        rows.append({"noise_type": ntype, "snr_db": None, "mean_s_v": clean_mean,
                     "n_utterances": n_utt, "n_patches": n_patch})
        for snr in snrs_db:
            corrupted = corrupt_corpus(samples, ntype, snr,
                                       derive(seed, "sweep", ntype, snr))
            m, nu, npc = mean_sv(corrupted)
            rows.append({"noise_type": ntype, "snr_db": snr, "mean_s_v": m,
                         "n_utterances": nu, "n_patches": npc})
    return rows


def sweep_csv(rows) -> str:
    lines = ["noise_type,snr_db,mean_s_v,n_utterances,n_patches"]
    for r in rows:
        snr = "clean" if r["snr_db"] is None else repr(float(r["snr_db"]))
        lines.append(f"{r['noise_type']},{snr},{repr(r['mean_s_v'])},"
                     f"{r['n_utterances']},{r['n_patches']}")
    return "\n".join(lines) + "\n"


def sweep_svg(rows) -> str:
    """Bar chart of mean s_v per condition, emitted as standalone SVG text."""
    groups = {}
    for r in rows:
        groups.setdefault(r["noise_type"], []).append(r)
    bar_w, gap, group_gap, h = 34, 6, 30, 220
    base_y, label_y = h + 30, h + 46
    parts = []
    x = 40
    for ntype, rs in groups.items():
        parts.append(
            f'<text x="{x}" y="{label_y + 18}" font-size="12" '
            f'font-family="sans-serif">{ntype}</text>'
        )
        for r in rs:
            v = max(0.0, min(1.0, r["mean_s_v"]))
            bh = int(v * h)
            label = "clean" if r["snr_db"] is None else f'{r["snr_db"]:g}dB'
            parts.append(
                f'<rect x="{x}" y="{base_y - bh}" width="{bar_w}" height="{bh}" '
                f'fill="#4878a8"/>'
            )
            parts.append(
                f'<text x="{x}" y="{label_y}" font-size="10" '
                f'font-family="sans-serif">{label}</text>'
            )
            parts.append(
                f'<text x="{x}" y="{base_y - bh - 4}" font-size="9" '
                f'font-family="sans-serif">{v:.2f}</text>'
            )
            x += bar_w + gap
        x += group_gap
    width = x + 20
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{label_y + 30}" viewBox="0 0 {width} {label_y + 30}">\n'
        f'<text x="40" y="18" font-size="13" font-family="sans-serif">'
        f'mean audio-reliability score by noise condition</text>\n'
        + "\n".join(parts)
        + "\n</svg>\n"
    )


# ---------------------------------------------------------------- run matrix


@dataclass
class EvalReport:
    baseline: str
    rows: list = field(default_factory=list)
    # each row: model, noise_type, snr_db (None = clean), n_utterances,
    # wer, mean_s_v (None for router-free models), rerr_vs_baseline

    def to_csv(self) -> str:
        lines = ["model,noise_type,snr_db,n_utterances,wer,mean_s_v,rerr_vs_baseline"]
        for r in self.rows:
            snr = "clean" if r["snr_db"] is None else repr(float(r["snr_db"]))
            sv = "" if r["mean_s_v"] is None else repr(r["mean_s_v"])
            rr = "" if r["rerr_vs_baseline"] is None else repr(r["rerr_vs_baseline"])
            lines.append(f"{r['model']},{r['noise_type']},{snr},"
                         f"{r['n_utterances']},{repr(r['wer'])},{sv},{rr}")
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        lines = [
            f"| model | condition | WER % | mean s_v | RERR vs {self.baseline} % |",
            "|---|---|---|---|---|",
        ]
        for r in self.rows:
            cond = ("clean" if r["snr_db"] is None
                    else f"{r['noise_type']} {r['snr_db']:g} dB")
            sv = "" if r["mean_s_v"] is None else f"{r['mean_s_v']:.3f}"
            rr = "" if r["rerr_vs_baseline"] is None else f"{r['rerr_vs_baseline']:.2f}"
            lines.append(f"| {r['model']} | {cond} | {r['wer']:.2f} | {sv} | {rr} |")
        return "\n".join(lines) + "\n"

    def cell(self, model, noise_type, snr_db):
        for r in self.rows:
            if (r["model"] == model and r["snr_db"] == snr_db
                    and r["noise_type"] == noise_type):
                return r
        raise KeyError((model, noise_type, snr_db))

    def averages(self, model):
        """(mean WER over all conditions, mean WER over noisy conditions)."""
        all_w = [r["wer"] for r in self.rows if r["model"] == model]
        noisy = [r["wer"] for r in self.rows
                 if r["model"] == model and r["snr_db"] is not None]
        return float(np.mean(all_w)), float(np.mean(noisy))


def transcribe(model, router_model, samples, max_len: int = 10):
    """Greedy transcripts plus mean s_v (None for router-free variants)."""
    uses_gate = model.cfg.variant != "self_attn"
    gate_variant = "sv" if model.cfg.variant == "ours" else model.cfg.variant
    hyps = []
    svs = []
    for s in samples:
        if uses_gate:
            scores = rt.score(router_model, s.audio, s.video)
            svs.append(scores.s_v)
            lam_fn = lambda n, sc=scores: rt.local_gate(sc, n, gate_variant)
        else:
            lam_fn = None
        hyps.append(fus.greedy_decode(model, s.audio, s.video, lam_fn, max_len))
    mean_sv = float(np.concatenate(svs).mean()) if svs else None
    return hyps, mean_sv


def run_matrix(models: dict, router_model, samples, noise_types, snrs_db,
               baseline: str = "self_attn", seed: int = 0,
               max_len: int = 10) -> EvalReport:
    """Evaluate every model under clean plus each (noise type, SNR) condition.

    models maps a display name to a FusionModel. RERR columns compare
    against `baseline` under the same condition and are empty for the
    baseline itself (and undefined when the baseline WER is 0).
    """
    if baseline not in models:
        raise ValueError(f"baseline {baseline!r} missing from models")
    refs = [list(s.tokens) for s in samples]
    conditions = [("none", None)] + [
        (t, s) for t in noise_types for s in snrs_db
    ]
    report = EvalReport(baseline=baseline)
    for ntype, snr in conditions:
        if snr is None:
            cond_samples = samples
        else:
            cond_samples = corrupt_corpus(samples, ntype, snr,
                                          derive(seed, "eval", ntype, snr))
        wers = {}
        for name, model in models.items():
            hyps, mean_sv = transcribe(model, router_model, cond_samples, max_len)
            wers[name] = (wer(refs, hyps), mean_sv)
        base_wer = wers[baseline][0]
        for name in models:
            w, mean_sv = wers[name]
            rr = None
            if name != baseline and base_wer > 0:
                rr = rerr(base_wer, w)
            report.rows.append({
                "model": name, "noise_type": ntype, "snr_db": snr,
                "n_utterances": len(cond_samples), "wer": w,
                "mean_s_v": mean_sv, "rerr_vs_baseline": rr,
            })
    return report
