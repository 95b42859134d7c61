"""Finite-difference verification of every differentiable op and of the full
gated cross-attention block. Used by the `gradcheck` CLI command and the
acceptance suite.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .fusion import FusionConfig, GCABlock
from .seeds import generator

H = 1e-5
TOL = 1e-4


def _check(name, build, arrays, trials, seed, results):
    """build(tensors) -> scalar Tensor; arrays regenerated per trial."""
    worst = 0.0
    for trial in range(trials):
        rng = generator(seed, name, trial)
        vals = [a(rng) for a in arrays]
        tensors = [Tensor(v, requires_grad=True) for v in vals]
        ad.reset_tape()
        loss = build(tensors)
        ad.backward(loss)
        analytic = [t.grad if t.grad is not None else np.zeros_like(t.data)
                    for t in tensors]

        def f():
            for t, v in zip(tensors, vals):
                t.data = v
            with ad.no_grad():
                return float(build(tensors).data)

        numeric = ad.numeric_gradient(f, vals, H)
        for a_g, n_g in zip(analytic, numeric):
            worst = max(worst, ad.gradient_relative_error(a_g, n_g))
    ad.reset_tape()
    results.append((name, worst, worst < TOL))


def run_gradcheck(seed: int = 0, trials: int = 20):
    """Returns [(op name, worst relative error, passed)]."""
    results = []
    mat = lambda r, c: (lambda rng: rng.normal(size=(r, c)))
    vec = lambda n: (lambda rng: rng.normal(size=n))
    _check("add", lambda ts: ad.sum_(ad.mul(ad.add(ts[0], ts[1]), ts[0])),
           [mat(3, 4), mat(3, 4)], trials, seed, results)
    _check("sub", lambda ts: ad.sum_(ad.mul(ad.sub(ts[0], ts[1]), ts[1])),
           [mat(3, 4), mat(3, 4)], trials, seed, results)
    _check("mul", lambda ts: ad.sum_(ad.mul(ts[0], ts[1])),
           [mat(3, 4), mat(3, 4)], trials, seed, results)
    _check("div", lambda ts: ad.sum_(ad.div(ts[0], ts[1])),
           [mat(3, 4), lambda rng: rng.normal(size=(3, 4)) + 3.0],
           trials, seed, results)
    _check("matmul", lambda ts: ad.sum_(ad.mul(ts[0] @ ts[1], ts[0] @ ts[1])),
           [mat(3, 4), mat(4, 2)], trials, seed, results)
    _check("transpose", lambda ts: ad.sum_(ad.mul(ad.transpose(ts[0]), ad.transpose(ts[0]))),
           [mat(3, 4)], trials, seed, results)
    _check("sum", lambda ts: ad.sum_(ad.mul(ad.sum_(ts[0], axis=1, keepdims=True), ts[0])),
           [mat(3, 4)], trials, seed, results)
    _check("mean", lambda ts: ad.sum_(ad.mul(ad.mean(ts[0], axis=0, keepdims=True), ts[0])),
           [mat(3, 4)], trials, seed, results)
    _check("sqrt", lambda ts: ad.sum_(ad.sqrt(ts[0])),
           [lambda rng: rng.uniform(0.5, 3.0, (3, 4))], trials, seed, results)
    _check("exp", lambda ts: ad.sum_(ad.exp(ts[0])), [mat(3, 4)],
           trials, seed, results)
    _check("log", lambda ts: ad.sum_(ad.log(ts[0])),
           [lambda rng: rng.uniform(0.5, 3.0, (3, 4))], trials, seed, results)
    _check("tanh", lambda ts: ad.sum_(ad.mul(ts[0], ad.tanh(ts[0]))),
           [mat(3, 4)], trials, seed, results)
    _check("gelu", lambda ts: ad.sum_(ad.gelu(ts[0])), [mat(3, 4)],
           trials, seed, results)
    _check("col_slice", lambda ts: ad.sum_(ad.mul(ad.col_slice(ts[0], 1, 3),
                                                  ad.col_slice(ts[0], 1, 3))),
           [mat(3, 4)], trials, seed, results)
    _check("concat_cols", lambda ts: ad.sum_(ad.mul(ad.concat_cols([ts[0], ts[1]]),
                                                    ad.concat_cols([ts[0], ts[1]]))),
           [mat(3, 2), mat(3, 3)], trials, seed, results)
    _check("embedding", lambda ts: ad.sum_(ad.mul(ad.embedding(ts[0], [0, 2, 1, 2]),
                                                  ad.embedding(ts[0], [0, 2, 1, 2]))),
           [mat(4, 3)], trials, seed, results)
    _check("softmax", lambda ts: ad.sum_(ad.mul(ad.softmax(ts[0]), ts[0])),
           [mat(3, 5)], trials, seed, results)
    _check("layer_norm",
           lambda ts: ad.sum_(ad.mul(ad.layer_norm(ts[0], ts[1], ts[2]), ts[0])),
           [mat(3, 5), vec(5), vec(5)], trials, seed, results)
    _check("cosine_similarity",
           lambda ts: ad.sum_(ad.cosine_similarity(ts[0], ts[1])),
           [mat(3, 5), mat(3, 5)], trials, seed, results)
    _check("mse_loss", lambda ts: ad.mse_loss(ts[0], ts[1]),
           [mat(3, 4), mat(3, 4)], trials, seed, results)
    _check("cross_entropy", lambda ts: ad.cross_entropy(ts[0], [1, 0, 3]),
           [mat(3, 5)], trials, seed, results)

    # full gated cross-attention block: loss over every block parameter
    cfg = FusionConfig(dim=6, heads=2, ffn_hidden=10)
    lam = np.array([0.3, 0.8, 0.5])
    for trial in range(trials):
        rng = generator(seed, "gca_block", trial)
        block = GCABlock(cfg, rng)
        block.alpha.data = np.array(rng.normal() * 0.5)
        block.alpha_ffn.data = np.array(rng.normal() * 0.5)
        z0 = rng.normal(size=(3, 6))
        ev0 = rng.normal(size=(4, 6))
        params = block.parameters()
        arrays = [p.data for p in params]

        def forward():
            out = block(Tensor(z0), Tensor(ev0), lam)
            return ad.sum_(ad.mul(out, out))

        ad.reset_tape()
        ad.backward(forward())
        analytic = [p.grad if p.grad is not None else np.zeros_like(p.data)
                    for p in params]

        def f():
            with ad.no_grad():
                return float(forward().data)

        numeric = ad.numeric_gradient(f, arrays, H)
        worst = max(ad.gradient_relative_error(a, n)
                    for a, n in zip(analytic, numeric))
        if trial == 0 or worst > results_gca[1]:
            results_gca = ("gca_block", worst, worst < TOL)
        for p in params:
            p.grad = None
        ad.reset_tape()
    results.append(results_gca)
    return results
