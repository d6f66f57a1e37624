"""Finite-difference checks of every learned module on small seeded shapes."""
from __future__ import annotations

import time

import numpy as np

from .pipeline import Batch, Model, PipelineConfig, forward_losses
from .tensor import add_scalars, gradient_errors, value
from .textgraph import EmbeddingTable, TextGraph, Vocab

TOLERANCE = 1e-3

# module -> (parameter name prefixes, loss components it is checked against)
SUITES = {
    "grounding": (("grounding.",), ("grd",)),
    "phrasal": (("phrasal.",), ("grd",)),
    "detection": (("detection.",), None),  # det_t for every t, relsub, relobj
    "sequential": (("sequential.",), ("cssub", "csobj", "cspred")),
}


def toy_problem(seed=0, n_v=6, c_e=5, c_r=4, d=8, d_cnn=12, n_t=2, hidden=8, std=0.3):
    """A single image with 3 entities, 2 relations and one attribute."""
    rng = np.random.default_rng(seed)
    vocab = Vocab([f"e{i}" for i in range(c_e)], [f"r{i}" for i in range(c_r)])
    cfg = PipelineConfig(
        d=d, d_cnn=d_cnn, n_t=n_t, hidden=hidden, dropout=0.0, init_std=std,
        seed=seed, max_steps=0, max_proposals=n_v,
    )
    tables = EmbeddingTable.build(vocab, d, seed)
    model = Model.init(cfg, vocab, tables)
    # non-zero biases so their gradients are exercised at a generic point
    for name, p in model.params.items():
        if not p.any():
            model.params[name] = std * rng.standard_normal(p.shape)
    entities = [int(x) for x in rng.choice(c_e, size=3, replace=False)]
    relations = [(int(rng.integers(c_r)), 0, 1), (int(rng.integers(c_r)), 2, 1)]
    graph = TextGraph(entities, relations, [("red", 0)])
    feats = rng.standard_normal((n_v, d_cnn))
    batch = Batch(graph, feats, np.ones((3, n_v), dtype=bool), 1)
    # fixed groundings keep the argmax steps out of the objective
    g0 = np.array([0, 2, 4])
    g_final = np.array([1, 2, 5])
    return model, batch, (g0, g_final)


def suite_errors(model, batch, frozen_g, prefixes, components, eps=1e-4):
    fixed = dict(model.params)
    chosen = {k: v for k, v in fixed.items() if k.startswith(prefixes)}
    if components is None:
        components = [f"det_{t}" for t in range(model.cfg.n_t + 1)] + ["relsub", "relobj"]

    def f(params):
        merged = {**fixed, **params}
        losses = forward_losses(model, model.bind(merged), batch, None, frozen_g)
        return add_scalars([losses[c] for c in components])

    return gradient_errors(f, chosen, eps)


def run_all(seed=0, eps=1e-4, **shape):
    """``{suite: {parameter: max relative error}}`` plus the elapsed seconds."""
    start = time.perf_counter()
    model, batch, frozen_g = toy_problem(seed, **shape)
    out = {}
    for name, (prefixes, components) in SUITES.items():
        out[name] = suite_errors(model, batch, frozen_g, prefixes, components, eps)
    return out, time.perf_counter() - start


def report_lines(results, tol=TOLERANCE):
    lines, ok = [], True
    for suite, errs in results.items():
        for param, err in sorted(errs.items()):
            good = err < tol
            ok &= good
            lines.append(f"{'ok  ' if good else 'FAIL'} {suite:<11} {param:<28} {err:.2e}")
    return lines, ok


def loss_value(x):
    return float(np.asarray(value(x)).reshape(-1)[0])
