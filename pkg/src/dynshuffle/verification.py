"""Finite-difference verification of every differentiable primitive.

Each entry builds a scalar-valued closure around a probe tensor and compares
the taped gradient with central differences. The straight-through binarize
path is exempt from differencing (its surrogate gradient is checked against
the mask rule exactly), and relu is probed away from its kink.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tape, Tensor, backward, finite_diff_check
from .shuffle import (derive_aux_config, dynshuffle_forward, init_aux_state,
                      orth_reg, rect_reg)

THRESHOLD = 1e-4


def _sum(t):
    return ag.sum_all(t)


def _probe(rng, *shape):
    return Tensor(rng.normal(0, 1, shape).astype(np.float32))


def _away_from_kink(rng, *shape, margin=0.1):
    x = rng.normal(0, 1, shape)
    x = np.where(np.abs(x) < margin, x + np.sign(x + 1e-9) * 2 * margin, x)
    return Tensor(x.astype(np.float32))


def _corrupted_double_grad(x: Tensor) -> Tensor:
    # test fixture: forward is identity, backward reports twice the gradient
    out = Tensor(x.data.copy())
    return ag._record(out, (x,), lambda g: (2.0 * g,), "corrupted")


def gradcheck_cases(seed: int):
    rng = np.random.default_rng(seed)
    cases = []

    w = rng.normal(0, 1, (5, 4)).astype(np.float32)
    cases.append(("matmul", lambda x: _sum(ag.matmul(x, Tensor(w))), _probe(rng, 3, 5)))

    wc = rng.normal(0, 0.5, (4, 2, 3, 3)).astype(np.float32)
    cases.append(("conv2d_grouped(g=2)",
                  lambda x: _sum(ag.conv2d_grouped(x, Tensor(wc), groups=2,
                                                   stride=1, pad=1)),
                  _probe(rng, 2, 4, 5, 5)))
    wd = rng.normal(0, 0.5, (4, 1, 3, 3)).astype(np.float32)
    cases.append(("conv2d_depthwise",
                  lambda x: _sum(ag.conv2d_grouped(x, Tensor(wd), groups=4,
                                                   stride=2, pad=1)),
                  _probe(rng, 2, 4, 6, 6)))
    wp = rng.normal(0, 0.5, (3, 4, 1, 1)).astype(np.float32)
    cases.append(("conv2d_pointwise",
                  lambda x: _sum(ag.conv2d_grouped(x, Tensor(wp))),
                  _probe(rng, 2, 4, 4, 4)))
    conv_in = rng.normal(0, 1, (2, 4, 5, 5)).astype(np.float32)
    cases.append(("conv2d_weight",
                  lambda v: _sum(ag.conv2d_grouped(Tensor(conv_in), v,
                                                   groups=2, pad=1)),
                  Tensor(wc.copy())))

    w1 = rng.normal(0, 0.5, (3, 2, 4)).astype(np.float32)
    cases.append(("conv1d", lambda x: _sum(ag.conv1d(x, Tensor(w1), stride=2, pad=1)),
                  _probe(rng, 2, 2, 9)))

    rng2 = np.random.default_rng(seed + 1)
    bn_mul = rng2.normal(0, 1, (4, 3, 2, 2)).astype(np.float32)

    def bn_train(x):
        st = ag.BatchNormState(3)
        s = Tensor(np.asarray([1.2, 0.8, 1.0], dtype=x.dtype))
        b = Tensor(np.asarray([0.1, -0.2, 0.0], dtype=x.dtype))
        return _sum(ag.mul(ag.batchnorm(x, s, b, st, True), Tensor(bn_mul)))

    cases.append(("batchnorm_train", bn_train, _probe(rng, 4, 3, 2, 2)))

    def bn_eval(x):
        st = ag.BatchNormState(3)
        st.running_mean[:] = [0.3, -0.1, 0.2]
        st.running_var[:] = [1.5, 0.7, 1.1]
        s = Tensor(np.asarray([1.2, 0.8, 1.0], dtype=x.dtype))
        b = Tensor(np.asarray([0.1, -0.2, 0.0], dtype=x.dtype))
        return _sum(ag.batchnorm(x, s, b, st, False))

    cases.append(("batchnorm_eval", bn_eval, _probe(rng, 4, 3, 2, 2)))
    cases.append(("relu", lambda x: _sum(ag.relu(x)), _away_from_kink(rng, 3, 4)))
    cases.append(("global_avg_pool", lambda x: _sum(ag.global_avg_pool(x)),
                  _probe(rng, 2, 3, 4, 4)))

    wa = rng.normal(0, 1, (4, 3)).astype(np.float32)
    ba = rng.normal(0, 1, 3).astype(np.float32)
    cases.append(("affine", lambda x: _sum(ag.affine(x, Tensor(wa), Tensor(ba))),
                  _probe(rng, 5, 4)))

    gm = rng.normal(0, 1, (3, 5)).astype(np.float32)
    cases.append(("row_softmax",
                  lambda x: _sum(ag.mul(ag.row_softmax(x), Tensor(gm))),
                  _probe(rng, 3, 5)))

    labels = rng.integers(0, 4, 6)
    cases.append(("cross_entropy_mean",
                  lambda x: ag.cross_entropy_mean(x, labels), _probe(rng, 6, 4)))

    kb = rng.normal(0, 1, (3, 2)).astype(np.float32)
    kron_mul = rng2.normal(0, 1, (6, 8)).astype(np.float32)
    cases.append(("kron", lambda x: _sum(ag.mul(ag.kron(x, Tensor(kb)),
                                                Tensor(kron_mul))),
                  _probe(rng, 2, 4)))
    cases.append(("avg_pool2d", lambda x: _sum(ag.avg_pool2d(x, 3, 2, 1)),
                  _probe(rng, 2, 3, 6, 6)))
    cases.append(("max_pool2d", lambda x: _sum(ag.max_pool2d(x, 2, 2, 0)),
                  _probe(rng, 2, 3, 4, 4)))
    # the Frobenius-norm composites have large third derivatives; a finer
    # step keeps the central-difference truncation well under the threshold
    cases.append(("orth_reg", lambda x: orth_reg(ag.row_softmax(x)),
                  _probe(rng, 4, 4), 1e-4))
    cases.append(("rect_reg", lambda x: rect_reg(ag.row_softmax(x)),
                  _probe(rng, 5, 3), 1e-4))

    # soft (no-binarize) shuffle path end to end, including the aux net
    cfg = derive_aux_config(8, 2)
    state = init_aux_state(cfg, np.random.default_rng(seed + 2))
    shuf_mul = rng2.normal(0, 1, (2, 8, 3, 3)).astype(np.float32)

    def soft_shuffle(x):
        out, reg, _ = dynshuffle_forward(x, state, cfg, training=False, binarize=False)
        return ag.add(_sum(ag.mul(out, Tensor(shuf_mul))), reg)

    cases.append(("dynshuffle_soft", soft_shuffle, _probe(rng, 2, 8, 3, 3), 1e-4))

    net_w = rng2.normal(0, 1, (3, 4)).astype(np.float32)

    def composed_net(x):
        # smooth end to end; relu's kink-excluded check runs separately
        st = ag.BatchNormState(3)
        s = Tensor(np.ones(3, dtype=x.dtype))
        b = Tensor(np.zeros(3, dtype=x.dtype))
        y = ag.conv2d_grouped(x, Tensor(wp))
        y = ag.batchnorm(y, s, b, st, True)
        pooled = ag.global_avg_pool(y)
        logits = ag.affine(pooled, Tensor(net_w), Tensor(np.zeros(4, dtype=np.float32)))
        return ag.cross_entropy_mean(logits, np.asarray([0, 2]))

    cases.append(("conv_bn_affine_net", composed_net, _probe(rng, 2, 4, 4, 4)))
    return cases


def ste_mask_check(seed: int) -> float:
    """The surrogate gradient must equal upstream ⊙ binary output, exactly."""
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(0, 1, (5, 6)).astype(np.float32), requires_grad=True)
    g = rng.normal(0, 1, (5, 6)).astype(np.float32)
    with Tape() as tape:
        y = ag.binarize_ste(x)
        loss = ag.sum_all(ag.mul(y, Tensor(g)))
    backward(loss, tape)
    expected = g * y.data
    return float(np.max(np.abs(x.grad - expected)))


def run_gradcheck(seed: int = 0, corrupt: bool = False):
    """Check every case; returns (report rows, all_passed)."""
    rows = []
    ok = True
    for case in gradcheck_cases(seed):
        name, fn, probe = case[:3]
        eps = case[3] if len(case) > 3 else 1e-3
        err = finite_diff_check(fn, probe, eps=eps)
        passed = err < THRESHOLD
        ok &= passed
        rows.append({"op": name, "max_rel_err": err, "threshold": THRESHOLD,
                     "pass": passed})
    ste_err = ste_mask_check(seed)
    ste_pass = ste_err == 0.0
    ok &= ste_pass
    rows.append({"op": "binarize_ste_mask", "max_rel_err": ste_err,
                 "threshold": 0.0, "pass": ste_pass})
    if corrupt:
        rng = np.random.default_rng(seed)
        err = finite_diff_check(lambda x: ag.sum_all(_corrupted_double_grad(x)),
                                _probe(rng, 3, 3))
        passed = err < THRESHOLD
        ok &= passed
        rows.append({"op": "corrupted_fixture", "max_rel_err": err,
                     "threshold": THRESHOLD, "pass": passed})
    return rows, ok
