"""Finite-difference verification used by the `gradcheck` CLI verb.

Checks both gradient paths at double precision on reduced sizes: the
point-set encoder through encode_batch/encode_backward, and the denoiser
chain through the generic network backward. The negative control flips
the sign of one analytic gradient entry and must register as a large
disagreement, proving the comparison itself has teeth.
"""

from __future__ import annotations

import numpy as np

from ..encoder import (
    EncoderConfig,
    encode_batch,
    encode_backward,
    init_encoder_params,
    plan_frame,
)
from ..netcore import (
    ParameterStore,
    backward,
    finite_difference_check,
    forward,
    grad_check,
)
from ..policy import DenoiserConfig, make_denoiser

__all__ = ["run_gradcheck"]

SMALL_ENC = EncoderConfig(
    centroids=(4, 2),
    radii=(0.06, 0.18),
    neighbor_cap=3,
    mlp1=(5, 5),
    mlp2=(6, 6),
    global_width=7,
    t_o=2,
)
SMALL_DEN = DenoiserConfig(t_p=4, a_dim=2, hidden=(8, 8), time_embed=4)
M_CHANNELS = 2
PROPRIO_DIM = 3


def _encoder_setup(seed: int):
    store = ParameterStore(np.float64)
    init_encoder_params(
        store, np.random.default_rng(seed), SMALL_ENC, M_CHANNELS, PROPRIO_DIM
    )
    rng = np.random.default_rng(seed + 1)
    plans = []
    pros = []
    for _ in range(2):
        frames = [
            plan_frame(
                rng.uniform(-0.1, 0.1, size=(30, 3)),
                rng.uniform(-1.0, 1.0, size=(30, M_CHANNELS)),
                SMALL_ENC,
            )
            for _ in range(SMALL_ENC.t_o)
        ]
        plans.append(frames)
        pros.append(rng.uniform(-1.0, 1.0, size=SMALL_ENC.t_o * PROPRIO_DIM))
    return store, plans, np.stack(pros)


def _encoder_errors(seed: int) -> tuple[float, float]:
    store, plans, pro = _encoder_setup(seed)

    def loss():
        out, _ = encode_batch(plans, pro, store, SMALL_ENC)
        return 0.5 * float(np.sum(out.astype(np.float64) ** 2))

    out, cache = encode_batch(plans, pro, store, SMALL_ENC)
    store.zero_grads()
    encode_backward(cache, out, store)
    analytic = {n: store.grads[n].copy() for n in store.names()}
    err = finite_difference_check(loss, analytic, store, h=1e-5)

    poisoned = {n: g.copy() for n, g in analytic.items()}
    name = sorted(poisoned)[0]
    flat = poisoned[name].reshape(-1)
    flat[0] = -flat[0] if flat[0] != 0.0 else 1.0
    control = finite_difference_check(loss, poisoned, store, h=1e-5)
    return err, control


def _denoiser_error(seed: int) -> float:
    s_dim = 5
    net = make_denoiser(SMALL_DEN, s_dim)
    store = ParameterStore(np.float64)
    net.init_params(store, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    x = rng.standard_normal(SMALL_DEN.t_p * SMALL_DEN.a_dim)
    cond = rng.standard_normal(s_dim)
    return grad_check(net, store, x, extras={"cond": cond, "k": 3})


def run_gradcheck(seed: int = 0) -> dict:
    enc_err, control = _encoder_errors(seed)
    den_err = _denoiser_error(seed + 100)
    passed = enc_err < 1e-3 and den_err < 1e-3 and control > 1e-1
    return {
        "encoder_max_rel_err": enc_err,
        "denoiser_max_rel_err": den_err,
        "negative_control_err": control,
        "passed": passed,
    }
