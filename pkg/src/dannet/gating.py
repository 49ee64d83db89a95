"""Per-pixel gated composition of the two frozen task experts.

A small three-layer conv stack (3 -> 16 -> 16 -> 2, sigmoid head) reads
the degraded image and emits two gate fields in (0, 1): channel 0 weights
the dehazing expert, channel 1 the desnowing expert. The composed output
is the plain weighted sum — the gates are independent sigmoids, not a
softmax, so they need not sum to one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocks import Conv, iter_params, make_conv
from .expert import ExpertNetwork, expert_forward
from .tensor import Tensor, elu, narrow, sigmoid

AGN_WIDTH = 16


@dataclass
class GateMaps:
    """Pair of N,1,H,W gate fields, each strictly inside (0, 1)."""

    w_haze: Tensor
    w_snow: Tensor


@dataclass
class AgnParams:
    conv_a: Conv
    conv_b: Conv
    conv_c: Conv


@dataclass
class DanNet:
    dehaze_expert: ExpertNetwork
    desnow_expert: ExpertNetwork
    agn: AgnParams
    experts_frozen: bool = True
    agn_parameters: dict = field(default_factory=dict, repr=False)

    def refresh_parameters(self):
        self.agn_parameters = {f"agn.{k}": v for k, v in iter_params(self.agn, "")}
        return self.agn_parameters


def build_dan(dehaze_expert: ExpertNetwork, desnow_expert: ExpertNetwork, seed: int,
              dtype=np.float32) -> DanNet:
    if dehaze_expert.task_tag != "dehaze" or desnow_expert.task_tag != "desnow":
        raise ValueError(
            f"expected task tags (dehaze, desnow), got "
            f"({dehaze_expert.task_tag}, {desnow_expert.task_tag})"
        )
    rng = np.random.Generator(np.random.PCG64(seed))
    agn = AgnParams(
        conv_a=make_conv(rng, 3, AGN_WIDTH, 3, dtype=dtype),
        conv_b=make_conv(rng, AGN_WIDTH, AGN_WIDTH, 3, dtype=dtype),
        conv_c=make_conv(rng, AGN_WIDTH, 2, 3, dtype=dtype),
    )
    dan = DanNet(dehaze_expert=dehaze_expert, desnow_expert=desnow_expert, agn=agn)
    dan.refresh_parameters()
    return dan


def agn_forward(dan: DanNet, image: Tensor) -> GateMaps:
    """Predict the two per-pixel gate fields for an N,3,H,W image."""
    h = elu(dan.agn.conv_a(image))
    h = elu(dan.agn.conv_b(h))
    gates = sigmoid(dan.agn.conv_c(h))
    return GateMaps(w_haze=narrow(gates, 1, 0, 1), w_snow=narrow(gates, 1, 1, 1))


def compose(gates: GateMaps, j_dehaze: Tensor, j_desnow: Tensor) -> Tensor:
    """Weighted sum of the expert outputs; gates broadcast over color."""
    if j_dehaze.data.shape != j_desnow.data.shape:
        raise ValueError(
            f"expert outputs disagree in shape: {j_dehaze.shape} vs {j_desnow.shape}"
        )
    if gates.w_haze.data.shape[2:] != j_dehaze.data.shape[2:]:
        raise ValueError(
            f"gate maps {gates.w_haze.data.shape[2:]} do not match images {j_dehaze.data.shape[2:]}"
        )
    return j_dehaze * gates.w_haze + j_desnow * gates.w_snow


def dan_forward(dan: DanNet, image: Tensor, force_gates=None):
    """Run both experts and the gate on the same input.

    Returns (composed output, gate maps). ``force_gates=(wh, ws)`` replaces
    the predicted maps with constants, which reduces the composition to a
    fixed blend (used by tests and the restore command's override flag).
    """
    j_dehaze = expert_forward(dan.dehaze_expert, image)
    j_desnow = expert_forward(dan.desnow_expert, image)
    if force_gates is not None:
        wh, ws = force_gates
        n, _, h, w = image.data.shape
        shape = (n, 1, h, w)
        gates = GateMaps(
            w_haze=Tensor(np.full(shape, wh, dtype=image.data.dtype)),
            w_snow=Tensor(np.full(shape, ws, dtype=image.data.dtype)),
        )
    else:
        gates = agn_forward(dan, image)
    return compose(gates, j_dehaze, j_desnow), gates


# -- gate map export -----------------------------------------------------------


def jet_ramp() -> np.ndarray:
    """The classic 256-entry jet color ramp as uint8 RGB rows."""
    x = np.arange(256) / 255.0
    r = np.clip(np.minimum(4 * x - 1.5, -4 * x + 4.5), 0, 1)
    g = np.clip(np.minimum(4 * x - 0.5, -4 * x + 3.5), 0, 1)
    b = np.clip(np.minimum(4 * x + 0.5, -4 * x + 2.5), 0, 1)
    return np.round(np.stack([r, g, b], axis=1) * 255).astype(np.uint8)


def colorize_jet(field: np.ndarray) -> np.ndarray:
    """Map a 2-D field in [0, 1] to a 3,H,W uint8 jet-colored image."""
    idx = np.clip(np.round(np.asarray(field, dtype=np.float64) * 255), 0, 255).astype(np.intp)
    return jet_ramp()[idx].transpose(2, 0, 1)
