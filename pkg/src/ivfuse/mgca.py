"""Mask-guided cross-modal feature reconstruction.

Images are split by the binary mask at pixel resolution, each piece runs
through its modality's encoder, and foreground/background features are
cross-reconstructed between modalities with four independent attention
parameter sets, then summed per modality.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .blocks import CrossAttention, Module
from .sig import MaskSemantics
from .tensor import ShapeError, Tensor


@dataclass
class FeatureBundle:
    """Token features for one image pair; None until the stage fills them."""

    grid: tuple[int, int]
    fv: Tensor | None = None
    fi: Tensor | None = None
    fv_m: Tensor | None = None
    fv_mbar: Tensor | None = None
    fi_m: Tensor | None = None
    fi_mbar: Tensor | None = None
    fvi: Tensor | None = None
    fiv: Tensor | None = None


def decompose(image: Tensor, mask: MaskSemantics) -> tuple[Tensor, Tensor]:
    """Split into (foreground, background); the two sum back bit-exactly."""
    image = image if isinstance(image, Tensor) else Tensor(image)
    c, h, w = image.shape
    if mask.m.shape != (h, w):
        raise ShapeError(f"decompose: mask {mask.m.shape} does not match image ({h}, {w})")
    fg = image * Tensor(mask.m)
    bg = image * Tensor(mask.m_bar)
    return fg, bg


def _stack(images) -> Tensor:
    expanded = [T.reshape(img, (1,) + img.shape) for img in images]
    return T.concat(expanded, axis=0)


def encode_streams(i_vis: Tensor, i_ir: Tensor, mask: MaskSemantics,
                   vis_encoder, ir_encoder,
                   streams: str = "all") -> FeatureBundle:
    """Run the shared per-modality encoders over global and masked inputs.

    The global/foreground/background passes of one modality share weights,
    so they run as a single batched encoder call. ``streams`` trims work for
    ablations: "all", "global" (skip the masked passes), or "masked" (skip
    the global passes).
    """
    i_vis = i_vis if isinstance(i_vis, Tensor) else Tensor(i_vis)
    i_ir = i_ir if isinstance(i_ir, Tensor) else Tensor(i_ir)
    p = vis_encoder.patch_embed.patch
    _, h, w = i_vis.shape
    bundle = FeatureBundle(grid=(h // p, w // p))
    vis_in, ir_in = [i_vis], [i_ir]
    if streams in ("all", "masked"):
        fg_v, bg_v = decompose(i_vis, mask)
        fg_i, bg_i = decompose(i_ir, mask)
        vis_in += [fg_v, bg_v]
        ir_in += [fg_i, bg_i]
    if streams == "masked":
        vis_in, ir_in = vis_in[1:], ir_in[1:]
    vis_out = vis_encoder(_stack(vis_in))
    ir_out = ir_encoder(_stack(ir_in))
    pos = 0
    if streams in ("all", "global"):
        bundle.fv = vis_out[0]
        bundle.fi = ir_out[0]
        pos = 1
    if streams in ("all", "masked"):
        bundle.fv_m, bundle.fv_mbar = vis_out[pos], vis_out[pos + 1]
        bundle.fi_m, bundle.fi_mbar = ir_out[pos], ir_out[pos + 1]
    return bundle


class MaskGuidedAttention(Module):
    """The four attention parameter sets of the masked reconstruction.

    ``with_background=False`` builds only the foreground pair, which is all
    the unmasked ablation variant uses.
    """

    def __init__(self, dim: int, heads: int, *, name: str, rng, with_background: bool = True):
        self.ca_vi_fg = CrossAttention(dim, dim, dim, dim, heads, name=f"{name}.vi_fg", rng=rng)
        self.ca_iv_fg = CrossAttention(dim, dim, dim, dim, heads, name=f"{name}.iv_fg", rng=rng)
        if with_background:
            self.ca_vi_bg = CrossAttention(dim, dim, dim, dim, heads, name=f"{name}.vi_bg", rng=rng)
            self.ca_iv_bg = CrossAttention(dim, dim, dim, dim, heads, name=f"{name}.iv_bg", rng=rng)
        else:
            self.ca_vi_bg = None
            self.ca_iv_bg = None


def cross_reconstruct(bundle: FeatureBundle, attn: MaskGuidedAttention) -> FeatureBundle:
    """Fill fvi/fiv from the four masked streams (foreground + background)."""
    needed = (bundle.fv_m, bundle.fv_mbar, bundle.fi_m, bundle.fi_mbar)
    if any(s is None for s in needed):
        raise ValueError("cross_reconstruct: masked streams missing from bundle")
    if attn.ca_vi_bg is None:
        raise ValueError("cross_reconstruct: attention was built without background sets")
    fvi_m = attn.ca_vi_fg(bundle.fv_m, bundle.fi_m)
    fvi_mbar = attn.ca_vi_bg(bundle.fv_mbar, bundle.fi_mbar)
    fiv_m = attn.ca_iv_fg(bundle.fi_m, bundle.fv_m)
    fiv_mbar = attn.ca_iv_bg(bundle.fi_mbar, bundle.fv_mbar)
    bundle.fvi = fvi_m + fvi_mbar
    bundle.fiv = fiv_m + fiv_mbar
    return bundle


def reconstruct_unmasked(bundle: FeatureBundle, attn: MaskGuidedAttention) -> FeatureBundle:
    """Mask-free variant: whole-image features through the foreground sets."""
    if bundle.fv is None or bundle.fi is None:
        raise ValueError("reconstruct_unmasked: global streams missing from bundle")
    bundle.fvi = attn.ca_vi_fg(bundle.fv, bundle.fi)
    bundle.fiv = attn.ca_iv_fg(bundle.fi, bundle.fv)
    return bundle
