"""Illumination-aware adversarial losses and their hand-derived gradients.

Each adversarial term is the vanilla RaLSGAN / LSGAN term multiplied by the
relativistic probabilities of the samples feeding it. RP factors are
constants here: no gradient flows back into the quantizer.

Networks passed to :func:`total_objective` only need ``forward(x) -> (out,
cache)`` and ``backward(cache, dout) -> (grads, dx)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imagecore import DimensionError, LumaImage

TERMS = ("l_d_global", "l_d_local", "l_g_global", "l_g_local", "l_sfp_global", "l_sfp_local")
D_TERMS = TERMS[:2]
G_TERMS = TERMS[2:]
SFP_EPS = 1e-6


class LossError(FloatingPointError):
    def __init__(self, term: str, value):
        super().__init__(f"non-finite value in {term}: {value!r}")
        self.term = term


# --- scalar / elementwise terms --------------------------------------------

def d_rgan(score_a, batch_b) -> float:
    """Relativistic-average critic difference ``C(a) - mean(C(b))``."""
    batch_b = np.asarray(batch_b, dtype=np.float64)
    if batch_b.size == 0:
        raise ValueError("relativistic pairing needs a non-empty batch")
    return score_a - batch_b.mean()


def vanilla_d_global(d_rb, d_br):
    return (d_rb - 1.0) ** 2 + d_br ** 2


def vanilla_d_local(s_bright_patch, s_enh_patch):
    return (s_bright_patch - 1.0) ** 2 + s_enh_patch ** 2


def vanilla_g_global(d_br, d_rb):
    return (d_br - 1.0) ** 2 + d_rb ** 2


def vanilla_g_local(s_enh_patch):
    return (s_enh_patch - 1.0) ** 2


def dru_d_global(rp_d, rp_b, d_rb, d_br):
    return rp_b * rp_d * vanilla_d_global(d_rb, d_br)


def dru_d_local(rp_d, rp_b, s_bright_patch, s_enh_patch):
    return rp_b * (s_bright_patch - 1.0) ** 2 + rp_d * s_enh_patch ** 2


def dru_g_global(rp_d, rp_b, d_br, d_rb):
    return rp_d * rp_b * vanilla_g_global(d_br, d_rb)


def dru_g_local(rp_d, s_enh_patch):
    return rp_d * vanilla_g_local(s_enh_patch)


# --- structure preservation -------------------------------------------------

def _pool(x: np.ndarray, factor: int):
    b, h, w = x.shape
    fh, fw = min(factor, h), min(factor, w)
    nh, nw = h // fh, w // fw
    blocks = x[:, :nh * fh, :nw * fw].reshape(b, nh, fh, nw, fw)
    return blocks.mean(axis=(2, 4)), (fh, fw, nh, nw)


def _standardize(a: np.ndarray):
    c = a - a.mean(axis=1, keepdims=True)
    s = np.sqrt((c ** 2).mean(axis=1, keepdims=True) + SFP_EPS)
    return c / s, c, s


def sfp_batch(original: np.ndarray, enhanced: np.ndarray, factor: int = 4):
    """Per-sample standardized-downsample L2 and its gradient w.r.t. ``enhanced``.

    Both inputs have shape ``(B, H, W)``. Each image is average-pooled by
    ``factor``, standardized to zero mean and unit variance, and compared by
    mean squared difference, so brightness offsets and contrast gains cost
    nothing while structural changes do.
    """
    original = np.asarray(original, dtype=np.float64)
    enhanced = np.asarray(enhanced, dtype=np.float64)
    if original.shape != enhanced.shape or original.ndim != 3:
        raise DimensionError(f"shape mismatch: {original.shape} vs {enhanced.shape}")
    b, h, w = enhanced.shape
    po, _ = _pool(original, factor)
    pe, (fh, fw, nh, nw) = _pool(enhanced, factor)
    zo, _, _ = _standardize(po.reshape(b, -1))
    ze, c, s = _standardize(pe.reshape(b, -1))
    n = ze.shape[1]
    diff = ze - zo
    loss = (diff ** 2).mean(axis=1)

    g = 2.0 * diff / n
    da = (g - g.mean(axis=1, keepdims=True)) / s - c * (g * c).sum(axis=1, keepdims=True) / (n * s ** 3)
    da = da.reshape(b, nh, 1, nw, 1) / (fh * fw)
    grad = np.zeros_like(enhanced)
    grad[:, :nh * fh, :nw * fw] = np.broadcast_to(da, (b, nh, fh, nw, fw)).reshape(b, nh * fh, nw * fw)
    return loss, grad


def sfp_loss(original: LumaImage, enhanced: LumaImage, factor: int = 4) -> float:
    if (original.height, original.width) != (enhanced.height, enhanced.width):
        raise DimensionError("original and enhanced images differ in size")
    loss, _ = sfp_batch(original.data[None], enhanced.data[None], factor)
    return float(loss[0])


# --- full objective ---------------------------------------------------------

@dataclass
class LossBundle:
    l_d_global: float = 0.0
    l_d_local: float = 0.0
    l_g_global: float = 0.0
    l_g_local: float = 0.0
    l_sfp_global: float = 0.0
    l_sfp_local: float = 0.0
    # term -> network name -> parameter name -> array
    term_grads: dict = field(default_factory=dict)
    # "discriminator" / "generator" -> network name -> parameter name -> array
    grads: dict = field(default_factory=dict)
    fake: np.ndarray | None = None

    def values(self) -> dict[str, float]:
        return {t: getattr(self, t) for t in TERMS}


def crop_batch(images: np.ndarray, offsets: np.ndarray, patch: int) -> np.ndarray:
    """Cut one ``patch x patch`` window per image at ``(x, y)`` offsets."""
    b = images.shape[0]
    ar = np.arange(patch)
    rows = offsets[:, 1, None] + ar
    cols = offsets[:, 0, None] + ar
    return images[np.arange(b)[:, None, None], rows[:, :, None], cols[:, None, :]]


def _uncrop(grad_patch: np.ndarray, offsets: np.ndarray, shape) -> np.ndarray:
    out = np.zeros(shape)
    p = grad_patch.shape[1]
    for i, (x, y) in enumerate(offsets):
        out[i, y:y + p, x:x + p] += grad_patch[i]
    return out


def _add(acc: dict, net: str, grads: dict):
    slot = acc.setdefault(net, {})
    for k, v in grads.items():
        slot[k] = slot[k] + v if k in slot else v


def _checked(term: str, value: float) -> float:
    if not np.isfinite(value):
        raise LossError(term, value)
    return float(value)


def total_objective(
    generator,
    global_critic,
    local_critic,
    dark: np.ndarray,
    bright: np.ndarray,
    dark_crops: np.ndarray,
    bright_crops: np.ndarray,
    rp_d: np.ndarray | None = None,
    rp_b: np.ndarray | None = None,
    patch: int = 8,
    terms=TERMS,
    groups=("discriminator", "generator"),
    sfp_factor: int = 4,
):
    """Evaluate the six loss terms on a mini-batch of unpaired dark/bright images.

    ``dark`` and ``bright`` are ``(B, H, W)`` luma arrays; sample ``i`` of each
    forms one pair. ``rp_d`` holds the dark-probability of each dark image and
    ``rp_b`` the bright-probability of each bright image. With both omitted the
    unweighted (vanilla) terms are used. Per-pair losses are averaged over the
    batch.

    Terms outside ``terms`` are reported as zero and contribute no gradient;
    gradients are computed only for the requested parameter ``groups``.
    """
    dark = np.asarray(dark, dtype=np.float64)
    bright = np.asarray(bright, dtype=np.float64)
    if dark.shape[0] == 0 or dark.shape[0] != bright.shape[0]:
        raise ValueError("dark and bright batches must be non-empty and of equal length")
    weighted = rp_d is not None or rp_b is not None
    if weighted:
        rp_d = np.broadcast_to(np.asarray(1.0 if rp_d is None else rp_d, dtype=np.float64), (dark.shape[0],))
        rp_b = np.broadcast_to(np.asarray(1.0 if rp_b is None else rp_b, dtype=np.float64), (dark.shape[0],))
    terms = set(terms)
    want_d = "discriminator" in groups
    want_g = "generator" in groups
    n, h, w = dark.shape
    inv = 1.0 / n

    fake, g_cache = generator.forward(dark.reshape(n, -1) / 255.0)
    fake_img = fake.reshape(n, h, w)
    bundle = LossBundle()
    d_grads, g_grads = {}, {}

    def backprop_generator(term, dfake):
        grads, _ = generator.backward(g_cache, dfake.reshape(n, -1))
        bundle.term_grads[term] = {"generator": grads}
        _add(g_grads, "generator", grads)

    if terms & {"l_d_global", "l_g_global"}:
        sb, cb = global_critic.forward(bright.reshape(n, -1) / 255.0)
        sf, cf = global_critic.forward(fake / 255.0)
        sb, sf = sb[:, 0], sf[:, 0]
        d_rb = sb - sf.mean()
        d_br = sf - sb.mean()
        w_g = rp_d * rp_b if weighted else None

        if "l_d_global" in terms:
            per = dru_d_global(rp_d, rp_b, d_rb, d_br) if weighted else vanilla_d_global(d_rb, d_br)
            bundle.l_d_global = _checked("l_d_global", per.mean())
            if want_d:
                a = 2.0 * inv * (d_rb - 1.0)
                c = 2.0 * inv * d_br
                if weighted:
                    a, c = w_g * a, w_g * c
                gb, _ = global_critic.backward(cb, (a - c.sum() * inv)[:, None])
                gf, _ = global_critic.backward(cf, (c - a.sum() * inv)[:, None])
                grads = {k: gb[k] + gf[k] for k in gb}
                bundle.term_grads["l_d_global"] = {"global_critic": grads}
                _add(d_grads, "global_critic", grads)

        if "l_g_global" in terms:
            per = dru_g_global(rp_d, rp_b, d_br, d_rb) if weighted else vanilla_g_global(d_br, d_rb)
            bundle.l_g_global = _checked("l_g_global", per.mean())
            if want_g:
                a = 2.0 * inv * (d_br - 1.0)
                c = 2.0 * inv * d_rb
                if weighted:
                    a, c = w_g * a, w_g * c
                _, dx = global_critic.backward(cf, (a - c.sum() * inv)[:, None])
                backprop_generator("l_g_global", dx.reshape(n, h, w) / 255.0)

    if terms & {"l_d_local", "l_g_local"}:
        pb = crop_batch(bright, bright_crops, patch).reshape(n, -1) / 255.0
        pf = crop_batch(fake_img, dark_crops, patch).reshape(n, -1) / 255.0
        lb, clb = local_critic.forward(pb)
        lf, clf = local_critic.forward(pf)
        lb, lf = lb[:, 0], lf[:, 0]

        if "l_d_local" in terms:
            per = dru_d_local(rp_d, rp_b, lb, lf) if weighted else vanilla_d_local(lb, lf)
            bundle.l_d_local = _checked("l_d_local", per.mean())
            if want_d:
                db = 2.0 * inv * (lb - 1.0)
                df = 2.0 * inv * lf
                if weighted:
                    db, df = rp_b * db, rp_d * df
                gb, _ = local_critic.backward(clb, db[:, None])
                gf, _ = local_critic.backward(clf, df[:, None])
                grads = {k: gb[k] + gf[k] for k in gb}
                bundle.term_grads["l_d_local"] = {"local_critic": grads}
                _add(d_grads, "local_critic", grads)

        if "l_g_local" in terms:
            per = dru_g_local(rp_d, lf) if weighted else vanilla_g_local(lf)
            bundle.l_g_local = _checked("l_g_local", per.mean())
            if want_g:
                df = 2.0 * inv * (lf - 1.0)
                if weighted:
                    df = rp_d * df
                _, dx = local_critic.backward(clf, df[:, None])
                dpatch = dx.reshape(n, patch, patch) / 255.0
                backprop_generator("l_g_local", _uncrop(dpatch, dark_crops, fake_img.shape))

    if "l_sfp_global" in terms:
        per, grad = sfp_batch(dark, fake_img, sfp_factor)
        bundle.l_sfp_global = _checked("l_sfp_global", per.mean())
        if want_g:
            backprop_generator("l_sfp_global", grad * inv)

    if "l_sfp_local" in terms:
        po = crop_batch(dark, dark_crops, patch)
        pf = crop_batch(fake_img, dark_crops, patch)
        per, grad = sfp_batch(po, pf, sfp_factor)
        bundle.l_sfp_local = _checked("l_sfp_local", per.mean())
        if want_g:
            backprop_generator("l_sfp_local", _uncrop(grad * inv, dark_crops, fake_img.shape))

    for group, acc in (("discriminator", d_grads), ("generator", g_grads)):
        for net, grads in acc.items():
            for k, v in grads.items():
                if not np.all(np.isfinite(v)):
                    raise LossError(f"{group}/{net}/{k} gradient", "nan/inf")
        bundle.grads[group] = acc
    bundle.fake = fake_img
    return bundle
