"""Scalar reference implementations and gradient-check cases shared by tests."""
import math

import numpy as np
import torch

from osagdo.decoder import CLSGuidedDecoder, bce_loss
from osagdo.defosem import DefoSEM
from osagdo.encoders import EncoderSpec, text_encoder
from osagdo.prompts import ClassTokenTable, PromptContext, class_probabilities_t


def _sig(z):
    return 1.0 / (1.0 + math.exp(-z))


def randomize(module: torch.nn.Module, seed: int, scale: float = 0.5) -> None:
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)


def loop_enhance(p: DefoSEM, f: np.ndarray, label: np.ndarray | None) -> np.ndarray:
    """Gated features computed one scalar at a time from the module's weights."""
    C = p.C
    h, w = p.grid
    Wa = p.visual_adjust.weight.detach().numpy()[:, :, 0, 0]
    ba = p.visual_adjust.bias.detach().numpy()
    Wl = p.label_align.weight.detach().numpy()[:, :, 0, 0]
    bl = p.label_align.bias.detach().numpy()
    Ws = p.spatial_gate.weight.detach().numpy()
    bs = p.spatial_gate.bias.detach().numpy()
    Wc = p.channel_gate.weight.detach().numpy()[:, :, 0, 0]
    bc = p.channel_gate.bias.detach().numpy()

    if label is None:
        pooled = p.default_label.detach().numpy()[0]
    else:
        H, W = label.shape
        pooled = np.zeros((h, w))
        for y in range(h):
            for x in range(w):
                y0, y1 = (y * H) // h, -((-(y + 1) * H) // h)
                x0, x1 = (x * W) // w, -((-(x + 1) * W) // w)
                tot = 0.0
                for yy in range(y0, y1):
                    for xx in range(x0, x1):
                        tot += label[yy, xx]
                pooled[y, x] = tot / ((y1 - y0) * (x1 - x0))

    adj = np.zeros((C, h, w))
    lab = np.zeros((C, h, w))
    for c in range(C):
        for y in range(h):
            for x in range(w):
                s = ba[c]
                for k in range(C):
                    s += Wa[c, k] * f[y * w + x, k]
                adj[c, y, x] = s
                lab[c, y, x] = bl[c] + Wl[c, 0] * pooled[y, x]

    w_s = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            s = bs[0]
            for c in range(C):
                for dy in range(3):
                    for dx in range(3):
                        yy, xx = y + dy - 1, x + dx - 1
                        if 0 <= yy < h and 0 <= xx < w:
                            s += Ws[0, c, dy, dx] * adj[c, yy, xx]
            w_s[y, x] = _sig(s)

    desc = np.zeros(2 * C)
    for j in range(2 * C):
        src = adj[j] if j < C else lab[j - C]
        desc[j] = sum(src[y, x] for y in range(h) for x in range(w)) / (h * w)
    w_c = np.zeros(C)
    for c in range(C):
        w_c[c] = _sig(bc[c] + sum(Wc[c, j] * desc[j] for j in range(2 * C)))

    out = np.zeros((h * w, C))
    for c in range(C):
        for y in range(h):
            for x in range(w):
                out[y * w + x, c] = adj[c, y, x] * (0.5 + w_c[c]) * (0.5 + w_s[y, x])
    return out


def loop_fuse(F_pred: np.ndarray, M_prime: np.ndarray) -> np.ndarray:
    out = np.empty_like(F_pred, dtype=np.float64)
    for idx in np.ndindex(F_pred.shape):
        v = F_pred[idx] * M_prime[idx]
        if v < 0:
            out[idx] = 0.0
        elif v > 1:
            out[idx] = 1.0
        else:
            out[idx] = v
    return out


def loop_normalize(M: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    flat = [float(v) for v in M.ravel()]
    lo, hi = min(flat), max(flat)
    return np.array([1.0 + (v - lo) / (hi - lo + eps) for v in flat]).reshape(M.shape)


# gradient-check cases: each returns (loss_fn, params)

def defosem_case(seed: int = 0, with_label: bool = True):
    torch.manual_seed(seed)
    p = DefoSEM(4, (3, 3)).double()
    randomize(p, seed)
    g = torch.Generator().manual_seed(seed + 100)
    x = torch.randn(9, 4, generator=g, dtype=torch.float64)
    label = torch.rand(6, 6, generator=g, dtype=torch.float64) if with_label else None
    R = torch.randn(9, 4, generator=g, dtype=torch.float64)
    params = {k: v for k, v in p.named_parameters()}
    if with_label:
        params.pop("default_label")  # unused when a label is given
    return (lambda: (p(x, label) * R).sum()), params


def metanet_case(seed: int = 0):
    spec = EncoderSpec(C=48, C_t=5, d_tok=6, seed=seed)
    torch.manual_seed(seed)
    ctx = PromptContext(d_vis=48, d_tok=6, C_t=5, n_ctx=2, tau=0.5).double()
    randomize(ctx, seed)
    table = ClassTokenTable.from_names(["grasp_sleeve", "pick_corner", "put_center"], spec)
    text = text_encoder(spec)
    f = torch.randn(4, 48, generator=torch.Generator().manual_seed(seed + 1), dtype=torch.float64)

    def loss():
        F_t = text(ctx.build_prompts(table, ctx.conditioning_vector(f)))
        probs = class_probabilities_t(ctx.image_feature(f), F_t, ctx.tau)
        return -torch.log(probs[1])

    return loss, dict(ctx.named_parameters())


def decoder_case(seed: int = 0):
    torch.manual_seed(seed)
    dec = CLSGuidedDecoder(8, 5, depth=2, sharpness=3.0).double()
    randomize(dec, seed, scale=0.4)
    g = torch.Generator().manual_seed(seed + 2)
    patches = torch.randn(4, 8, generator=g, dtype=torch.float64)
    F_t = torch.randn(2, 5, generator=g, dtype=torch.float64)
    cls = patches.mean(0)
    gt = torch.rand(2, 5, 5, generator=g, dtype=torch.float64)
    return (lambda: bce_loss(dec(patches, F_t, cls, (2, 2), (5, 5)), gt)), dict(dec.named_parameters())


# data-pipeline checks

def flip_alignment_failures(n_draws: int, seed: int = 0) -> int:
    """Count draws where a delta-peak channel does not land where its pixel lands.

    Channel ``pick_corner`` holds a delta at P and ``place_corner`` one at Q;
    P and Q are also marked in the image (red and green). On a mirrored draw
    the pair is relabelled, so ``pick_corner`` must peak where Q's pixel went.
    """
    from osagdo.core import Image
    from osagdo.data import CROP, apply_augmentation, draw_augmentation

    rng = np.random.default_rng(seed)
    pairs = [("pick_corner", "place_corner")]
    peak = lambda m: tuple(int(v) for v in np.unravel_index(np.argmax(m), m.shape))
    failures = 0
    for _ in range(n_draws):
        (py, px), (qy, qx) = rng.integers(32, 224, size=(2, 2))
        if (py, px) == (qy, qx):
            qx = qx + 1
        pixels = np.zeros((256, 256, 3), np.uint8)
        pixels[py, px] = (255, 0, 0)
        pixels[qy, qx] = (0, 255, 0)
        maps = {k: np.zeros((256, 256)) for k in ("pick_corner", "place_corner", "put_center")}
        maps["pick_corner"][py, px] = 1.0
        maps["place_corner"][qy, qx] = 1.0
        maps["put_center"][py, px] = 1.0
        aug = draw_augmentation(rng)
        img, out = apply_augmentation(Image(pixels), maps, aug, pairs)

        def moved(y, x):
            y, x = int(y) - aug.oy, int(x) - aug.ox
            return (y, CROP - 1 - x) if aug.flip else (y, x)

        P, Q = moved(py, px), moved(qy, qx)
        red = tuple(int(v) for v in np.argwhere(img.pixels[..., 0] == 255)[0])
        green = tuple(int(v) for v in np.argwhere(img.pixels[..., 1] == 255)[0])
        pick, place = (Q, P) if aug.flip else (P, Q)
        ok = (red == P and green == Q and peak(out["put_center"]) == P
              and peak(out["pick_corner"]) == pick and peak(out["place_corner"]) == place)
        failures += not ok
    return failures


def crafted_manifests(manifest_path, out_dir):
    """Five single-violation copies of a valid manifest: (name, path, offending record id)."""
    import copy
    import json
    from pathlib import Path

    base = json.loads(Path(manifest_path).read_text())
    root = Path(manifest_path).parent
    cases = []

    def make(name, rid, mutate):
        doc = copy.deepcopy(base)
        rec = next(r for r in doc["records"] if r["id"] == rid)
        mutate(doc, rec)
        for r in doc["records"]:
            r["image"] = str((root / r["image"]).resolve()) if not r["image"].startswith("/") else r["image"]
        p = Path(out_dir) / f"{name}.json"
        p.write_text(json.dumps(doc))
        cases.append((name, p, rid))

    make("unknown_affordance", "towel_1",
         lambda d, r: r["annotations"].__setitem__("fold_in_half", [[10.0, 10.0]]))
    make("out_of_bounds_point", "shorts_2",
         lambda d, r: r["annotations"]["grasp_waist"].append([500.0, 12.0]))
    make("unknown_category", "short_sleeve_tshirt_0",
         lambda d, r: r.__setitem__("category", "tuxedo"))
    make("missing_image", "towel_2",
         lambda d, r: r.__setitem__("image", "images/does_not_exist.png"))
    make("malformed_point", "shorts_1",
         lambda d, r: r["annotations"]["pick_leg"].append([3.0]))
    return cases
