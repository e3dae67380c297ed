"""Frame quality (SSIM), shape retention (Hu-moment distance) and location retention (mask IoU)."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, signal

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WIN = 11
SSIM_SIGMA = 1.5
MASK_THRESHOLD = 0.1
MASK_SOURCE_NOTE = (f"# generated-frame masks: background subtraction, threshold {MASK_THRESHOLD} "
                    "on [0,1] max-channel difference, largest 8-connected component")


def _gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _as_channels(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img[None]
    if img.ndim == 3:
        return img
    raise ValueError(f"expected (H, W) or (C, H, W), got shape {img.shape}")


def ssim(a, b, value_range: tuple[float, float] = (-1.0, 1.0)) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels.

    Images are mapped from ``value_range`` to [0, 1] first; only windows that fit
    entirely inside the image contribute.
    """
    a, b = _as_channels(a), _as_channels(b)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.shape[1] < SSIM_WIN or a.shape[2] < SSIM_WIN:
        raise ValueError(f"ssim needs images of at least {SSIM_WIN}x{SSIM_WIN}")
    lo, hi = value_range
    a = (a - lo) / (hi - lo)
    b = (b - lo) / (hi - lo)
    w = _gaussian_window()
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2

    def filt(x):
        return signal.correlate(x, w, mode="valid", method="direct")

    scores = []
    for ca, cb in zip(a, b):
        mu_a, mu_b = filt(ca), filt(cb)
        var_a = filt(ca * ca) - mu_a * mu_a
        var_b = filt(cb * cb) - mu_b * mu_b
        cov = filt(ca * cb) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))


def _binary(mask) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError(f"masks must be 2-D, got shape {m.shape}")
    return m.astype(bool)


def hu_moments(mask) -> np.ndarray:
    """The seven Hu invariants of a binary mask (x = column, y = row)."""
    m = _binary(mask)
    ys, xs = np.nonzero(m)
    if xs.size == 0:
        raise ValueError("hu_moments of an empty mask")
    m00 = float(xs.size)
    dx = xs - xs.mean()
    dy = ys - ys.mean()

    def eta(p, q):
        mu = float(np.sum(dx ** p * dy ** q))
        return mu / m00 ** (1 + (p + q) / 2)

    n20, n02, n11 = eta(2, 0), eta(0, 2), eta(1, 1)
    n30, n03, n21, n12 = eta(3, 0), eta(0, 3), eta(2, 1), eta(1, 2)
    a, b = n30 + n12, n21 + n03
    h = np.empty(7)
    h[0] = n20 + n02
    h[1] = (n20 - n02) ** 2 + 4 * n11 ** 2
    h[2] = (n30 - 3 * n12) ** 2 + (3 * n21 - n03) ** 2
    h[3] = a ** 2 + b ** 2
    h[4] = (n30 - 3 * n12) * a * (a ** 2 - 3 * b ** 2) + (3 * n21 - n03) * b * (3 * a ** 2 - b ** 2)
    h[5] = (n20 - n02) * (a ** 2 - b ** 2) + 4 * n11 * a * b
    h[6] = (3 * n21 - n03) * a * (a ** 2 - 3 * b ** 2) - (n30 - 3 * n12) * b * (3 * a ** 2 - b ** 2)
    return h


def log_hu(h: np.ndarray) -> np.ndarray:
    """-sign(h) log10|h|, zero where h == 0. Diagnostics only."""
    h = np.asarray(h, dtype=np.float64)
    out = np.zeros_like(h)
    nz = h != 0
    out[nz] = -np.sign(h[nz]) * np.log10(np.abs(h[nz]))
    return out


def hu_vector_distance(h_orig: np.ndarray, h_gen: np.ndarray, log_scale: bool = False) -> float:
    if log_scale:
        h_orig, h_gen = log_hu(h_orig), log_hu(h_gen)
    return float(np.sqrt(np.sum((np.asarray(h_orig) - np.asarray(h_gen)) ** 2)))


def hu_distance(m_orig, m_gen, log_scale: bool = False) -> float:
    """Euclidean distance between the raw Hu vectors of two masks; 0 means identical shape."""
    return hu_vector_distance(hu_moments(m_orig), hu_moments(m_gen), log_scale)


def iou(m_orig, m_gen) -> float:
    a, b = _binary(m_orig), _binary(m_gen)
    if a.shape != b.shape:
        raise ValueError(f"iou: shape mismatch {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def extract_mask(frame, background, threshold: float = MASK_THRESHOLD) -> np.ndarray:
    """Robot mask of a frame by differencing against the known static background.

    Both images are (3, H, W) in [-1, 1]. Pixels whose largest per-channel
    difference on the [0, 1] scale exceeds ``threshold`` are foreground; only the
    largest 8-connected component is kept.
    """
    f = (np.asarray(frame, dtype=np.float64) + 1) / 2
    bg = (np.asarray(background, dtype=np.float64) + 1) / 2
    if f.shape != bg.shape:
        raise ValueError("frame and background differ in shape")
    fg = np.max(np.abs(f - bg), axis=0) > threshold
    labels, n = ndimage.label(fg, structure=np.ones((3, 3)))
    if n <= 1:
        return fg
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


@dataclass
class MetricsReport:
    ssim: list = field(default_factory=list)
    hu_distance: list = field(default_factory=list)
    iou: list = field(default_factory=list)

    def __len__(self):
        return len(self.ssim)

    def mean(self, metric: str) -> float:
        return float(np.mean(getattr(self, metric)))

    def std(self, metric: str) -> float:
        return float(np.std(getattr(self, metric)))

    def summary(self) -> dict[str, float]:
        out = {}
        for k in ("ssim", "hu_distance", "iou"):
            out[f"{k}_mean"] = self.mean(k)
            out[f"{k}_std"] = self.std(k)
        return out

    def rows(self):
        for i, vals in enumerate(zip(self.ssim, self.hu_distance, self.iou)):
            yield [str(i)] + [f"{v:.6f}" for v in vals]
        for label, fn in (("mean", self.mean), ("std", self.std)):
            yield [label] + [f"{fn(k):.6f}" for k in ("ssim", "hu_distance", "iou")]

    def write_csv(self, path, note: str = MASK_SOURCE_NOTE) -> None:
        with open(path, "w", newline="") as fh:
            if note:
                fh.write(note.rstrip("\n") + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame", "ssim", "hu_distance", "iou"])
            w.writerows(self.rows())


def evaluate_sequence(orig, gen_frames, gen_masks=None, threshold: float = MASK_THRESHOLD) -> MetricsReport:
    """Per-frame SSIM, Hu distance and IoU of generated frames against ``orig`` (a DatasetRecord).

    Without ``gen_masks`` the generated robot masks are extracted against
    ``orig.background``. An empty generated mask scores IoU 0 and the Hu
    distance to an all-zero Hu vector (no shape retained).
    """
    gen_frames = list(gen_frames)
    if len(gen_frames) != len(orig):
        raise ValueError(f"{len(gen_frames)} generated frames for {len(orig)} original frames")
    if gen_masks is None:
        if orig.background is None:
            raise ValueError("orig carries no background; pass gen_masks explicitly")
        gen_masks = [extract_mask(f, orig.background, threshold) for f in gen_frames]
    gen_masks = list(gen_masks)
    if len(gen_masks) != len(gen_frames):
        raise ValueError("one generated mask per generated frame is required")
    report = MetricsReport()
    for i, (frame, m_gen) in enumerate(zip(gen_frames, gen_masks)):
        m_orig = orig.robot_mask(i)
        m_gen = _binary(m_gen)
        report.ssim.append(ssim(orig.frames[i], frame))
        h_orig = hu_moments(m_orig)
        h_gen = hu_moments(m_gen) if m_gen.any() else np.zeros(7)
        report.hu_distance.append(hu_vector_distance(h_orig, h_gen))
        report.iou.append(iou(m_orig, m_gen))
    for v in report.hu_distance + report.ssim:
        if not math.isfinite(v):
            raise FloatingPointError("non-finite metric value")
    return report
