#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# alignment.py - 跨來源嵌入分佈差異：高斯 KL / 對稱 JS、MMD 與直方圖 JS 診斷

import itertools
import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist, pdist

from hin_graph import ConfigError

logger = logging.getLogger(__name__)

ALIGNMENT_KINDS = ("none", "kl", "js", "mmd", "adversarial")
MEDIAN_HEURISTIC = "median-heuristic"
VARIANCE_FLOOR = 1e-6


@dataclass(frozen=True)
class AlignmentSpec:
    """對齊方式與各量度參數；lam 為總損失中 L_sim 的權重 λ"""
    kind: str = "none"
    mmd_bandwidth: Union[float, str] = MEDIAN_HEURISTIC
    mmd_max_rows: int = 1024
    hist_bins: int = 64
    hist_smoothing: float = 1e-8
    lam: float = 1.0
    adversarial_target: str = "uniform"
    discriminator_hidden: Tuple[int, ...] = (128, 128)
    discriminator_lr: float = 0.005

    def __post_init__(self):
        if self.kind not in ALIGNMENT_KINDS:
            raise ConfigError(f"未知的對齊方式: {self.kind} (可用: {ALIGNMENT_KINDS})")
        if self.lam < 0:
            raise ConfigError(f"lambda 不可為負: {self.lam}")
        if self.hist_bins < 2:
            raise ConfigError(f"hist_bins 必須 >= 2: {self.hist_bins}")
        if not self.hist_smoothing > 0:
            raise ConfigError(f"hist_smoothing 必須 > 0: {self.hist_smoothing}")
        if self.mmd_bandwidth != MEDIAN_HEURISTIC:
            if isinstance(self.mmd_bandwidth, str) or not self.mmd_bandwidth > 0:
                raise ConfigError(f"mmd_bandwidth 必須 > 0 或 {MEDIAN_HEURISTIC!r}: {self.mmd_bandwidth}")
        if self.mmd_max_rows < 2:
            raise ConfigError(f"mmd_max_rows 必須 >= 2: {self.mmd_max_rows}")
        if self.adversarial_target not in ("uniform", "flip"):
            raise ConfigError(f"adversarial_target 必須是 uniform 或 flip: {self.adversarial_target}")
        object.__setattr__(self, "discriminator_hidden", tuple(int(x) for x in self.discriminator_hidden))


class MeasureResult(NamedTuple):
    value: float
    grad_p: np.ndarray
    grad_q: np.ndarray


def _as_sample(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError(f"{name} 必須是 n×d 矩陣")
    return x


def _check_pair(p, q, min_rows):
    p, q = _as_sample(p, "P"), _as_sample(q, "Q")
    if p.shape[1] != q.shape[1]:
        raise ValueError(f"維度不同: {p.shape[1]} != {q.shape[1]}")
    if len(p) < min_rows or len(q) < min_rows:
        raise ValueError(f"每個樣本至少需要 {min_rows} 列")
    return p, q


def median_bandwidth(p, q):
    """合併樣本的成對歐氏距離中位數；全部重合時退回 1"""
    pooled = np.vstack([p, q])
    median = float(np.median(pdist(pooled))) if len(pooled) > 1 else 0.0
    return median if median > 0 else 1.0


def mmd2(p, q, bandwidth=MEDIAN_HEURISTIC) -> MeasureResult:
    """
    高斯核 MMD² 的無偏 U 統計量與解析梯度

    核 k(x, y) = exp(−‖x − y‖² / (2σ²))；中位數法的 σ 視為常數。
    估計值為負時截為 0，此時梯度也為 0。
    """
    p, q = _check_pair(p, q, 2)
    if bandwidth == MEDIAN_HEURISTIC:
        sigma = median_bandwidth(p, q)
    else:
        sigma = float(bandwidth)
        if not sigma > 0:
            raise ConfigError(f"bandwidth 必須 > 0: {bandwidth}")
    s2 = sigma * sigma
    m, n = len(p), len(q)

    kpp = np.exp(-cdist(p, p, "sqeuclidean") / (2 * s2))
    kqq = np.exp(-cdist(q, q, "sqeuclidean") / (2 * s2))
    kpq = np.exp(-cdist(p, q, "sqeuclidean") / (2 * s2))
    np.fill_diagonal(kpp, 0.0)
    np.fill_diagonal(kqq, 0.0)

    value = kpp.sum() / (m * (m - 1)) + kqq.sum() / (n * (n - 1)) - 2.0 * kpq.mean()
    if value <= 0:
        return MeasureResult(0.0, np.zeros_like(p), np.zeros_like(q))

    grad_p = -2.0 / (m * (m - 1) * s2) * (p * kpp.sum(axis=1, keepdims=True) - kpp @ p)
    grad_p += 2.0 / (m * n * s2) * (p * kpq.sum(axis=1, keepdims=True) - kpq @ q)
    grad_q = -2.0 / (n * (n - 1) * s2) * (q * kqq.sum(axis=1, keepdims=True) - kqq @ q)
    grad_q += 2.0 / (m * n * s2) * (q * kpq.sum(axis=0)[:, None] - kpq.T @ p)
    return MeasureResult(float(value), grad_p, grad_q)


def _moments(x):
    mu = x.mean(axis=0)
    var = x.var(axis=0)
    floored = var < VARIANCE_FLOOR
    return mu, np.where(floored, VARIANCE_FLOOR, var), floored


def gaussian_kl(p, q) -> MeasureResult:
    """對各維度擬合對角高斯後的封閉形式 KL(N_P ‖ N_Q)，各維度相加"""
    p, q = _check_pair(p, q, 2)
    mp, vp, fp = _moments(p)
    mq, vq, fq = _moments(q)
    diff = mp - mq
    per_dim = 0.5 * (np.log(vq / vp) + (vp + diff * diff) / vq - 1.0)

    d_mp = diff / vq
    d_mq = -d_mp
    d_vp = np.where(fp, 0.0, 0.5 * (1.0 / vq - 1.0 / vp))
    d_vq = np.where(fq, 0.0, 0.5 * (1.0 / vq - (vp + diff * diff) / (vq * vq)))
    m, n = len(p), len(q)
    grad_p = d_mp / m + d_vp * 2.0 * (p - mp) / m
    grad_q = d_mq / n + d_vq * 2.0 * (q - mq) / n
    return MeasureResult(float(per_dim.sum()), grad_p, grad_q)


def sym_js(p, q) -> MeasureResult:
    """½(KL(P‖Q) + KL(Q‖P))"""
    forward = gaussian_kl(p, q)
    backward = gaussian_kl(q, p)
    return MeasureResult(
        0.5 * (forward.value + backward.value),
        0.5 * (forward.grad_p + backward.grad_q),
        0.5 * (forward.grad_q + backward.grad_p),
    )


def hist_js(p, q, bins=64, smoothing=1e-8) -> float:
    """
    每個維度以共用等寬直方圖估計 ½(KL(P‖Q)+KL(Q‖P))，再對維度取平均

    只作診斷用，不提供梯度；合併後為常數的維度貢獻 0。
    """
    p, q = _check_pair(p, q, 1)
    total = 0.0
    for j in range(p.shape[1]):
        lo = min(p[:, j].min(), q[:, j].min())
        hi = max(p[:, j].max(), q[:, j].max())
        if hi <= lo:
            continue
        edges = np.linspace(lo, hi, bins + 1)
        hp = np.histogram(p[:, j], bins=edges)[0] + smoothing
        hq = np.histogram(q[:, j], bins=edges)[0] + smoothing
        hp = hp / hp.sum()
        hq = hq / hq.sum()
        kl_pq = float(np.sum(hp * np.log(hp / hq)))
        kl_qp = float(np.sum(hq * np.log(hq / hp)))
        total += 0.5 * (kl_pq + kl_qp)
    return total / p.shape[1]


MEASURES = {"kl": gaussian_kl, "js": sym_js, "mmd": mmd2}


def _measure(spec: AlignmentSpec, p, q):
    if spec.kind == "mmd":
        return mmd2(p, q, spec.mmd_bandwidth)
    return MEASURES[spec.kind](p, q)


class DistLoss(NamedTuple):
    value: float
    entity_grads: List[np.ndarray]
    relation_grads: List[np.ndarray]


def dist_loss(entity_samples: Sequence[np.ndarray], relation_samples: Sequence[np.ndarray],
              spec: AlignmentSpec) -> DistLoss:
    """
    所有無序來源對 (i < j) 的實體項與關係型別項之和

    任一側不足 2 列的項略過。kl 為有向量度，依來源索引取 KL(i‖j)。
    """
    if spec.kind not in MEASURES:
        raise ConfigError(f"dist_loss 只支援 {sorted(MEASURES)}，收到 {spec.kind}")
    ent_grads = [np.zeros_like(np.asarray(x, dtype=np.float64)) for x in entity_samples]
    rel_grads = [np.zeros_like(np.asarray(x, dtype=np.float64)) for x in relation_samples]
    k = len(entity_samples)
    if k < 2:
        logger.warning(f"alignment disabled: 只有 {k} 個來源，略過分佈對齊")
        return DistLoss(0.0, ent_grads, rel_grads)

    total = 0.0
    for i, j in itertools.combinations(range(k), 2):
        for samples, grads in ((entity_samples, ent_grads), (relation_samples, rel_grads)):
            a, b = samples[i], samples[j]
            if len(a) < 2 or len(b) < 2:
                continue
            result = _measure(spec, a, b)
            total += result.value
            grads[i] += result.grad_p
            grads[j] += result.grad_q
    return DistLoss(total, ent_grads, rel_grads)
