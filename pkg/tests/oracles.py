"""Independent reference implementations used to check the package.

Everything here is written as literal loops, straight from first principles,
and deliberately shares no code with vvton internals.
"""

from __future__ import annotations

import math

import numpy as np


def directions_bruteforce(joints, bones, conf_threshold=0.3, epsilon=1e-6):
    """Per-bone unit vectors; None marks a missing bone."""
    out = []
    for parent, child in bones:
        jp = joints[parent]
        jc = joints[child]
        if jp[2] < conf_threshold or jc[2] < conf_threshold:
            out.append(None)
            continue
        dx = jc[0] - jp[0]
        dy = jc[1] - jp[1]
        norm = math.hypot(dx, dy)
        if norm < epsilon:
            out.append(None)
            continue
        out.append((dx / norm, dy / norm))
    return out


def motion_similarity_bruteforce(dirs_a, dirs_b):
    total = 0.0
    for a, b in zip(dirs_a, dirs_b):
        if a is None or b is None:
            continue
        total += a[0] * b[0] + a[1] * b[1]
    return total


def keyframe_alg1_literal(
    frames_joints,
    anchor_joints,
    bones,
    bbox_areas,
    frame_area,
    k=2,
    lam=0.3,
    alpha=0.2,
    conf_threshold=0.3,
):
    """Line-by-line transcription of the keyframe sampling pseudocode:
    score every frame, sort descending, seed with the top index, then walk
    the sorted list from its last element upward appending any frame whose
    score differs from all selected scores by at least alpha * mean."""
    n = len(frames_joints)
    d_anchor = directions_bruteforce(anchor_joints, bones, conf_threshold)
    s_final = []
    i = 0
    while i < n:
        d_v = directions_bruteforce(frames_joints[i], bones, conf_threshold)
        s_m = motion_similarity_bruteforce(d_anchor, d_v)
        s_r = bbox_areas[i] / frame_area
        s_final.append((i, s_m + lam * s_r))
        i += 1
    t_s_min = alpha * (sum(score for _, score in s_final) / n)
    s_sorted = sorted(s_final, key=lambda item: (-item[1], item[0]))
    score_of = dict(s_final)
    idx_key = [s_sorted[0][0]]
    i = n - 1
    while i >= 0:
        cur_idx = s_sorted[i][0]
        if all(abs(score_of[cur_idx] - score_of[s]) >= t_s_min for s in idx_key):
            idx_key.append(cur_idx)
        i -= 1
    return idx_key[:k]


def point_segment_distance(px, py, ax, ay, bx, by):
    abx = bx - ax
    aby = by - ay
    denom = abx * abx + aby * aby
    if denom == 0.0:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * abx + (py - ay) * aby) / denom
    t = min(1.0, max(0.0, t))
    return math.hypot(px - (ax + t * abx), py - (ay + t * aby))


def dilated_limb_raster_bruteforce(joints, bones, radius, height, width, conf_threshold=0.3):
    """Per-pixel scan: a pixel is set when within `radius` of any present bone."""
    out = np.zeros((height, width), dtype=np.uint8)
    segments = []
    for parent, child in bones:
        jp = joints[parent]
        jc = joints[child]
        if jp[2] < conf_threshold or jc[2] < conf_threshold:
            continue
        segments.append((jp[0], jp[1], jc[0], jc[1]))
    for y in range(height):
        for x in range(width):
            for ax, ay, bx, by in segments:
                if point_segment_distance(x, y, ax, ay, bx, by) <= radius:
                    out[y, x] = 1
                    break
    return out


def agnostic_mask_bruteforce(
    joints, scope_bones, radius, height, width, bbox, row_lo, row_hi, conf_threshold=0.3
):
    """(limbs within radius, clipped to bbox) union the torso sub-box."""
    limbs = dilated_limb_raster_bruteforce(
        joints, scope_bones, radius, height, width, conf_threshold
    )
    out = np.zeros((height, width), dtype=np.uint8)
    x0, y0, w, h = bbox
    ty0 = y0 + int(math.floor(row_lo * h))
    ty1 = y0 + int(math.ceil(row_hi * h))
    for y in range(height):
        for x in range(width):
            in_box = x0 <= x < x0 + w and y0 <= y < y0 + h
            in_torso = x0 <= x < x0 + w and ty0 <= y < ty1
            if (limbs[y, x] and in_box) or in_torso:
                out[y, x] = 1
    return out


def tracking_extent_bruteforce(bboxes, padding_ratio):
    max_w = 0.0
    max_h = 0.0
    for x, y, w, h in bboxes:
        max_w = max(max_w, w * (1 + 2 * padding_ratio))
        max_h = max(max_h, h * (1 + 2 * padding_ratio))

    def up16(v):
        v = int(math.ceil(v))
        return ((v + 15) // 16) * 16

    return up16(max_w), up16(max_h)


def mask_pool_bruteforce(mask, tf=4, sf=16):
    frames, height, width = mask.shape
    t, h, w = frames // tf, height // sf, width // sf
    out = np.zeros((t, h, w), dtype=np.uint8)
    for ti in range(t):
        for hi in range(h):
            for wi in range(w):
                block = mask[
                    ti * tf : (ti + 1) * tf,
                    hi * sf : (hi + 1) * sf,
                    wi * sf : (wi + 1) * sf,
                ]
                if block.any():
                    out[ti, hi, wi] = 1
    return out


def dense_lora_bruteforce(x, w_base, bias, a, b, scale):
    """y = x @ (W^T) + bias + scale * x @ A @ B via one dense matrix."""
    dense = w_base.T + scale * (a @ b)
    return x @ dense + bias


def flat_attention_bruteforce(q, k, v, heads):
    """Multi-head softmax attention with explicit loops over heads."""
    length, dim = q.shape
    dh = dim // heads
    out = np.zeros((length, dim))
    for head in range(heads):
        sl = slice(head * dh, (head + 1) * dh)
        qs, ks, vs = q[:, sl], k[:, sl], v[:, sl]
        logits = qs @ ks.T / math.sqrt(dh)
        logits -= logits.max(axis=1, keepdims=True)
        weights = np.exp(logits)
        weights /= weights.sum(axis=1, keepdims=True)
        out[:, sl] = weights @ vs
    return out


def frechet_diagonal_closed_form(mu1, var1, mu2, var2):
    """Commuting (diagonal) case: sum (sqrt(l1) - sqrt(l2))^2 + ||dmu||^2."""
    total = 0.0
    for m1, v1, m2, v2 in zip(mu1, var1, mu2, var2):
        total += (m1 - m2) ** 2 + (math.sqrt(v1) - math.sqrt(v2)) ** 2
    return total


def ssim_constant_closed_form(mu1, mu2, data_range, k1=0.01, k2=0.03):
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    return ((2 * mu1 * mu2 + c1) * c2) / ((mu1**2 + mu2**2 + c1) * c2)


def central_difference_gradient(loss_fn, param, eps):
    """Per-entry central differences of a scalar torch loss wrt one tensor."""
    import torch

    grad = np.zeros(param.numel())
    flat = param.detach().view(-1)
    for i in range(flat.numel()):
        original = flat[i].item()
        with torch.no_grad():
            flat[i] = original + eps
        up = float(loss_fn())
        with torch.no_grad():
            flat[i] = original - eps
        down = float(loss_fn())
        with torch.no_grad():
            flat[i] = original
        grad[i] = (up - down) / (2 * eps)
    return grad.reshape(tuple(param.shape))


def conditioning_concat_bruteforce(agnostic, mask, noise, pose):
    t, h, w, c = agnostic.shape
    cp = pose.shape[3]
    out = np.zeros((t, h, w, 2 * c + 1 + cp))
    for ti in range(t):
        for hi in range(h):
            for wi in range(w):
                col = 0
                for ch in range(c):
                    out[ti, hi, wi, col] = agnostic[ti, hi, wi, ch]
                    col += 1
                out[ti, hi, wi, col] = mask[ti, hi, wi]
                col += 1
                for ch in range(c):
                    out[ti, hi, wi, col] = noise[ti, hi, wi, ch]
                    col += 1
                for ch in range(cp):
                    out[ti, hi, wi, col] = pose[ti, hi, wi, ch]
                    col += 1
    return out
