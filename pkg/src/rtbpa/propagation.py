"""Geometrical-optics propagation paths between image-domain points and antennas.

Two engines produce the same path sets on all-planar scenes: the exact image
method (mirror the antenna through every admissible reflector sequence) and a
stochastic shooting-and-bouncing-rays tracer. Each path carries the surface
interaction sequence, an order-sensitive 64-bit hash, and the co-polarized
sign obtained by transporting the field with the PEC reflection dyadic.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CrossPolarized, NonPlanarReflector
from .geometry import (EDGE_MARGIN, EPS_SELF, Scene, as_vec3,
                       mirror_point, mirror_points, rays_nearest_hit,
                       segments_blocked, unit)

# Paths whose normalized co-pol projection falls below this are discarded.
CROSS_POL_THRESHOLD = 1e-3

_PLANAR_KINDS = {"triangle", "rectangle", "plane"}


def path_hash(interaction_sequence: Sequence[int]) -> int:
    """Deterministic, order-sensitive 64-bit hash of a surface-id sequence."""
    seq = tuple(int(s) for s in interaction_sequence)
    if not seq:
        return 0
    h = hashlib.blake2b(digest_size=8)
    for s in seq:
        h.update(s.to_bytes(8, "little", signed=True))
    return int.from_bytes(h.digest(), "little")


def combined_wavefront_hash(tx_sequence: Sequence[int],
                            rx_sequence: Sequence[int]) -> int:
    """Hash of a full Tx->point->Rx wavefront: tx legs, separator, reversed rx."""
    seq = tuple(tx_sequence) + (-1,) + tuple(reversed(tuple(rx_sequence)))
    return path_hash(seq)


@dataclass(frozen=True, eq=False)
class PropagationPath:
    """One GO leg between an image-domain point and an antenna."""

    endpoint_a: np.ndarray  # image-domain point
    endpoint_b: np.ndarray  # antenna position
    vertices: np.ndarray  # (m, 3) bounce points, possibly empty
    bounce_normals: np.ndarray  # (m, 3) unit normals at the bounces
    interaction_sequence: Tuple[int, ...]
    total_length: float
    pol_sign: int = 1
    hash: int = 0

    @property
    def order(self) -> int:
        return len(self.interaction_sequence)

    def points(self) -> np.ndarray:
        """Full polyline a -> bounces -> b, shape (m+2, 3)."""
        return np.vstack([self.endpoint_a, self.vertices, self.endpoint_b])

    def segment_directions(self) -> np.ndarray:
        pts = self.points()
        seg = np.diff(pts, axis=0)
        return seg / np.linalg.norm(seg, axis=1, keepdims=True)


def _make_path(a, b, vertices, normals, seq, total_length, pol_sign=1) -> PropagationPath:
    vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
    normals = np.asarray(normals, dtype=float).reshape(-1, 3)
    return PropagationPath(
        endpoint_a=as_vec3(a), endpoint_b=as_vec3(b), vertices=vertices,
        bounce_normals=normals, interaction_sequence=tuple(int(s) for s in seq),
        total_length=float(total_length), pol_sign=int(pol_sign),
        hash=path_hash(seq))


@dataclass(frozen=True)
class WavefrontPair:
    """A (tx leg, rx leg) wavefront with its polarization parity."""

    tx_leg: PropagationPath
    rx_leg: PropagationPath
    combined_hash: int
    delta: int  # 0 or 1; pi-phase term applied when 1
    phase_length: float


@dataclass
class SbrConfig:
    ray_count: int = 100_000
    max_bounces: int = 2
    capture_radius: float = 0.05
    rng_seed: int = 0
    refine: bool = True

    def __post_init__(self):
        if self.ray_count < 1:
            raise ValueError("ray_count must be >= 1")
        if self.max_bounces < 0:
            raise ValueError("max_bounces must be >= 0")
        if self.capture_radius <= 0:
            raise ValueError("capture_radius must be > 0")


def pec_reflect_field(e: np.ndarray, n: np.ndarray) -> np.ndarray:
    """PEC boundary dyadic: tangential component negated, normal preserved."""
    e = np.asarray(e, dtype=float)
    n = as_vec3(n)
    return 2.0 * (e @ n)[..., None] * n - e


def transport_polarization(e0, path: PropagationPath, copol) -> tuple[np.ndarray, int]:
    """Transport a real unit field vector along a path through its PEC bounces.

    Returns the final unit vector and the sign of its projection onto `copol`.
    Raises CrossPolarized when the projection magnitude falls below threshold.
    """
    e0 = as_vec3(e0)
    copol = unit(copol)
    if abs(np.linalg.norm(e0) - 1.0) > 1e-9:
        raise ValueError("e0 must be unit-norm")
    dirs = path.segment_directions()
    if abs(float(np.dot(e0, dirs[0]))) > 1e-9:
        raise ValueError("e0 must be orthogonal to the first segment direction")
    e = e0
    for n in path.bounce_normals:
        e = pec_reflect_field(e, n)
    proj = float(np.dot(e, copol))
    if abs(proj) < CROSS_POL_THRESHOLD:
        raise CrossPolarized(f"|projection| = {abs(proj):.3e}")
    return e, (1 if proj >= 0.0 else -1)


def _leg_copol_amplitude(path: PropagationPath, copol: np.ndarray,
                         orientation: np.ndarray) -> tuple[float, float]:
    """Signed co-pol amplitude of a leg and the launch transverse magnitude.

    The launch field is the transverse part of `orientation` at the first
    segment; the returned amplitude is its projection onto `copol` after PEC
    transport (unnormalized, so it carries the sin(theta) launch pattern).
    """
    s = path.segment_directions()[0]
    e = orientation - float(np.dot(orientation, s)) * s
    tnorm = float(np.linalg.norm(e))
    for n in path.bounce_normals:
        e = pec_reflect_field(e, n)
    return float(np.dot(e, copol)), tnorm


def attach_polarization(paths: Iterable[PropagationPath], copol,
                        orientation=None) -> List[PropagationPath]:
    """Set pol_sign on each path; drop cross-polarized bounced legs.

    Zero-bounce legs are always kept with sign +1 when `orientation` is the
    co-pol vector itself, which keeps the free-space degeneracy with the naive
    back-projection exact.
    """
    copol = unit(copol)
    orientation = copol if orientation is None else unit(orientation)
    out: List[PropagationPath] = []
    for p in paths:
        amp, tnorm = _leg_copol_amplitude(p, copol, orientation)
        if p.order == 0:
            out.append(replace(p, pol_sign=1 if amp >= 0.0 else -1))
            continue
        if tnorm < 1e-12 or abs(amp) < CROSS_POL_THRESHOLD * tnorm:
            continue
        out.append(replace(p, pol_sign=1 if amp >= 0.0 else -1))
    return out


def pair_wavefronts(tx_paths: Sequence[PropagationPath],
                    rx_paths: Sequence[PropagationPath],
                    copol) -> List[WavefrontPair]:
    """Cartesian product of tx and rx legs with polarization parity."""
    copol = unit(copol)
    tx = attach_polarization(tx_paths, copol)
    rx = attach_polarization(rx_paths, copol)
    pairs = []
    for p in tx:
        for q in rx:
            sign = p.pol_sign * q.pol_sign
            pairs.append(WavefrontPair(
                tx_leg=p, rx_leg=q,
                combined_hash=combined_wavefront_hash(
                    p.interaction_sequence, q.interaction_sequence),
                delta=0 if sign > 0 else 1,
                phase_length=p.total_length + q.total_length))
    return pairs


def enumerate_sequences(scene: Scene, max_order: int) -> List[Tuple[int, ...]]:
    """All reflector-id sequences up to max_order without immediate repeats."""
    for f in scene.all_facets:
        if f.kind not in _PLANAR_KINDS:
            raise NonPlanarReflector(f"facet {f.id} has kind {f.kind!r}")
    ids = [f.id for f in scene.all_facets]
    seqs: List[Tuple[int, ...]] = [()]
    frontier: List[Tuple[int, ...]] = [()]
    for _ in range(max_order):
        nxt = []
        for seq in frontier:
            for fid in ids:
                if seq and seq[-1] == fid:
                    continue
                nxt.append(seq + (fid,))
        seqs.extend(nxt)
        frontier = nxt
    return seqs


def _image_chain(antenna: np.ndarray, seq: Sequence[int],
                 scene: Scene) -> List[np.ndarray]:
    """Antenna images for a reflector sequence: images[j] aims bounce j+1.

    images[0] is the deepest image (mirrored through the whole sequence);
    images[m] is the antenna itself.
    """
    chain = [antenna]
    for fid in reversed(tuple(seq)):
        chain.append(mirror_point(chain[-1], scene.by_id[fid]))
    return chain[::-1]


def _trace_sequence(point: np.ndarray, antenna: np.ndarray,
                    seq: Tuple[int, ...], scene: Scene) -> Optional[PropagationPath]:
    """Exact specular path for one reflector sequence, or None if invalid."""
    if not seq:
        if segments_blocked(point, antenna, scene):
            return None
        return _make_path(point, antenna, np.empty((0, 3)), np.empty((0, 3)),
                          (), float(np.linalg.norm(antenna - point)))
    images = _image_chain(antenna, seq, scene)
    total = float(np.linalg.norm(images[0] - point))
    cur = point
    verts = []
    normals = []
    prev_id: Optional[int] = None
    for j, fid in enumerate(seq):
        facet = scene.by_id[fid]
        target = images[j]
        n = facet.normal
        sa = float(np.dot(cur - facet.point, n))
        sb = float(np.dot(target - facet.point, n))
        if sa * sb >= 0.0:
            return None
        t_rel = sa / (sa - sb)
        seg_len = float(np.linalg.norm(target - cur))
        if not (EPS_SELF < t_rel * seg_len < seg_len - EPS_SELF):
            return None
        q = cur + t_rel * (target - cur)
        if not bool(facet.contains(q, margin=0.0)):
            return None
        ignore = {fid} if prev_id is None else {prev_id, fid}
        if segments_blocked(cur, q, scene, ignore=ignore):
            return None
        verts.append(q)
        normals.append(n)
        cur = q
        prev_id = fid
    if segments_blocked(cur, antenna, scene, ignore={seq[-1]}):
        return None
    return _make_path(point, antenna, np.array(verts), np.array(normals),
                      seq, total)


def find_paths_images(point, antenna, scene: Scene,
                      max_order: int) -> List[PropagationPath]:
    """All specular paths up to max_order via the exact image method."""
    if max_order > 5:
        raise ValueError("max_order must be <= 5")
    point = as_vec3(point)
    antenna = as_vec3(antenna)
    paths = []
    for seq in enumerate_sequences(scene, max_order):
        p = _trace_sequence(point, antenna, seq, scene)
        if p is not None:
            paths.append(p)
    paths.sort(key=lambda p: (p.total_length, p.hash))
    return paths


def _uniform_sphere(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sbr_trace(point, antennas, scene: Scene,
              cfg: SbrConfig) -> List[List[PropagationPath]]:
    """Shoot cfg.ray_count rays from `point`; collect captured paths per antenna.

    A ray is captured by an antenna when its current free segment passes within
    cfg.capture_radius of it. Captures are deduplicated per antenna by the
    interaction-sequence hash; with cfg.refine each surviving sequence is
    replaced by its exact image-method path (and dropped if invalid).
    """
    point = as_vec3(point)
    antennas = np.asarray(antennas, dtype=float).reshape(-1, 3)
    n_ant = antennas.shape[0]
    rng = np.random.default_rng(cfg.rng_seed)
    n = cfg.ray_count
    dirs = _uniform_sphere(rng, n)
    origins = np.broadcast_to(point, (n, 3)).copy()
    alive = np.ones(n, dtype=bool)
    seqs = np.full((n, cfg.max_bounces), -1, dtype=np.int64)
    length_so_far = np.zeros(n)
    # per antenna: hash -> (approx_length, sequence, last_vertex)
    captured: List[dict] = [dict() for _ in range(n_ant)]
    facet_ids = np.array([f.id for f in scene.all_facets], dtype=np.int64)
    facet_normals = (np.array([f.normal for f in scene.all_facets])
                     if scene.all_facets else np.empty((0, 3)))

    for bounce in range(cfg.max_bounces + 1):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        o = origins[idx]
        d = dirs[idx]
        t_hit, hit_fi = rays_nearest_hit(o, d, scene)
        for ai in range(n_ant):
            rel = antennas[ai] - o
            tc = np.einsum("ij,ij->i", rel, d)
            tc = np.clip(tc, 0.0, np.where(np.isfinite(t_hit), t_hit, np.inf))
            closest = o + tc[:, None] * d
            d2 = np.einsum("ij,ij->i", closest - antennas[ai],
                           closest - antennas[ai])
            hits = np.flatnonzero(d2 <= cfg.capture_radius ** 2)
            for h in hits:
                ray = idx[h]
                seq = tuple(int(s) for s in seqs[ray, :bounce])
                key = path_hash(seq)
                approx = length_so_far[ray] + float(
                    np.linalg.norm(antennas[ai] - origins[ray]))
                prev = captured[ai].get(key)
                if prev is None or approx < prev[0]:
                    captured[ai][key] = (approx, seq, origins[ray].copy())
        if bounce == cfg.max_bounces:
            break
        hit_ok = np.isfinite(t_hit)
        # Kill grazing rays instead of raising: they carry no usable bounce.
        if np.any(hit_ok):
            cosines = np.abs(np.einsum("ij,ij->i", d, facet_normals[
                np.where(hit_ok, hit_fi, 0)]))
            hit_ok &= cosines > 1e-9
        alive[idx] = hit_ok
        keep = np.flatnonzero(hit_ok)
        if keep.size == 0:
            break
        rays = idx[keep]
        nrm = facet_normals[hit_fi[keep]]
        newo = o[keep] + t_hit[keep, None] * d[keep]
        dn = np.einsum("ij,ij->i", d[keep], nrm)
        dirs[rays] = d[keep] - 2.0 * dn[:, None] * nrm
        length_so_far[rays] += t_hit[keep]
        origins[rays] = newo
        seqs[rays, bounce] = facet_ids[hit_fi[keep]]

    out: List[List[PropagationPath]] = []
    for ai in range(n_ant):
        ant = antennas[ai]
        paths = []
        for key, (approx, seq, last_vertex) in captured[ai].items():
            if cfg.refine:
                exact = _trace_sequence(point, ant, seq, scene)
                if exact is not None:
                    paths.append(exact)
                continue
            # Unrefined: keep the sampled geometry, final leg straight to the
            # antenna, re-checked for occlusion.
            ignore = {seq[-1]} if seq else set()
            if np.linalg.norm(ant - last_vertex) > EPS_SELF and segments_blocked(
                    last_vertex, ant, scene, ignore=ignore):
                continue
            approx_path = _trace_sequence(point, ant, seq, scene)
            if seq and approx_path is None:
                # Sequence exists only within capture slop; keep sampled length.
                paths.append(_make_path(point, ant, np.empty((0, 3)),
                                        np.empty((0, 3)), seq, approx))
            elif not seq:
                paths.append(_make_path(point, ant, np.empty((0, 3)),
                                        np.empty((0, 3)), (),
                                        float(np.linalg.norm(ant - point))))
            else:
                paths.append(replace(approx_path, total_length=approx))
        paths.sort(key=lambda p: (p.total_length, p.hash))
        out.append(paths)
    return out


def find_paths_sbr(point, antenna, scene: Scene,
                   cfg: SbrConfig) -> List[PropagationPath]:
    """SBR path search between one point and one antenna."""
    return sbr_trace(point, [as_vec3(antenna)], scene, cfg)[0]


class ImagePathTable:
    """Precomputed image-method machinery for one antenna list.

    For every admissible reflector sequence the antenna mirror images and the
    composite PEC field dyadic are frequency- and voxel-independent, so they
    are built once and evaluated for whole voxel blocks at a time.
    """

    def __init__(self, scene: Scene, antennas, max_order: int, copol):
        self.scene = scene
        self.antennas = np.asarray(antennas, dtype=float).reshape(-1, 3)
        self.copol = unit(copol)
        self.max_order = int(max_order)
        self.sequences = enumerate_sequences(scene, self.max_order)
        self._dot_cache: dict = {}
        self._entries = []
        for seq in self.sequences:
            chains = []  # images[j] per bounce, each (A, 3)
            pts = self.antennas
            rev = []
            for fid in reversed(seq):
                pts = mirror_points(pts, scene.by_id[fid])
                rev.append(pts)
            chains = rev[::-1]  # chains[0] = deepest image
            m = np.eye(3)
            for fid in seq:
                n = scene.by_id[fid].normal
                m = (2.0 * np.outer(n, n) - np.eye(3)) @ m
            self._entries.append({
                "seq": seq,
                "images": chains,
                "field_matrix": m,
                "w": m.T @ self.copol,
                "facets": [scene.by_id[fid] for fid in seq],
            })

    def _adot(self, base: np.ndarray, vec: np.ndarray) -> np.ndarray:
        key = (id(base), id(vec))
        out = self._dot_cache.get(key)
        if out is None:
            out = base @ vec
            self._dot_cache[key] = out
        return out

    def eval(self, points: np.ndarray, orientation=None):
        """Yield (seq, lengths, amp, tnorm, valid) per sequence for a point block.

        lengths/amp/tnorm/valid have shape (V, A). `amp` is the signed,
        unnormalized co-pol amplitude after PEC transport of the transverse
        part of `orientation` (default: the co-pol vector); `tnorm` is the
        launch transverse magnitude used by the cross-pol test.

        Every point of the unfolded specular chain is an affine combination of
        the voxel block and fixed antenna-image sets, and every physical
        segment length is a fraction of the unfolded total, so the whole
        validity computation runs on (V, A) scalar fields.
        """
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        ori = self.copol if orientation is None else unit(orientation)
        ants = self.antennas
        pcache: dict = {}

        def pdot(vec: np.ndarray) -> np.ndarray:
            out = pcache.get(id(vec))
            if out is None:
                out = points @ vec
                pcache[id(vec)] = out
            return out

        def term_dot(terms, vec):
            acc = None
            for coeff, base, axis in terms:
                d = (pdot(vec)[:, None] if axis == 0
                     else self._adot(base, vec)[None, :])
                x = d if coeff is None else coeff * d
                acc = x if acc is None else acc + x
            return acc

        def cross_blocked(facet, a_terms, b_terms, seg_len, margin):
            """True where the open physical segment crosses `facet`."""
            n = facet.normal
            off = float(facet.point @ n)
            sa = term_dot(a_terms, n) - off
            sb = term_dot(b_terms, n) - off
            crossing = (sa * sb) < 0.0
            if not crossing.any():
                return None
            denom = np.where(sa == sb, 1.0, sa - sb)
            tau = np.where(crossing, sa / denom, 0.5)
            t_m = tau * seg_len
            crossing &= (t_m > EPS_SELF) & (t_m < seg_len - EPS_SELF)
            if facet.kind == "plane":
                return crossing

            def xdot(vec):
                ad = term_dot(a_terms, vec)
                bd = term_dot(b_terms, vec)
                return ad + tau * (bd - ad)

            if facet.kind == "rectangle":
                u_hat, v_hat, ulen, vlen = facet.frame
                cu = xdot(u_hat) - float(facet.point @ u_hat)
                crossing &= (cu >= margin) & (cu <= ulen - margin)
                cv = xdot(v_hat) - float(facet.point @ v_hat)
                crossing &= (cv >= margin) & (cv <= vlen - margin)
                return crossing
            e1, e2, d00, d01, d11, inv_denom, scale = facet.frame
            d20 = xdot(e1) - float(facet.point @ e1)
            d21 = xdot(e2) - float(facet.point @ e2)
            bv = (d11 * d20 - d01 * d21) * inv_denom
            bw = (d00 * d21 - d01 * d20) * inv_denom
            eps = margin / scale
            crossing &= (bv >= eps) & (bw >= eps) & (1.0 - bv - bw >= eps)
            return crossing

        def occlusion(valid, a_terms, b_terms, seg_len, ignore):
            for f in self.scene.all_facets:
                if f.id in ignore or f.id not in self.scene.occluder_ids:
                    continue
                blocked = cross_blocked(f, a_terms, b_terms, seg_len,
                                        EDGE_MARGIN)
                if blocked is not None:
                    valid &= ~blocked
            return valid

        pp = np.einsum("vi,vi->v", points, points)
        p_ori = pdot(ori)
        point_terms = [(None, points, 0)]
        ant_terms = [(None, ants, 1)]
        for entry in self._entries:
            seq = entry["seq"]
            target0 = entry["images"][0] if seq else ants
            # |target - point| via the expanded square, no (V, A, 3) tensor.
            tt = np.einsum("ai,ai->a", target0, target0)
            lengths = pp[:, None] - 2.0 * (points @ target0.T) + tt[None, :]
            np.sqrt(np.maximum(lengths, 0.0, out=lengths), out=lengths)
            valid = lengths > 1e-9
            safe = np.where(valid, lengths, 1.0)
            os_dot = (self._adot(target0, ori)[None, :] - p_ori[:, None]) / safe
            w = entry["w"]
            s_w = (self._adot(target0, w)[None, :] - pdot(w)[:, None]) / safe
            amp = float(ori @ w) - os_dot * s_w
            tnorm = np.sqrt(np.maximum(0.0, 1.0 - os_dot ** 2))
            if not seq:
                valid = occlusion(valid, point_terms, ant_terms, lengths, ())
                yield seq, lengths, amp, tnorm, valid
                continue
            cur_terms = point_terms
            rem = lengths
            prev_id = None
            dead = False
            for j, facet in enumerate(entry["facets"]):
                image_j = entry["images"][j]
                n = facet.normal
                off = float(facet.point @ n)
                sa = term_dot(cur_terms, n) - off
                sb = self._adot(image_j, n)[None, :] - off
                crossing = (sa * sb) < 0.0
                valid &= crossing
                if not valid.any():
                    dead = True
                    break
                denom = np.where(sa == sb, 1.0, sa - sb)
                tau = np.where(crossing, sa / denom, 0.5)
                t_m = tau * rem
                valid &= (t_m > EPS_SELF) & (t_m < rem - EPS_SELF)
                # scale existing terms by (1 - tau), then add tau * image_j
                q_terms = [((1.0 - tau) if c is None else c * (1.0 - tau),
                            b, ax) for c, b, ax in cur_terms]
                q_terms.append((tau, image_j, 1))
                if facet.kind == "rectangle":
                    u_hat, v_hat, ulen, vlen = facet.frame
                    cu = term_dot(q_terms, u_hat) - float(facet.point @ u_hat)
                    valid &= (cu >= 0.0) & (cu <= ulen)
                    cv = term_dot(q_terms, v_hat) - float(facet.point @ v_hat)
                    valid &= (cv >= 0.0) & (cv <= vlen)
                elif facet.kind == "triangle":
                    e1, e2, d00, d01, d11, inv_denom, scale = facet.frame
                    d20 = term_dot(q_terms, e1) - float(facet.point @ e1)
                    d21 = term_dot(q_terms, e2) - float(facet.point @ e2)
                    bv = (d11 * d20 - d01 * d21) * inv_denom
                    bw = (d00 * d21 - d01 * d20) * inv_denom
                    valid &= (bv >= 0.0) & (bw >= 0.0) & (1.0 - bv - bw >= 0.0)
                ignore = {facet.id} if prev_id is None else {prev_id, facet.id}
                valid = occlusion(valid, cur_terms, q_terms, tau * rem, ignore)
                rem = (1.0 - tau) * rem
                cur_terms = q_terms
                prev_id = facet.id
            if not dead:
                valid = occlusion(valid, cur_terms, ant_terms, rem,
                                  {seq[-1]})
            yield seq, lengths, amp, tnorm, valid

    def eval_reference(self, points: np.ndarray, orientation=None):
        """Straightforward per-sequence walk kept as an oracle for eval()."""
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        ori = self.copol if orientation is None else unit(orientation)
        ants = self.antennas
        from .geometry import _norms

        for entry in self._entries:
            seq = entry["seq"]
            if seq:
                diff = entry["images"][0][None, :, :] - points[:, None, :]
            else:
                diff = ants[None, :, :] - points[:, None, :]
            lengths = _norms(diff)
            valid = lengths > 1e-9
            with np.errstate(invalid="ignore", divide="ignore"):
                s = diff / np.where(lengths[..., None] == 0.0, 1.0,
                                    lengths[..., None])
            os_dot = s @ ori
            w = entry["w"]
            amp = float(ori @ w) - os_dot * (s @ w)
            tnorm = np.sqrt(np.maximum(0.0, 1.0 - os_dot ** 2))
            if not seq:
                valid &= ~segments_blocked(points[:, None, :],
                                           ants[None, :, :], self.scene)
                yield seq, lengths, amp, tnorm, valid
                continue
            cur = np.broadcast_to(points[:, None, :],
                                  (points.shape[0], ants.shape[0], 3)).copy()
            prev_id = None
            for j, facet in enumerate(entry["facets"]):
                target = entry["images"][j][None, :, :]
                n = facet.normal
                sa = (cur - facet.point) @ n
                sb = (target - facet.point) @ n
                crossing = (sa * sb) < 0.0
                denom = np.where(sa == sb, 1.0, sa - sb)
                t_rel = np.where(crossing, sa / denom, 0.5)
                seg = target - cur
                seg_len = _norms(seg)
                t_m = t_rel * seg_len
                q = cur + t_rel[..., None] * seg
                valid &= crossing & (t_m > EPS_SELF) & (t_m < seg_len - EPS_SELF)
                valid &= facet.contains(q, margin=0.0)
                ignore = {facet.id} if prev_id is None else {prev_id, facet.id}
                valid &= ~segments_blocked(cur, q, self.scene, ignore=ignore)
                cur = q
                prev_id = facet.id
            valid &= ~segments_blocked(cur, ants[None, :, :], self.scene,
                                       ignore={seq[-1]})
            yield seq, lengths, amp, tnorm, valid
