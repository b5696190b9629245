"""Extraction of extreme episodes from a Laplace-scale space-time field.

Runs declustering at the conditioning site groups threshold exceedances
separated by fewer than r non-exceedances into single clusters; each
cluster contributes one episode starting at its first exceedance.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

__all__ = ["RunsConfig", "EpisodeSet", "decluster_runs", "extract_episodes"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunsConfig:
    """Declustering parameters.

    u is the Laplace-scale threshold; a cluster closes after r consecutive
    non-exceedances, counted strictly after its last exceedance; episodes
    span ell consecutive steps and may not cross a year boundary.
    """

    u: float
    r: int = 12
    ell: int = 7
    year_boundaries: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.r < 1 or self.ell < 1:
            raise ValueError("r and ell must be >= 1")


@dataclass
class EpisodeSet:
    """Replicated extreme episodes on the Laplace scale.

    values has shape (n, d, ell) with NaN at unobserved entries and mask
    True where observed.  x holds the conditioning values, one per
    episode, all exceeding the threshold u at (s0, first step).
    """

    values: np.ndarray
    mask: np.ndarray
    x: np.ndarray
    u: float
    site_coords: np.ndarray
    s0_index: int
    site_ids: list = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.x = np.asarray(self.x, dtype=np.float64)
        self.site_coords = np.asarray(self.site_coords, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape != self.mask.shape:
            raise ValueError("values and mask must both be (n, d, ell)")
        if len(self.x) != self.values.shape[0]:
            raise ValueError("one conditioning value per episode required")
        if np.any(self.x <= self.u):
            raise ValueError("every conditioning value must exceed u")
        if not (0 <= self.s0_index < self.values.shape[1]):
            raise ValueError("s0_index out of range")

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def d(self):
        return self.values.shape[1]

    @property
    def ell(self):
        return self.values.shape[2]

    def distances(self):
        """Euclidean distance of every site to the conditioning site."""
        return np.linalg.norm(
            self.site_coords - self.site_coords[self.s0_index], axis=1
        )

    def to_csv(self, path):
        ids = self.site_ids or [str(i) for i in range(self.d)]
        with open(path, "w") as fh:
            fh.write("episode_id,site_id,time_offset,laplace_value,is_conditioning\n")
            for j in range(self.n):
                for i in range(self.d):
                    for t in range(self.ell):
                        if not self.mask[j, i, t]:
                            continue
                        cond = int(i == self.s0_index and t == 0)
                        fh.write(
                            f"{j},{ids[i]},{t},{float(self.values[j, i, t])!r},{cond}\n"
                        )


def decluster_runs(series_at_s0, cfg):
    """Indices of the first exceedance of each cluster.

    A cluster opens at an exceedance of cfg.u and closes when cfg.r
    consecutive non-exceedances follow its last exceedance.  Scanning
    restarts at each year boundary, so no cluster spans one.  A series
    with no exceedances yields an empty list.
    """
    series = np.asarray(series_at_s0, dtype=np.float64).ravel()
    if not np.all(np.isfinite(series)):
        raise ValueError("series contains non-finite values")
    bounds = sorted(set(int(b) for b in cfg.year_boundaries))
    segments = []
    lo = 0
    for b in bounds:
        if lo < b <= len(series):
            segments.append((lo, b))
            lo = b
    segments.append((lo, len(series)))
    starts = []
    for seg_lo, seg_hi in segments:
        gap = cfg.r  # open: no active cluster at the segment start
        for idx in range(seg_lo, seg_hi):
            if series[idx] > cfg.u:
                if gap >= cfg.r:
                    starts.append(idx)
                gap = 0
            else:
                gap += 1
    return starts


def extract_episodes(field_values, field_mask, site_coords, s0_index, starts, cfg,
                     site_ids=None):
    """Cut episodes of cfg.ell steps from a (d, T) Laplace-scale field.

    Episodes whose window would cross the record end or a year boundary
    are dropped with a logged count.
    """
    field_values = np.asarray(field_values, dtype=np.float64)
    d, T = field_values.shape
    if not (0 <= s0_index < d):
        raise ValueError(f"s0_index {s0_index} out of range for {d} sites")
    if field_mask is None:
        field_mask = np.isfinite(field_values)
    field_mask = np.asarray(field_mask, dtype=bool)
    bounds = sorted(set(int(b) for b in cfg.year_boundaries))
    vals, masks, xs = [], [], []
    dropped = 0
    for s in starts:
        end = s + cfg.ell
        if end > T or any(s < b < end for b in bounds):
            dropped += 1
            continue
        window_vals = field_values[:, s:end]
        window_mask = field_mask[:, s:end]
        if not window_mask[s0_index, 0]:
            dropped += 1
            continue
        vals.append(np.where(window_mask, window_vals, np.nan))
        masks.append(window_mask)
        xs.append(field_values[s0_index, s])
    if dropped:
        log.info("dropped %d episodes at record/year boundaries", dropped)
    if not vals:
        raise ValueError("no complete episodes could be extracted")
    return EpisodeSet(
        values=np.stack(vals),
        mask=np.stack(masks),
        x=np.array(xs),
        u=cfg.u,
        site_coords=site_coords,
        s0_index=s0_index,
        site_ids=site_ids,
    )
