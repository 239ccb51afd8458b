"""Greedy construction of the marginal genealogical tree of a haplotype panel.

At a focal position the panel haplotypes are traced backward in time by
repeatedly applying the highest-scoring event (coalescence, mutation removal,
or recombination trim). Scores combine standard coalescent event rates with
haplotype-copying likelihood ratios of only the lineages an event touches.
The focal flank discarded by a recombination trim ceases to be tracked, and
construction stops once the focal site has a single common ancestor, so the
output is the marginal tree at that position only.

Each branch carries its clade as a tip bitmask and a lineage-count epoch
(n_birth, n_death) used downstream for coalescent branch-length priors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import DataError, HaplotypePanel, RecombinationMap

NONANC = -1  # allele value marking non-ancestral (or virtual) material

DEFAULT_NE = 11418


def watterson_theta(n: int) -> float:
    """1 / sum_{i<n} 1/i — the standard per-site mutation-rate surrogate."""
    if n < 2:
        raise DataError("need at least 2 haplotypes")
    return 1.0 / sum(1.0 / i for i in range(1, n))


@dataclass
class TreesimParams:
    theta: float | None = None  # per-site scaled mutation rate; None -> Watterson
    rho_scale: float = 4.0 * DEFAULT_NE  # cM -> population-scaled rho multiplier
    window_sites: int = 200

    def __post_init__(self):
        if self.theta is not None and self.theta <= 0:
            raise DataError("theta must be positive")
        if self.rho_scale <= 0 or self.window_sites < 1:
            raise DataError("rho_scale must be positive and window_sites >= 1")

    def resolved_theta(self, n_haplotypes: int) -> float:
        return self.theta if self.theta is not None else watterson_theta(n_haplotypes)


def expected_branch_length(epoch: tuple[int, int]) -> float:
    """Expected coalescent length of a branch alive from n_birth down to n_death
    lineages: sum_{i=n_death}^{n_birth} 2/(i(i-1))."""
    n_birth, n_death = epoch
    m, n = n_death, n_birth
    if m < 2 or m > n:
        raise DataError(f"invalid epoch (n_birth={n}, n_death={m})")
    return sum(2.0 / (i * (i - 1)) for i in range(m, n + 1))


@dataclass
class Branch:
    id: int
    parent: int
    tips: int  # bitmask over the N panel haplotypes
    n_birth: int
    n_death: int

    @property
    def epoch(self) -> tuple[int, int]:
        return (self.n_birth, self.n_death)

    def tip_indices(self, n_tips: int) -> list[int]:
        return [i for i in range(n_tips) if self.tips >> i & 1]


@dataclass
class MarginalTree:
    focal_position_bp: int
    n_tips: int
    branches: list[Branch]

    def __post_init__(self):
        if len(self.branches) != 2 * self.n_tips - 2:
            raise DataError(
                f"tree with {self.n_tips} tips must have {2 * self.n_tips - 2} branches"
            )

    def total_expected_length(self) -> float:
        return sum(expected_branch_length(b.epoch) for b in self.branches)

    def branch_by_id(self, branch_id: int) -> Branch:
        for b in self.branches:
            if b.id == branch_id:
                return b
        raise KeyError(branch_id)

    def tip_mask_matrix(self) -> np.ndarray:
        """(N, B) 0/1 matrix: column b marks the tips in branch b's clade."""
        m = np.zeros((self.n_tips, len(self.branches)), dtype=np.float64)
        for j, b in enumerate(self.branches):
            for i in range(self.n_tips):
                if b.tips >> i & 1:
                    m[i, j] = 1.0
        return m

    def newick(self) -> str:
        """Newick string with branch id / epoch comments."""
        children: dict[int, list[int]] = {}
        for b in self.branches:
            children.setdefault(b.parent, []).append(b.id)
        by_id = {b.id: b for b in self.branches}
        root = 2 * self.n_tips - 2

        def render(node: int) -> str:
            kids = children.get(node, [])
            if not kids:
                label = f"h{node}"
            else:
                label = "(" + ",".join(render(k) for k in sorted(kids)) + ")"
            if node in by_id:
                b = by_id[node]
                label += f"[&id={b.id},epoch={b.n_birth}-{b.n_death}]"
            return label

        return render(root) + ";"


# ---------------------------------------------------------------------------
# Construction state


@dataclass
class Lineage:
    id: int
    left: int  # inclusive extended-coordinate interval, always containing the focal coord
    right: int
    seq: np.ndarray  # alleles over extended coords; NONANC outside interval / at focal
    tips: int
    n_birth: int


@dataclass
class _Window:
    focal_position_bp: int
    focal_idx: int  # extended coordinate of the (virtual) focal site
    focal_is_site: bool
    alleles: np.ndarray  # (N, W) derived-recoded panel slice over extended coords
    cum_rho: np.ndarray  # cumulative scaled rho at each extended coord
    rho_gap: np.ndarray  # scaled rho per gap (len W-1)
    theta: float

    @property
    def n_coords(self) -> int:
        return self.alleles.shape[1]


def make_window(
    panel: HaplotypePanel,
    gmap: RecombinationMap,
    focal_position_bp: int,
    params: TreesimParams,
) -> _Window:
    """Slice the panel around the focal position and recode minor alleles as derived."""
    pos = panel.positions_bp
    insert = int(np.searchsorted(pos, focal_position_bp))
    lo = max(0, insert - params.window_sites)
    hi = min(panel.n_sites, insert + params.window_sites)
    if hi <= lo:
        raise DataError("focal position has no panel sites in window")
    sites = np.arange(lo, hi)
    site_pos = pos[sites].astype(np.float64)
    sub = panel.alleles[:, sites].astype(np.int8)

    # minor allele as derived
    freq = sub.mean(axis=0)
    flip = freq > 0.5
    sub[:, flip] = 1 - sub[:, flip]

    focal_is_site = insert < panel.n_sites and pos[insert] == focal_position_bp
    if focal_is_site:
        coords_pos = site_pos
        alleles = sub
        focal_idx = insert - lo
    else:
        k = int(np.searchsorted(site_pos, focal_position_bp))
        coords_pos = np.insert(site_pos, k, float(focal_position_bp))
        alleles = np.insert(sub, k, NONANC, axis=1)
        focal_idx = k

    cum_cm = gmap.cumulative_at(coords_pos)
    cum_rho = (cum_cm - cum_cm[0]) / 100.0 * params.rho_scale
    rho_gap = np.diff(cum_rho)
    theta = params.resolved_theta(panel.n_haplotypes)
    return _Window(
        focal_position_bp=focal_position_bp,
        focal_idx=focal_idx,
        focal_is_site=focal_is_site,
        alleles=alleles,
        cum_rho=cum_rho,
        rho_gap=rho_gap,
        theta=theta,
    )


def initial_lineages(win: _Window) -> list[Lineage]:
    n = win.alleles.shape[0]
    out = []
    for i in range(n):
        seq = win.alleles[i].copy()
        out.append(
            Lineage(
                id=i,
                left=0,
                right=win.n_coords - 1,
                seq=seq,
                tips=1 << i,
                n_birth=n,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Copying-likelihood machinery


def _copy_lambda(n_templates: int) -> float:
    th = watterson_theta(n_templates + 1)
    return th / (2.0 * (n_templates + th))


@dataclass
class _Messages:
    """Scaled forward/backward messages of one lineage against the other live
    lineages, with everything needed to score events touching that lineage."""

    obs: list[int]  # extended coords carrying an observation
    log_pi: float  # log Li-Stephens conditional of the whole active sequence
    log_left: np.ndarray  # log standalone likelihood of the prefix ending at obs[i]
    log_right: np.ndarray  # log standalone likelihood of the suffix starting at obs[i]
    gamma: np.ndarray  # (n_obs, n_t) per-site copying posterior
    emit_ratio_flip: np.ndarray  # (n_obs, n_t) emission ratio if the site allele flips


def lineage_messages(target: Lineage, others: list[Lineage], win: _Window) -> _Messages | None:
    """Forward-backward of `target` copying from `others`; None if no observations."""
    obs = [j for j in range(target.left, target.right + 1) if target.seq[j] != NONANC]
    if not obs or not others:
        return None
    n_t = len(others)
    lam = _copy_lambda(n_t)
    tmpl = np.stack([o.seq[obs] for o in others])  # (n_t, n_obs)
    x = target.seq[obs]  # (n_obs,)

    match = tmpl == x[None, :]
    em = np.where(tmpl == NONANC, 0.5, np.where(match, 1.0 - lam, lam))  # (n_t, n_obs)
    em_flip = np.where(tmpl == NONANC, 0.5, np.where(match, lam, 1.0 - lam))

    n_obs = len(obs)
    d = np.diff(win.cum_rho[obs])
    sw = -np.expm1(-d / n_t)  # per-interval switch probability

    f = np.empty((n_obs, n_t))
    logc = np.empty(n_obs)
    cur = em[:, 0] / n_t
    s0 = cur.sum()
    f[0] = cur / s0
    logc[0] = math.log(s0)
    for i in range(1, n_obs):
        pred = (1.0 - sw[i - 1]) * f[i - 1] + sw[i - 1] / n_t
        cur = pred * em[:, i]
        s = cur.sum()
        f[i] = cur / s
        logc[i] = math.log(s)

    # b[i] ~ P(obs after i | state at i), scaled; logd[i] holds the scale
    b = np.empty((n_obs, n_t))
    logd = np.empty(n_obs)
    b[-1] = 1.0
    logd[-1] = 0.0
    for i in range(n_obs - 2, -1, -1):
        w = em[:, i + 1] * b[i + 1]
        pred = (1.0 - sw[i]) * w + sw[i] / n_t * w.sum()
        s = pred.sum()
        b[i] = pred / s
        logd[i] = logd[i + 1] + math.log(s)

    gamma = f * b
    gamma /= gamma.sum(axis=1, keepdims=True)

    log_left = np.cumsum(logc)
    # standalone suffix likelihood starting fresh (uniform template) at obs[i]
    log_right = np.empty(n_obs)
    for i in range(n_obs):
        v = float(np.sum(em[:, i] * b[i]) / n_t)
        log_right[i] = math.log(v) + logd[i]

    with np.errstate(divide="ignore"):
        ratio = np.where(em.T > 0, em_flip.T / np.where(em.T > 0, em.T, 1.0), np.inf)
    return _Messages(
        obs=obs,
        log_pi=float(log_left[-1]),
        log_left=log_left,
        log_right=log_right,
        gamma=gamma,
        emit_ratio_flip=ratio,
    )


# ---------------------------------------------------------------------------
# Event enumeration and scoring


@dataclass(order=True)
class ScoredEvent:
    sort_key: tuple = field(compare=True)
    kind: str = field(compare=False)  # "coal" | "mut" | "rec"
    lineage_ids: tuple = field(compare=False)
    site: int = field(compare=False, default=-1)  # mutation site or trim gap
    side: str = field(compare=False, default="")  # "L"/"R" for recombination
    log_score: float = field(compare=False, default=0.0)


_KIND_RANK = {"coal": 0, "mut": 1, "rec": 2}


def _make_event(kind, ids, log_score, site=-1, side="") -> ScoredEvent:
    side_rank = 0 if side != "R" else 1
    key = (-log_score, _KIND_RANK[kind], ids, site, side_rank)
    return ScoredEvent(
        sort_key=key, kind=kind, lineage_ids=ids, site=site, side=side, log_score=log_score
    )


def compatible(a: Lineage, b: Lineage) -> bool:
    """Sequences agree wherever both are ancestral inside the interval overlap."""
    lo, hi = max(a.left, b.left), min(a.right, b.right)
    if lo > hi:
        return True
    sa = a.seq[lo : hi + 1]
    sb = b.seq[lo : hi + 1]
    both = (sa != NONANC) & (sb != NONANC)
    return bool(np.all(sa[both] == sb[both]))


def enumerate_events(
    lineages: list[Lineage], win: _Window, params: TreesimParams
) -> list[ScoredEvent]:
    """Score every candidate next event backward in time for the current state.

    Coalescences pair compatible lineages (prior rate 1, likelihood 1/pi of the
    younger member); mutations remove a derived allele carried by exactly one
    live lineage (prior theta/2); recombinations trim one flank at an inter-SNP
    gap (prior rho_gap/2).
    """
    if len(lineages) < 2:
        raise DataError("need at least two live lineages")
    lineages = sorted(lineages, key=lambda l: l.id)
    msgs: dict[int, _Messages | None] = {}
    for i, lin in enumerate(lineages):
        others = [o for j, o in enumerate(lineages) if j != i]
        msgs[lin.id] = lineage_messages(lin, others, win)

    events: list[ScoredEvent] = []

    # coalescences
    for i, a in enumerate(lineages):
        for b in lineages[i + 1 :]:
            if not compatible(a, b):
                continue
            m = msgs[b.id]  # b has the higher id
            log_pi = m.log_pi if m is not None else 0.0
            events.append(_make_event("coal", (a.id, b.id), -log_pi))

    # mutations: derived allele carried by exactly one live lineage
    theta = params.resolved_theta(win.alleles.shape[0])
    log_half_theta = math.log(theta / 2.0)
    n_coords = win.n_coords
    carrier_count = np.zeros(n_coords, dtype=np.int64)
    carrier_id = np.full(n_coords, -1, dtype=np.int64)
    for lin in lineages:
        is1 = lin.seq == 1
        carrier_count += is1
        carrier_id[is1] = lin.id
    for j in range(n_coords):
        if carrier_count[j] != 1:
            continue
        lid = int(carrier_id[j])
        m = msgs[lid]
        if m is None:
            ratio = 1.0
        else:
            k = m.obs.index(j)
            ratio = float(np.sum(m.gamma[k] * m.emit_ratio_flip[k]))
        events.append(_make_event("mut", (lid,), log_half_theta + math.log(ratio), site=j))

    # recombinations: trim one flank inside the active interval
    for lin in lineages:
        m = msgs[lin.id]
        for side, gaps in (
            ("L", range(lin.left, win.focal_idx)),
            ("R", range(win.focal_idx, lin.right)),
        ):
            for g in gaps:
                rho = float(win.rho_gap[g])
                if rho <= 0.0:
                    continue
                log_ratio = _split_log_ratio(lin, m, g, side)
                events.append(
                    _make_event(
                        "rec",
                        (lin.id,),
                        math.log(rho / 2.0) + log_ratio,
                        site=g,
                        side=side,
                    )
                )
    return events


def _split_log_ratio(lin: Lineage, m: _Messages | None, gap: int, side: str) -> float:
    """log [pi(kept) pi(shed) / pi(whole)] for a trim at `gap` (between extended
    coords gap and gap+1)."""
    if m is None:
        return 0.0
    obs = m.obs
    # observations at coords <= gap go to the left part, > gap to the right part
    n_left = int(np.searchsorted(np.asarray(obs), gap, side="right"))
    if n_left == 0 or n_left == len(obs):
        return 0.0  # one part carries no observations; likelihood unchanged
    return float(m.log_left[n_left - 1] + m.log_right[n_left] - m.log_pi)


def apply_event(
    lineages: list[Lineage],
    event: ScoredEvent,
    win: _Window,
    branches: list[Branch],
    next_node_id: int,
) -> tuple[list[Lineage], int]:
    """Apply one event, recording branches on coalescence. Returns the new
    lineage list and next free node id."""
    by_id = {l.id: l for l in lineages}
    if event.kind == "coal":
        a = by_id[event.lineage_ids[0]]
        b = by_id[event.lineage_ids[1]]
        count = len(lineages)
        new_id = next_node_id
        seq = a.seq.copy()
        take_b = (seq == NONANC) & (b.seq != NONANC)
        seq[take_b] = b.seq[take_b]
        merged = Lineage(
            id=new_id,
            left=min(a.left, b.left),
            right=max(a.right, b.right),
            seq=seq,
            tips=a.tips | b.tips,
            n_birth=count - 1,
        )
        for child in (a, b):
            branches.append(
                Branch(
                    id=child.id,
                    parent=new_id,
                    tips=child.tips,
                    n_birth=child.n_birth,
                    n_death=count,
                )
            )
        rest = [l for l in lineages if l.id not in (a.id, b.id)]
        return rest + [merged], next_node_id + 1
    if event.kind == "mut":
        lin = by_id[event.lineage_ids[0]]
        lin.seq[event.site] = 0
        return lineages, next_node_id
    if event.kind == "rec":
        lin = by_id[event.lineage_ids[0]]
        if event.side == "L":
            lin.seq[lin.left : event.site + 1] = NONANC
            lin.left = event.site + 1
        else:
            lin.seq[event.site + 1 : lin.right + 1] = NONANC
            lin.right = event.site
        return lineages, next_node_id
    raise DataError(f"unknown event kind {event.kind!r}")


def build_tree(
    panel: HaplotypePanel,
    gmap: RecombinationMap,
    focal_position_bp: int,
    params: TreesimParams | None = None,
    record_events: list | None = None,
) -> MarginalTree:
    """Greedy highest-posterior-event construction of the marginal tree at one
    position. Deterministic: ties break by event type, lineage id, then site."""
    params = params or TreesimParams()
    win = make_window(panel, gmap, focal_position_bp, params)
    lineages = initial_lineages(win)
    branches: list[Branch] = []
    next_node = panel.n_haplotypes
    budget = 4 * (len(lineages) + win.n_coords * len(lineages))
    steps = 0
    while len(lineages) > 1:
        events = enumerate_events(lineages, win, params)
        if not events:
            raise DataError(
                f"no candidate event at position {focal_position_bp}; "
                "zero recombination rate with incompatible haplotypes"
            )
        best = min(events)
        if record_events is not None:
            record_events.append(best)
        lineages, next_node = apply_event(lineages, best, win, branches, next_node)
        steps += 1
        if steps > budget:
            raise DataError("tree construction failed to terminate")
    return MarginalTree(
        focal_position_bp=focal_position_bp,
        n_tips=panel.n_haplotypes,
        branches=sorted(branches, key=lambda b: b.id),
    )


# ---------------------------------------------------------------------------
# Tree store

STORE_MAGIC = "cladescan-trees"
STORE_VERSION = 1


def tree_store_write(trees: list[MarginalTree], path) -> None:
    """Write a versioned newline-delimited tree store, one record per position."""
    trees = sorted(trees, key=lambda t: t.focal_position_bp)
    with open(path, "w", newline="\n") as fh:
        fh.write(f"{STORE_MAGIC} v{STORE_VERSION} ntrees={len(trees)}\n")
        for t in trees:
            fh.write(f"tree {t.focal_position_bp} {t.n_tips} {len(t.branches)}\n")
            for b in t.branches:
                fh.write(f"{b.id} {b.parent} {b.n_birth} {b.n_death} {b.tips:x}\n")


def tree_store_read(path) -> list[MarginalTree]:
    with open(path, "r", newline=None) as fh:
        header = fh.readline().split()
        if len(header) < 2 or header[0] != STORE_MAGIC:
            raise DataError(f"{path}: not a tree store")
        if header[1] != f"v{STORE_VERSION}":
            raise DataError(f"{path}: unsupported tree store version {header[1]}")
        expected = None
        for tok in header[2:]:
            if tok.startswith("ntrees="):
                expected = int(tok.split("=", 1)[1])
        trees = []
        line = fh.readline()
        while line:
            tok = line.split()
            if tok[0] != "tree" or len(tok) != 4:
                raise DataError(f"{path}: malformed tree record header")
            pos, n_tips, n_branches = int(tok[1]), int(tok[2]), int(tok[3])
            branches = []
            for _ in range(n_branches):
                bl = fh.readline()
                if not bl:
                    raise DataError(f"{path}: truncated tree store")
                bt = bl.split()
                if len(bt) != 5:
                    raise DataError(f"{path}: malformed branch row")
                branches.append(
                    Branch(
                        id=int(bt[0]),
                        parent=int(bt[1]),
                        n_birth=int(bt[2]),
                        n_death=int(bt[3]),
                        tips=int(bt[4], 16),
                    )
                )
            trees.append(
                MarginalTree(focal_position_bp=pos, n_tips=n_tips, branches=branches)
            )
            line = fh.readline()
    if expected is not None and len(trees) != expected:
        raise DataError(f"{path}: truncated tree store ({len(trees)}/{expected} trees)")
    return trees
