"""Seeded synthetic impression streams with planted feature interactions.

The generator is a pure function of its config: every draw comes from
the counter-based hash in :mod:`countfeat.rng`, keyed by (seed, stream
tag, entity ids), so the same config reproduces the same byte stream on
any platform.

Structure of the stream:

* Each user gets a daily impression rate from a truncated power law,
  so a small set of heavy users dominates volume.
* Feature values draw uniformly from each feature's vocabulary.
* Users are partitioned into disjoint receptive slices, one slice per
  planted key, by hashing the user id.  A receptive user has a hot
  region of that key's value tuples: a contiguous interval per key
  feature (an interval for one feature, a rectangle for two), covering
  about hot_fraction of the tuple space, its position hashed per user.
  Impressions landing on the hot region get their CTR multiplied by
  the key's lift: p = clamp(base_ctr * prod(matching lifts), 0, 1).
  Different users have different hot regions, so only user-conditioned
  aggregates can explain the labels globally.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import rng
from .core import CountingKey, Dataset, FeatureDescriptor, FeatureSchema, Impression
from .errors import InvalidConfig, IoFailure

__all__ = [
    "PlantedKey",
    "SynthConfig",
    "default_schema",
    "generate",
    "ground_truth_keys",
    "hot_mask",
    "read_synth_config",
    "parse_sections",
    "synth_config_from_sections",
]

SECONDS_PER_DAY = 86400

_T_RATE = rng.tag("synth.rate")
_T_COUNT = rng.tag("synth.count")
_T_TS = rng.tag("synth.ts")
_T_AD = rng.tag("synth.ad")
_T_VALUE = rng.tag("synth.value")
_T_HOT = rng.tag("synth.hot")
_T_RECEPTIVE = rng.tag("synth.receptive")
_T_PREF_GATE = rng.tag("synth.pref_gate")
_T_PREF_REGION = rng.tag("synth.pref_region")
_T_PREF_VALUE = rng.tag("synth.pref_value")
_T_HABIT = rng.tag("synth.habit")
_T_HABIT_GATE = rng.tag("synth.habit_gate")
_T_HABIT_VALUE = rng.tag("synth.habit_value")
_T_LABEL = rng.tag("synth.label")


def default_schema() -> FeatureSchema:
    """Eight categorical contextual features, cardinalities 5..7."""
    return FeatureSchema(
        (
            FeatureDescriptor("daypart", "categorical", 6),
            FeatureDescriptor("item_objective", "categorical", 5),
            FeatureDescriptor("engagement_option", "categorical", 6),
            FeatureDescriptor("device_type", "categorical", 6),
            FeatureDescriptor("ad_format", "categorical", 6),
            FeatureDescriptor("placement", "categorical", 6),
            FeatureDescriptor("age_bucket", "categorical", 7),
            FeatureDescriptor("connection_type", "categorical", 5),
        )
    )


@dataclass(frozen=True)
class PlantedKey:
    """Ground-truth interaction: a 1- or 2-feature set with lifted CTR."""

    features: tuple[str, ...]
    hot_fraction: float = 0.2
    lift: float = 5.0

    def __post_init__(self):
        canon = tuple(sorted(set(self.features)))
        object.__setattr__(self, "features", canon)
        if not 1 <= len(canon) <= 2:
            raise InvalidConfig("planted keys use 1 or 2 features")
        if not 0.0 < self.hot_fraction < 1.0:
            raise InvalidConfig("hot_fraction must be in (0, 1)")
        if self.lift < 1.0:
            raise InvalidConfig("lift must be >= 1")


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 42
    n_users: int = 100
    n_ads: int = 50
    n_days: int = 18
    impressions_per_user_per_day: tuple[int, int] = (80, 240)
    base_ctr: float = 0.05
    schema: FeatureSchema = field(default_factory=default_schema)
    planted: tuple[PlantedKey, ...] = (
        PlantedKey(("engagement_option", "item_objective")),
        PlantedKey(("ad_format", "connection_type")),
    )
    volume_exponent: float = 2.0
    # fraction of users receptive to each planted key; slices are
    # disjoint, so a user expresses at most one planted pattern, and
    # users outside every slice behave as pure background noise
    receptive_fraction: float = 0.25
    # how strongly a receptive user's traffic drifts toward their hot
    # region: with this probability an impression's key-feature values
    # are drawn inside one hot cell, uniform over the vocabulary
    # otherwise
    preference_strength: float = 0.35
    # every user also has personal habits: one hot 2x2 block on each
    # pair of background features (features outside every planted key,
    # forming a cycle in schema order), lifted by habit_lift and
    # visited with probability habit_strength per impression; habits
    # give every forest real but ubiquitous structure to split on, so
    # noise-phase trees chase them instead of looping on chance
    # associations, while the habit feature sets appear in nearly all
    # models and tf-idf discounts them
    habit_lift: float = 2.0
    habit_strength: float = 0.1
    # habit blocks hold still for this many days, then re-roll to a
    # fresh position: habits are stable short-term but wander over long
    # horizons, so aggregates that span epochs blur toward the mean
    # while planted preferences stay put for the whole stream
    habit_epoch_days: int = 5
    # per-user multiplier on base CTR, linear in the user's volume rank
    # from 1 (lightest) to 1 + spread (heaviest): engaged users both
    # browse more and click more, a user-level effect that per-user
    # aggregates absorb but contextual features cannot express
    user_ctr_spread: float = 0.6


def _validate(config: SynthConfig) -> None:
    if config.n_users < 1 or config.n_ads < 1 or config.n_days < 1:
        raise InvalidConfig("n_users, n_ads, n_days must all be >= 1")
    if not 0.0 < config.base_ctr < 1.0:
        raise InvalidConfig(f"base_ctr must be in (0, 1), got {config.base_ctr}")
    lo, hi = config.impressions_per_user_per_day
    if lo < 1 or hi < lo:
        raise InvalidConfig("impressions_per_user_per_day must satisfy 1 <= lo <= hi")
    if not 0.0 < config.receptive_fraction <= 1.0:
        raise InvalidConfig("receptive_fraction must be in (0, 1]")
    if not 0.0 <= config.preference_strength < 1.0:
        raise InvalidConfig("preference_strength must be in [0, 1)")
    if config.habit_lift < 1.0:
        raise InvalidConfig("habit_lift must be >= 1")
    if config.habit_strength < 0.0:
        raise InvalidConfig("habit_strength must be >= 0")
    if config.habit_epoch_days < 1:
        raise InvalidConfig("habit_epoch_days must be >= 1")
    if config.user_ctr_spread < 0.0:
        raise InvalidConfig("user_ctr_spread must be >= 0")
    if len(_habit_pairs(config)) * config.habit_strength > 1.0 + 1e-9:
        raise InvalidConfig(
            "habit_strength too large: per-habit visit bands must fit in 1"
        )
    if len(config.planted) * config.receptive_fraction > 1.0 + 1e-9:
        raise InvalidConfig(
            "receptive_fraction too large: the per-key receptive slices "
            f"({len(config.planted)} x {config.receptive_fraction}) must fit in 1"
        )
    names = set(config.schema.names)
    for pk in config.planted:
        missing = set(pk.features) - names
        if missing:
            raise InvalidConfig(f"planted key uses unknown features {sorted(missing)}")


def _truncated_power_law(lo: float, hi: float, a: float, u: np.ndarray) -> np.ndarray:
    # density ~ x^-a on [lo, hi], inverse-CDF sampled
    if abs(a - 1.0) < 1e-12:
        return lo * (hi / lo) ** u
    e = 1.0 - a
    return (lo**e + u * (hi**e - lo**e)) ** (1.0 / e)


def _habit_pairs(config: SynthConfig) -> list[tuple[int, int]]:
    """Background-feature pairs that carry personal habit blocks.

    Features covered by planted keys are excluded; the rest form a
    cycle in schema order, so each background feature belongs to two
    pairs and its marginal carries two separate bumps.  Fewer than
    three background features form a single pair or none at all.
    """
    planted_cols = {
        config.schema.index(name) for pk in config.planted for name in pk.features
    }
    bg = [i for i in range(len(config.schema)) if i not in planted_cols]
    if len(bg) < 2:
        return []
    if len(bg) == 2:
        return [(bg[0], bg[1])]
    return [(bg[i], bg[(i + 1) % len(bg)]) for i in range(len(bg))]


HABIT_W = 2  # habit block width per feature; 2 keeps an interior threshold


def _habit_blocks(
    config: SynthConfig, h: int, cf: int, cg: int, epoch: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-user habit block start (width HABIT_W in each pair feature)."""
    card_f = config.schema.features[cf].cardinality
    card_g = config.schema.features[cg].cardinality
    start_f = _interior_starts(config, _T_HABIT, card_f, HABIT_W, h, 0, epoch)
    start_g = _interior_starts(config, _T_HABIT, card_g, HABIT_W, h, 1, epoch)
    return start_f, start_g


def _interior_starts(
    config: SynthConfig, t: int, card: int, w: int, *streams: int
) -> np.ndarray:
    """Per-user start positions for a width-w interval in a card-sized
    vocabulary, drawn from tag t's given stream ids.  Kept away from the
    vocabulary edges when there is room: an interior interval needs a
    split on both of its edges, so no single threshold can explain
    it."""
    users = np.arange(config.n_users, dtype=np.int64)
    n_interior = card - w - 1
    base = 1 if n_interior >= 1 else 0
    n_starts = n_interior if n_interior >= 1 else card - w + 1
    return base + rng.pick_vec(
        rng.u01_vec(config.seed, t, *streams, users), n_starts
    )


def _hot_geometry(
    config: SynthConfig, k_idx: int
) -> tuple[list[int], list[tuple[np.ndarray, list[int]]]]:
    """Hot-region layout for one key: (schema columns, regions), where
    each region is (per-user interval starts with shape (n_users,
    n_key_features), interval widths).

    A one-feature key gets a single interior interval covering about
    hot_fraction of the vocabulary.  A two-feature key gets a staircase:
    a contiguous run of columns in the first feature, each column paired
    with its own independently placed interval in the second.  Column
    position and every per-column interval vary by user, so the region
    only reads as a first-feature pattern until the column is pinned
    down, and the per-column structure never collapses onto a single
    second-feature threshold.
    """
    pk = config.planted[k_idx]
    cols = [config.schema.index(name) for name in pk.features]
    cards = [config.schema.features[c].cardinality for c in cols]

    if len(cols) == 1:
        card = cards[0]
        w = min(card, max(1, round(pk.hot_fraction * card)))
        starts = _interior_starts(config, _T_HOT, card, w, k_idx, 0)
        return cols, [(starts[:, None], [w])]

    c0, c1 = cards
    total = max(1, round(pk.hot_fraction * c0 * c1))
    w0 = min(c0, max(1, round(pk.hot_fraction**0.5 * c0)))
    w1 = min(c1, max(1, round(total / w0)))
    col0 = _interior_starts(config, _T_HOT, c0, w0, k_idx, 0)
    # all per-column intervals live inside one band wider than the
    # interval: the second feature's marginal stays a single contiguous
    # bump, while the within-band offsets below differ between columns,
    # so even after both bands are isolated a further split on either
    # feature still separates hot cells from cold ones; the band is
    # clamped so it keeps both edges away from the vocabulary ends
    band_w = max(w1, min(w1 + 2, c1 - 2))
    band = _interior_starts(config, _T_HOT, c1, band_w, k_idx, 1)
    regions = []
    for r in range(w0):
        users = np.arange(config.n_users, dtype=np.int64)
        offset = rng.pick_vec(
            rng.u01_vec(config.seed, _T_HOT, k_idx, r + 1, 1, users),
            band_w - w1 + 1,
        )
        starts = np.stack([col0 + r, band + offset], axis=1)
        regions.append((starts, [1, w1]))
    return cols, regions


def hot_mask(
    config: SynthConfig, k_idx: int, user_ids: np.ndarray, values: np.ndarray
) -> np.ndarray:
    """Whether each (user, value-tuple) row lands in its hot regions.

    `values` holds one column per feature of planted key `k_idx`, in the
    key's canonical feature order.  Receptivity is not applied here; a
    non-receptive user's regions are still defined, just never lifted.
    """
    _, regions = _hot_geometry(config, k_idx)
    mask = np.zeros(len(user_ids), dtype=bool)
    for starts, widths in regions:
        inside = np.ones(len(user_ids), dtype=bool)
        for d, w in enumerate(widths):
            lo = starts[user_ids, d]
            inside &= (values[:, d] >= lo) & (values[:, d] < lo + w)
        mask |= inside
    return mask


def generate(config: SynthConfig) -> Dataset:
    """Generate the full impression stream for a config."""
    _validate(config)
    seed = config.seed
    lo, hi = config.impressions_per_user_per_day
    users = np.arange(config.n_users, dtype=np.int64)

    rate = _truncated_power_law(
        float(lo), float(hi), config.volume_exponent, rng.u01_vec(seed, _T_RATE, users)
    )

    # integer impressions per (user, day): floor(rate) plus a Bernoulli
    # remainder so the expected daily volume equals the drawn rate
    base = np.floor(rate).astype(np.int64)
    frac = rate - base
    u_grid = np.repeat(users, config.n_days)
    d_grid = np.tile(np.arange(config.n_days, dtype=np.int64), config.n_users)
    extra = rng.u01_vec(seed, _T_COUNT, u_grid, d_grid) < frac[u_grid]
    counts = base[u_grid] + extra.astype(np.int64)

    n = int(counts.sum())
    user_of = np.repeat(u_grid, counts)
    day_of = np.repeat(d_grid, counts)
    imp_id = np.arange(n, dtype=np.int64)

    ts = day_of * SECONDS_PER_DAY + rng.pick_vec(
        rng.u01_vec(seed, _T_TS, imp_id), SECONDS_PER_DAY
    )
    ad = rng.pick_vec(rng.u01_vec(seed, _T_AD, imp_id), config.n_ads)

    width = len(config.schema)
    values = np.empty((n, width), dtype=np.int64)
    for f_idx, desc in enumerate(config.schema):
        values[:, f_idx] = rng.pick_vec(
            rng.u01_vec(seed, _T_VALUE, f_idx, imp_id), desc.cardinality
        )

    # one receptivity draw per user; key k owns the slice
    # [k*fraction, (k+1)*fraction), so the slices never overlap and a
    # user's forest has exactly one planted pattern to learn
    recept = rng.u01_vec(seed, _T_RECEPTIVE, users)
    frac = config.receptive_fraction
    slices = [
        (recept >= k * frac) & (recept < (k + 1) * frac)
        for k in range(len(config.planted))
    ]

    # habitual drift: receptive users revisit their hot regions, which
    # concentrates their traffic there and makes the lifted cells loom
    # large in that user's stream
    q = config.preference_strength
    if q > 0.0:
        for k_idx in range(len(config.planted)):
            rows = slices[k_idx][user_of]
            cols, regions = _hot_geometry(config, k_idx)
            gate = rows & (rng.u01_vec(seed, _T_PREF_GATE, k_idx, imp_id) < q)
            region_pick = rng.pick_vec(
                rng.u01_vec(seed, _T_PREF_REGION, k_idx, imp_id), len(regions)
            )
            for r, (starts, widths) in enumerate(regions):
                sel = gate & (region_pick == r)
                if not sel.any():
                    continue
                for d, (c, w) in enumerate(zip(cols, widths)):
                    inside = starts[user_of, d] + rng.pick_vec(
                        rng.u01_vec(seed, _T_PREF_VALUE, k_idx, r, d, imp_id), w
                    )
                    values[sel, c] = inside[sel]

    # habit drift: each impression revisits at most one habit cell,
    # chosen by disjoint bands of a single uniform draw so habit visits
    # stay mutually exclusive while remaining independent of the
    # planted-key drift above (habits live on different features).
    # Block positions are epoch-local: each habit sits still for
    # habit_epoch_days, then re-rolls per user.
    pairs = _habit_pairs(config)
    n_epochs = -(-config.n_days // config.habit_epoch_days)
    epoch_of = day_of // config.habit_epoch_days
    habit_lows: list[tuple[np.ndarray, np.ndarray]] = []
    for h, (cf, cg) in enumerate(pairs):
        per_epoch = [_habit_blocks(config, h, cf, cg, e) for e in range(n_epochs)]
        starts_f = np.stack([sf for sf, _ in per_epoch])
        starts_g = np.stack([sg for _, sg in per_epoch])
        habit_lows.append((starts_f[epoch_of, user_of], starts_g[epoch_of, user_of]))

    q_h = config.habit_strength
    if q_h > 0.0 and pairs:
        hu = rng.u01_vec(seed, _T_HABIT_GATE, imp_id)
        for h, (cf, cg) in enumerate(pairs):
            lo_f, lo_g = habit_lows[h]
            gate = (hu >= h * q_h) & (hu < (h + 1) * q_h)
            in_f = lo_f + rng.pick_vec(
                rng.u01_vec(seed, _T_HABIT_VALUE, h, 0, imp_id), HABIT_W
            )
            in_g = lo_g + rng.pick_vec(
                rng.u01_vec(seed, _T_HABIT_VALUE, h, 1, imp_id), HABIT_W
            )
            values[gate, cf] = in_f[gate]
            values[gate, cg] = in_g[gate]

    p = np.full(n, config.base_ctr, dtype=np.float64)
    if config.user_ctr_spread > 0.0 and config.n_users > 1:
        ranks = np.empty(config.n_users, dtype=np.float64)
        ranks[np.argsort(rate, kind="stable")] = np.arange(config.n_users)
        mult = 1.0 + config.user_ctr_spread * ranks / (config.n_users - 1)
        p *= mult[user_of]

    if config.habit_lift > 1.0:
        for h, (cf, cg) in enumerate(pairs):
            lo_f, lo_g = habit_lows[h]
            hot_h = (
                (values[:, cf] >= lo_f)
                & (values[:, cf] < lo_f + HABIT_W)
                & (values[:, cg] >= lo_g)
                & (values[:, cg] < lo_g + HABIT_W)
            )
            # diagonal gradient across the block, geometric mean equal
            # to habit_lift: every interior threshold of both features
            # keeps real gain, so single-feature chains on habit
            # features stay learnable in every forest rather than
            # looping in a lucky few
            expo = 1.0 + 0.5 * (1 - (values[:, cf] - lo_f) - (values[:, cg] - lo_g))
            p *= np.where(hot_h, config.habit_lift**expo, 1.0)

    for k_idx, pk in enumerate(config.planted):
        sl = slices[k_idx][user_of]
        cols_k, regions = _hot_geometry(config, k_idx)
        n_r = len(regions)
        for r, (starts, widths) in enumerate(regions):
            inside = sl.copy()
            for d, (c, w) in enumerate(zip(cols_k, widths)):
                lo_d = starts[user_of, d]
                inside &= (values[:, c] >= lo_d) & (values[:, c] < lo_d + w)
            # linear lift gradient across regions, arithmetic mean equal
            # to the key's lift: separating one staircase column from
            # the next stays profitable even after both bands are
            # isolated, which keeps deep splits on the key's features
            if n_r > 1:
                lift_r = pk.lift * (1.0 + 0.4 * (1.0 - 2.0 * r / (n_r - 1)))
            else:
                lift_r = pk.lift
            p *= np.where(inside, lift_r, 1.0)
    np.clip(p, 0.0, 1.0, out=p)
    labels = (rng.u01_vec(seed, _T_LABEL, imp_id) < p).astype(np.int64)

    impressions = [
        Impression(int(i), int(t), int(u), int(a), tuple(int(v) for v in row), int(y))
        for i, t, u, a, row, y in zip(imp_id, ts, user_of, ad, values, labels)
    ]
    return Dataset.from_unsorted(config.schema, impressions)


def ground_truth_keys(config: SynthConfig) -> list[CountingKey]:
    """Planted feature sets as canonical keys, deduplicated, order kept."""
    out: list[CountingKey] = []
    seen = set()
    for pk in config.planted:
        key = CountingKey(pk.features)
        if key not in seen:
            seen.add(key)
            out.append(key)
    return out


# --- config file -----------------------------------------------------------
#
# Flat ``key = value`` lines, '#' comments, plus repeated stanzas opened by
# ``[planted]`` / ``[feature]`` section headers.  Example:
#
#   seed = 7
#   n_users = 100
#   base_ctr = 0.05
#   impressions_per_user_per_day = 45..240
#
#   [feature]
#   name = daypart
#   kind = categorical
#   cardinality = 6
#
#   [planted]
#   features = daypart
#   hot_fraction = 0.2
#   lift = 5.0
#
# Omitted [feature] stanzas fall back to the default schema; flat keys not
# listed fall back to SynthConfig defaults.


def parse_sections(text: str) -> tuple[dict[str, str], list[tuple[str, dict[str, str]]]]:
    """Split config text into (flat key/values, ordered section stanzas)."""
    flat: dict[str, str] = {}
    sections: list[tuple[str, dict[str, str]]] = []
    current: dict[str, str] | None = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = {}
            sections.append((line[1:-1].strip(), current))
            continue
        if "=" not in line:
            raise InvalidConfig(f"config line {line_no}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        (flat if current is None else current)[key] = value
    return flat, sections


def _parse_range(text: str) -> tuple[int, int]:
    sep = ".." if ".." in text else ","
    parts = [p.strip() for p in text.split(sep)]
    if len(parts) != 2:
        raise InvalidConfig(f"expected a range like 45..240, got {text!r}")
    return int(parts[0]), int(parts[1])


def synth_config_from_sections(
    flat: dict[str, str], sections: Sequence[tuple[str, dict[str, str]]]
) -> SynthConfig:
    kwargs: dict = {}
    try:
        for key in ("seed", "n_users", "n_ads", "n_days", "habit_epoch_days"):
            if key in flat:
                kwargs[key] = int(flat[key])
        if "impressions_per_user_per_day" in flat:
            kwargs["impressions_per_user_per_day"] = _parse_range(
                flat["impressions_per_user_per_day"]
            )
        for key in (
            "base_ctr",
            "volume_exponent",
            "receptive_fraction",
            "preference_strength",
            "habit_lift",
            "habit_strength",
            "user_ctr_spread",
        ):
            if key in flat:
                kwargs[key] = float(flat[key])
    except ValueError as e:
        raise InvalidConfig(f"bad synth config value: {e}") from e

    feats = []
    planted = []
    for name, body in sections:
        if name == "feature":
            try:
                feats.append(
                    FeatureDescriptor(
                        body["name"], body.get("kind", "categorical"), int(body["cardinality"])
                    )
                )
            except KeyError as e:
                raise InvalidConfig(f"[feature] stanza missing {e}") from e
        elif name == "planted":
            try:
                features = tuple(
                    p.strip() for p in body["features"].replace("+", ",").split(",") if p.strip()
                )
                planted.append(
                    PlantedKey(
                        features,
                        hot_fraction=float(body.get("hot_fraction", 0.2)),
                        lift=float(body.get("lift", 5.0)),
                    )
                )
            except KeyError as e:
                raise InvalidConfig(f"[planted] stanza missing {e}") from e
    if feats:
        kwargs["schema"] = FeatureSchema(tuple(feats))
    if planted:
        kwargs["planted"] = tuple(planted)
    elif flat.get("planted", "").lower() == "none":
        kwargs["planted"] = ()
    cfg = replace(SynthConfig(), **kwargs)
    _validate(cfg)
    return cfg


def read_synth_config(path: str) -> SynthConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise IoFailure(str(e)) from e
    flat, sections = parse_sections(text)
    return synth_config_from_sections(flat, sections)
