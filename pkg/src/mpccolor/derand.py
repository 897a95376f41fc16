"""Derandomization toolkit: k-wise hash families, conditional expectations,
seed-indexed coin sources, seed voting and a toy brute-force PRG."""

from __future__ import annotations

import itertools
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .field import MAX_WIDTH, gf_mul, gf_mul_vec, mul_tables, poly_eval_vec, table_mul


class SeedLengthMismatch(ValueError):
    pass


class TooLargeToEnumerate(ValueError):
    pass


class ChunkTooLarge(ValueError):
    pass


class SeedSpaceTooLarge(ValueError):
    pass


class NoTableFound(RuntimeError):
    pass


class ParamMismatch(ValueError):
    pass


ENUMERATION_GUARD = 1 << 24


# ---------------------------------------------------------------- families


@dataclass(frozen=True)
class KWiseFamily:
    """Polynomials of degree < k over GF(2^w), w = max(a, b), truncated to b bits.

    ``fixed`` pins coefficients (index, value); pinned coefficients still
    count towards the seed length but are excluded from enumeration.
    """

    k: int
    a: int
    b: int
    fixed: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        if self.k < 1 or self.a < 1 or self.b < 1:
            raise ValueError("k, a, b must be positive")
        if self.w > MAX_WIDTH:
            raise ValueError(f"field width {self.w} exceeds {MAX_WIDTH}")

    @property
    def w(self) -> int:
        return max(self.a, self.b)

    @property
    def seed_bits(self) -> int:
        return self.k * self.w

    @property
    def free_bits(self) -> int:
        return (self.k - len(self.fixed)) * self.w

    def coeffs(self, seed: int | Sequence[int]) -> tuple[int, ...]:
        """Normalize a seed (int of k*w bits or k coefficients) to coefficients."""
        w = self.w
        if isinstance(seed, (int, np.integer)):
            seed = int(seed)
            if seed < 0 or seed.bit_length() > self.seed_bits:
                raise SeedLengthMismatch(f"seed needs at most {self.seed_bits} bits")
            out = tuple((seed >> (i * w)) & ((1 << w) - 1) for i in range(self.k))
        else:
            out = tuple(int(c) for c in seed)
            if len(out) != self.k or any(c < 0 or c >> w for c in out):
                raise SeedLengthMismatch(f"expected {self.k} coefficients of {w} bits")
        for idx, val in self.fixed:
            if out[idx] != val:
                raise SeedLengthMismatch(f"coefficient {idx} is pinned to {val}")
        return out

    @property
    def enum_bits(self) -> int:
        return self.free_bits

    def expand(self, z: np.ndarray) -> np.ndarray:
        """Map enumeration indices in [0, 2^free_bits) to coefficient rows (S, k)."""
        z = np.asarray(z, dtype=np.uint64)
        w = np.uint64(self.w)
        mask = np.uint64((1 << self.w) - 1)
        out = np.zeros((z.shape[0], self.k), dtype=np.uint64)
        pinned = dict(self.fixed)
        j = 0
        for i in range(self.k):
            if i in pinned:
                out[:, i] = pinned[i]
            else:
                out[:, i] = (z >> (w * np.uint64(j))) & mask
                j += 1
        return out

    def evaluate(self, coeffs: np.ndarray, xs: np.ndarray) -> np.ndarray:
        """Hash values for every (seed row, input): shape (S, N)."""
        vals = poly_eval_vec(coeffs, np.asarray(xs, dtype=np.uint64), self.w)
        return vals & np.uint64((1 << self.b) - 1)


def eval_hash(family: KWiseFamily, seed: int | Sequence[int], x: int) -> int:
    coeffs = family.coeffs(seed)
    if not 0 <= x < (1 << family.a):
        raise ValueError(f"input {x} does not fit in {family.a} bits")
    acc = 0
    for c in reversed(coeffs):
        acc = gf_mul(acc, x, family.w) ^ c
    return acc & ((1 << family.b) - 1)


def verify_kwise(family: KWiseFamily) -> bool:
    """Exact check that every set of k distinct inputs maps uniformly.

    Work is guarded by the size of the (seed x input) value table.
    """
    n_seeds = 1 << family.free_bits
    n_inputs = 1 << family.a
    if n_seeds * n_inputs > ENUMERATION_GUARD:
        raise TooLargeToEnumerate(f"{n_seeds} seeds x {n_inputs} inputs")
    table = family.evaluate(family.expand(np.arange(n_seeds)), np.arange(n_inputs)).astype(np.int64)
    k = min(family.k, n_inputs)
    cells = 1 << (k * family.b)
    if n_seeds % cells:
        return False
    expected = n_seeds // cells
    for combo in itertools.combinations(range(n_inputs), k):
        idx = np.zeros(n_seeds, dtype=np.int64)
        for x in combo:
            idx = (idx << family.b) | table[:, x]
        counts = np.bincount(idx, minlength=cells)
        if counts.min() != expected or counts.max() != expected:
            return False
    return True


@dataclass(frozen=True)
class SubFamily:
    """An enumerable slice of a large family: short index -> full seed via PCG64."""

    family: KWiseFamily
    enum_bits: int
    salt: int = 0

    def expand(self, z: np.ndarray) -> np.ndarray:
        rows = []
        hi = 1 << self.family.w
        for zi in np.asarray(z).tolist():
            gen = np.random.Generator(np.random.PCG64([self.salt, int(zi)]))
            rows.append(gen.integers(0, hi, size=self.family.k, dtype=np.uint64))
        out = np.array(rows, dtype=np.uint64).reshape(len(rows), self.family.k)
        for idx, val in self.family.fixed:
            out[:, idx] = val
        return out

    def evaluate(self, coeffs: np.ndarray, xs: np.ndarray) -> np.ndarray:
        return self.family.evaluate(coeffs, xs)


# ------------------------------------------------------------ concentration


def kwise_tail_bound(k: int, mu: float, lam: float) -> float:
    """Tail bound for sums of k-wise independent [0,1] variables."""
    return 8.0 * ((k * mu + k * k) / (lam * lam)) ** (k / 2)


def exact_tail_probability(family: KWiseFamily, t: int, threshold: int, lam: float) -> tuple[float, float]:
    """Pr[|Z - mu| >= lam] for Z = #{j < t : h(j) < threshold}, by enumeration.

    Returns (probability, mu).
    """
    if t > (1 << family.a):
        raise ValueError("t exceeds the input domain")
    n_seeds = 1 << family.free_bits
    if n_seeds * t > ENUMERATION_GUARD * 4:
        raise TooLargeToEnumerate(f"{n_seeds} seeds x {t} inputs")
    hits = np.zeros(n_seeds, dtype=np.int64)
    batch = 1 << 16
    for lo in range(0, n_seeds, batch):
        z = np.arange(lo, min(n_seeds, lo + batch))
        vals = family.evaluate(family.expand(z), np.arange(t))
        hits[lo : lo + len(z)] = (vals < np.uint64(threshold)).sum(axis=1)
    mu = t * threshold / (1 << family.b)
    prob = float(np.mean(np.abs(hits - mu) >= lam - 1e-12))
    return prob, mu


# --------------------------------------------------- conditional expectations


@dataclass
class CondExpectResult:
    index: int
    seed: tuple[int, ...]
    value: float
    expectation: Fraction
    phases: int


CostTerm = Callable[[np.ndarray], np.ndarray]


def cond_expect_select(
    family,
    cost_terms: Sequence[CostTerm],
    chunk_bits: int = 16,
    direction: str = "minimize",
    space_words: int | None = None,
) -> CondExpectResult:
    """Fix a seed chunk by chunk (most significant first) so the summed cost
    meets its mean over the enumerated family in the requested direction.

    ``family`` is anything with ``enum_bits`` and ``expand``; each cost term
    maps a (S, k) array of coefficient rows to per-seed values.
    """
    if direction not in ("minimize", "maximize"):
        raise ValueError(direction)
    if chunk_bits < 1:
        raise ValueError("chunk_bits must be positive")
    if space_words is not None and (1 << chunk_bits) > space_words:
        raise ChunkTooLarge(f"2^{chunk_bits} completions exceed {space_words} words")
    bits = family.enum_bits
    if bits > 24:
        raise TooLargeToEnumerate(f"{bits}-bit seed space")
    n = 1 << bits
    batch = 1 << 14
    parts = []
    for lo in range(0, n, batch):
        coeffs = family.expand(np.arange(lo, min(n, lo + batch)))
        q = np.zeros(coeffs.shape[0])
        for term in cost_terms:
            q = q + np.asarray(term(coeffs), dtype=float)
        parts.append(q)
    total = np.concatenate(parts) if parts else np.zeros(n)
    integral = bool(np.all(total == np.round(total)))
    if integral:
        q_int = total.astype(np.int64)
        expectation = Fraction(int(q_int.sum()), n)
    else:
        expectation = Fraction(float(total.sum())) / n

    better = np.argmin if direction == "minimize" else np.argmax
    prefix, fixed_bits, phases = 0, 0, 0
    while fixed_bits < bits:
        c = min(chunk_bits, bits - fixed_bits)
        rest = bits - fixed_bits - c
        block = total[prefix << (bits - fixed_bits) : (prefix + 1) << (bits - fixed_bits)]
        sums = block.reshape(1 << c, 1 << rest).sum(axis=1)
        prefix = (prefix << c) | int(better(sums))
        fixed_bits += c
        phases += 1
    value = float(total[prefix])
    if direction == "minimize":
        assert value <= float(expectation) + 1e-9, "conditional expectations overshot"
    else:
        assert value >= float(expectation) - 1e-9, "conditional expectations undershot"
    seed = tuple(int(v) for v in family.expand(np.array([prefix]))[0])
    return CondExpectResult(index=prefix, seed=seed, value=value, expectation=expectation, phases=phases)


# ------------------------------------------------------------- coin sources


class CoinView:
    """Coins of a batch of seeds. ``take`` returns an (S, len(ids)) uint64 array
    whose bit j is stream bit ``offset + j`` of the unit."""

    def __init__(self, source: "CoinSource", seeds: np.ndarray):
        self.source = source
        self.seeds = np.asarray(seeds, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.seeds)

    def take(self, ids: np.ndarray, offset: int, nbits: int) -> np.ndarray:
        return self.source._take(self, np.asarray(ids, dtype=np.int64), int(offset), int(nbits))


class CoinSource:
    seed_bits: int
    word_bits: int

    def view(self, seeds: np.ndarray) -> CoinView:
        return CoinView(self, seeds)

    def _word(self, view: CoinView, ids: np.ndarray, m: int) -> np.ndarray:
        raise NotImplementedError

    def _take(self, view: CoinView, ids: np.ndarray, offset: int, nbits: int) -> np.ndarray:
        if nbits > 64:
            raise ValueError("at most 64 bits per draw")
        out = np.zeros((len(view), len(ids)), dtype=np.uint64)
        if nbits == 0:
            return out
        wb = self.word_bits
        got = 0
        pos = offset
        while got < nbits:
            m, r = divmod(pos, wb)
            take = min(wb - r, nbits - got)
            word = self._word(view, ids, m)
            piece = (word >> np.uint64(r)) & np.uint64((1 << take) - 1)
            out |= piece << np.uint64(got)
            got += take
            pos += take
        return out

    def bit(self, unit: int, idx: int, seed: int) -> int:
        return int(self.view(np.array([seed])).take(np.array([unit]), idx, 1)[0, 0])


class KWiseCoinSource(CoinSource):
    """bit(id, idx, seed) = low bit of a k-wise hash of (id, idx)."""

    def __init__(self, k: int, d: int, N: int, t: int):
        if k < 1 or d % k:
            raise ParamMismatch(f"seed bits {d} not a multiple of k={k}")
        w = d // k
        self.id_bits = max(1, math.ceil(math.log2(max(N, 2))))
        self.idx_bits = max(1, math.ceil(math.log2(max(t, 2))))
        if not 1 <= w <= MAX_WIDTH or self.id_bits + self.idx_bits > w:
            raise ParamMismatch(f"word size {w} cannot hold {self.id_bits}+{self.idx_bits} input bits")
        self.k, self.d, self.N, self.t = k, d, N, t
        self.family = KWiseFamily(k, w, 1)
        self.seed_bits = d
        self.word_bits = 1

    def _word(self, view: CoinView, ids: np.ndarray, m: int) -> np.ndarray:
        if m >= self.t:
            raise ValueError(f"bit index {m} beyond stream length {self.t}")
        coeffs = self.family.expand(view.seeds)
        xs = (ids.astype(np.uint64) << np.uint64(self.idx_bits)) | np.uint64(m)
        return self.family.evaluate(coeffs, xs)


def kwise_coin_source(k: int, d: int, N: int, t: int) -> KWiseCoinSource:
    return KWiseCoinSource(k, d, N, t)


class StretchedCoinSource(CoinSource):
    """Short vote seeds stretched to a k-wise family seed over GF(2^w).

    Word m of unit ``id`` is h(id * 2^idx_bits + m) for the family seed
    derived from (salt, vote seed) by PCG64.
    """

    def __init__(self, seed_bits: int, salt: int, k: int = 2, w: int = 32, idx_bits: int = 12):
        self.seed_bits = seed_bits
        self.salt = salt
        self.k = k
        self.w = w
        self.word_bits = w
        self.idx_bits = idx_bits
        self._cache: dict[bytes, list[np.ndarray]] = {}

    def _tables(self, view: CoinView) -> list[np.ndarray]:
        key = view.seeds.tobytes()
        if key not in self._cache:
            fam = SubFamily(KWiseFamily(self.k, self.w, self.w), 64, self.salt)
            coeffs = fam.expand(view.seeds)
            self._cache = {key: [coeffs[:, 0]] + [mul_tables(coeffs[:, i], self.w) for i in range(1, self.k)]}
        return self._cache[key]

    def _word(self, view: CoinView, ids: np.ndarray, m: int) -> np.ndarray:
        if m >> self.idx_bits:
            raise ValueError("word index out of range")
        tabs = self._tables(view)
        x = (ids.astype(np.uint64) << np.uint64(self.idx_bits)) | np.uint64(m)
        if int(x.max(initial=0)) >> self.w:
            raise ValueError("unit id too large for the field")
        out = np.broadcast_to(tabs[0][:, None], (len(view), len(ids))).copy()
        power = x.copy()
        for i in range(1, self.k):
            out ^= table_mul(tabs[i], power)
            if i + 1 < self.k:
                power = gf_mul_vec(power, x, self.w)
        return out


class TableCoinSource(CoinSource):
    """The seed is the raw coin table: unit u owns seed bits [u*b, (u+1)*b)."""

    def __init__(self, bits_per_unit: int, n_units: int):
        self.bits_per_unit = bits_per_unit
        self.n_units = n_units
        self.seed_bits = bits_per_unit * n_units
        self.word_bits = 64

    def _take(self, view: CoinView, ids: np.ndarray, offset: int, nbits: int) -> np.ndarray:
        if offset + nbits > self.bits_per_unit:
            raise ValueError("draw exceeds the unit's coin budget")
        if len(ids) and (ids.min() < 0 or ids.max() >= self.n_units):
            raise ValueError("unit outside the table")
        shift = (ids * self.bits_per_unit + offset).astype(np.uint64)
        seeds = view.seeds.astype(np.uint64)[:, None]
        return (seeds >> shift[None, :]) & np.uint64((1 << nbits) - 1)


# ------------------------------------------------------------- seed voting


@dataclass
class SeedVote:
    best_seed: int
    happy_counts: np.ndarray
    happy: np.ndarray
    seed_bits: int

    @property
    def best_count(self) -> int:
        return int(self.happy_counts[self.best_seed])

    @property
    def mean(self) -> float:
        return float(self.happy_counts.mean()) if len(self.happy_counts) else 0.0


Predicate = Callable[[np.ndarray, object, CoinView], np.ndarray]

VOTE_GUARD = 1 << 27


def seed_vote(units: np.ndarray, context, predicate: Predicate, coin_source: CoinSource, batch: int = 64) -> SeedVote:
    """Evaluate ``predicate`` under every seed and keep the argmax.

    ``predicate(units, context, coins)`` returns a bool array (S, len(units)).
    Ties go to the smallest seed.
    """
    units = np.asarray(units)
    d = coin_source.seed_bits
    if d > 24 or (1 << d) * max(1, len(units)) > VOTE_GUARD:
        raise SeedSpaceTooLarge(f"2^{d} seeds x {len(units)} units")
    n_seeds = 1 << d
    counts = np.zeros(n_seeds, dtype=np.int64)
    for lo in range(0, n_seeds, batch):
        seeds = np.arange(lo, min(n_seeds, lo + batch))
        happy = np.asarray(predicate(units, context, coin_source.view(seeds)), dtype=bool)
        counts[lo : lo + len(seeds)] = happy.reshape(len(seeds), -1).sum(axis=1)
    best = int(np.argmax(counts))
    # argmax dominates the mean; checked in integers so the ceiling is exact
    assert counts[best] * n_seeds >= counts.sum(), "seed vote below the mean"
    happy_best = np.asarray(predicate(units, context, coin_source.view(np.array([best]))), dtype=bool)
    return SeedVote(best_seed=best, happy_counts=counts, happy=happy_best.reshape(-1), seed_bits=d)


# ------------------------------------------------------------------ toy PRG


@dataclass
class ToyPrgTable:
    m: int
    d: int
    eps: float
    rows: np.ndarray

    def max_bias(self, tests: Sequence[Callable[[np.ndarray], np.ndarray]]) -> float:
        universe = np.arange(1 << self.m, dtype=np.int64)
        worst = 0.0
        for test in tests:
            p_uniform = float(np.mean(np.asarray(test(universe), dtype=bool)))
            p_seed = float(np.mean(np.asarray(test(self.rows.astype(np.int64)), dtype=bool)))
            worst = max(worst, abs(p_seed - p_uniform))
        return worst

    def to_bytes(self) -> bytes:
        width = (self.m + 7) // 8
        header = struct.pack("<4sBBI", b"TPRG", self.m, self.d, int(round(self.eps * (1 << 30))))
        body = b"".join(int(r).to_bytes(width, "little") for r in self.rows.tolist())
        return header + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "ToyPrgTable":
        magic, m, d, eps_fp = struct.unpack_from("<4sBBI", data)
        if magic != b"TPRG":
            raise ValueError("not a toy PRG table")
        width = (m + 7) // 8
        off = struct.calcsize("<4sBBI")
        rows = [int.from_bytes(data[off + i * width : off + (i + 1) * width], "little") for i in range(1 << d)]
        return cls(m=m, d=d, eps=eps_fp / (1 << 30), rows=np.array(rows, dtype=np.int64))


def toy_prg_seed_bits(n_tests: int, eps: float) -> int:
    return max(0, math.ceil(math.log2(math.log(2 * max(1, n_tests)) / (2 * eps * eps))))


def build_toy_prg(
    tests: Sequence[Callable[[np.ndarray], np.ndarray]],
    m: int,
    eps: float,
    tries_per_d: int = 64,
    extra_d: int = 4,
    rng_seed: int = 0,
) -> ToyPrgTable:
    """Search random candidate tables for d = 0, 1, ... up to the Hoeffding
    estimate plus ``extra_d``; the first table fooling every test wins."""
    if not 1 <= m <= 20:
        raise ValueError("m must be in [1, 20]")
    if eps <= 0:
        raise ValueError("eps must be positive")
    d_cap = min(m + 4, toy_prg_seed_bits(len(tests), eps) + extra_d)
    rng = np.random.default_rng(rng_seed)
    for d in range(0, d_cap + 1):
        for _ in range(tries_per_d):
            rows = rng.integers(0, 1 << m, size=1 << d, dtype=np.int64)
            table = ToyPrgTable(m=m, d=d, eps=eps, rows=rows)
            if table.max_bias(tests) <= eps:
                return table
    raise NoTableFound(f"no table with d <= {d_cap} fools all tests at eps={eps}")
