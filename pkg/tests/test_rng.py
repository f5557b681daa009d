"""Counter-based stream behavior: purity, splitting, output ranges."""

from hypothesis import given, strategies as st

from phasefork.rng import (
    MASK64,
    Stream,
    derive,
    hash_tag,
    mix64,
    randbelow,
    rng_u64,
    seed_key,
    uniform01,
)

U64 = st.integers(min_value=0, max_value=MASK64)


def test_rng_u64_is_pure():
    assert rng_u64(123, 456) == rng_u64(123, 456)
    assert rng_u64(123, 456) != rng_u64(123, 457)
    assert rng_u64(123, 456) != rng_u64(124, 456)


@given(U64, U64)
def test_mix64_stays_in_range(a, b):
    assert 0 <= mix64(a ^ b) <= MASK64
    assert 0 <= derive(a, b) <= MASK64


@given(U64)
def test_uniform01_in_unit_interval(u):
    x = uniform01(u)
    assert 0.0 <= x < 1.0


@given(U64, st.integers(min_value=1, max_value=10_000))
def test_randbelow_bounds(u, n):
    assert 0 <= randbelow(u, n) < n


def test_mix64_avalanche():
    # flipping one input bit should flip roughly half the output bits
    base = mix64(0x9E3779B97F4A7C15)
    total = 0
    for bit in range(64):
        flipped = mix64(0x9E3779B97F4A7C15 ^ (1 << bit))
        total += bin(base ^ flipped).count("1")
    avg = total / 64.0
    assert 20.0 < avg < 44.0


def test_hash_tag_matches_fnv1a_reference():
    def fnv(data: bytes) -> int:
        h = 0xCBF29CE484222325
        for byte in data:
            h = ((h ^ byte) * 0x100000001B3) & MASK64
        return h

    for s in ("", "a", "fork:kd_success:3", "épisode"):
        assert hash_tag(s) == fnv(s.encode("utf-8"))


def test_stream_replay():
    a = Stream(derive(5, hash_tag("x")))
    b = Stream(derive(5, hash_tag("x")))
    assert [a.next_u64() for _ in range(10)] == [b.next_u64() for _ in range(10)]


def test_stream_split_decorrelates():
    root = Stream(seed_key(0, "root"))
    s1 = root.split_label("left")
    s2 = root.split_label("right")
    draws1 = [s1.next_u64() for _ in range(8)]
    draws2 = [s2.next_u64() for _ in range(8)]
    assert draws1 != draws2
    # splitting must not consume from the parent
    fresh = Stream(seed_key(0, "root"))
    assert root.next_u64() == fresh.next_u64()


def test_split_label_is_split_of_hash_tag():
    root = Stream(seed_key(9, "r"))
    assert root.split_label("abc").key == root.split(hash_tag("abc")).key


def test_next_below_distribution_rough():
    s = Stream(seed_key(3, "dist"))
    counts = [0] * 5
    for _ in range(5000):
        counts[s.next_below(5)] += 1
    for c in counts:
        assert 800 < c < 1200
