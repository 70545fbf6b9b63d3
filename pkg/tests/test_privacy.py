"""Toeplitz hashing and key-length budget tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from timebin_qkd.privacy import AmplificationBudget, key_length_budget, toeplitz_hash
from timebin_qkd.util import ParameterError


def random_bits(rng, size):
    return rng.integers(0, 2, size).astype(np.uint8)


class TestToeplitz:
    def test_zero_seed_gives_zero_output(self):
        out = toeplitz_hash(np.ones(16, np.uint8), np.zeros(23, np.uint8), 8)
        assert not out.any()

    def test_identity_square_case(self):
        # Seed with a single one where the main diagonal sits: T = I.
        length = 8
        seed = np.zeros(2 * length - 1, np.uint8)
        seed[length - 1] = 1
        key = random_bits(np.random.default_rng(0), length)
        assert np.array_equal(toeplitz_hash(key, seed, length), key)

    def test_matches_dense_matrix_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            key = random_bits(rng, 16)
            seed = random_bits(rng, 16 + 8 - 1)
            T = oracles.dense_toeplitz_matrix(seed, 16, 8)
            expected = (T.astype(np.int64) @ key) % 2
            assert np.array_equal(toeplitz_hash(key, seed, 8), expected)

    def test_fft_path_matches_dense_oracle(self):
        # Large enough to take the FFT branch.
        rng = np.random.default_rng(2)
        length, out_len = 2000, 400
        key = random_bits(rng, length)
        seed = random_bits(rng, length + out_len - 1)
        T = oracles.dense_toeplitz_matrix(seed, length, out_len)
        expected = (T.astype(np.int64) @ key) % 2
        assert np.array_equal(toeplitz_hash(key, seed, out_len), expected)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 64), st.integers(0, 64))
    def test_linearity(self, seed, length, extra):
        out_len = min(length, extra + 1)
        rng = np.random.default_rng(seed)
        x = random_bits(rng, length)
        y = random_bits(rng, length)
        s = random_bits(rng, length + out_len - 1)
        hx = toeplitz_hash(x, s, out_len)
        hy = toeplitz_hash(y, s, out_len)
        assert np.array_equal(toeplitz_hash(x ^ y, s, out_len), hx ^ hy)

    def test_collision_rate_two_universal(self):
        # For a fixed pair x != y, collisions over random seeds occur with
        # frequency <= 2^-out_len plus sampling allowance. By linearity it
        # suffices to hash the difference and count zero outputs.
        rng = np.random.default_rng(3)
        length, out_len, trials = 16, 8, 30_000
        diff = np.zeros(length, np.uint8)
        diff[[0, 5, 11]] = 1
        seeds = rng.integers(0, 2, (trials, length + out_len - 1)).astype(np.uint8)
        # T @ diff for all seeds at once: columns of T are seed slices.
        D = np.zeros((length + out_len - 1, out_len), np.int64)
        for i in range(out_len):
            D[out_len - 1 - i: out_len - 1 - i + length, i] = diff
        hashes = (seeds.astype(np.int64) @ D) % 2
        collisions = np.count_nonzero(~hashes.any(axis=1))
        p = 2.0 ** -out_len
        bound = p + 5 * np.sqrt(p * (1 - p) / trials)
        assert collisions / trials <= bound

    def test_length_validation(self):
        with pytest.raises(ParameterError):
            toeplitz_hash(np.zeros(8, np.uint8), np.zeros(10, np.uint8), 4)
        with pytest.raises(ParameterError):
            toeplitz_hash(np.zeros(8, np.uint8), np.zeros(16, np.uint8), 9)

    def test_empty_output(self):
        assert len(toeplitz_hash(np.ones(4, np.uint8), np.ones(3, np.uint8), 0)) == 0


class TestBudget:
    def test_full_entropy_no_leak(self):
        b = AmplificationBudget(1000, 1.0, 0, 0)
        assert key_length_budget(b) == 1000

    def test_fully_leaked_key(self):
        assert key_length_budget(AmplificationBudget(1000, 1.0, 1000, 0)) == 0
        assert key_length_budget(AmplificationBudget(1000, 1.0, 5000, 64)) == 0

    def test_margin_subtracts(self):
        assert key_length_budget(AmplificationBudget(1000, 0.5, 100, 64)) == 336

    def test_entropy_validation(self):
        with pytest.raises(ParameterError):
            AmplificationBudget(100, 1.25, 0, 0)
        with pytest.raises(ParameterError):
            AmplificationBudget(100, -0.1, 0, 0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0, 1), st.integers(0, 5_000),
           st.integers(0, 5_000), st.integers(0, 128))
    def test_monotonicity(self, length, entropy, leaked, extra_leak, margin):
        base = key_length_budget(AmplificationBudget(length, entropy, leaked, margin))
        more_leak = key_length_budget(
            AmplificationBudget(length, entropy, leaked + extra_leak, margin))
        assert more_leak <= base
        higher_entropy = key_length_budget(
            AmplificationBudget(length, min(1.0, entropy + 0.25), leaked, margin))
        assert higher_entropy >= base
