import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from insitukit import compress
from insitukit.compress import (ArchiveFormatError, BadMagicError,
                                BadVersionError, CompressedArchive,
                                TruncatedStreamError, TruncationSpec, decode,
                                encode, truncate, weighted_rmse)
from insitukit.proxysim import MeshConfig, ProxySimulator
from insitukit.spectral import (ElementField, DimensionError, SpectralBlock,
                                dlt_forward, dlt_inverse, gll_basis)


def random_block(p, rng, element_id=0, sparsity=0.0):
    n = p + 1
    coeffs = rng.normal(size=(n, n, n))
    if sparsity:
        coeffs[rng.uniform(size=coeffs.shape) < sparsity] = 0.0
    mask = coeffs != 0.0
    mask[0, 0, 0] = True
    coeffs = np.where(mask, coeffs, 0.0)
    return SpectralBlock(order=p, coeffs=coeffs, kept_mask=mask,
                         element_id=element_id)


class TestTruncate:
    def test_constant_field_keeps_only_mean(self):
        b = gll_basis(7)
        fld = ElementField(order=7, values=np.full((8, 8, 8), 2.75))
        blk = truncate(dlt_forward(fld, b), b, TruncationSpec(1e-2))
        assert int(blk.kept_mask.sum()) == 1
        assert blk.kept_mask[0, 0, 0]
        rec = dlt_inverse(blk, b)
        assert weighted_rmse(fld, rec, b) == pytest.approx(0.0, abs=1e-13)

    def test_epsilon_zero_discards_exactly_zeros(self):
        b = gll_basis(4)
        rng = np.random.default_rng(5)
        blk = dlt_forward(ElementField(order=4, values=rng.normal(size=(5, 5, 5))), b)
        blk.coeffs[1, 2, 3] = 0.0
        blk.coeffs[0, 0, 1] = 0.0
        out = truncate(blk, b, TruncationSpec(0.0))
        assert np.array_equal(out.kept_mask, blk.coeffs != 0.0)
        rec = dlt_inverse(out, b)
        ref = dlt_inverse(blk, b)
        assert np.array_equal(rec.values, ref.values)

    @pytest.mark.parametrize("eps", [1e-1, 1e-2, 1e-3])
    def test_error_bound_on_synthetic_turbulence(self, eps):
        sim = ProxySimulator(MeshConfig(elements_per_axis=(2, 2, 2), seed=11))
        state = sim.init_state()
        b = sim.basis
        spec = TruncationSpec(eps)
        for e in range(sim.cfg.n_elements):
            fld = ElementField(order=7, values=state.fields["vel_x"][e])
            blk = truncate(dlt_forward(fld, b), b, spec)
            rec = dlt_inverse(blk, b)
            assert weighted_rmse(fld, rec, b) <= eps + 1e-12

    def test_mean_preserved(self):
        b = gll_basis(7)
        rng = np.random.default_rng(17)
        fld = ElementField(order=7, values=0.01 * rng.normal(size=(8, 8, 8)) + 3.0)
        blk = truncate(dlt_forward(fld, b), b, TruncationSpec(0.5))
        assert blk.kept_mask[0, 0, 0]
        rec = dlt_inverse(blk, b)
        w = b.weights
        w3 = w[:, None, None] * w[None, :, None] * w[None, None, :]
        mean_orig = np.sum(w3 * fld.values) / 8.0
        mean_rec = np.sum(w3 * rec.values) / 8.0
        assert abs(mean_orig - mean_rec) < 1e-12

    def test_discard_monotone_in_epsilon(self):
        b = gll_basis(7)
        rng = np.random.default_rng(23)
        blk = dlt_forward(ElementField(order=7, values=rng.normal(size=(8, 8, 8))), b)
        kept = [int(truncate(blk, b, TruncationSpec(e)).kept_mask.sum())
                for e in (1e-3, 1e-2, 1e-1, 1.0)]
        assert kept == sorted(kept, reverse=True)

    def test_deterministic_tie_break(self):
        b = gll_basis(3)
        coeffs = np.full((4, 4, 4), 0.5)  # all energies tie within gamma groups
        blk = SpectralBlock(order=3, coeffs=coeffs, kept_mask=np.ones((4, 4, 4), bool))
        a = truncate(blk, b, TruncationSpec(0.3))
        c = truncate(blk, b, TruncationSpec(0.3))
        assert np.array_equal(a.kept_mask, c.kept_mask)


class TestWeightedRmse:
    def test_identical_fields(self):
        b = gll_basis(3)
        fld = ElementField(order=3, values=np.arange(64, dtype=float).reshape(4, 4, 4))
        assert weighted_rmse(fld, fld, b) == 0.0

    def test_constant_offset(self):
        b = gll_basis(5)
        rng = np.random.default_rng(2)
        a = ElementField(order=5, values=rng.normal(size=(6, 6, 6)))
        shifted = ElementField(order=5, values=a.values + 0.125)
        assert weighted_rmse(a, shifted, b) == pytest.approx(0.125, abs=1e-13)

    def test_matches_loop_nest_oracle(self):
        b = gll_basis(3)
        rng = np.random.default_rng(9)
        x = ElementField(order=3, values=rng.normal(size=(4, 4, 4)))
        y = ElementField(order=3, values=rng.normal(size=(4, 4, 4)))
        num = den = 0.0
        for i in range(4):
            for j in range(4):
                for k in range(4):
                    w = b.weights[i] * b.weights[j] * b.weights[k]
                    num += w * (x.values[i, j, k] - y.values[i, j, k]) ** 2
                    den += w
        assert weighted_rmse(x, y, b) == pytest.approx(np.sqrt(num / den), abs=1e-12)

    def test_order_mismatch(self):
        with pytest.raises(DimensionError):
            weighted_rmse(ElementField(order=2, values=np.zeros((3, 3, 3))),
                          ElementField(order=3, values=np.zeros((4, 4, 4))),
                          gll_basis(2))


class TestArchive:
    def test_empty_archive_round_trips(self):
        arc = encode([], p=7, epsilon=1e-2, field_name="pressure")
        out = CompressedArchive.from_bytes(arc.to_bytes())
        assert out.element_count == 0
        assert decode(out) == []

    def test_single_constant_element(self):
        b = gll_basis(3)
        fld = ElementField(order=3, values=np.full((4, 4, 4), 1.5))
        blk = truncate(dlt_forward(fld, b), b, TruncationSpec(1e-3))
        arc = encode([blk], p=3, epsilon=1e-3, field_name="vel_x")
        rec = dlt_inverse(decode(arc)[0], b)
        np.testing.assert_allclose(rec.values, 1.5, atol=1e-13)

    def test_raw_and_deflate_decode_identically(self):
        rng = np.random.default_rng(12)
        blocks = [random_block(7, rng, element_id=e, sparsity=0.9)
                  for e in range(64)]
        raw = encode(blocks, p=7, epsilon=0.0, field_name="f",
                     codec_id=compress.CODEC_RAW)
        packed = encode(blocks, p=7, epsilon=0.0, field_name="f",
                        codec_id=compress.CODEC_DEFLATE)
        for a, b_ in zip(decode(raw), decode(packed)):
            assert np.array_equal(a.coeffs, b_.coeffs)
            assert np.array_equal(a.kept_mask, b_.kept_mask)
        assert len(packed.to_bytes()) < len(raw.to_bytes())

    def test_byte_deterministic(self):
        rng1 = np.random.default_rng(4)
        rng2 = np.random.default_rng(4)
        a = encode([random_block(5, rng1)], p=5, epsilon=1e-2, field_name="x")
        b = encode([random_block(5, rng2)], p=5, epsilon=1e-2, field_name="x")
        assert a.to_bytes() == b.to_bytes()

    def test_header_layout_frozen(self):
        # little-endian: NKCZ | u32 1 | u32 p | u64 count | f64 eps | u16 len | name
        arc = encode([], p=3, epsilon=0.5, field_name="ab",
                     codec_id=compress.CODEC_RAW)
        data = arc.to_bytes()
        assert data[:4] == b"NKCZ"
        assert data[4:8] == (1).to_bytes(4, "little")
        assert data[8:12] == (3).to_bytes(4, "little")
        assert data[12:20] == (0).to_bytes(8, "little")
        assert data[20:28] == np.float64(0.5).tobytes()
        assert data[28:30] == (2).to_bytes(2, "little")
        assert data[30:32] == b"ab"
        assert data[32] == compress.CODEC_RAW

    def test_bad_magic(self):
        data = encode([], p=2, epsilon=0.0, field_name="f").to_bytes()
        with pytest.raises(BadMagicError):
            CompressedArchive.from_bytes(b"XXXX" + data[4:])

    def test_bad_version(self):
        data = bytearray(encode([], p=2, epsilon=0.0, field_name="f").to_bytes())
        data[4] = 99
        with pytest.raises(BadVersionError):
            CompressedArchive.from_bytes(bytes(data))

    def test_truncated_payload_names_element(self):
        rng = np.random.default_rng(3)
        blocks = [random_block(2, rng, element_id=e) for e in range(3)]
        arc = encode(blocks, p=2, epsilon=0.0, field_name="f",
                     codec_id=compress.CODEC_RAW)
        arc.payload = arc.payload[:len(arc.payload) // 2]
        with pytest.raises(TruncatedStreamError, match="element"):
            decode(arc)

    def test_truncated_whole_stream(self):
        data = encode([], p=2, epsilon=0.0, field_name="f").to_bytes()
        with pytest.raises(TruncatedStreamError):
            CompressedArchive.from_bytes(data[:10])

    def test_unknown_codec(self):
        data = bytearray(encode([], p=2, epsilon=0.0, field_name="f").to_bytes())
        data[32] = 42
        with pytest.raises(ArchiveFormatError):
            CompressedArchive.from_bytes(bytes(data))

    def test_order_mismatch_across_blocks(self):
        rng = np.random.default_rng(1)
        with pytest.raises(ArchiveFormatError):
            encode([random_block(2, rng), random_block(3, rng)], p=2,
                   epsilon=0.0, field_name="f")

    @given(st.integers(1, 6), st.integers(0, 2 ** 31 - 1), st.floats(0.0, 0.99))
    @settings(max_examples=40, deadline=None)
    def test_lossless_property(self, p, seed, sparsity):
        rng = np.random.default_rng(seed)
        blocks = [random_block(p, rng, element_id=e, sparsity=sparsity)
                  for e in range(3)]
        arc = CompressedArchive.from_bytes(
            encode(blocks, p=p, epsilon=0.0, field_name="f").to_bytes())
        for orig, back in zip(blocks, decode(arc)):
            assert orig.element_id == back.element_id
            assert np.array_equal(orig.kept_mask, back.kept_mask)
            assert np.array_equal(orig.coeffs, back.coeffs)


class TestReport:
    def test_all_constant_field_discards_511_of_512(self):
        b = gll_basis(7)
        spec = TruncationSpec(1e-2)
        originals, blocks = [], []
        for e in range(64):
            fld = ElementField(order=7, values=np.full((8, 8, 8), 1.0), element_id=e)
            originals.append(fld)
            blocks.append(truncate(dlt_forward(fld, b), b, spec))
        arc = encode(blocks, p=7, epsilon=1e-2, field_name="p")
        rep = compress.compression_report(originals, arc, b)
        assert rep.discarded_fraction == pytest.approx(511 / 512)
        assert rep.max_rmse < 1e-12
        assert rep.ratio > 100

    def test_incompressible_data_reports_honest_ratio(self):
        b = gll_basis(3)
        rng = np.random.default_rng(44)
        originals, blocks = [], []
        for e in range(8):
            fld = ElementField(order=3, values=rng.normal(size=(4, 4, 4)), element_id=e)
            originals.append(fld)
            blocks.append(truncate(dlt_forward(fld, b), b, TruncationSpec(0.0)))
        arc = encode(blocks, p=3, epsilon=0.0, field_name="p",
                     codec_id=compress.CODEC_RAW)
        rep = compress.compression_report(originals, arc, b)
        assert rep.ratio < 1.0  # bitmap overhead, honestly reported
        assert rep.discarded_fraction == 0.0

    def test_ratio_monotone_in_epsilon(self):
        sim = ProxySimulator(MeshConfig(elements_per_axis=(2, 2, 2), seed=3))
        state = sim.init_state()
        b = sim.basis
        originals = [ElementField(order=7, values=state.fields["pressure"][e],
                                  element_id=e) for e in range(8)]
        ratios, discards = [], []
        for eps in (1e-3, 1e-2, 1e-1):
            blocks = [truncate(dlt_forward(f, b), b, TruncationSpec(eps))
                      for f in originals]
            arc = encode(blocks, p=7, epsilon=eps, field_name="p")
            rep = compress.compression_report(originals, arc, b)
            ratios.append(rep.ratio)
            discards.append(rep.discarded_fraction)
        assert ratios == sorted(ratios)
        assert discards == sorted(discards)

    def test_count_mismatch(self):
        b = gll_basis(2)
        arc = encode([], p=2, epsilon=0.0, field_name="f")
        with pytest.raises(DimensionError):
            compress.compression_report(
                [ElementField(order=2, values=np.zeros((3, 3, 3)))], arc, b)
