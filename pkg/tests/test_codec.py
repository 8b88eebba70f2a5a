import numpy as np
import pytest

from codec.container import (
    FORMAT_VERSION,
    MAGIC,
    CompressedModel,
    deserialize_model,
    read_model,
    section_sizes,
    serialize_model,
    write_model,
)
from codec.range_coder import decode_tensor, encode_tensor
from codec.report import dense_baseline_bytes, report_size
from engine.state import pack_state, unpack_state
from entropy_model.pmf import TOTAL, PmfTable, quantize_frequencies, table_ideal_bits
from utils.errors import ChecksumError, CodecError, FormatVersionError, TruncatedPayloadError

CRC = 4


def _random_table(gen, dims):
    offsets, freqs = [], []
    for _ in range(dims):
        width = int(gen.integers(1, 12))
        probs = gen.dirichlet(np.full(width + 1, 0.5))
        probs[-1] *= 0.01
        offsets.append(int(gen.integers(-6, 3)))
        freqs.append(quantize_frequencies(probs))
    return PmfTable(np.array(offsets), freqs)


def test_two_symbol_example_fits_in_two_bytes():
    table = PmfTable([0], [[49152, 16383, 1]])
    payload = encode_tensor(np.array([[0], [0], [1], [0]]), table)
    assert len(payload) - CRC <= 2
    np.testing.assert_array_equal(decode_tensor(payload, table, (4, 1)).ravel(), [0, 0, 1, 0])


def test_random_tensors_round_trip_within_ideal_size():
    gen = np.random.default_rng(0)
    for case in range(1000):
        dims = int(gen.choice([1, 4, 9]))
        table = _random_table(gen, dims)
        rows = int(gen.integers(1, 30))
        lo = table.offsets - 2
        hi = table.offsets + np.array([f.size for f in table.frequencies])
        symbols = gen.integers(lo, hi, size=(rows, dims))
        if case % 10 == 0:
            symbols[0, 0] = int(gen.integers(-2 ** 31, 2 ** 31 - 1))
        payload = encode_tensor(symbols, table)
        np.testing.assert_array_equal(decode_tensor(payload, table, symbols.shape), symbols)
        assert 8 * (len(payload) - CRC) <= table_ideal_bits(table, symbols) + 64


def test_near_certain_zeros_barely_grow():
    table = PmfTable([-1], [[1, TOTAL - 3, 1, 1]])
    small = encode_tensor(np.zeros((100, 1), dtype=np.int64), table)
    large = encode_tensor(np.zeros((10_000, 1), dtype=np.int64), table)
    assert len(small) - CRC <= 4
    assert len(large) - CRC <= 8


def test_empty_tensor_has_empty_payload():
    table = PmfTable([0], [[TOTAL - 1, 1]])
    assert encode_tensor(np.zeros((0, 1)), table) == b""
    assert decode_tensor(b"", table, (0, 1)).shape == (0, 1)


def test_escape_values_survive():
    table = PmfTable([0, 0], [[TOTAL // 2, TOTAL // 2 - 1, 1], [TOTAL - 1, 1]])
    symbols = np.array([[0, 0], [-(2 ** 31), 2 ** 31 - 1], [1, 7], [-1, 0]])
    payload = encode_tensor(symbols, table)
    np.testing.assert_array_equal(decode_tensor(payload, table, symbols.shape), symbols)


def test_corrupted_payload_is_detected():
    gen = np.random.default_rng(3)
    table = _random_table(gen, 4)
    symbols = gen.integers(table.offsets, table.offsets + 2, size=(50, 4))
    payload = bytearray(encode_tensor(symbols, table))
    payload[len(payload) // 2] ^= 0x5A
    with pytest.raises(ChecksumError):
        decode_tensor(bytes(payload), table, symbols.shape)
    with pytest.raises(CodecError):
        decode_tensor(bytes(payload[:-1]), table, symbols.shape)
    with pytest.raises(TruncatedPayloadError):
        decode_tensor(bytes(payload[:2]), table, symbols.shape)


def test_table_dimension_mismatch():
    table = PmfTable([0], [[TOTAL - 1, 1]])
    with pytest.raises(CodecError):
        encode_tensor(np.zeros((3, 2)), table)
    with pytest.raises(CodecError):
        decode_tensor(b"\x00" * 8, table, (3, 2))


def test_save_load_save_is_byte_identical(miniconv_state):
    first = serialize_model(pack_state(miniconv_state))
    restored = unpack_state(deserialize_model(first))
    assert serialize_model(pack_state(restored)) == first
    # the frozen tables make repeat packs of the live state identical too
    assert serialize_model(pack_state(miniconv_state)) == first


def test_loaded_model_gives_identical_logits(miniconv_state, tmp_path):
    x = np.random.default_rng(0).normal(size=(6, 1, 12, 12)).astype(np.float32)
    before, _ = miniconv_state.network.forward(x)
    path = str(tmp_path / "model.lnx")
    size = write_model(path, pack_state(miniconv_state))
    assert size == len(open(path, "rb").read())
    restored = unpack_state(read_model(path))
    after, _ = restored.network.forward(x)
    np.testing.assert_array_equal(before, after)


@pytest.mark.parametrize("outlier", [70000.0, -70000.0])
def test_model_with_outlier_latent_packs_and_restores(miniconv_state, outlier):
    latent = miniconv_state.reparam.latents["conv1"]
    latent.surrogate[0, 0] = outlier
    restored = unpack_state(deserialize_model(serialize_model(pack_state(miniconv_state))))
    back = restored.reparam.latents["conv1"].rounded
    assert back[0, 0] == outlier
    np.testing.assert_array_equal(back, latent.rounded)

def test_size_report_components_sum_to_file_length(miniconv_state):
    model = pack_state(miniconv_state)
    data = serialize_model(model)
    report = report_size(model)
    parts = report.header + report.pmf_tables + report.decoders + report.coded_latents + report.raw
    assert parts == report.total == len(data)
    assert sum(section_sizes(model).values()) == len(data)
    assert report.dense_bytes == dense_baseline_bytes(model.weight_count() + model.raw_count())
    assert report.decoders == 4 * sum(g.l * g.l for g in model.groups)
    assert report.compression_ratio > 1.0


def test_bad_magic_and_version(miniconv_state):
    data = bytearray(serialize_model(pack_state(miniconv_state)))
    with pytest.raises(FormatVersionError):
        deserialize_model(b"NOPE" + bytes(data[4:]))
    data[len(MAGIC)] = FORMAT_VERSION + 1
    with pytest.raises(FormatVersionError):
        deserialize_model(bytes(data))


def test_damaged_file_is_rejected(miniconv_state):
    data = bytearray(serialize_model(pack_state(miniconv_state)))
    flipped = data.copy()
    flipped[len(flipped) // 2] ^= 0xFF
    with pytest.raises(ChecksumError):
        deserialize_model(bytes(flipped))
    with pytest.raises(CodecError):
        deserialize_model(bytes(data[:-10]))
    with pytest.raises(CodecError):
        deserialize_model(bytes(data[:7]))


def test_empty_model_round_trips():
    model = CompressedModel(descriptor={"architecture": "none"})
    assert deserialize_model(serialize_model(model)).descriptor == {"architecture": "none"}
