import numpy as np
import pytest

from conftest import IP_A, T0, udp
from pcapbd.errors import ContractError, OrderingError
from pcapbd.flow_features import (DECAY_RATES, VAR_CLAMP, DampedStat1D, all_columns, extract, feature_columns,
                                  feature_indices, feature_set_of_columns, read_features, update_1d,
                                  vectors_to_frame, write_features)
from pcapbd.pcap_codec import Trace, parse_packet


def oracle_1d(times, values, t, rates=DECAY_RATES):
    '''(weight, mean, std) per rate from the whole history, no recursion.'''
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    rows = []
    for rate in rates:
        weights = 2.0 ** (-rate * (t - times) / 1e6)
        total = weights.sum()
        mean = (weights * values).sum() / total
        var = (weights * (values - mean) ** 2).sum() / total
        if var < VAR_CLAMP * max(mean**2, 1.0):
            var = 0.0
        rows.append((total, mean, np.sqrt(var)))
    return np.array(rows)


def columns_for(frame, key, stat):
    return frame[[f"{key}_{stat}_{rate:g}" for rate in DECAY_RATES]].to_numpy()


def test_column_counts():
    assert len(all_columns()) == 115
    assert len(set(all_columns())) == 115
    assert len(feature_columns("jitter")) == 15
    assert len(feature_columns("size")) == 40
    assert len(feature_columns("socket")) == 35
    assert feature_columns("all") == all_columns()
    assert "channel_radius_0.1" in all_columns()
    with pytest.raises(ContractError):
        feature_columns("timing")


def test_source_ip_stats_match_full_history(random_trace_factory):
    trace = random_trace_factory(21, n=500)
    frame = vectors_to_frame(extract(trace))
    for row, packet in enumerate(trace):
        history = [(p.ts, len(p.raw)) for p in trace.packets[:row + 1] if p.ip.src == packet.ip.src]
        times, sizes = zip(*history)
        expected = oracle_1d(times, sizes, packet.ts)
        np.testing.assert_allclose(columns_for(frame, "srcIp", "weight")[row], expected[:, 0], rtol=1e-9)
        np.testing.assert_allclose(columns_for(frame, "srcIp", "mean")[row], expected[:, 1], rtol=1e-9)
        np.testing.assert_allclose(columns_for(frame, "srcIp", "std")[row], expected[:, 2], rtol=1e-6, atol=1e-3)


def test_channel_magnitude_and_radius_match_full_history(random_trace_factory):
    trace = random_trace_factory(22, n=200)
    frame = vectors_to_frame(extract(trace))
    for row, packet in enumerate(trace):
        src, dst = packet.ip.src, packet.ip.dst
        own = [(p.ts, len(p.raw)) for p in trace.packets[:row + 1] if (p.ip.src, p.ip.dst) == (src, dst)]
        other = [(p.ts, len(p.raw)) for p in trace.packets[:row + 1] if (p.ip.src, p.ip.dst) == (dst, src)]
        a = oracle_1d(*zip(*own), packet.ts)
        if other:
            b = oracle_1d(*zip(*other), other[-1][0])
        else:
            b = np.zeros_like(a)
        np.testing.assert_allclose(columns_for(frame, "channel", "mean")[row], a[:, 1], rtol=1e-9)
        np.testing.assert_allclose(columns_for(frame, "channel", "magnitude")[row],
                                   np.sqrt(a[:, 1]**2 + b[:, 1]**2), rtol=1e-9)
        np.testing.assert_allclose(columns_for(frame, "channel", "radius")[row],
                                   np.sqrt(a[:, 2]**4 + b[:, 2]**4), rtol=1e-5, atol=1e-2)
        pcc = columns_for(frame, "channel", "pcc")[row]
        assert np.all(pcc >= -1.0) and np.all(pcc <= 1.0)


def test_jitter_matches_full_history(random_trace_factory):
    trace = random_trace_factory(23, n=200)
    frame = vectors_to_frame(extract(trace, "jitter"), "jitter")
    for row, packet in enumerate(trace):
        arrivals = [p.ts for p in trace.packets[:row + 1]
                    if (p.ip.src, p.ip.dst) == (packet.ip.src, packet.ip.dst)]
        weights = columns_for(frame, "jitter", "weight")[row]
        if len(arrivals) == 1:
            assert np.all(weights == 0.0)
            continue
        gaps = np.diff(arrivals) / 1e6
        expected = oracle_1d(arrivals[1:], gaps, packet.ts)
        np.testing.assert_allclose(weights, expected[:, 0], rtol=1e-9)
        np.testing.assert_allclose(columns_for(frame, "jitter", "mean")[row], expected[:, 1], rtol=1e-9, atol=1e-12)


def socket_key(p):
    return (p.ip.src, p.src_port, p.ip.dst, p.dst_port)


def channel_key(p):
    return (p.ip.src, p.ip.dst)


def reverse_key(key):
    half = len(key) // 2
    return key[half:] + key[:half]


class FullHistoryOracle:
    '''
    Every column of a row recomputed from the packets seen so far, with
    explicit decay weights instead of running sums.
    '''

    def __init__(self, packets):
        self.packets = packets
        self.residuals = {}

    def stream(self, row, match):
        history = [(p.ts, float(p.frame_length)) for p in self.packets[:row + 1] if match(p)]
        return tuple(zip(*history))

    def residual(self, key_of, j):
        '''Size minus the own-direction mean right after packet j.'''
        memo = (key_of.__name__, j)
        if memo not in self.residuals:
            key = key_of(self.packets[j])
            times, sizes = self.stream(j, lambda p: key_of(p) == key)
            self.residuals[memo] = sizes[-1] - oracle_1d(times, sizes, times[-1])[:, 1]
        return self.residuals[memo]

    def bidirectional(self, row, key_of):
        t = self.packets[row].ts
        own = key_of(self.packets[row])
        other = reverse_key(own)
        a = oracle_1d(*self.stream(row, lambda p: key_of(p) == own), t)
        otherHistory = self.stream(row, lambda p: key_of(p) == other)
        b = oracle_1d(*otherHistory, otherHistory[0][-1]) if otherHistory else np.zeros_like(a)

        lastResidual = {own: np.zeros(len(DECAY_RATES)), other: np.zeros(len(DECAY_RATES))}
        times, products = [], []
        for j, p in enumerate(self.packets[:row + 1]):
            key = key_of(p)
            if key not in lastResidual:
                continue
            residual = self.residual(key_of, j)
            partner = other if key == own else own
            times.append(p.ts)
            products.append(residual * lastResidual[partner])
            lastResidual[key] = residual
        decay = 2.0 ** (-np.outer(t - np.asarray(times, dtype=float), DECAY_RATES) / 1e6)
        cov = (decay * np.array(products)).sum(axis=0) / decay.sum(axis=0)

        stdA, stdB = a[:, 2], b[:, 2]
        denominator = stdA * stdB
        pcc = np.divide(cov, denominator, out=np.zeros_like(cov), where=denominator > 0)
        return np.stack([a[:, 0], a[:, 1], stdA,
                         np.sqrt(a[:, 1]**2 + b[:, 1]**2),
                         np.sqrt(stdA**4 + stdB**4),
                         cov, np.clip(pcc, -1.0, 1.0)], axis=1)

    def jitter(self, row):
        packet = self.packets[row]
        arrivals = [p.ts for p in self.packets[:row + 1] if channel_key(p) == channel_key(packet)]
        if len(arrivals) == 1:
            return np.zeros((len(DECAY_RATES), 3))
        return oracle_1d(arrivals[1:], np.diff(arrivals) / 1e6, packet.ts)

    def row(self, row):
        packet = self.packets[row]
        t = packet.ts
        srcMacIp = oracle_1d(*self.stream(row, lambda p: (p.src_mac, p.ip.src) == (packet.src_mac, packet.ip.src)), t)
        srcIp = oracle_1d(*self.stream(row, lambda p: p.ip.src == packet.ip.src), t)
        return np.concatenate([srcMacIp.ravel(), srcIp.ravel(), self.bidirectional(row, channel_key).ravel(),
                               self.jitter(row).ravel(), self.bidirectional(row, socket_key).ravel()])


@pytest.mark.parametrize("seed", (31, 32))
def test_every_column_matches_full_history(random_trace_factory, seed):
    trace = random_trace_factory(seed, n=500)
    actual = np.vstack([v.values for v in extract(trace)])
    oracle = FullHistoryOracle(trace.packets)
    expected = np.vstack([oracle.row(i) for i in range(len(trace))])
    assert actual.shape == expected.shape == (500, 115)
    # absolute floor per column for values that cancel to almost zero
    floor = 1e-9 * np.abs(expected).max(axis=0)
    # same predicate as assert_allclose, which rejects an array atol on numpy 2
    np.testing.assert_array_equal(np.isclose(actual, expected, rtol=1e-9, atol=floor, equal_nan=True), True)
    socketPcc = expected[:, [i for i, c in enumerate(all_columns()) if c.startswith("socket_pcc")]]
    assert np.any(socketPcc != 0.0)


def test_single_packet_row():
    packet = udp(T0, b"x" * 100)
    frame = vectors_to_frame(extract(Trace([packet])))
    assert np.all(columns_for(frame, "srcIp", "weight")[0] == 1.0)
    assert np.all(columns_for(frame, "srcIp", "mean")[0] == len(packet.raw))
    assert np.all(columns_for(frame, "srcIp", "std")[0] == 0.0)
    assert np.all(columns_for(frame, "socket", "pcc")[0] == 0.0)


def test_feature_subsets_are_column_selections(random_trace_factory):
    trace = random_trace_factory(24, n=100)
    full = np.vstack([v.values for v in extract(trace, "all")])
    for featureSet in ("jitter", "size", "socket"):
        subset = np.vstack([v.values for v in extract(trace, featureSet)])
        np.testing.assert_array_equal(subset, full[:, feature_indices(featureSet)])


def test_out_of_order_timestamps_raise():
    with pytest.raises(OrderingError):
        extract(Trace([udp(T0 + 10), udp(T0)]))


def test_update_1d_leaves_input_untouched():
    stat = DampedStat1D.fresh()
    first = update_1d(stat, 10.0, T0, DECAY_RATES)
    second = update_1d(first, 20.0, T0 + 1_000_000, DECAY_RATES)
    assert np.all(stat.w == 0.0)
    assert np.all(first.w == 1.0)
    np.testing.assert_allclose(second.w, 1.0 + 2.0 ** -DECAY_RATES)


def test_non_ip_frames_have_no_row():
    arp = parse_packet(bytes.fromhex("ffffffffffff02000000000a0806") + bytes(28), T0)
    vectors = extract(Trace([arp, udp(T0 + 5)]), label="attack")
    assert [(v.index, v.label) for v in vectors] == [(1, "attack")]


def test_feature_file(tmp_path, mixed_trace):
    vectors = extract(mixed_trace, "socket", label="benign")
    path = tmp_path / "features.csv"
    write_features(vectors, path, "socket")
    frame = read_features(path)
    assert list(frame.columns[:2]) == ["packet_index", "label"]
    assert feature_set_of_columns(frame.columns) == "socket"
    assert len(frame) == len(mixed_trace)
    np.testing.assert_allclose(frame[feature_columns("socket")].to_numpy(), np.vstack([v.values for v in vectors]),
                               rtol=1e-12)
    assert set(frame["label"]) == {"benign"}
    assert (frame["packet_index"] == np.arange(len(mixed_trace))).all()


def test_unknown_columns_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("packet_index,label,srcIp_weight_5,bogus\n0,benign,1,2\n")
    with pytest.raises(ContractError):
        read_features(path)


def test_source_key_uses_ip(mixed_trace):
    frame = vectors_to_frame(extract(mixed_trace))
    fromA = [p.ip.src == IP_A for p in mixed_trace]
    weights = columns_for(frame, "srcIp", "weight")[:, -1]
    # slowest decay: weights grow along the packets of one source
    assert np.all(np.diff(weights[fromA]) > 0)
