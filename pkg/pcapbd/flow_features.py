# -*- coding: utf-8 -*-
'''
-------------------------------------------------------------------------------
 Per-packet flow features from damped incremental statistics.

 Every statistic keeps a weight w, a linear sum LS and a squared sum SS per
 decay rate. Before a new sample at time t all three are multiplied by
 2**(-lambda * dt) with dt in seconds since the statistic's last update.

 Layout of the full 115-column row, key-major, then decay rate, then stat:

   srcMacIp   frame size, 1D (weight, mean, std)                 3 x 5 = 15
   srcIp      frame size, 1D                                     3 x 5 = 15
   channel    frame size, src ip -> dst ip, 2D                   7 x 5 = 35
   jitter     inter-arrival seconds on src ip -> dst ip, 1D      3 x 5 = 15
   socket     frame size, src ip:port -> dst ip:port, 2D         7 x 5 = 35

 2D stats are (weight, mean, std) of the packet's own direction followed by
 magnitude, radius, covariance and pcc of both directions. Columns are named
 "<key>_<stat>_<lambda>", e.g. "channel_radius_0.1".

 Subsets: jitter = the 15 jitter columns; size = srcMacIp, srcIp and the
 channel means/stds (40); socket = the 35 socket columns; all = 115.
-------------------------------------------------------------------------------
'''
import copy
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from pcapbd.errors import ContractError, OrderingError
from pcapbd.logger import info
from pcapbd.pcap_codec import USEC

DECAY_RATES = np.array([5.0, 3.0, 1.0, 0.1, 0.01])

KEY_SRC_MAC_IP = "srcMacIp"
KEY_SRC_IP = "srcIp"
KEY_CHANNEL = "channel"
KEY_JITTER = "jitter"
KEY_SOCKET = "socket"

STATS_1D = ("weight", "mean", "std")
STATS_2D = STATS_1D + ("magnitude", "radius", "covariance", "pcc")

KEY_LAYOUT = (
    (KEY_SRC_MAC_IP, STATS_1D),
    (KEY_SRC_IP, STATS_1D),
    (KEY_CHANNEL, STATS_2D),
    (KEY_JITTER, STATS_1D),
    (KEY_SOCKET, STATS_2D),
)

FEATURE_SETS = ("jitter", "size", "socket", "all")

# relative floor below which a variance is floating-point noise
VAR_CLAMP = 1e-10

META_COLUMNS = ["packet_index", "label"]


def format_rate(rate):
    return f"{rate:g}"


def all_columns():
    return [f"{key}_{stat}_{format_rate(rate)}"
            for key, stats in KEY_LAYOUT for rate in DECAY_RATES for stat in stats]


def feature_columns(feature_set="all"):
    '''
    Ordered column names of a feature set.
    '''
    if feature_set not in FEATURE_SETS:
        raise ContractError(f"unknown feature set '{feature_set}', use one of {FEATURE_SETS}")
    columns = all_columns()
    if feature_set == "all":
        return columns
    if feature_set == "jitter":
        return [c for c in columns if c.startswith(KEY_JITTER + "_")]
    if feature_set == "socket":
        return [c for c in columns if c.startswith(KEY_SOCKET + "_")]
    sizeKeys = (KEY_SRC_MAC_IP + "_", KEY_SRC_IP + "_")
    channelStats = (f"{KEY_CHANNEL}_mean_", f"{KEY_CHANNEL}_std_")
    return [c for c in columns if c.startswith(sizeKeys) or c.startswith(channelStats)]


def feature_indices(feature_set="all"):
    position = {name: i for i, name in enumerate(all_columns())}
    return np.array([position[c] for c in feature_columns(feature_set)], dtype=int)


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# DAMPED STATISTICS
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

def safe_divide(a, b):
    return np.divide(a, b, out=np.zeros(np.broadcast(a, b).shape), where=b > 0)


def damped_variance(w, ls, ss):
    mean = safe_divide(ls, w)
    var = np.abs(safe_divide(ss, w) - mean**2)
    return np.where(var < VAR_CLAMP * np.maximum(mean**2, 1.0), 0.0, var)


@dataclass
class DampedStat1D:
    w: np.ndarray
    ls: np.ndarray
    ss: np.ndarray
    last_update: Optional[int] = None

    @classmethod
    def fresh(cls, n_rates=len(DECAY_RATES)):
        return cls(np.zeros(n_rates), np.zeros(n_rates), np.zeros(n_rates))

    def decay_factor(self, t, rates):
        if self.last_update is None:
            return np.ones_like(self.w)
        if t < self.last_update:
            raise OrderingError(f"update at {t} us is earlier than the last update at {self.last_update} us")
        return np.exp2(-np.asarray(rates) * ((t - self.last_update) / USEC))

    def insert(self, value, t, rates=DECAY_RATES):
        gamma = self.decay_factor(t, rates)
        self.w = self.w * gamma + 1.0
        self.ls = self.ls * gamma + value
        self.ss = self.ss * gamma + value * value
        self.last_update = t

    @property
    def mean(self):
        return safe_divide(self.ls, self.w)

    @property
    def var(self):
        return damped_variance(self.w, self.ls, self.ss)

    @property
    def std(self):
        return np.sqrt(self.var)


def update_1d(stat, value, t, rate):
    '''
    New statistic: `stat` decayed to `t` with `rate` (per second) plus one
    sample `value`. The input is left untouched.
    '''
    updated = copy.deepcopy(stat)
    updated.insert(float(value), t, rate)
    return updated


@dataclass
class DampedCovariance:
    '''
    Damped sum of residual products of two streams. A sample on one side adds
    its residual (value minus the side's mean after the update) times the
    other side's most recent residual.
    '''
    sr: np.ndarray
    w: np.ndarray
    last_residual: List[np.ndarray]
    last_update: Optional[int] = None

    @classmethod
    def fresh(cls, n_rates=len(DECAY_RATES)):
        return cls(np.zeros(n_rates), np.zeros(n_rates), [np.zeros(n_rates), np.zeros(n_rates)])

    def insert(self, side, residual, t, rates=DECAY_RATES):
        if self.last_update is None:
            gamma = np.ones_like(self.w)
        else:
            if t < self.last_update:
                raise OrderingError(f"update at {t} us is earlier than the last update at {self.last_update} us")
            gamma = np.exp2(-np.asarray(rates) * ((t - self.last_update) / USEC))
        self.sr = self.sr * gamma + residual * self.last_residual[1 - side]
        self.w = self.w * gamma + 1.0
        self.last_residual[side] = residual
        self.last_update = t

    @property
    def cov(self):
        return safe_divide(self.sr, self.w)


@dataclass
class DampedStat2D:
    '''
    Both directions of a bidirectional key plus their covariance.
    '''
    a: DampedStat1D
    b: DampedStat1D
    covariance: DampedCovariance

    def stats(self):
        '''(weight, mean, std, magnitude, radius, covariance, pcc) of side a, shape (rates, 7).'''
        meanA, meanB = self.a.mean, self.b.mean
        varA, varB = self.a.var, self.b.var
        stdA, stdB = np.sqrt(varA), np.sqrt(varB)
        cov = self.covariance.cov
        denominator = stdA * stdB
        pcc = np.clip(safe_divide(cov, denominator), -1.0, 1.0)
        return np.stack([
            self.a.w, meanA, stdA,
            np.sqrt(meanA**2 + meanB**2),
            np.sqrt(varA**2 + varB**2),
            cov, pcc], axis=1)


class BidirectionalStats:
    '''
    Directed 1D streams and the covariance of each unordered pair.
    '''

    def __init__(self, rates=DECAY_RATES):
        self.rates = rates
        self.streams: Dict[tuple, DampedStat1D] = {}
        self.covariances: Dict[tuple, DampedCovariance] = {}

    def update(self, key, reverse, value, t):
        n = len(self.rates)
        a = self.streams.setdefault(key, DampedStat1D.fresh(n))
        a.insert(value, t, self.rates)
        b = self.streams.get(reverse)
        if b is None:
            b = DampedStat1D.fresh(n)
        if key <= reverse:
            pairKey, side = (key, reverse), 0
        else:
            pairKey, side = (reverse, key), 1
        covariance = self.covariances.setdefault(pairKey, DampedCovariance.fresh(n))
        covariance.insert(side, value - a.mean, t, self.rates)
        return DampedStat2D(a, b, covariance).stats().ravel()


class UnidirectionalStats:

    def __init__(self, rates=DECAY_RATES):
        self.rates = rates
        self.streams: Dict[tuple, DampedStat1D] = {}

    def update(self, key, value, t):
        stat = self.streams.setdefault(key, DampedStat1D.fresh(len(self.rates)))
        stat.insert(value, t, self.rates)
        return np.stack([stat.w, stat.mean, stat.std], axis=1).ravel()


class JitterStats:
    '''
    Inter-arrival times in seconds per directed channel. The first arrival
    only records its time.
    '''

    def __init__(self, rates=DECAY_RATES):
        self.rates = rates
        self.streams: Dict[tuple, DampedStat1D] = {}
        self.last_arrival: Dict[tuple, int] = {}

    def update(self, key, t):
        stat = self.streams.setdefault(key, DampedStat1D.fresh(len(self.rates)))
        last = self.last_arrival.get(key)
        self.last_arrival[key] = t
        if last is not None:
            if t < last:
                raise OrderingError(f"arrival at {t} us is earlier than the previous one at {last} us")
            stat.insert((t - last) / USEC, t, self.rates)
        return np.stack([stat.w, stat.mean, stat.std], axis=1).ravel()


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# EXTRACTION
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

@dataclass
class FeatureVector:
    index: int
    label: str
    values: np.ndarray = field(repr=False)


class FeatureExtractor:
    '''
    Streaming extractor. One instance per trace; feed packets in timestamp
    order.
    '''

    def __init__(self, rates=DECAY_RATES):
        self.rates = np.asarray(rates, dtype=float)
        self.srcMacIp = UnidirectionalStats(self.rates)
        self.srcIp = UnidirectionalStats(self.rates)
        self.channel = BidirectionalStats(self.rates)
        self.jitter = JitterStats(self.rates)
        self.socket = BidirectionalStats(self.rates)

    def process(self, packet):
        '''Full-width row for an IPv4 packet, None for anything else.'''
        if packet.ip is None:
            return None
        t = packet.ts
        size = float(packet.frame_length)
        src, dst = packet.ip.src, packet.ip.dst
        sport, dport = packet.src_port, packet.dst_port
        return np.concatenate([
            self.srcMacIp.update((packet.src_mac, src), size, t),
            self.srcIp.update(src, size, t),
            self.channel.update((src, dst), (dst, src), size, t),
            self.jitter.update((src, dst), t),
            self.socket.update((src, sport, dst, dport), (dst, dport, src, sport), size, t),
        ])


def extract(trace, feature_set="all", label="benign"):
    '''
    One FeatureVector per IPv4 packet of `trace`, in trace order.

    Parameters
    ----------
    trace: Trace
       Timestamp-ordered trace.
    feature_set: str
       One of FEATURE_SETS.
    label: str
       Label attached to every row.

    Returns
    -------
    vectors: list of FeatureVector
    '''
    indices = feature_indices(feature_set)
    extractor = FeatureExtractor()
    vectors = []
    for index, packet in enumerate(trace.packets):
        row = extractor.process(packet)
        if row is None:
            continue
        vectors.append(FeatureVector(index, label, row[indices]))
    info(f"Extracted {len(vectors)} rows x {len(indices)} '{feature_set}' features ({label})")
    return vectors


def vectors_to_frame(vectors, feature_set="all"):
    columns = feature_columns(feature_set)
    if vectors:
        values = np.vstack([v.values for v in vectors])
    else:
        values = np.zeros((0, len(columns)))
    frame = pd.DataFrame(values, columns=columns)
    frame.insert(0, "label", [v.label for v in vectors])
    frame.insert(0, "packet_index", np.array([v.index for v in vectors], dtype=np.int64))
    return frame


def write_features(vectors, path, feature_set="all"):
    '''
    CSV with header packet_index,label,<columns of the feature set>.
    '''
    vectors_to_frame(vectors, feature_set).to_csv(path, index=False)
    info(f"Writing {len(vectors)} feature rows: {path}")


def read_features(path):
    '''
    Feature CSV as a DataFrame; columns are checked against the known layout.
    '''
    frame = pd.read_csv(path, dtype={"label": str}, keep_default_na=False)
    missing = [c for c in META_COLUMNS if c not in frame.columns]
    if missing:
        raise ContractError(f"{path}: missing columns {missing}")
    known = set(all_columns())
    unknown = [c for c in frame.columns if c not in known and c not in META_COLUMNS]
    if unknown:
        raise ContractError(f"{path}: unknown feature columns {unknown[:5]}")
    return frame


def feature_set_of_columns(columns):
    columns = [c for c in columns if c not in META_COLUMNS]
    for featureSet in FEATURE_SETS:
        if feature_columns(featureSet) == list(columns):
            return featureSet
    raise ContractError("feature columns do not match any known feature set")
