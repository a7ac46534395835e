"""Stage-1 feature extractors.

* MBCNN: one convolution branch per market region -> p_G
* SC-MBCNN: one branch per spectral industry cluster -> p_I
* RNN-ER: one recurrent classifier per news provider, fused by ER -> p_M

Each extractor z-scores its inputs with statistics of its own training rows
and reports accuracy on a held-out validation slice. Outputs are P(Up).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from . import nn
from .data import BRANCH_NAMES, SampleMatrix
from .er import estimate_reliability, fuse_providers
from .errors import EmptyBranch, EmptySequence, TooFewSamples
from .ga import Gene, SearchSpace
from .spectral import Clustering, IndustryMatrix, cluster_industries, median_sigma

MIN_TRAIN = 50

# training calls per extractor kind; lets tests prove Stage-2 search never retrains Stage 1
TRAINING_CALLS: Counter = Counter()


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x, axis=0) -> "Scaler":
        x = np.asarray(x, dtype=float)
        mean = x.mean(axis=axis)
        std = x.std(axis=axis)
        return cls(mean, np.where(std > 1e-12, std, 1.0))

    def __call__(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std


def _check_rows(n: int, need: int = MIN_TRAIN):
    if n < need:
        raise TooFewSamples(f"{n} training samples, need at least {need}")


# ---------------------------------------------------------------------- MBCNN


@dataclass(frozen=True)
class MbcnnParams:
    filters: int = 4
    kernel_len: int = 2
    dense_width: int = 16
    epochs: int = 40
    lr: float = 3e-3
    batch: int = 32
    bn_momentum: float = 0.9
    l2: float = 0.0


@dataclass
class MbcnnModel:
    net: nn.MultiBranchNet
    branch_names: list[str]
    scalers: list[Scaler]
    params: object = None

    def prepare(self, inputs: Sequence[np.ndarray]):
        if len(inputs) != len(self.scalers):
            raise nn.ShapeMismatch(f"expected {len(self.scalers)} branch inputs, got {len(inputs)}")
        return [s(x) for s, x in zip(self.scalers, inputs)]

    def predict_up(self, inputs) -> np.ndarray:
        return self.net.predict_proba(self.prepare(inputs))[:, 1]


def train_mbcnn(inputs: Sequence[np.ndarray], y, params: MbcnnParams = MbcnnParams(), seed: int = 0,
                branch_names: Sequence[str] | None = None, min_rows: int = MIN_TRAIN, kind: str = "mbcnn") -> MbcnnModel:
    """Fit a multi-branch CNN; ``inputs[i]`` is the (N, width_i) block of branch i."""
    y = np.asarray(y, dtype=int)
    _check_rows(len(y), min_rows)
    names = list(branch_names) if branch_names is not None else [f"b{i}" for i in range(len(inputs))]
    for name, x in zip(names, inputs):
        if np.ndim(x) != 2 or np.shape(x)[1] == 0:
            raise EmptyBranch(f"branch {name} has no input columns")
        if len(x) != len(y):
            raise nn.ShapeMismatch(f"branch {name}: {len(x)} rows for {len(y)} labels")
    scalers = [Scaler.fit(x) for x in inputs]
    net = nn.MultiBranchNet([np.shape(x)[1] for x in inputs], params.filters, params.kernel_len,
                            params.dense_width, seed, getattr(params, "bn_momentum", nn.BN_MOMENTUM))
    model = MbcnnModel(net, names, scalers, params)
    TRAINING_CALLS[kind] += 1
    nn.train_model(net, model.prepare(inputs), y, params.epochs, params.batch, params.lr, seed, params.l2)
    return model


def predict_mbcnn(model: MbcnnModel, inputs) -> np.ndarray:
    """(N, 2) probabilities, columns (Up, Down)."""
    up = model.predict_up(inputs)
    return np.column_stack([up, 1.0 - up])


def region_inputs(samples: SampleMatrix, names: Sequence[str] = BRANCH_NAMES) -> list[np.ndarray]:
    return [samples.branches[n] for n in names]


# ------------------------------------------------------------------- SC-MBCNN


@dataclass(frozen=True)
class ScMbcnnParams:
    filters: int = 4
    kernel_len: int = 2
    dense_width: int = 16
    epochs: int = 40
    lr: float = 3e-3
    batch: int = 32
    sigma_scale: float = 1.0
    l2: float = 0.0
    k: object = "auto"
    squared_distance: bool = False  # d^2 instead of the plain distance in the similarity
    row_normalize: bool = False  # unit-length embedding rows before k-means


@dataclass
class ScMbcnnModel:
    clustering: Clustering
    groups: list[list[int]]  # industry column indices per cluster, names sorted
    mbcnn: MbcnnModel

    def predict_up(self, samples: SampleMatrix) -> np.ndarray:
        return self.mbcnn.predict_up(cluster_inputs(samples, self.groups))


def cluster_groups(clustering: Clustering, industry_names: Sequence[str]) -> list[list[int]]:
    pos = {n: i for i, n in enumerate(industry_names)}
    return [[pos[n] for n in clustering.members(c)] for c in range(clustering.k)]


def cluster_inputs(samples: SampleMatrix, groups) -> list[np.ndarray]:
    """Per cluster: member returns at lags 1..L, lag-major, members in name order."""
    out = []
    for idx in groups:
        block = samples.industry[:, idx, :]  # (N, members, L)
        out.append(block.transpose(0, 2, 1).reshape(len(samples), -1))
    return out


def cluster_on(industry_returns: np.ndarray, industry_names: Sequence[str], params: ScMbcnnParams,
               seed: int = 0) -> Clustering:
    """Spectral clustering of the industries' return paths (rows = industries)."""
    m = IndustryMatrix(list(industry_names), industry_returns)
    sigma = params.sigma_scale * median_sigma(m.features)
    n = len(industry_names)
    k = params.k
    if k == "auto" and n < 4:
        k = min(2, n)
    k_range = range(2, min(8, n - 1) + 1)
    return cluster_industries(m, sigma, k, seed, params.squared_distance, params.row_normalize, k_range=k_range)


def train_sc_mbcnn(samples: SampleMatrix, cluster_returns: np.ndarray, params: ScMbcnnParams = ScMbcnnParams(),
                   seed: int = 0) -> ScMbcnnModel:
    """Cluster industries on ``cluster_returns`` (industries x days of the
    training segment), then fit an MBCNN with one branch per cluster."""
    _check_rows(len(samples))
    clustering = cluster_on(cluster_returns, samples.industry_names, params, seed)
    groups = cluster_groups(clustering, samples.industry_names)
    mb = train_mbcnn(cluster_inputs(samples, groups), samples.y, params, seed,
                     [f"cluster{c}" for c in range(clustering.k)], kind="sc_mbcnn")
    return ScMbcnnModel(clustering, groups, mb)


# --------------------------------------------------------------------- RNN-ER


@dataclass(frozen=True)
class ProviderParams:
    h1: int = 8
    h2: int = 8
    epochs: int = 40
    lr: float = 3e-3


@dataclass(frozen=True)
class RnnErParams:
    providers: tuple = ()  # ((name, ProviderParams), ...); missing names use defaults
    weights: tuple = ()  # ((name, weight), ...); default uniform
    lag: int = 1
    batch: int = 32

    def for_provider(self, name: str) -> ProviderParams:
        return dict(self.providers).get(name, ProviderParams())

    def weight_of(self, name: str, m: int) -> float:
        return dict(self.weights).get(name, 1.0 / m)


@dataclass
class ProviderClassifier:
    provider: str
    net: nn.RecurrentNet
    scaler: Scaler
    lag: int
    val_accuracy: float | None = None

    def sequences(self, samples: SampleMatrix) -> np.ndarray:
        return provider_sequences(samples, self.provider, self.lag)

    def predict_up(self, samples: SampleMatrix) -> np.ndarray:
        return self.net.predict_proba(self.scaler(self.sequences(samples)))[:, 1]


def provider_sequences(samples: SampleMatrix, provider: str, lag: int) -> np.ndarray:
    """(N, lag, 10): 6 market + 4 sentiment features per step, oldest first."""
    if lag < 1:
        raise EmptySequence("lag must be >= 1")
    avail = samples.market.shape[1]
    if lag > avail:
        raise ValueError(f"lag {lag} exceeds the assembled news lag {avail}")
    return np.concatenate([samples.market[:, avail - lag:], samples.sentiment[provider][:, avail - lag:]], axis=2)


def train_provider_classifier(seqs: np.ndarray, y, params: ProviderParams = ProviderParams(), seed: int = 0,
                              provider: str = "", lag: int | None = None, batch: int = 32,
                              min_rows: int = MIN_TRAIN) -> ProviderClassifier:
    seqs = np.asarray(seqs, dtype=float)
    y = np.asarray(y, dtype=int)
    if seqs.ndim != 3 or seqs.shape[1] == 0:
        raise EmptySequence("provider input must be (N, steps >= 1, features)")
    _check_rows(len(y), min_rows)
    scaler = Scaler.fit(seqs.reshape(-1, seqs.shape[2]))
    net = nn.RecurrentNet(seqs.shape[2], params.h1, params.h2, seed)
    TRAINING_CALLS["rnn"] += 1
    nn.train_model(net, scaler(seqs), y, params.epochs, batch, params.lr, seed)
    return ProviderClassifier(provider, net, scaler, seqs.shape[1] if lag is None else lag)


@dataclass
class RnnErModel:
    classifiers: dict[str, ProviderClassifier]
    weights: dict[str, float]
    reliabilities: dict[str, float]

    def provider_up(self, samples: SampleMatrix) -> dict[str, np.ndarray]:
        return {p: c.predict_up(samples) for p, c in self.classifiers.items()}

    def predict_up(self, samples: SampleMatrix) -> np.ndarray:
        return fuse_providers(self.provider_up(samples), self.weights, self.reliabilities)[:, 1]


def train_rnn_er(fit: SampleMatrix, val: SampleMatrix, params: RnnErParams = RnnErParams(), seed: int = 0,
                 seeds: dict | None = None) -> RnnErModel:
    """One classifier per provider on ``fit``; reliability = clipped accuracy on ``val``."""
    _check_rows(len(fit))
    providers = sorted(fit.sentiment)
    classifiers, rel = {}, {}
    for i, p in enumerate(providers):
        s = seed + 7919 * (i + 1) if seeds is None else seeds[p]
        clf = train_provider_classifier(provider_sequences(fit, p, params.lag), fit.y, params.for_provider(p), s,
                                        provider=p, lag=params.lag, batch=params.batch)
        pred = (clf.predict_up(val) > 0.5).astype(int)
        clf.val_accuracy = float(np.mean(pred == val.y))
        rel[p] = estimate_reliability(val.y, pred)
        classifiers[p] = clf
    weights = {p: params.weight_of(p, len(providers)) for p in providers}
    return RnnErModel(classifiers, weights, rel)


# ------------------------------------------------------------ search spaces

MBCNN_GENES = (
    Gene("filters", (2, 4, 8)),
    Gene("kernel_len", (1, 2, 3)),
    Gene("dense_width", (8, 16, 32)),
    Gene("epochs", (20, 40, 60)),
    Gene("lr", (1e-3, 3e-3, 1e-2)),
    Gene("batch", (16, 32, 64)),
    Gene("bn_momentum", (0.8, 0.9, 0.99)),
    Gene("l2", (0.0, 1e-4, 1e-3)),
)
SC_MBCNN_GENES = MBCNN_GENES[:6] + (Gene("sigma_scale", (0.5, 1.0, 2.0)), MBCNN_GENES[7])
PROVIDER_GENES = (
    Gene("h1", (4, 8, 16)),
    Gene("h2", (4, 8, 16)),
    Gene("epochs", (20, 40, 60)),
    Gene("lr", (1e-3, 3e-3, 1e-2)),
)
WEIGHT_GRID = (0.2, 0.4, 0.6, 0.8, 1.0)
LAG_GRID = (1, 2, 3, 5)


def mbcnn_space() -> SearchSpace:
    return SearchSpace(MBCNN_GENES)


def sc_mbcnn_space() -> SearchSpace:
    return SearchSpace(SC_MBCNN_GENES)


def rnn_er_space(providers: Sequence[str]) -> SearchSpace:
    """4 genes per provider + one weight per provider + the sequence lag (26 for 5 providers)."""
    genes = [Gene(f"{p}.{g.name}", g.choices) for p in providers for g in PROVIDER_GENES]
    genes += [Gene(f"{p}.weight", WEIGHT_GRID) for p in providers]
    genes.append(Gene("lag", LAG_GRID))
    return SearchSpace(tuple(genes))


def mbcnn_from_genome(genome, base: MbcnnParams = MbcnnParams()) -> MbcnnParams:
    return replace(base, **mbcnn_space().decode(genome))


def sc_mbcnn_from_genome(genome, base: ScMbcnnParams = ScMbcnnParams()) -> ScMbcnnParams:
    return replace(base, **sc_mbcnn_space().decode(genome))


def rnn_er_from_genome(genome, providers: Sequence[str], base: RnnErParams = RnnErParams()) -> RnnErParams:
    vals = rnn_er_space(providers).decode(genome)
    prov = tuple((p, ProviderParams(*(vals[f"{p}.{g.name}"] for g in PROVIDER_GENES))) for p in providers)
    weights = tuple((p, vals[f"{p}.weight"]) for p in providers)
    return replace(base, providers=prov, weights=weights, lag=vals["lag"])


def params_to_dict(p) -> dict:
    d = asdict(p)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}
