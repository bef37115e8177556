"""scikit-learn style wrappers around each pipeline stage.

Every estimator keeps its constructor arguments untouched (so ``get_params``
and ``clone`` work) and stores learned state in attributes ending in ``_``.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin

from provhunt.denoise import CorpusRules, RawCti, denoise_batch, filter_corpus
from provhunt.errors import InvalidInputError
from provhunt.hunting import RetrievalConfig, build_index, hunt_many
from provhunt.neural.checkpoint import load_checkpoint, save_checkpoint
from provhunt.neural.model import GraphTextModel, ModelConfig
from provhunt.sampling import SamplingConfig, SamplingStats, sample_activity_subgraphs
from provhunt.synthesis import synthesize_pairs
from provhunt.training import TrainConfig, train
from provhunt.validation import check_graph, check_is_fitted, check_pairs, check_reports, check_subgraphs


class ActivitySubgraphSampler(TransformerMixin, BaseEstimator):
    """Socket-seeded subgraph sampler. ``transform`` takes a provenance graph."""

    def __init__(self, min_nodes=10, max_nodes=20, layer1_processes=3, dedup=False, workers=1, random_state=0):
        self.min_nodes = min_nodes
        self.max_nodes = max_nodes
        self.layer1_processes = layer1_processes
        self.dedup = dedup
        self.workers = workers
        self.random_state = random_state

    def _config(self) -> SamplingConfig:
        return SamplingConfig(self.min_nodes, self.max_nodes, int(self.random_state), self.layer1_processes,
                              self.dedup, self.workers)

    def fit(self, X, y=None):
        self.config_ = self._config()
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        self.stats_ = SamplingStats()
        return sample_activity_subgraphs(check_graph(X), self.config_, self.stats_)


class ReportSynthesizer(TransformerMixin, BaseEstimator):
    """Subgraphs -> paired samples. Without a client the template engine is used."""

    def __init__(self, client=None, max_concurrency=4):
        self.client = client
        self.max_concurrency = max_concurrency

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return synthesize_pairs(check_subgraphs(X), self.client, self.max_concurrency)


class CtiCorpusFilter(TransformerMixin, BaseEstimator):
    def __init__(self, rules=None):
        self.rules = rules

    def fit(self, X=None, y=None):
        if self.rules is None:
            self.rules_ = CorpusRules.default()
        elif isinstance(self.rules, CorpusRules):
            self.rules_ = self.rules
        else:
            self.rules_ = CorpusRules.from_lines(self.rules)
        return self

    def transform(self, X):
        check_is_fitted(self, "rules_")
        return filter_corpus(_as_raw(X), self.rules_)


class CtiDenoiser(TransformerMixin, BaseEstimator):
    def __init__(self, client=None, max_concurrency=4):
        self.client = client
        self.max_concurrency = max_concurrency

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return denoise_batch(_as_raw(X), self.client, self.max_concurrency)


def _as_raw(X) -> list[RawCti]:
    out = []
    for i, item in enumerate(X):
        if isinstance(item, RawCti):
            out.append(item)
        elif isinstance(item, str):
            out.append(RawCti(f"r{i:05d}", "", item))
        else:
            raise InvalidInputError(f"expected RawCti or str, got {type(item).__name__}")
    return out


class GraphTextAligner(TransformerMixin, BaseEstimator):
    """Joint graph/text encoder trained on paired samples.

    ``transform`` maps subgraphs to pooled graph embeddings;
    ``embed_texts`` does the same for report texts.
    """

    def __init__(self, d=64, heads=4, text_layers=2, gin_layers=3, fusion_layers=2, max_len=256, dropout=0.1,
                 batch_size=16, alpha=0.7, lr=2e-4, weight_decay=0.01, epochs=100, warmup_epochs=7,
                 min_lr=1e-5, mask_ratio=0.15, tau_init=0.07, normalize=True, random_state=0, out_dir=None):
        self.d = d
        self.heads = heads
        self.text_layers = text_layers
        self.gin_layers = gin_layers
        self.fusion_layers = fusion_layers
        self.max_len = max_len
        self.dropout = dropout
        self.batch_size = batch_size
        self.alpha = alpha
        self.lr = lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.warmup_epochs = warmup_epochs
        self.min_lr = min_lr
        self.mask_ratio = mask_ratio
        self.tau_init = tau_init
        self.normalize = normalize
        self.random_state = random_state
        self.out_dir = out_dir

    def model_config(self) -> ModelConfig:
        return ModelConfig(d=self.d, heads=self.heads, text_layers=self.text_layers, gin_layers=self.gin_layers,
                           fusion_layers=self.fusion_layers, max_len=self.max_len, dropout=self.dropout,
                           tau_init=self.tau_init)

    def train_config(self) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, alpha=self.alpha, lr=self.lr,
                           weight_decay=self.weight_decay, epochs=self.epochs, warmup_epochs=self.warmup_epochs,
                           min_lr=self.min_lr, mask_ratio=self.mask_ratio, tau_init=self.tau_init,
                           normalize=self.normalize, seed=int(self.random_state))

    def fit(self, X, y=None):
        pairs = check_pairs(X)
        result = train(pairs, self.train_config(), self.model_config(), out_dir=self.out_dir)
        self.model_ = result.model
        self.loss_log_ = result.log
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return self.model_.embed_graphs(check_subgraphs(X))

    def embed_texts(self, texts):
        check_is_fitted(self, "model_")
        return self.model_.embed_texts(list(texts))

    def save(self, path):
        check_is_fitted(self, "model_")
        save_checkpoint(path, self.model_, meta={"seed": int(self.random_state)})

    @classmethod
    def from_checkpoint(cls, path) -> "GraphTextAligner":
        model, _ = load_checkpoint(path)
        cfg = model.cfg
        est = cls(d=cfg.d, heads=cfg.heads, text_layers=cfg.text_layers, gin_layers=cfg.gin_layers,
                  fusion_layers=cfg.fusion_layers, max_len=cfg.max_len, dropout=cfg.dropout, tau_init=cfg.tau_init)
        est.model_ = model
        return est


class ThreatHunter(BaseEstimator):
    """Two-stage hunter. ``fit`` indexes a report corpus, ``predict`` returns a
    :class:`~provhunt.hunting.MatchDecision` per subgraph."""

    def __init__(self, model=None, k=10, lam=0.5, normalize=True):
        self.model = model
        self.k = k
        self.lam = lam
        self.normalize = normalize

    def _model(self) -> GraphTextModel:
        m = getattr(self.model, "model_", self.model)
        if m is None:
            raise InvalidInputError("ThreatHunter needs a trained model")
        return m

    def fit(self, X, y=None):
        """``X``: mapping report id -> text, or a list of ids with texts passed as ``y``."""
        ids, texts = check_reports(X, y)
        self.config_ = RetrievalConfig(self.k, self.lam)
        self.texts_ = dict(zip(ids, texts))
        self.index_ = build_index(ids, texts, self._model(), normalize=self.normalize)
        return self

    def predict(self, X):
        check_is_fitted(self, ("index_", "texts_"))
        return hunt_many(self._model(), self.index_, check_subgraphs(X), self.texts_, self.config_)
