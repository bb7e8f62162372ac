"""Base networks for classification and error regression.

One body, two heads: shared per-field embeddings feed a first-order linear
term, a pairwise interaction term (sum of dot products over all field
pairs) and an MLP; the three scores are summed and squashed by the head.
The classifier uses a sigmoid head with class-weighted binary
cross-entropy; the error regressor uses a tanh head with mean absolute
error, since residuals of a probability against a binary label live in
(-1, 1). Continuous inputs (including any placeholder columns) are
projected into embedding space by a learned per-field vector scaled by the
value, so they take part in the pairwise interactions too.

All gradients are hand-derived; the tests check them against central
finite differences.
"""

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels, nn
from .data import DesignMatrix, FeatureSchema
from .errors import ConfigError, DataError, TrainingError, UsageError

HEAD_LOSS_PAIRS = {"sigmoid": "weighted_bce", "tanh": "mae"}

NET_FORMAT_VERSION = 1


@dataclass
class BaseNetConfig:
    """Hyperparameters shared by the classifier and the error regressors."""

    embedding_dim: int = 64
    hidden_layers: tuple = (128, 128, 128)
    head: str = "sigmoid"
    loss: str = "weighted_bce"
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 20
    patience: int = 3
    batch_size: int = 1024
    shuffle: bool = False
    seed: int = 0

    def __post_init__(self):
        self.hidden_layers = tuple(int(h) for h in self.hidden_layers)
        if self.embedding_dim < 1:
            raise ConfigError("embedding_dim must be positive")
        if any(h < 1 for h in self.hidden_layers):
            raise ConfigError("hidden layer sizes must be positive")
        if self.head not in HEAD_LOSS_PAIRS:
            raise ConfigError(f"unknown head {self.head!r}")
        if HEAD_LOSS_PAIRS[self.head] != self.loss:
            raise ConfigError(
                f"head {self.head!r} requires loss {HEAD_LOSS_PAIRS[self.head]!r}, got {self.loss!r}")
        if self.epochs < 0 or self.patience < 0 or self.batch_size < 1:
            raise ConfigError("epochs/patience must be >= 0 and batch_size >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")

    def as_classifier(self):
        return dataclasses.replace(self, head="sigmoid", loss="weighted_bce")

    def as_regressor(self):
        return dataclasses.replace(self, head="tanh", loss="mae")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["hidden_layers"] = list(self.hidden_layers)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class FitHistory:
    """Per-epoch diagnostics from one fit call.

    best_epoch -1 means no epoch beat the incoming parameters (relevant for
    warm-started refits, which are rolled back in that case).
    """

    epochs_run: int = 0
    best_epoch: int = -1
    initial_val_loss: float | None = None
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)

    def to_dict(self):
        return dataclasses.asdict(self)

    @property
    def final_train_loss(self):
        return self.train_losses[-1] if self.train_losses else None


def fm_pairwise(field_vectors):
    """Sum of dot products over all unordered pairs of field vectors.

    Uses the identity sum_{i<j} <v_i, v_j> = (|sum v|^2 - sum |v|^2) / 2.
    """
    vectors = [np.asarray(v, dtype=np.float64) for v in field_vectors]
    if not vectors:
        raise UsageError("fm_pairwise needs at least one vector")
    dim = vectors[0].shape
    if any(v.shape != dim for v in vectors):
        raise UsageError("field vectors must share one dimension")
    stacked = np.stack(vectors)
    total = stacked.sum(axis=0)
    return float(0.5 * (total @ total - float((stacked * stacked).sum())))


class BaseNet:
    """One network instance bound to a feature schema.

    Parameters live in a fixed flat order (embeddings, first-order weights,
    continuous projections, global bias, MLP layers) mirrored by the Adam
    accumulators; construction from the same seed is bit-reproducible.
    """

    def __init__(self, schema: FeatureSchema, config: BaseNetConfig, seed=None):
        if not schema.cat_fields and not schema.cont_fields and not schema.n_placeholders:
            raise ConfigError("schema declares no fields")
        self.schema = schema
        self.config = config
        self.seed = config.seed if seed is None else seed
        if self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")

        k = config.embedding_dim
        self.n_cat = len(schema.cat_fields)
        self.n_cont = len(schema.cont_fields) + schema.n_placeholders
        self.n_fields = self.n_cat + self.n_cont

        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0]))
        self.embeddings = [nn.EmbeddingTable(schema.vocab_size(name), k, rng)
                           for name in schema.cat_fields]
        self.cont_proj = nn.glorot_uniform(rng, (self.n_cont, k), self.n_cont, k)
        self.lin_cat = [np.zeros(schema.vocab_size(name)) for name in schema.cat_fields]
        self.lin_cont = np.zeros(self.n_cont)
        self.bias = np.zeros(1)

        self.layers = []
        in_dim = self.n_fields * k
        for width in config.hidden_layers:
            self.layers.append(nn.DenseLayer(in_dim, width, "relu", rng))
            in_dim = width
        self.layers.append(nn.DenseLayer(in_dim, 1, "identity", rng))

        self.optimizer = nn.Adam(self.params(), config.learning_rate,
                                 config.beta1, config.beta2, config.epsilon)
        self._shuffle_rng = np.random.default_rng(np.random.SeedSequence([self.seed, 1]))

    def params(self):
        out = [e.weights for e in self.embeddings]
        out.extend(self.lin_cat)
        out.extend([self.cont_proj, self.lin_cont, self.bias])
        for layer in self.layers:
            out.extend(layer.params())
        return out

    # ---- forward / backward -------------------------------------------------

    def _check_matrix(self, X: DesignMatrix):
        if X.cat.shape[1] != self.n_cat or X.cont.shape[1] != self.n_cont:
            raise DataError(
                f"matrix shape ({X.cat.shape[1]} cat, {X.cont.shape[1]} cont) does not match "
                f"schema ({self.n_cat} cat, {self.n_cont} cont incl. placeholders)")
        if X.n_placeholders != self.schema.n_placeholders:
            raise DataError(
                f"matrix has {X.n_placeholders} placeholder columns, schema expects "
                f"{self.schema.n_placeholders}")
        if X.n_rows:
            for j, name in enumerate(self.schema.cat_fields):
                if X.cat[:, j].max() >= self.schema.vocab_size(name):
                    raise DataError(f"categorical index out of range in field {name!r}")

    def _forward(self, cat, cont, want_cache):
        n = cat.shape[0]
        k = self.config.embedding_dim
        V = np.empty((n, self.n_fields, k))
        for j, emb in enumerate(self.embeddings):
            V[:, j, :] = emb.weights[cat[:, j]]
        if self.n_cont:
            V[:, self.n_cat:, :] = cont[:, :, None] * self.cont_proj[None, :, :]

        total = V.sum(axis=1)
        fm = 0.5 * ((total * total).sum(axis=1) - (V * V).sum(axis=(1, 2)))

        linear = np.full(n, self.bias[0])
        for j, w in enumerate(self.lin_cat):
            linear += w[cat[:, j]]
        if self.n_cont:
            linear += cont @ self.lin_cont

        h = V.reshape(n, self.n_fields * k)
        caches = []
        for layer in self.layers:
            h, cache = layer.forward(h)
            caches.append(cache)
        logit = h[:, 0] + fm + linear
        out = nn.activation_apply(self.config.head, logit)
        if not want_cache:
            return out, None
        return out, (V, total, caches, cat, cont)

    def _backward(self, cache, dlogit):
        """Gradients of the scalar loss for every parameter, given dL/dlogit."""
        V, total, caches, cat, cont = cache
        n, k = cat.shape[0], self.config.embedding_dim

        dh = dlogit[:, None]
        layer_grads = []
        for layer, layer_cache in zip(reversed(self.layers), reversed(caches)):
            dh, dw, db = layer.backward(layer_cache, dh)
            layer_grads.append((dw, db))
        layer_grads.reverse()

        dV = dh.reshape(n, self.n_fields, k)
        dV = dV + dlogit[:, None, None] * (total[:, None, :] - V)

        demb = []
        for j, emb in enumerate(self.embeddings):
            g = np.zeros_like(emb.weights)
            kernels.scatter_add_rows(g, cat[:, j], dV[:, j, :])
            demb.append(g)
        dlin_cat = []
        for j, w in enumerate(self.lin_cat):
            g = np.zeros_like(w)
            kernels.scatter_add_scalars(g, cat[:, j], dlogit)
            dlin_cat.append(g)
        if self.n_cont:
            dcont_proj = np.einsum("bgk,bg->gk", dV[:, self.n_cat:, :], cont)
            dlin_cont = cont.T @ dlogit
        else:
            dcont_proj = np.zeros_like(self.cont_proj)
            dlin_cont = np.zeros_like(self.lin_cont)
        dbias = np.array([dlogit.sum()])

        grads = demb + dlin_cat + [dcont_proj, dlin_cont, dbias]
        for dw, db in layer_grads:
            grads.extend([dw, db])
        return grads

    def _dlogit(self, out, targets, class_weights):
        if self.config.loss == "weighted_bce":
            return nn.bce_dlogit(out, targets, class_weights)
        return nn.mae_dlogit_tanh(out, targets)

    def batch_loss(self, out, targets, class_weights=None):
        if self.config.loss == "weighted_bce":
            return nn.weighted_bce_loss(out, targets, class_weights)
        return nn.mae_loss(out, targets)

    def loss_and_gradients(self, X, targets, class_weights=None):
        """Forward + backward over one batch; returns (loss, flat gradients)."""
        self._check_matrix(X)
        targets = np.asarray(targets, dtype=np.float64)
        out, cache = self._forward(X.cat, X.cont, want_cache=True)
        loss = self.batch_loss(out, targets, class_weights)
        grads = self._backward(cache, self._dlogit(out, targets, class_weights))
        return loss, grads

    # ---- prediction ---------------------------------------------------------

    def predict_matrix(self, X: DesignMatrix):
        """Per-row head outputs; pure, no state is mutated."""
        self._check_matrix(X)
        n = X.n_rows
        if n == 0:
            return np.zeros(0)
        bs = self.config.batch_size
        chunks = [self._forward(X.cat[lo:lo + bs], X.cont[lo:lo + bs], want_cache=False)[0]
                  for lo in range(0, n, bs)]
        return np.concatenate(chunks)

    def eval_loss(self, X, targets, class_weights=None):
        return self.batch_loss(self.predict_matrix(X), np.asarray(targets, np.float64),
                               class_weights)

    # ---- training -----------------------------------------------------------

    def _check_targets(self, targets):
        if self.config.loss == "weighted_bce":
            if targets.size and not np.isin(targets, (0.0, 1.0)).all():
                raise DataError("classification targets must be binary")
        else:
            if targets.size and (np.abs(targets) > 1.0).any():
                raise DataError("regression targets must lie in [-1, 1]")

    def fit(self, X, targets, class_weights=None, val=None):
        """Mini-batch training with optional early stopping.

        Batches follow chronological row order unless config.shuffle is on;
        the last short batch is kept. When a validation pair is given, the
        best parameters seen (and their optimizer state) are restored at
        the end; the incoming parameters count as a candidate, so a fit
        that never improves the validation loss is a no-op. Returns a
        FitHistory; the net is updated in place.
        """
        self._check_matrix(X)
        targets = np.asarray(targets, dtype=np.float64)
        if targets.shape != (X.n_rows,):
            raise DataError(f"got {targets.shape[0]} targets for {X.n_rows} rows")
        self._check_targets(targets)

        history = FitHistory()
        if self.config.epochs == 0 or X.n_rows == 0:
            return history

        best_val = math.inf
        best_state = None
        if val is not None:
            best_val = self.eval_loss(val[0], val[1], class_weights)
            best_state = self._snapshot()
            history.initial_val_loss = best_val
        bad_epochs = 0
        bs = self.config.batch_size
        params = self.params()
        for epoch in range(self.config.epochs):
            order = np.arange(X.n_rows)
            if self.config.shuffle:
                self._shuffle_rng.shuffle(order)
            loss_sum = 0.0
            for start in range(0, X.n_rows, bs):
                rows = order[start:start + bs]
                batch = DesignMatrix(X.cat[rows], X.cont[rows], X.n_placeholders)
                out, cache = self._forward(batch.cat, batch.cont, want_cache=True)
                batch_targets = targets[rows]
                loss = self.batch_loss(out, batch_targets, class_weights)
                if not math.isfinite(loss):
                    raise TrainingError(
                        f"non-finite training loss at epoch {epoch}, batch row {start}")
                grads = self._backward(cache, self._dlogit(out, batch_targets, class_weights))
                self.optimizer.step(params, grads)
                loss_sum += loss * len(rows)
            history.epochs_run = epoch + 1
            history.train_losses.append(loss_sum / X.n_rows)

            if val is not None:
                val_loss = self.eval_loss(val[0], val[1], class_weights)
                history.val_losses.append(val_loss)
                if val_loss < best_val:
                    best_val = val_loss
                    best_state = self._snapshot()
                    history.best_epoch = epoch
                    bad_epochs = 0
                else:
                    bad_epochs += 1
                    if bad_epochs >= self.config.patience:
                        break
        if best_state is not None:
            self._restore(best_state)
        return history

    def _snapshot(self):
        return ([p.copy() for p in self.params()], self.optimizer.state_copy())

    def _restore(self, state):
        saved, opt_state = state
        for p, s in zip(self.params(), saved):
            p[...] = s
        self.optimizer.load_state(opt_state)

    # ---- serialization ------------------------------------------------------

    def to_arrays(self):
        arrays = {}
        for i, p in enumerate(self.params()):
            arrays[f"param_{i:03d}"] = p
        for i, m in enumerate(self.optimizer.m):
            arrays[f"adam_m_{i:03d}"] = m
        for i, v in enumerate(self.optimizer.v):
            arrays[f"adam_v_{i:03d}"] = v
        arrays["adam_t"] = np.int64(self.optimizer.t)
        return arrays

    def load_arrays(self, arrays):
        params = self.params()
        for i, p in enumerate(params):
            stored = arrays[f"param_{i:03d}"]
            if stored.shape != p.shape:
                raise DataError(f"stored tensor {i} has shape {stored.shape}, expected {p.shape}")
            p[...] = stored
        for i in range(len(params)):
            self.optimizer.m[i][...] = arrays[f"adam_m_{i:03d}"]
            self.optimizer.v[i][...] = arrays[f"adam_v_{i:03d}"]
        self.optimizer.t = int(arrays["adam_t"])

    def save(self, path):
        """Versioned single-file dump: tensors, optimizer state, config,
        schema and schema hash."""
        meta = {
            "format_version": NET_FORMAT_VERSION,
            "config": self.config.to_dict(),
            "schema": self.schema.to_dict(),
            "schema_hash": self.schema.hash(),
            "seed": self.seed,
        }
        np.savez(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
                 **self.to_arrays())

    @classmethod
    def load(cls, path):
        blob = np.load(path)
        meta = json.loads(bytes(blob["meta"]).decode())
        if meta["format_version"] != NET_FORMAT_VERSION:
            raise DataError(f"unsupported net format version {meta['format_version']}")
        schema = FeatureSchema.from_dict(meta["schema"])
        if schema.hash() != meta["schema_hash"]:
            raise DataError("schema hash mismatch in saved net")
        net = cls(schema, BaseNetConfig.from_dict(meta["config"]), seed=meta["seed"])
        net.load_arrays(blob)
        return net


def build_base_net(schema, config, seed=None):
    """Fresh, seeded network; same seed twice gives identical parameters."""
    return BaseNet(schema, config, seed)
