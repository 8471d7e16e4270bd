"""scikit-learn style classifier wrapping model construction and training."""

from dataclasses import replace
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_is_fitted

from .config import PRESETS, make_variant
from .data import Dataset
from .model import predict_logits
from .train import DESK, train


def check_images(X, config):
    """Validate and reshape ``X`` into float32 images ``[N, C, H, W]``.

    Accepts image tensors or rows flattened in ``C, H, W`` order. uint8
    input is scaled to [0, 1].
    """
    X = np.asarray(X)
    if X.dtype == object or not (np.issubdtype(X.dtype, np.number) or X.dtype == bool):
        raise ValueError(f"expected numeric image data, got dtype {X.dtype}")
    shape = (config.in_channels, config.image_size, config.image_size)
    if X.ndim == 2 and X.shape[1] == int(np.prod(shape)):
        X = X.reshape((-1,) + shape)
    if X.ndim != 4 or X.shape[1:] != shape:
        raise ValueError(f"expected images of shape [N, {shape}] or flattened rows, got {X.shape}")
    if len(X) == 0:
        raise ValueError("X contains no samples")
    X = X.astype(np.float32) / 255.0 if X.dtype == np.uint8 else X.astype(np.float32)
    if not np.isfinite(X).all():
        raise ValueError("X contains NaN or infinity")
    return X


def check_labels(y, n):
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n:
        raise ValueError(f"y must be 1-D with {n} entries, got shape {y.shape}")
    return y


class ViTClassifier(ClassifierMixin, BaseEstimator):
    """Vision Transformer image classifier trained from scratch.

    Parameters
    ----------
    preset : str
        Base architecture, ``"tiny"`` or ``"vit_b16"``.
    variant : str
        ``"baseline"``, ``"grouped"`` or ``"shallow"``.
    group_size, width_ratio :
        Variant parameters (ignored by the other variants).
    epochs, batch_size, base_lr, weight_decay, mixup_alpha, cutmix_alpha,
    drop_path, ema_decay, augment :
        Training recipe; defaults are the desk-scale recipe.
    use_ema : bool
        Predict with the best-EMA weights instead of the final raw weights.
    random_state : int
        Seed for every random stream.
    """

    def __init__(self, preset="tiny", variant="baseline", group_size=2, width_ratio=0.5,
                 epochs=DESK.epochs, warmup_epochs=DESK.warmup_epochs,
                 batch_size=DESK.batch_size, base_lr=DESK.base_lr,
                 weight_decay=DESK.weight_decay, mixup_alpha=DESK.mixup_alpha,
                 cutmix_alpha=DESK.cutmix_alpha, drop_path=DESK.drop_path,
                 ema_decay=DESK.ema_decay, augment=DESK.augment, use_ema=True,
                 random_state=42):
        self.preset = preset
        self.variant = variant
        self.group_size = group_size
        self.width_ratio = width_ratio
        self.epochs = epochs
        self.warmup_epochs = warmup_epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.weight_decay = weight_decay
        self.mixup_alpha = mixup_alpha
        self.cutmix_alpha = cutmix_alpha
        self.drop_path = drop_path
        self.ema_decay = ema_decay
        self.augment = augment
        self.use_ema = use_ema
        self.random_state = random_state

    def _model_config(self, num_classes):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        v = make_variant(self.variant, self.group_size, Fraction(self.width_ratio).limit_denominator())
        mc = replace(PRESETS[self.preset], num_classes=num_classes, variant=v)
        mc.validate()
        return mc

    def _train_config(self):
        return replace(
            DESK, epochs=self.epochs, warmup_epochs=self.warmup_epochs,
            batch_size=self.batch_size, base_lr=self.base_lr, weight_decay=self.weight_decay,
            mixup_alpha=self.mixup_alpha, cutmix_alpha=self.cutmix_alpha,
            drop_path=self.drop_path, ema_decay=self.ema_decay, augment=self.augment,
            seeds=(self.random_state,),
        )

    def fit(self, X, y, X_val=None, y_val=None):
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        mc = self._model_config(len(self.classes_))
        X = check_images(X, mc)
        y = np.searchsorted(self.classes_, check_labels(y, len(X)))
        train_set = Dataset(X, y, len(self.classes_)).fit_normalization()
        if X_val is None:
            val_set = train_set
        else:
            Xv = check_images(X_val, mc)
            yv = check_labels(y_val, len(Xv))
            if not np.isin(yv, self.classes_).all():
                raise ValueError("y_val contains labels not seen in y")
            val_set = Dataset(Xv, np.searchsorted(self.classes_, yv), len(self.classes_))
        result = train(mc, self._train_config(), train_set, val_set, self.random_state, bench=False)
        self.config_ = result.model_config
        self.params_ = result.best_ema_params if self.use_ema else result.params
        self.norm_mean_ = result.norm_mean
        self.norm_std_ = result.norm_std
        self.metrics_ = result.metrics
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_images(X, self.config_)
        X = (X - self.norm_mean_[:, None, None]) / self.norm_std_[:, None, None]
        return predict_logits(self.params_, self.config_, X.astype(np.float32))

    def predict_proba(self, X):
        z = self.decision_function(X).astype(np.float64)
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]
