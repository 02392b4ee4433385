"""scikit-learn compatible wrapper around the network and its trainer."""
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import model as M
from ._validation import check_labels, check_segments
from .seeding import derive_seed
from .trainer import TrainConfig, fit


class MIResNetClassifier(ClassifierMixin, BaseEstimator):
    """Myocardial infarction detector/localizer for 5 s, 12-lead ECG windows.

    Parameters
    ----------
    epochs : int, default=20
    batch_size : int, default=32
    learning_rate : float, default=0.001
    beta_1, beta_2, epsilon : float
        Adam hyperparameters.
    random_state : int, default=0
        Master seed. Weight init and minibatch order are derived from it.
    verbose : bool, default=False
        Print one line per epoch.

    Attributes
    ----------
    params_ : ModelParams
    history_ : list of dict
        Per-epoch ``train_loss`` and ``val_accuracy``.
    classes_ : ndarray of shape (7,)
    """

    def __init__(self, epochs=20, batch_size=32, learning_rate=0.001, beta_1=0.9, beta_2=0.999,
                 epsilon=1e-7, random_state=0, verbose=False):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta_1 = beta_1
        self.beta_2 = beta_2
        self.epsilon = epsilon
        self.random_state = random_state
        self.verbose = verbose

    def train_config(self):
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, seed=self.random_state,
            lr=self.learning_rate, beta1=self.beta_1, beta2=self.beta_2, epsilon=self.epsilon,
        )

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_segments(X)
        y = check_labels(y, len(X), M.N_CLASSES)
        if X_val is not None:
            X_val = check_segments(X_val)
            y_val = check_labels(y_val, len(X_val), M.N_CLASSES)
        cfg = self.train_config()
        params = M.init_model(derive_seed(self.random_state, "init"))
        log = print if self.verbose else None
        self.params_, self.history_ = fit(params, X, y, cfg, X_val, y_val, log=log)
        self.classes_ = np.arange(M.N_CLASSES)
        return self

    @classmethod
    def from_params(cls, params, **kwargs):
        """Wrap already trained parameters (e.g. loaded from a weight file)."""
        est = cls(**kwargs)
        est.params_ = params
        est.history_ = []
        est.classes_ = np.arange(params.arch.n_classes)
        return est

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        return M.predict_proba(self.params_, check_segments(X, self.params_.arch))

    def predict(self, X):
        # argmax picks the lowest index on ties
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def save(self, path):
        check_is_fitted(self, "params_")
        M.save_weights(self.params_, path)
