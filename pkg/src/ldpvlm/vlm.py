"""Variational Laplace mechanism.

A latent-variable model whose encoder mean is l1-clipped to radius ``l`` and
whose posterior is Laplace. Fixing the posterior scale to ``2l / epsilon_x``
at privatization time makes a latent sample an ``epsilon_x``-LDP release of
its input; decoding the sample is post-processing and keeps the guarantee.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .diffnum import Adam, DenseNetwork, nu_clip
from .dp_optim import DpAdam, accountant_report, steps_for_target_epsilon
from .exceptions import TrainingDivergedError, ValidationError
from .rng import as_source

__all__ = [
    "PRIOR_SCALE",
    "LaplaceVLM",
    "PrivatizedLatent",
    "PrivatizedFeatures",
    "nu_clip",
    "sample_latent",
    "kl_to_prior",
    "elbo_loss",
    "train_stage_one",
    "train_stage_two_dp",
    "privatize_to_latent",
    "privatize_to_features",
    "required_cdp_component",
]

log = logging.getLogger(__name__)

PRIOR_SCALE = 1.0 / math.sqrt(2.0)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _laplace_unit(u):
    """Standard Laplace variate from a uniform on (-1/2, 1/2)."""
    return -np.sign(u) * np.log1p(-2.0 * np.abs(u))


def sample_latent(mu, b, rng=None, u=None):
    """Draw z ~ Laplace(mu, b) by the reparameterized inverse CDF.

    ``z = mu + b * s(u)`` so dz/dmu = 1 and dz/db = s(u). Pass ``u`` to fix
    the uniforms (used for gradient checks).
    """
    if not b > 0:
        raise ValidationError(f"latent scale must be positive, got {b}")
    mu = np.asarray(mu, dtype=float)
    if u is None:
        u = as_source(rng).uniform_centered(mu.shape)
    return mu + b * _laplace_unit(np.asarray(u, dtype=float))


def _kl_terms(mu, b, b0=PRIOR_SCALE):
    a = np.abs(mu)
    e = np.exp(-a / b)
    kl = math.log(b0 / b) + (b * e + a) / b0 - 1.0
    d_mu = np.sign(mu) * (1.0 - e) / b0
    d_b = -1.0 / b + e * (1.0 + a / b) / b0
    return kl, d_mu, d_b


def kl_to_prior(mu, b):
    """KL(Laplace(mu, b) || Laplace(0, 1/sqrt 2)) summed over the last axis."""
    if not b > 0:
        raise ValidationError(f"latent scale must be positive, got {b}")
    kl, _, _ = _kl_terms(np.asarray(mu, dtype=float), float(b))
    return kl.sum(axis=-1) if kl.ndim else float(kl)


@dataclass
class PrivatizedLatent:
    """Latents released at ``epsilon_x``; carries no raw feature values."""

    z_tilde: np.ndarray
    epsilon_x: float
    record_ids: np.ndarray
    noise_scale: float


@dataclass
class PrivatizedFeatures:
    """Decoded privatized latents (post-processing of :class:`PrivatizedLatent`)."""

    x_tilde: np.ndarray
    epsilon_x: float
    record_ids: np.ndarray


class LaplaceVLM(TransformerMixin, BaseEstimator):
    """Laplace-prior latent model with an l1-clipped encoder mean.

    Parameters
    ----------
    latent_dim : int
    clip_radius : float
        l1 radius ``l`` of the encoder mean; the mean's sensitivity is ``2l``.
    epsilon_pretrain : float or None
        Fixes the training-time posterior scale to ``2l / epsilon_pretrain``.
        ``None`` learns a single log-parameterized scale.
    categorical_groups : sequence of (start, width)
        One-hot blocks of the feature space modelled with a categorical
        likelihood; every other column gets a unit-variance Gaussian.
    epsilon_x : float
        Budget used by :meth:`transform`.
    output : {"latent", "features"}
        What :meth:`transform` releases.
    """

    def __init__(self, latent_dim=8, clip_radius=5.0, epsilon_pretrain=None,
                 encoder_hidden=(400, 150, 50), decoder_hidden=(50, 150, 400),
                 learning_rate=5e-4, batch_size=64, n_epochs=30, categorical_groups=(),
                 epsilon_x=1.0, output="latent", random_state=0):
        self.latent_dim = latent_dim
        self.clip_radius = clip_radius
        self.epsilon_pretrain = epsilon_pretrain
        self.encoder_hidden = encoder_hidden
        self.decoder_hidden = decoder_hidden
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.n_epochs = n_epochs
        self.categorical_groups = categorical_groups
        self.epsilon_x = epsilon_x
        self.output = output
        self.random_state = random_state

    # -- construction ------------------------------------------------------

    @property
    def b_mode(self):
        return "learned" if self.epsilon_pretrain is None else "fixed"

    def _init_networks(self, n_features, rng):
        if not self.clip_radius > 0:
            raise ValidationError("clip_radius must be positive")
        if self.latent_dim < 1:
            raise ValidationError("latent_dim must be >= 1")
        enc_sizes = [n_features, *self.encoder_hidden, self.latent_dim]
        dec_sizes = [self.latent_dim, *self.decoder_hidden, n_features]
        self.encoder_ = DenseNetwork.build(
            enc_sizes, "relu", "nu_clip", clip_radius=float(self.clip_radius), rng=rng.spawn("encoder"))
        self.decoder_ = DenseNetwork.build(dec_sizes, "relu", "identity", rng=rng.spawn("decoder"))
        self.log_b_ = np.array([self._initial_log_b()])
        self.n_features_in_ = n_features
        self.cdp_stamp_ = None
        self.training_log_ = []
        self._cont_mask = np.ones(n_features, dtype=bool)
        for start, width in self.categorical_groups:
            self._cont_mask[start:start + width] = False

    def _initial_log_b(self):
        if self.epsilon_pretrain is None:
            return math.log(PRIOR_SCALE)
        return math.log(2.0 * self.clip_radius / self.epsilon_pretrain)

    @property
    def b_(self):
        """Training-time posterior scale (never used for privatization)."""
        check_is_fitted(self, "encoder_")
        return float(np.exp(self.log_b_[0]))

    # -- deterministic maps -----------------------------------------------

    def encode_mean(self, X):
        check_is_fitted(self, "encoder_")
        return self.encoder_(np.asarray(X, dtype=float))

    def decode_mean(self, Z):
        """Decoder mean: raw values for continuous columns, probabilities for one-hot groups."""
        check_is_fitted(self, "decoder_")
        out = self.decoder_(np.asarray(Z, dtype=float))
        for start, width in self.categorical_groups:
            block = out[:, start:start + width]
            block = np.exp(block - block.max(axis=1, keepdims=True))
            out[:, start:start + width] = block / block.sum(axis=1, keepdims=True)
        return out

    # -- objective ----------------------------------------------------------

    def _recon(self, X, out):
        """Per-record negative log likelihood and its gradient w.r.t. decoder output."""
        nll = np.zeros(X.shape[0])
        grad = np.zeros_like(out)
        m = self._cont_mask
        diff = out[:, m] - X[:, m]
        nll += 0.5 * (diff**2).sum(axis=1) + _HALF_LOG_2PI * m.sum()
        grad[:, m] = diff
        for start, width in self.categorical_groups:
            sl = slice(start, start + width)
            logits = out[:, sl]
            shifted = logits - logits.max(axis=1, keepdims=True)
            logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
            nll -= (X[:, sl] * logp).sum(axis=1)
            grad[:, sl] = np.exp(logp) * X[:, sl].sum(axis=1, keepdims=True) - X[:, sl]
        return nll, grad

    def _loss_and_grads(self, X, u, per_example=False):
        """Negative ELBO (batch mean) and gradients.

        Returns ``(loss, enc_grads, dec_grads, log_b_grad)``. With
        ``per_example`` the gradients are of each record's own loss, stacked on
        a leading axis.
        """
        n = X.shape[0]
        b = float(np.exp(self.log_b_[0]))
        mu, enc_trace = self.encoder_.forward(X)
        s = _laplace_unit(u)
        z = mu + b * s
        out, dec_trace = self.decoder_.forward(z)
        nll, g_out = self._recon(X, out)
        kl, dkl_mu, dkl_b = _kl_terms(mu, b)
        per_record = nll + kl.sum(axis=1)
        loss = float(per_record.mean())
        if not math.isfinite(loss):
            raise FloatingPointError("non-finite ELBO")
        scale = 1.0 if per_example else 1.0 / n
        back = self.decoder_.backward_per_example if per_example else self.decoder_.backward
        dec_grads, g_z = back(dec_trace, g_out * scale)
        g_mu = g_z + dkl_mu * scale
        g_b_rows = (g_z * s).sum(axis=1) + dkl_b.sum(axis=1) * scale
        back = self.encoder_.backward_per_example if per_example else self.encoder_.backward
        enc_grads, _ = back(enc_trace, g_mu)
        if per_example:
            g_logb = (b * g_b_rows)[:, None]
        else:
            g_logb = np.array([b * g_b_rows.sum()])
        return loss, enc_grads, dec_grads, g_logb

    def elbo(self, X, u=None, rng=None):
        """Negative ELBO averaged over ``X`` (single-sample reconstruction term)."""
        check_is_fitted(self, "encoder_")
        X = np.asarray(X, dtype=float)
        if u is None:
            u = as_source(rng).uniform_centered((X.shape[0], self.latent_dim))
        b = float(np.exp(self.log_b_[0]))
        mu = self.encoder_(X)
        out = self.decoder_(mu + b * _laplace_unit(u))
        nll, _ = self._recon(X, out)
        return float((nll + kl_to_prior(mu, b)).mean())

    # -- sklearn surface -----------------------------------------------------

    def fit(self, X, y=None):
        train_stage_one(self, X, rng=self.random_state)
        self._transform_calls = 0
        return self

    def transform(self, X):
        """Privatize ``X`` at ``epsilon_x`` with a fresh noise draw per call."""
        check_is_fitted(self, "encoder_")
        calls = getattr(self, "_transform_calls", 0)
        self._transform_calls = calls + 1
        rng = as_source(self.random_state).spawn("transform", calls)
        latent = privatize_to_latent(self, X, self.epsilon_x, rng)
        if self.output == "features":
            return privatize_to_features(self, latent).x_tilde
        return latent.z_tilde

    def score(self, X, y=None):
        """Negative of :meth:`elbo` with a fixed seed, so higher is better."""
        return -self.elbo(X, rng=0)

    # -- parameter plumbing ------------------------------------------------

    def _param_groups(self, components):
        params = []
        if "encoder" in components:
            params += self.encoder_.params
            if self.b_mode == "learned":
                params.append(self.log_b_)
        if "decoder" in components:
            params += self.decoder_.params
        return params

    def _grads_for(self, components, enc, dec, logb):
        grads = []
        if "encoder" in components:
            grads += enc
            if self.b_mode == "learned":
                grads.append(logb)
        if "decoder" in components:
            grads += dec
        return grads

    def _snapshot(self):
        return ([p.copy() for p in self.encoder_.params], [p.copy() for p in self.decoder_.params],
                self.log_b_.copy())

    def _restore(self, snap):
        enc, dec, logb = snap
        self.encoder_.set_params(enc)
        self.decoder_.set_params(dec)
        self.log_b_ = logb.copy()


def elbo_loss(model: LaplaceVLM, batch, rng=None, u=None):
    """Negative ELBO of ``batch`` under ``model``."""
    return model.elbo(batch, u=u, rng=rng)


def _check_data(model, X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValidationError("expected a 2-D feature matrix")
    if not np.all(np.isfinite(X)):
        raise ValidationError("training data contains non-finite values")
    return X


def train_stage_one(model: LaplaceVLM, X, rng=None, n_epochs=None, X_val=None):
    """Non-private Adam training of encoder, decoder and (if learned) the scale.

    Returns the model; per-epoch losses are in ``model.training_log_``.
    """
    X = _check_data(model, X)
    rng = as_source(rng)
    model._init_networks(X.shape[1], rng.spawn("init"))
    components = ("encoder", "decoder")
    params = model._param_groups(components)
    opt = Adam(model.learning_rate)
    n_epochs = model.n_epochs if n_epochs is None else n_epochs
    bs = min(model.batch_size, X.shape[0])
    for epoch in range(n_epochs):
        snap = model._snapshot()
        ep_rng = rng.spawn("epoch", epoch)
        order = ep_rng.permutation(X.shape[0])
        u_all = ep_rng.uniform_centered((X.shape[0], model.latent_dim))
        losses = []
        try:
            for start in range(0, X.shape[0], bs):
                idx = order[start:start + bs]
                loss, enc, dec, logb = model._loss_and_grads(X[idx], u_all[start:start + len(idx)])
                opt.step(params, model._grads_for(components, enc, dec, logb))
                losses.append(loss)
        except FloatingPointError as err:
            model._restore(snap)
            raise TrainingDivergedError(
                f"stage-one training diverged in epoch {epoch}: {err}",
                log=list(model.training_log_), checkpoint=snap) from err
        entry = {"epoch": epoch, "loss": float(np.mean(losses))}
        if X_val is not None:
            entry["val_loss"] = model.elbo(X_val, rng=rng.spawn("val", epoch))
        model.training_log_.append(entry)
        log.debug("stage one epoch %d loss %.4f", epoch, entry["loss"])
    return model


def train_stage_two_dp(model: LaplaceVLM, X, target="encoder", dp_config=None,
                       central_epsilon=math.inf, n_steps=1000, rng=None, learning_rate=None):
    """Retrain one component with DP-Adam while the other stays frozen.

    ``target`` is ``"encoder"`` or ``"decoder"``. A finite ``central_epsilon``
    re-initializes the target and caps the step count so the accounted epsilon
    (at ``dp_config.delta``) never exceeds it. With an infinite target the
    component is fine-tuned with plain Adam and no stamp budget is spent.
    Returns a new model; ``model`` itself is not modified.
    """
    if target not in ("encoder", "decoder"):
        raise ValidationError(f"target must be 'encoder' or 'decoder', got {target!r}")
    check_is_fitted(model, "encoder_")
    X = _check_data(model, X)
    rng = as_source(rng)
    new = copy.deepcopy(model)
    new.training_log_ = []
    components = (target,)
    lr = learning_rate if learning_rate is not None else (
        dp_config.learning_rate if dp_config is not None else model.learning_rate)

    if math.isinf(central_epsilon):
        params = new._param_groups(components)
        opt = Adam(lr)
        bs = min(model.batch_size, X.shape[0])
        for step in range(n_steps):
            srng = rng.spawn("step", step)
            idx = srng.choice(X.shape[0], bs)
            loss, enc, dec, logb = new._loss_and_grads(X[idx], srng.uniform_centered((bs, new.latent_dim)))
            opt.step(params, new._grads_for(components, enc, dec, logb))
            new.training_log_.append({"step": step, "loss": loss})
        new.cdp_stamp_ = {"component": target, "epsilon": math.inf, "delta": None, "accountant": None}
        return new

    if dp_config is None:
        raise ValidationError("a DpAdamConfig is required for finite central epsilon")
    if dp_config.dataset_size != X.shape[0]:
        raise ValidationError("dp_config.dataset_size must equal the training-set size")
    budget = steps_for_target_epsilon(dp_config, central_epsilon)
    steps = min(int(n_steps), budget)

    fresh = LaplaceVLM(**model.get_params())
    fresh._init_networks(X.shape[1], rng.spawn("reinit"))
    if target == "encoder":
        new.encoder_ = fresh.encoder_
        new.log_b_ = fresh.log_b_
    else:
        new.decoder_ = fresh.decoder_
    params = new._param_groups(components)
    opt = DpAdam(dp_config, rng.spawn("dp"))
    bs = dp_config.batch_size
    for step in range(steps):
        srng = rng.spawn("step", step)
        idx = srng.choice(X.shape[0], bs)
        try:
            loss, enc, dec, logb = new._loss_and_grads(
                X[idx], srng.uniform_centered((bs, new.latent_dim)), per_example=True)
            opt.step(params, new._grads_for(components, enc, dec, logb))
        except FloatingPointError as err:
            raise TrainingDivergedError(f"DP stage diverged at step {step}: {err}",
                                        log=new.training_log_) from err
        new.training_log_.append({"step": step, "loss": loss})
    report = accountant_report(dp_config, steps)
    new.cdp_stamp_ = {
        "component": target,
        "epsilon": report["epsilon"],
        "delta": dp_config.delta,
        "accountant": report,
    }
    return new


def privatize_to_latent(model: LaplaceVLM, X, epsilon_x, rng=None, record_ids=None):
    """Release ``encode_mean(X) + Laplace(2l / epsilon_x)`` noise, ignoring the trained scale."""
    epsilon_x = float(epsilon_x)
    if not epsilon_x > 0:
        raise ValidationError(f"epsilon_x must be positive, got {epsilon_x}")
    mu = model.encode_mean(X)
    if record_ids is None:
        record_ids = np.arange(mu.shape[0], dtype=np.uint64)
    if math.isinf(epsilon_x):
        return PrivatizedLatent(mu, epsilon_x, np.asarray(record_ids), 0.0)
    b = 2.0 * model.clip_radius / epsilon_x
    z = sample_latent(mu, b, rng)
    return PrivatizedLatent(z, epsilon_x, np.asarray(record_ids), b)


def privatize_to_features(model: LaplaceVLM, latent: PrivatizedLatent):
    """Decode a privatized latent to feature space; the guarantee is unchanged."""
    return PrivatizedFeatures(model.decode_mean(latent.z_tilde), latent.epsilon_x,
                              latent.record_ids)


_CDP_TABLE = {
    ("data_collection", "latent"): "encoder",
    ("data_collection", "feature"): "encoder",
    ("novel_class", "latent"): "encoder",
    ("novel_class", "feature"): "encoder",
    ("data_joining", "feature"): "decoder",
    ("data_joining", "latent"): "none",
}


def required_cdp_component(application, share_level):
    """Which VLM component must be trained with central DP for an application."""
    key = (application, share_level)
    if key not in _CDP_TABLE:
        raise ValidationError(f"unknown application/level combination {key}")
    return _CDP_TABLE[key]
