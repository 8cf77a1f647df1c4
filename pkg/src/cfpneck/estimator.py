"""scikit-learn style wrappers.

``fit`` does no training: like a random projection it reads the input
geometry and draws seeded initial parameters. ``transform`` runs the
forward pass. Parameters can also be supplied or swapped through
``params_`` after fitting.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .evc import EvcConfig, evc_forward, init_evc_params
from .gcr import GcrConfig, cfp_forward, init_cfp_params
from .io import RunConfig
from .validation import check_feature_map, check_pyramid, check_random_state


class _NeckBase(TransformerMixin, BaseEstimator):
    def _evc_config(self) -> EvcConfig:
        return EvcConfig(
            channels=self.channels,
            expansion=self.expansion,
            dconv_kernel=self.dconv_kernel,
            groupnorm_groups=self.groupnorm_groups,
            codewords=self.codewords,
            droppath=self.droppath,
            droppath_rescale=self.droppath_rescale,
            eps=self.eps,
        )

    def _sampling_rng(self, rng):
        if self.mode not in ("eval", "train"):
            raise ValueError(f"mode must be 'eval' or 'train', got {self.mode!r}")
        if self.mode == "eval":
            return None
        return check_random_state(rng) if rng is not None else self.sample_rng_

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.input_tags.two_d_array = False
        tags.input_tags.three_d_array = True
        tags.requires_fit = True
        return tags


class ExplicitVisualCenter(_NeckBase):
    """One EVC block mapping ``[B, C_in, H, W]`` to ``[B, channels, H, W]``.

    Parameters
    ----------
    channels : int, default=256
        Stem width shared by both branches.
    expansion : int, default=4
        Hidden width multiplier of the channel MLP.
    dconv_kernel : int, default=1
        Depthwise kernel size in the MLP branch.
    groupnorm_groups : int, default=32
        Requested group-norm groups, capped at ``channels``.
    codewords : int, default=64
        Codebook size of the visual-center branch.
    droppath : float, default=0.0
        Branch drop rate, used only when ``mode='train'``.
    droppath_rescale : bool, default=False
        Divide kept branches by ``1 - droppath`` in train mode.
    eps : float, default=1e-5
    mode : {'eval', 'train'}, default='eval'
    random_state : int, Generator or None
        Seeds parameter initialization and train-mode sampling.
    """

    def __init__(
        self,
        channels=256,
        expansion=4,
        dconv_kernel=1,
        groupnorm_groups=32,
        codewords=64,
        droppath=0.0,
        droppath_rescale=False,
        eps=1e-5,
        mode="eval",
        random_state=None,
    ):
        self.channels = channels
        self.expansion = expansion
        self.dconv_kernel = dconv_kernel
        self.groupnorm_groups = groupnorm_groups
        self.codewords = codewords
        self.droppath = droppath
        self.droppath_rescale = droppath_rescale
        self.eps = eps
        self.mode = mode
        self.random_state = random_state

    def fit(self, X, y=None):
        x = check_feature_map(X)
        init_seq, sample_seq = np.random.SeedSequence(_entropy(self.random_state)).spawn(2)
        self.params_ = init_evc_params(x.shape[1], self._evc_config(), np.random.default_rng(init_seq))
        self.sample_rng_ = np.random.default_rng(sample_seq)
        self.n_features_in_ = x.shape[1]
        return self

    def transform(self, X, rng=None):
        check_is_fitted(self, "params_")
        x = check_feature_map(X)
        if x.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {x.shape[1]} channels, estimator was fitted with {self.n_features_in_}")
        rng = self._sampling_rng(rng)
        return evc_forward(x, self.params_, training=rng is not None, rng=rng).numpy()


class CentralizedFeaturePyramid(_NeckBase):
    """Full neck: EVC on the deepest level, then top-down regulation.

    ``X`` is a shallow-to-deep list of ``[B, C_i, H_i, W_i]`` maps ending at
    level 4 (or a ``{level: map}`` dict); ``transform`` returns the same
    kind of container. Takes every :class:`ExplicitVisualCenter` parameter
    plus ``regulated_levels``, ``repeat`` and ``chained``.
    """

    def __init__(
        self,
        channels=256,
        expansion=4,
        dconv_kernel=1,
        groupnorm_groups=32,
        codewords=64,
        regulated_levels=(3, 2),
        repeat=1,
        chained=False,
        droppath=0.0,
        droppath_rescale=False,
        eps=1e-5,
        mode="eval",
        random_state=None,
    ):
        self.channels = channels
        self.expansion = expansion
        self.dconv_kernel = dconv_kernel
        self.groupnorm_groups = groupnorm_groups
        self.codewords = codewords
        self.regulated_levels = regulated_levels
        self.repeat = repeat
        self.chained = chained
        self.droppath = droppath
        self.droppath_rescale = droppath_rescale
        self.eps = eps
        self.mode = mode
        self.random_state = random_state

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "CentralizedFeaturePyramid":
        return cls(
            channels=cfg.stem_channels,
            expansion=cfg.mlp_expansion,
            dconv_kernel=cfg.mlp_dconv_kernel,
            groupnorm_groups=cfg.mlp_groupnorm_groups,
            codewords=cfg.lvc_codewords,
            regulated_levels=cfg.gcr_levels,
            repeat=cfg.gcr_repeat,
            droppath=cfg.droppath,
            eps=cfg.eps,
            mode=cfg.mode,
            random_state=cfg.seed,
        )

    def _gcr_config(self) -> GcrConfig:
        return GcrConfig(regulated_levels=tuple(self.regulated_levels), repeat=self.repeat, chained=self.chained)

    def fit(self, X, y=None):
        pyr = check_pyramid(X)
        gcfg = self._gcr_config()
        init_seq, sample_seq = np.random.SeedSequence(_entropy(self.random_state)).spawn(2)
        self.level_channels_ = {i: t.shape[1] for i, t in pyr.levels.items()}
        self.params_ = init_cfp_params(self.level_channels_, self._evc_config(), gcfg, np.random.default_rng(init_seq))
        self.sample_rng_ = np.random.default_rng(sample_seq)
        self.n_features_in_ = pyr[gcfg.evc_level].shape[1]
        return self

    def transform(self, X, rng=None):
        check_is_fitted(self, "params_")
        pyr = check_pyramid(X)
        for i, t in pyr.levels.items():
            if self.level_channels_.get(i, t.shape[1]) != t.shape[1]:
                raise ValueError(f"level {i} has {t.shape[1]} channels, fitted with {self.level_channels_[i]}")
        rng = self._sampling_rng(rng)
        out = cfp_forward(pyr, self.params_, self._gcr_config(), training=rng is not None, rng=rng)
        maps = {i: t.numpy() for i, t in out.levels.items()}
        return maps if isinstance(X, dict) else list(maps.values())


def _entropy(random_state):
    if random_state is None or isinstance(random_state, (int, np.integer)):
        return random_state
    if isinstance(random_state, np.random.Generator):
        return int(random_state.integers(2**63))
    raise ValueError(f"random_state must be None, an int or a Generator, got {random_state!r}")
