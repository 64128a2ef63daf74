from collections.abc import Callable, Sequence
from typing import Any, Optional

import numpy as np
from fastprogress.fastprogress import ProgressBar, progress_bar

# Speed of light in micrometers per femtosecond
C_UM_PER_FS = 0.299792458

# FWHM of a Gaussian amplitude profile in units of its standard deviation
FWHM_PER_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))

# Transform-limited time-bandwidth product, FWHM(Δω) * Δt
TIME_BANDWIDTH_PRODUCT = 0.44


def wavelength_to_omega(wavelength_nm):
    """
    Convert a vacuum wavelength in nm to an angular frequency in rad/fs.

    Parameters
    ----------
    wavelength_nm: float or array
        Vacuum wavelength in nanometers

    Returns
    -------
    omega: float or array
        Angular frequency 2 pi c / lambda in rad/fs
    """
    return 2.0 * np.pi * C_UM_PER_FS / (np.asarray(wavelength_nm, dtype=float) * 1e-3)


def omega_to_wavelength(omega):
    """Convert an angular frequency in rad/fs to a vacuum wavelength in nm."""
    return 2.0 * np.pi * C_UM_PER_FS / np.asarray(omega, dtype=float) * 1e3


def sigma_to_pulse_duration(sigma):
    """
    Transform-limited pulse duration (fs) of a Gaussian spectral amplitude with standard deviation sigma (rad/fs).

    The FWHM of the spectral amplitude is taken as 0.44 / duration.
    """
    return TIME_BANDWIDTH_PRODUCT / (FWHM_PER_SIGMA * np.asarray(sigma, dtype=float))


def pulse_duration_to_sigma(duration_fs):
    """Inverse of :func:`sigma_to_pulse_duration`."""
    return TIME_BANDWIDTH_PRODUCT / (FWHM_PER_SIGMA * np.asarray(duration_fs, dtype=float))


def ensure_input_is_sequence(x: Any) -> Sequence[Any]:
    if not isinstance(x, (list, tuple)) and x is not None:
        x = [x]
    return x


def _validate_interval(name: str, interval: Sequence[float], positive: bool = True) -> tuple[float, float]:
    """
    Check that a (low, high) pair is ordered and, optionally, strictly positive.

    Parameters
    ----------
    name: str
        Name of the quantity, used in error messages
    interval: sequence of float
        Two numbers, (low, high)
    positive: bool, default True
        If True, the lower bound must be strictly positive

    Returns
    -------
    interval: tuple of float
        The validated interval as a tuple of floats
    """
    if len(interval) != 2:
        raise ValueError(f"{name} must be a (low, high) pair, found {interval}")
    low, high = float(interval[0]), float(interval[1])
    if not np.isfinite(low) or not np.isfinite(high):
        raise ValueError(f"{name} must be finite, found {interval}")
    if low > high:
        raise ValueError(f"{name} must satisfy low <= high, found {interval}")
    if positive and low <= 0:
        raise ValueError(f"{name} must be strictly positive, found {interval}")
    return low, high


class CostFuncWrapper:
    """
    Wrap an objective function for scipy.optimize.minimize, counting evaluations and reporting progress.

    Candidates rejected by ``is_feasible`` are assigned ``penalty`` without evaluating ``f``. The best feasible value
    and point seen so far are tracked, because Nelder-Mead does not guarantee that its last simplex vertex is the
    best point it visited.
    """

    def __init__(
        self,
        f: Callable,
        is_feasible: Optional[Callable] = None,
        penalty: float = 1.0,
        maxeval: int = 5000,
        progressbar: bool = True,
        update_every: int = 10,
    ):
        self.n_eval = 0
        self.n_rejected = 0
        self.maxeval = maxeval
        self.f = f
        self.is_feasible = is_feasible
        self.penalty = penalty
        self.update_every = update_every
        self.interrupted = False
        self.desc = "f = {:,.5g}, rejected = {:d}"

        self.best_x = None
        self.best_value = np.inf

        self.progressbar = progressbar
        if progressbar:
            self.progress = progress_bar(range(maxeval), total=maxeval, display=progressbar)
            self.progress.update(0)
        else:
            self.progress = range(maxeval)

    def step(self, x):
        if self.is_feasible is not None and not self.is_feasible(x):
            self.n_rejected += 1
            value = self.penalty
        else:
            value = float(self.f(x))
            if value < self.best_value:
                self.best_value = value
                self.best_x = np.array(x, dtype=float)

        if self.n_eval % self.update_every == 0:
            self.update_progress_desc(value)

        if self.n_eval >= self.maxeval:
            self.update_progress_desc(value)
            self.interrupted = True
            return value

        self.n_eval += 1
        if self.progressbar:
            assert isinstance(self.progress, ProgressBar)
            self.progress.update_bar(self.n_eval)

        return value

    def __call__(self, x):
        try:
            return self.step(x)
        except KeyboardInterrupt:
            self.interrupted = True
            return self.penalty

    def callback(self, xk):
        if self.interrupted:
            raise StopIteration

    def update_progress_desc(self, value: float) -> None:
        if self.progressbar:
            best = self.best_value if np.isfinite(self.best_value) else value
            self.progress.comment = self.desc.format(best, self.n_rejected)
