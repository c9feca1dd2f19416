"""Named drive shapes and the two-column pulse file format."""
from __future__ import annotations

import enum
from pathlib import Path

import numpy as np

from .dynamics import ControlPulse, SystemConfig

__all__ = ["PulseKind", "named_pulse", "resample", "save_pulse", "load_pulse",
           "PulseFileError"]


class PulseKind(str, enum.Enum):
    SIN_OMEGA = "sin_omega"
    SIN_SQUARED_OMEGA = "sin_squared_omega"
    SIN_TWO_OMEGA = "sin_two_omega"
    OPTIMIZED = "optimized"
    FILE = "file"


_SHAPES = {
    PulseKind.SIN_OMEGA: np.sin,
    PulseKind.SIN_SQUARED_OMEGA: lambda t: np.sin(t) ** 2,
    PulseKind.SIN_TWO_OMEGA: lambda t: np.sin(2.0 * t),
}


class PulseFileError(ValueError):
    pass


def named_pulse(kind, config: SystemConfig, amplitude: float = 1.0) -> ControlPulse:
    """``A sin t``, ``A sin^2 t`` or ``A sin 2t`` on the config grid."""
    kind = PulseKind(kind)
    if kind not in _SHAPES:
        raise ValueError(f"{kind.value} is not a periodic pulse shape")
    return ControlPulse(amplitude * _SHAPES[kind](config.times()), config.dt)


def resample(pulse: ControlPulse, dt: float) -> ControlPulse:
    """Piecewise-linear resampling onto a grid of step ``dt``.

    Refining by an integer factor keeps the drive as a function of time
    unchanged, which is what convergence studies need.
    """
    t_final = pulse.dt * pulse.n_steps
    n = int(round(t_final / dt))
    t = dt * np.arange(n + 1)
    return ControlPulse(np.interp(t, pulse.times(), pulse.values), dt)


def save_pulse(pulse: ControlPulse, path) -> Path:
    """Write ``# dt=<dt> n_steps=<n>`` and one ``t u`` row per node.

    Values use ``repr`` so that :func:`load_pulse` restores them exactly.
    """
    path = Path(path)
    lines = [f"# dt={pulse.dt!r} n_steps={pulse.n_steps}"]
    t = pulse.times()
    lines += [f"{float(ti)!r} {float(ui)!r}" for ti, ui in zip(t, pulse.values)]
    path.write_text("\n".join(lines) + "\n")
    return path


def load_pulse(path) -> ControlPulse:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise PulseFileError(f"cannot read pulse file {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise PulseFileError(f"{path}: missing '# dt=... n_steps=...' header")
    try:
        header = dict(tok.split("=", 1) for tok in lines[0][1:].split())
        dt = float(header["dt"])
        n_steps = int(header["n_steps"])
        rows = np.array([[float(v) for v in ln.split()] for ln in lines[1:] if ln.strip()])
    except (KeyError, ValueError) as exc:
        raise PulseFileError(f"{path}: malformed pulse file ({exc})") from exc
    if rows.shape != (n_steps + 1, 2):
        raise PulseFileError(
            f"{path}: expected {n_steps + 1} rows of (t, u), got {rows.shape}"
        )
    return ControlPulse(rows[:, 1].copy(), dt)
