"""Per-unit value types, admittance spectra and their file formats.

Conventions used throughout the package:

* dq quantities are complex numbers ``d + 1j*q`` in a frame rotating at the
  fundamental; the transform is amplitude invariant, so ``p = vd*id + vq*iq``.
* Inductances are stored in pu on the fundamental, i.e. ``l`` equals the
  reactance at ``f1`` numerically.
* Admittances follow the source convention ``-I = Y V`` at the POI.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

ENTRIES = ("dd", "dq", "qd", "qq")
CSV_HEADER = [
    "f_hz",
    "y_dd_re", "y_dd_im",
    "y_dq_re", "y_dq_im",
    "y_qd_re", "y_qd_im",
    "y_qq_re", "y_qq_im",
]


class SpectrumError(ValueError):
    """Malformed or inconsistent admittance spectrum."""


@dataclass(frozen=True)
class PerUnitBase:
    s_base: float = 200e6
    v_base: float = 230e3
    f1: float = 60.0

    def __post_init__(self):
        if not (self.s_base > 0 and self.v_base > 0 and self.f1 > 0):
            raise ValueError(f"per-unit base must be positive, got {self}")

    @property
    def omega1(self) -> float:
        return 2.0 * math.pi * self.f1

    def to_dict(self) -> dict:
        return {"s_base": self.s_base, "v_base": self.v_base, "f1": self.f1}


@dataclass(frozen=True)
class RlImpedance:
    """Series R-L branch in pu; ``l`` is the reactance at the fundamental."""

    r: float
    l: float

    def __post_init__(self):
        if not (math.isfinite(self.r) and math.isfinite(self.l)):
            raise ValueError("impedance components must be finite")
        if self.r < 0 or self.l < 0:
            raise ValueError(f"impedance components must be >= 0, got r={self.r}, l={self.l}")

    @property
    def x_at_f1(self) -> float:
        return self.l

    @property
    def z1(self) -> complex:
        """Phasor impedance at the fundamental."""
        return complex(self.r, self.l)

    @property
    def x_over_r(self) -> float:
        return self.l / self.r if self.r > 0 else math.inf

    def __add__(self, other: "RlImpedance") -> "RlImpedance":
        return RlImpedance(self.r + other.r, self.l + other.l)

    def scaled(self, k: float) -> "RlImpedance":
        return RlImpedance(self.r * k, self.l * k)


@dataclass(frozen=True)
class DqPhasor:
    d: float
    q: float

    def __post_init__(self):
        if not (math.isfinite(self.d) and math.isfinite(self.q)):
            raise ValueError(f"dq components must be finite, got ({self.d}, {self.q})")

    @property
    def magnitude(self) -> float:
        return math.hypot(self.d, self.q)

    @property
    def angle(self) -> float:
        return math.atan2(self.q, self.d)

    def as_complex(self) -> complex:
        return complex(self.d, self.q)

    @classmethod
    def from_complex(cls, z: complex) -> "DqPhasor":
        return cls(z.real, z.imag)


@dataclass(frozen=True)
class AdmittancePoint:
    """One frequency of a dq admittance matrix; ``None`` marks an unmeasured entry."""

    f: float
    y_dd: Optional[complex] = None
    y_dq: Optional[complex] = None
    y_qd: Optional[complex] = None
    y_qq: Optional[complex] = None

    def __post_init__(self):
        if not self.f > 0:
            raise SpectrumError(f"frequency must be > 0, got {self.f}")
        for name in ENTRIES:
            y = getattr(self, "y_" + name)
            if y is not None and not (math.isfinite(y.real) and math.isfinite(y.imag)):
                raise SpectrumError(f"non-finite y_{name} at {self.f} Hz")

    def entry(self, name: str) -> Optional[complex]:
        if name not in ENTRIES:
            raise KeyError(f"unknown admittance entry {name!r}")
        return getattr(self, "y_" + name)


@dataclass(frozen=True)
class AdmittanceSpectrum:
    base: PerUnitBase
    points: tuple
    f_min: Optional[float] = None
    f_max: Optional[float] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pts = tuple(self.points)
        object.__setattr__(self, "points", pts)
        if len(pts) < 2:
            raise SpectrumError("a spectrum needs at least 2 points")
        f = np.array([p.f for p in pts])
        if np.any(np.diff(f) <= 0):
            raise SpectrumError("frequencies must be strictly increasing")
        lo = self.f_min if self.f_min is not None else f[0]
        hi = self.f_max if self.f_max is not None else f[-1]
        if f[0] < lo or f[-1] > hi:
            raise SpectrumError(f"points outside declared range [{lo}, {hi}] Hz")

    @classmethod
    def from_unsorted(cls, base: PerUnitBase, points: Sequence[AdmittancePoint], **kw):
        return cls(base, tuple(sorted(points, key=lambda p: p.f)), **kw)

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([p.f for p in self.points])

    def has(self, name: str) -> bool:
        return all(p.entry(name) is not None for p in self.points)

    def entry(self, name: str) -> np.ndarray:
        vals = [p.entry(name) for p in self.points]
        if any(v is None for v in vals):
            raise SpectrumError(f"entry y_{name} is not measured at every point")
        return np.array(vals, dtype=complex)

    def scaled(self, k: float) -> "AdmittanceSpectrum":
        pts = [
            AdmittancePoint(p.f, *[None if p.entry(n) is None else k * p.entry(n) for n in ENTRIES])
            for p in self.points
        ]
        return AdmittanceSpectrum(self.base, tuple(pts), self.f_min, self.f_max, dict(self.meta))

    # -- serialization -------------------------------------------------
    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for p in self.points:
            row = [repr(float(p.f))]
            for name in ENTRIES:
                y = p.entry(name)
                row += ["", ""] if y is None else [repr(float(y.real)), repr(float(y.imag))]
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source, base: PerUnitBase | None = None, require: Sequence[str] = ("qd",)):
        """Parse the CSV format; ``source`` is a path or the CSV text itself."""
        text = Path(source).read_text() if isinstance(source, Path) or (
            isinstance(source, str) and "\n" not in source) else source
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [h.strip() for h in rows[0]] != CSV_HEADER:
            raise SpectrumError(f"bad spectrum header, expected {','.join(CSV_HEADER)}")
        points = []
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise SpectrumError(f"line {lineno}: expected {len(CSV_HEADER)} cells")
            ys = {}
            for k, name in enumerate(ENTRIES):
                re_, im_ = row[1 + 2 * k].strip(), row[2 + 2 * k].strip()
                if re_ == "" and im_ == "":
                    ys["y_" + name] = None
                elif re_ == "" or im_ == "":
                    raise SpectrumError(f"line {lineno}: half-empty y_{name}")
                else:
                    ys["y_" + name] = complex(float(re_), float(im_))
            points.append(AdmittancePoint(float(row[0]), **ys))
        spectrum = cls(base or PerUnitBase(), tuple(points))
        for name in require:
            if not spectrum.has(name):
                raise SpectrumError(f"spectrum is missing the y_{name} column")
        return spectrum

    def to_dict(self) -> dict:
        def cx(y):
            return None if y is None else [float(y.real), float(y.imag)]

        return {
            "base": self.base.to_dict(),
            "f_min": self.f_min,
            "f_max": self.f_max,
            "meta": self.meta,
            "points": [
                {"f_hz": p.f, **{f"y_{n}": cx(p.entry(n)) for n in ENTRIES}} for p in self.points
            ],
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, doc: dict) -> "AdmittanceSpectrum":
        def cx(v):
            return None if v is None else complex(v[0], v[1])

        pts = [
            AdmittancePoint(p["f_hz"], **{f"y_{n}": cx(p.get(f"y_{n}")) for n in ENTRIES})
            for p in doc["points"]
        ]
        return cls(PerUnitBase(**doc["base"]), tuple(pts), doc.get("f_min"), doc.get("f_max"),
                   doc.get("meta", {}))

    @classmethod
    def from_json(cls, source) -> "AdmittanceSpectrum":
        text = Path(source).read_text() if not str(source).lstrip().startswith("{") else source
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class TheveninEquivalent:
    r_eff: float
    l_eff: float
    rms_error: float
    resonance_freq: float
    boundary_solution: bool = False
    resonance_refined: bool = True

    def __post_init__(self):
        if self.r_eff < 0 or not self.l_eff > 0 or self.rms_error < 0:
            raise ValueError(f"invalid Thevenin equivalent {self}")

    @property
    def x_eff_at_f1(self) -> float:
        return self.l_eff

    @property
    def x_over_r(self) -> float:
        return self.l_eff / self.r_eff if self.r_eff > 0 else math.inf

    @property
    def impedance(self) -> RlImpedance:
        return RlImpedance(self.r_eff, self.l_eff)


def rl_from_x_over_r(x_eff: float, x_over_r: float, base: PerUnitBase | None = None) -> RlImpedance:
    """R-L branch with reactance ``x_eff`` at the fundamental and the given X/R.

    ``base`` is accepted for symmetry with the rest of the API; in pu the result
    does not depend on the fundamental frequency.
    """
    if not (x_eff > 0 and x_over_r > 0):
        raise ValueError(f"x_eff and x_over_r must be positive, got {x_eff}, {x_over_r}")
    return RlImpedance(x_eff / x_over_r, x_eff)


class Resonance(NamedTuple):
    freq: float
    peak: float
    refined: bool


def spectrum_resonance(spectrum: AdmittanceSpectrum, entry: str = "qd") -> Resonance:
    """Frequency of the |Y| peak, refined by a parabola through log|Y| at the
    peak sample and its two neighbours.

    A peak on the first or last sample is returned unrefined.
    """
    if len(spectrum.points) < 3:
        raise SpectrumError("resonance search needs at least 3 points")
    f = spectrum.frequencies
    mag = np.abs(spectrum.entry(entry))
    k = int(np.argmax(mag))
    if k == 0 or k == len(f) - 1 or np.ptp(mag) <= 1e-12 * mag.max():
        return Resonance(float(f[k]), float(mag[k]), False)
    x = f[k - 1:k + 2]
    y = np.log(mag[k - 1:k + 2])
    a, b, c = np.polyfit(x - x[1], y, 2)
    if a >= 0:
        return Resonance(float(f[k]), float(mag[k]), False)
    dx = -b / (2 * a)
    dx = min(max(dx, x[0] - x[1]), x[2] - x[1])
    return Resonance(float(x[1] + dx), float(math.exp(c - b * b / (4 * a))), True)
