"""
Angular-momentum algebra and atomic level schemes.

Dipole weights are expressed relative to the reduced fine-structure matrix
element and scaled by sqrt(2J'+1), so that the squared weights out of any
excited sublevel, summed over polarizations and over *all* ground hyperfine
levels, equal one.  Those squared weights are then directly the
spontaneous-emission branching fractions.  Phases follow the Condon-Shortley
convention throughout.

Energies are stored in units of the excited-state decay rate Gamma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

Number = Union[int, float, Fraction]

# Gamma / 2pi in MHz used to convert tabulated splittings.
GAMMA_MHZ = 6.0
RB87_NUCLEAR_SPIN = Fraction(3, 2)
RB87_GROUND_HFS_MHZ = 6834.682610904
RB87_D1_EXCITED_HFS_MHZ = 814.5
RB87_MASS_AMU = 86.909180527
D1_WAVELENGTH_M = 795.0e-9

PRESETS = ("rb87-d1-Fg1", "rb87-d1-Fg2", "four-level-toy", "custom")


class SchemeError(ValueError):
    """Raised when a level scheme or polarization geometry is invalid."""


# ---------------------------------------------------------------------------
# Wigner symbols
# ---------------------------------------------------------------------------


def _half(x: Number) -> Fraction:
    f = Fraction(x).limit_denominator(2)
    if f.denominator not in (1, 2) or abs(float(f) - float(x)) > 1e-9:
        raise ValueError(f"{x!r} is not an integer or half-integer")
    return f


def _is_int(f: Fraction) -> bool:
    return f.denominator == 1


def _triangle_ok(a: Fraction, b: Fraction, c: Fraction) -> bool:
    return (
        c >= abs(a - b)
        and c <= a + b
        and _is_int(a + b + c)
    )


def _delta(a: Fraction, b: Fraction, c: Fraction) -> Fraction:
    """Triangle coefficient, squared: (a+b-c)!(a-b+c)!(-a+b+c)!/(a+b+c+1)!."""
    f = math.factorial
    return Fraction(
        f(int(a + b - c)) * f(int(a - b + c)) * f(int(-a + b + c)),
        f(int(a + b + c + 1)),
    )


@lru_cache(maxsize=None)
def _wigner3j_exact(j1, j2, j3, m1, m2, m3) -> Tuple[int, Fraction]:
    # returns (sign, value squared) so the caller can take one square root
    if m1 + m2 + m3 != 0:
        return 0, Fraction(0)
    if not _triangle_ok(j1, j2, j3):
        return 0, Fraction(0)
    for j, m in ((j1, m1), (j2, m2), (j3, m3)):
        if abs(m) > j or not _is_int(j - m):
            return 0, Fraction(0)

    f = math.factorial
    pref2 = _delta(j1, j2, j3) * (
        f(int(j1 + m1)) * f(int(j1 - m1)) * f(int(j2 + m2)) * f(int(j2 - m2))
        * f(int(j3 + m3)) * f(int(j3 - m3))
    )
    kmin = int(max(0, j2 - j3 - m1, j1 - j3 + m2))
    kmax = int(min(j1 + j2 - j3, j1 - m1, j2 + m2))
    total = Fraction(0)
    for k in range(kmin, kmax + 1):
        denom = (
            f(k) * f(int(j1 + j2 - j3 - k)) * f(int(j1 - m1 - k))
            * f(int(j2 + m2 - k)) * f(int(j3 - j2 + m1 + k))
            * f(int(j3 - j1 - m2 + k))
        )
        total += Fraction((-1) ** k, denom)
    if total == 0:
        return 0, Fraction(0)
    phase = (-1) ** int(j1 - j2 - m3)
    sign = phase * (1 if total > 0 else -1)
    return sign, pref2 * total * total


def wigner3j(j1: Number, j2: Number, j3: Number, m1: Number, m2: Number, m3: Number) -> float:
    """Wigner 3-j symbol (j1 j2 j3; m1 m2 m3) via the Racah sum.

    Invalid combinations (selection rules, triangle violations, |m| > j)
    return exactly 0.0.
    """
    args = tuple(_half(x) for x in (j1, j2, j3, m1, m2, m3))
    sign, sq = _wigner3j_exact(*args)
    if sign == 0:
        return 0.0
    return sign * math.sqrt(sq)


@lru_cache(maxsize=None)
def _wigner6j_exact(j1, j2, j3, j4, j5, j6) -> Tuple[int, Fraction]:
    triads = ((j1, j2, j3), (j1, j5, j6), (j4, j2, j6), (j4, j5, j3))
    if not all(_triangle_ok(*t) for t in triads):
        return 0, Fraction(0)
    f = math.factorial
    pref2 = Fraction(1)
    for t in triads:
        pref2 *= _delta(*t)
    a = [int(sum(t)) for t in triads]
    b = [int(j1 + j2 + j4 + j5), int(j2 + j3 + j5 + j6), int(j3 + j1 + j6 + j4)]
    total = Fraction(0)
    for k in range(max(a), min(b) + 1):
        denom = 1
        for ai in a:
            denom *= f(k - ai)
        for bi in b:
            denom *= f(bi - k)
        total += Fraction((-1) ** k * f(k + 1), denom)
    if total == 0:
        return 0, Fraction(0)
    return (1 if total > 0 else -1), pref2 * total * total


def wigner6j(j1: Number, j2: Number, j3: Number, j4: Number, j5: Number, j6: Number) -> float:
    """Wigner 6-j symbol {j1 j2 j3; j4 j5 j6}; zero when any triad fails."""
    args = tuple(_half(x) for x in (j1, j2, j3, j4, j5, j6))
    sign, sq = _wigner6j_exact(*args)
    if sign == 0:
        return 0.0
    return sign * math.sqrt(sq)


def dipole_weight(
    F_g: Number,
    m_g: Number,
    F_e: Number,
    m_e: Number,
    q: int,
    I: Number = RB87_NUCLEAR_SPIN,
    J_g: Number = Fraction(1, 2),
    J_e: Number = Fraction(1, 2),
) -> float:
    """Dimensionless weight of <F_e m_e| d_q |F_g m_g>.

    Normalized to the reduced fine-structure element times sqrt(2J_e+1),
    so that sum over q, F_g, m_g of weight**2 is one for every excited
    sublevel.  Zero unless m_e == m_g + q.
    """
    if q not in (-1, 0, 1):
        raise ValueError("q must be -1, 0 or +1")
    F_g, m_g, F_e, m_e, I, J_g, J_e = (_half(x) for x in (F_g, m_g, F_e, m_e, I, J_g, J_e))
    if m_e != m_g + q:
        return 0.0
    # Wigner-Eckart in F, then decouple the nuclear spin.
    zeeman = (-1) ** int(F_e - m_e) * wigner3j(F_e, 1, F_g, -m_e, q, m_g)
    if zeeman == 0.0:
        return 0.0
    hyperfine = (
        (-1) ** int(J_e + I + F_g + 1)
        * math.sqrt((2 * F_e + 1) * (2 * F_g + 1))
        * wigner6j(J_e, F_e, I, F_g, J_g, 1)
    )
    return math.sqrt(2 * J_e + 1) * zeeman * hyperfine


# ---------------------------------------------------------------------------
# Level schemes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Level:
    manifold: str
    F: Fraction
    m: Fraction
    energy: float
    excited: bool

    @property
    def label(self) -> str:
        return f"{self.manifold}:F={self.F},m={self.m}"


@dataclass(frozen=True)
class CouplingTensor:
    """Dipole weights d[q][e, g] indexed by q + 1 in {0, 1, 2}."""

    d: np.ndarray  # shape (3, n, n), real

    def __post_init__(self):
        self.d.setflags(write=False)

    def matrix(self, q: int) -> np.ndarray:
        return self.d[q + 1]

    def nonzero_count(self) -> int:
        return int(np.count_nonzero(self.d))


@dataclass(frozen=True)
class LevelScheme:
    """Atomic levels plus their dipole couplings.

    ``loss`` holds, per level, the branching fraction of excited-state decay
    into ground manifolds that are not part of the model (zero for ground
    levels).
    """

    name: str
    levels: Tuple[Level, ...]
    coupling: CouplingTensor
    loss: np.ndarray
    reference: Tuple[int, int] = (0, 0)  # (ground index, excited index) of the detuning reference
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.loss.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.levels)

    @property
    def ground(self) -> np.ndarray:
        return np.array([i for i, lv in enumerate(self.levels) if not lv.excited], dtype=int)

    @property
    def excited(self) -> np.ndarray:
        return np.array([i for i, lv in enumerate(self.levels) if lv.excited], dtype=int)

    @property
    def energies(self) -> np.ndarray:
        return np.array([lv.energy for lv in self.levels], dtype=float)

    def reference_frequency(self) -> float:
        g, e = self.reference
        return self.levels[e].energy - self.levels[g].energy

    def branching(self) -> np.ndarray:
        """Total branching (modeled channels + loss) per level; ones on excited levels."""
        out = np.zeros(self.n)
        d2 = (self.coupling.d ** 2).sum(axis=(0, 2))
        out[self.excited] = d2[self.excited] + self.loss[self.excited]
        return out

    def validate(self, tol: float = 1e-12) -> None:
        for lv in self.levels:
            if abs(lv.m) > lv.F or (lv.F - lv.m).denominator != 1:
                raise SchemeError(f"invalid sublevel {lv.label}")
        by_manifold = {}
        for lv in self.levels:
            by_manifold.setdefault(lv.manifold, set()).add(round(lv.energy, 12))
        for name, energies in by_manifold.items():
            if len(energies) != 1:
                raise SchemeError(f"manifold {name} is not degenerate: {sorted(energies)}")
        d = self.coupling.d
        if d.shape != (3, self.n, self.n):
            raise SchemeError(f"coupling tensor shape {d.shape} does not match {self.n} levels")
        if not np.all(np.isreal(d)):
            raise SchemeError("coupling weights must be real")
        exc = np.zeros(self.n, bool)
        exc[self.excited] = True
        for qi, q in enumerate((-1, 0, 1)):
            rows, cols = np.nonzero(d[qi])
            for e, g in zip(rows, cols):
                if not exc[e] or exc[g]:
                    raise SchemeError(f"coupling {q} links {self.levels[g].label} -> {self.levels[e].label}")
                if self.levels[e].m != self.levels[g].m + q:
                    raise SchemeError(
                        f"selection rule violated for q={q}: {self.levels[g].label} -> {self.levels[e].label}"
                    )
        if np.any(self.loss < -tol):
            raise SchemeError("negative loss branching")
        total = self.branching()[self.excited]
        bad = np.abs(total - 1.0) > tol
        if np.any(bad):
            i = self.excited[np.argmax(bad)]
            raise SchemeError(
                f"branching out of {self.levels[i].label} sums to {total[np.argmax(bad)]:.15g}, not 1"
            )


def _sublevels(F: Fraction):
    return [Fraction(-F) + k for k in range(int(2 * F) + 1)]


def _hyperfine_scheme(
    name: str,
    ground: Sequence[Tuple[str, Fraction, float]],
    excited: Sequence[Tuple[str, Fraction, float]],
    I: Fraction,
    J_g: Fraction,
    J_e: Fraction,
    all_ground_F: Sequence[Fraction],
    reference: Tuple[str, str],
) -> LevelScheme:
    # manifolds are (name, F, energy) or (name, F, energy, sublevels)
    def subs(entry):
        F = entry[1]
        if len(entry) > 3 and entry[3] is not None:
            ms = [_half(m) for m in entry[3]]
            if not ms or any(m not in _sublevels(F) for m in ms) or len(set(ms)) != len(ms):
                raise SchemeError(f"manifold {entry[0]}: invalid sublevel list {list(entry[3])}")
            return sorted(ms)
        return _sublevels(F)

    levels = []
    for entry in ground:
        levels += [Level(entry[0], entry[1], m, entry[2], False) for m in subs(entry)]
    for entry in excited:
        levels += [Level(entry[0], entry[1], m, entry[2], True) for m in subs(entry)]
    n = len(levels)
    d = np.zeros((3, n, n))
    for e, le in enumerate(levels):
        if not le.excited:
            continue
        for g, lg in enumerate(levels):
            if lg.excited:
                continue
            for q in (-1, 0, 1):
                d[q + 1, e, g] = dipole_weight(lg.F, lg.m, le.F, le.m, q, I, J_g, J_e)
    # decay into ground sublevels that are not modeled (other F, or dropped m)
    loss = np.zeros(n)
    modeled = {(lv.F, lv.m) for lv in levels if not lv.excited}
    for e, le in enumerate(levels):
        if not le.excited:
            continue
        lost = 0.0
        for Fg in sorted(set(all_ground_F) | {lv.F for lv in levels if not lv.excited}):
            for mg in _sublevels(Fg):
                if (Fg, mg) in modeled:
                    continue
                for q in (-1, 0, 1):
                    lost += dipole_weight(Fg, mg, le.F, le.m, q, I, J_g, J_e) ** 2
        loss[e] = lost
    gi = next(i for i, lv in enumerate(levels) if lv.manifold == reference[0])
    ei = next(i for i, lv in enumerate(levels) if lv.manifold == reference[1])
    return LevelScheme(name, tuple(levels), CouplingTensor(d), loss, (gi, ei))


def rb87_d1_energies(
    ground_hfs_mhz: float = RB87_GROUND_HFS_MHZ,
    excited_hfs_mhz: float = RB87_D1_EXCITED_HFS_MHZ,
    gamma_mhz: float = GAMMA_MHZ,
) -> dict:
    """Hyperfine level energies in units of Gamma.

    The origin sits midway between the ground levels; excited energies are
    measured from the excited-manifold centre, with the optical frequency
    dropped.
    """
    g = ground_hfs_mhz / gamma_mhz
    e = excited_hfs_mhz / gamma_mhz
    return {"F1": -g / 2, "F2": g / 2, "F'1": -e / 2, "F'2": e / 2}


def build_scheme(
    preset: str,
    *,
    reference: Optional[str] = None,
    ground_hfs_mhz: float = RB87_GROUND_HFS_MHZ,
    excited_hfs_mhz: float = RB87_D1_EXCITED_HFS_MHZ,
    gamma_mhz: float = GAMMA_MHZ,
    excited_states: Optional[Sequence[int]] = None,
    toy_splitting: float = 50.0,
    custom: Optional[dict] = None,
) -> LevelScheme:
    """Build a named level scheme.

    Parameters
    ----------
    preset : str
        One of ``rb87-d1-Fg1``, ``rb87-d1-Fg2``, ``four-level-toy`` or
        ``custom``.
    reference : str, optional
        Excited manifold used as the detuning reference, e.g. ``"F'1"``.
        Defaults to F'=1 for the Rb presets.
    excited_states : sequence of int, optional
        Restrict the Rb presets to a subset of excited hyperfine levels
        (e.g. ``[1]`` for the isolated F=1 -> F'=1 line).  Decay into the
        removed levels is impossible, so branching is unaffected.
    toy_splitting : float
        Energy of |e1> above |e2>, in Gamma.  With the pump on resonance
        with |+> -> |e1>, |-> -> |e2> is detuned by this amount.
    custom : dict, optional
        Parsed custom scheme description (see :func:`scheme_from_dict`).
    """
    if preset in ("rb87-d1-Fg1", "rb87-d1-Fg2"):
        Fg = 1 if preset.endswith("Fg1") else 2
        en = rb87_d1_energies(ground_hfs_mhz, excited_hfs_mhz, gamma_mhz)
        wanted = list(excited_states) if excited_states is not None else [1, 2]
        if not wanted or any(F not in (1, 2) for F in wanted):
            raise SchemeError(f"excited_states must be a subset of [1, 2], got {wanted}")
        ref = reference or ("F'1" if 1 in wanted else "F'2")
        if ref not in ("F'1", "F'2") or int(ref[-1]) not in wanted:
            raise SchemeError(f"reference {ref!r} is not an excited manifold of this scheme")
        scheme = _hyperfine_scheme(
            preset if excited_states is None else f"{preset}-Fe{''.join(map(str, wanted))}",
            ground=[(f"F{Fg}", Fraction(Fg), en[f"F{Fg}"])],
            excited=[(f"F'{F}", Fraction(F), en[f"F'{F}"]) for F in sorted(wanted)],
            I=RB87_NUCLEAR_SPIN,
            J_g=Fraction(1, 2),
            J_e=Fraction(1, 2),
            all_ground_F=[Fraction(1), Fraction(2)],
            reference=(f"F{Fg}", ref),
        )
        scheme.metadata.update(
            ground_F=Fg,
            ground_hfs_mhz=ground_hfs_mhz,
            excited_hfs_mhz=excited_hfs_mhz,
            gamma_mhz=gamma_mhz,
            frame="propagation",
        )
    elif preset == "four-level-toy":
        # J=1/2 -> J'=1/2 quantized along the pump: pi light drives |+>->|e1>,
        # |->->|e2>; the orthogonal vacuum mode drives the cross transitions.
        h = Fraction(1, 2)
        levels = (
            Level("g", h, h, 0.0, False),
            Level("g", h, -h, 0.0, False),
            Level("e1", h, h, 0.0, True),
            Level("e2", h, -h, -float(toy_splitting), True),
        )
        d = np.zeros((3, 4, 4))
        for e in (2, 3):
            for g in (0, 1):
                for q in (-1, 0, 1):
                    d[q + 1, e, g] = dipole_weight(h, levels[g].m, h, levels[e].m, q, 0, h, h)
        scheme = LevelScheme("four-level-toy", levels, CouplingTensor(d), np.zeros(4), (0, 2))
        scheme.metadata.update(frame="pump", toy_splitting=float(toy_splitting))
    elif preset == "custom":
        if custom is None:
            raise SchemeError("custom preset requires a scheme description")
        scheme = scheme_from_dict(custom)
    else:
        raise SchemeError(f"unknown preset {preset!r}; choose from {PRESETS}")
    scheme.validate()
    return scheme


def scheme_from_dict(spec: dict) -> LevelScheme:
    """Build a scheme from a structured description.

    Expected keys::

        name: my-scheme
        nuclear_spin: 1.5          # optional, default 0
        J_g: 0.5                    # optional
        J_e: 0.5                    # optional
        ground:  [{name: g, F: 1, energy: 0.0}, ...]
        excited: [{name: e, F: 1, energy: 0.0, m: [0]}, ...]   # m: optional sublevel subset
        all_ground_F: [1, 2]        # optional, sets the loss channel
        reference: [g, e]           # optional
        couplings:                  # optional explicit overrides
          - {q: 1, ground: [g, -1], excited: [e, 0], weight: 0.5}
        loss: {"e": 0.0}            # optional explicit loss per excited manifold
    """
    try:
        I = _half(spec.get("nuclear_spin", 0))
        J_g = _half(spec.get("J_g", Fraction(1, 2)))
        J_e = _half(spec.get("J_e", Fraction(1, 2)))
        ground = [(m["name"], _half(m["F"]), float(m.get("energy", 0.0)), m.get("m")) for m in spec["ground"]]
        excited = [(m["name"], _half(m["F"]), float(m.get("energy", 0.0)), m.get("m")) for m in spec["excited"]]
    except (KeyError, TypeError) as exc:
        raise SchemeError(f"malformed custom scheme: {exc}") from exc
    if not ground or not excited:
        raise SchemeError("custom scheme needs at least one ground and one excited manifold")
    all_F = [_half(F) for F in spec.get("all_ground_F", [g[1] for g in ground])]
    ref = spec.get("reference", [ground[0][0], excited[0][0]])
    scheme = _hyperfine_scheme(
        spec.get("name", "custom"), ground, excited, I, J_g, J_e, all_F, tuple(ref)
    )
    overrides = spec.get("couplings")
    loss_override = spec.get("loss")
    if overrides is not None or loss_override is not None:
        d = np.array(scheme.coupling.d)
        if overrides is not None:
            if spec.get("replace_couplings", False):
                d[:] = 0.0
            index = {(lv.manifold, lv.m): i for i, lv in enumerate(scheme.levels)}
            for c in overrides:
                try:
                    g = index[(c["ground"][0], _half(c["ground"][1]))]
                    e = index[(c["excited"][0], _half(c["excited"][1]))]
                except KeyError as exc:
                    raise SchemeError(f"coupling override names unknown sublevel {exc}") from exc
                d[int(c["q"]) + 1, e, g] = float(c["weight"])
        loss = np.array(scheme.loss)
        if loss_override is not None:
            for i, lv in enumerate(scheme.levels):
                if lv.excited and lv.manifold in loss_override:
                    loss[i] = float(loss_override[lv.manifold])
        scheme = LevelScheme(scheme.name, scheme.levels, CouplingTensor(d), loss, scheme.reference)
    scheme.metadata.update(frame=spec.get("frame", "propagation"))
    scheme.validate()
    return scheme


def load_scheme_file(path: Union[str, Path]) -> LevelScheme:
    """Load a custom scheme from a YAML (or JSON) file."""
    import yaml

    text = Path(path).read_text(encoding="utf-8")
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise SchemeError(f"{path}: expected a mapping at top level")
    return scheme_from_dict(data)


# ---------------------------------------------------------------------------
# Polarization geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolarizationGeometry:
    """Spherical components c[q+1] of the pump and vacuum polarizations.

    ``c[q+1]`` is the amplitude that drives Delta m = q transitions in the
    scheme's quantization frame.
    """

    pump: np.ndarray
    vacuum: np.ndarray
    frame: str = "propagation"

    def __post_init__(self):
        self.pump.setflags(write=False)
        self.vacuum.setflags(write=False)

    def check(self, tol: float = 1e-12) -> None:
        for name, c in (("pump", self.pump), ("vacuum", self.vacuum)):
            if abs(np.vdot(c, c).real - 1.0) > tol:
                raise SchemeError(f"{name} polarization not normalized")
        if abs(np.vdot(self.pump, self.vacuum)) > tol:
            raise SchemeError("pump and vacuum polarizations are not orthogonal")


def _spherical_components(vec: np.ndarray) -> np.ndarray:
    # e_{+1} = -(x + iy)/sqrt2, e_{-1} = (x - iy)/sqrt2, e_0 = z
    x, y, z = vec
    s = math.sqrt(2.0)
    return np.array([(x + 1j * y) / s, z, (-x + 1j * y) / s], dtype=complex)


def polarization_decompose(
    pump_axis: Union[float, Sequence[float]] = (1.0, 0.0, 0.0),
    frame: str = "propagation",
) -> PolarizationGeometry:
    """Decompose the linear pump and its orthogonal vacuum mode.

    Propagation is along z.  ``pump_axis`` is either a 3-vector or an angle
    (radians) from x in the transverse plane.  With ``frame="propagation"``
    the quantization axis is z, so only q = +/-1 appear; ``frame="pump"``
    quantizes along the pump, making the pump pure q = 0.
    """
    if np.isscalar(pump_axis):
        phi = float(pump_axis)
        axis = np.array([math.cos(phi), math.sin(phi), 0.0])
    else:
        axis = np.asarray(pump_axis, dtype=float)
        if axis.shape != (3,):
            raise SchemeError("pump axis must be a 3-vector")
    norm = np.linalg.norm(axis)
    if norm == 0:
        raise SchemeError("pump axis has zero length")
    axis = axis / norm
    if np.hypot(axis[0], axis[1]) < 1e-12:
        raise SchemeError("pump polarization parallel to propagation (longitudinal) is unsupported")
    if abs(axis[2]) > 1e-12:
        raise SchemeError("pump axis must be perpendicular to propagation")
    zhat = np.array([0.0, 0.0, 1.0])
    vac = np.cross(zhat, axis)
    if frame == "propagation":
        return PolarizationGeometry(_spherical_components(axis), _spherical_components(vac), frame)
    if frame == "pump":
        # right-handed triad (vac, zhat, axis) -> (x', y', z')
        basis = np.array([vac, zhat, axis])
        return PolarizationGeometry(
            _spherical_components(basis @ axis), _spherical_components(basis @ vac), frame
        )
    raise SchemeError(f"unknown frame {frame!r}")


def geometry_for(scheme: LevelScheme, pump_axis: Union[float, Sequence[float]] = 0.0) -> PolarizationGeometry:
    """Geometry in the frame the scheme's couplings were written in."""
    return polarization_decompose(pump_axis, frame=scheme.metadata.get("frame", "propagation"))
