"""Built-in model library.

Each entry ships the model source, the Hessian rank and classification it
must produce, default Lagrangian initial data, and (for singular models) a
hand-reduced Euler-Lagrange system used as an independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

from .errors import ConfigError
from .model import LagrangianSystem, load_model_text


@dataclass(frozen=True)
class ModelLibraryEntry:
    """A library model with the reference facts the self-test checks.

    Attributes:
        name: Library key.
        text: Model file source.
        expected_r_W: Rank of the velocity Hessian.
        expected_kind: Classification at the default partition.
        expected_r_F: Rank of F at the default partition.
        q0: Default initial coordinates.
        qd0: Default initial velocities (consistent for gauge models).
        reduced_el: Accelerations in ``t, q<k>, qd<k>`` for singular models,
            with every gauge velocity held constant.
        time_dependent: True when the Lagrangian depends on ``t`` explicitly,
            so ``H0`` is not conserved.
        notes: Free-form reference facts.
    """

    name: str
    text: str
    expected_r_W: int
    expected_kind: str
    expected_r_F: int
    q0: tuple[float, ...]
    qd0: tuple[float, ...]
    reduced_el: tuple[str, ...] | None = None
    time_dependent: bool = False
    notes: dict = field(default_factory=dict)

    @property
    def system(self) -> LagrangianSystem:
        return _load(self.text)

    @property
    def regular(self) -> bool:
        return self.expected_r_W == len(self.q0)


@lru_cache(maxsize=None)
def _load(text: str) -> LagrangianSystem:
    return load_model_text(text)


def _src(name: str, coords: str, L: str) -> str:
    return f"name = {name}\ncoords = {coords}\nlagrangian = {L}\n"


_ENTRIES = (
    ModelLibraryEntry(
        "osc1",
        _src("osc1", "q1", "qd1^2/2 - q1^2/2"),
        1, "nongauge", 0,
        (1.0,), (0.0,),
        notes={"q1(t)": "cos(t)"},
    ),
    ModelLibraryEntry(
        "osc2",
        _src("osc2", "q1, q2", "0.5*qd1^2 + 0.5*qd2^2 + 0.3*qd1*qd2 - 0.5*q1^2 - q2^2 + 0.2*q1*q2"),
        2, "nongauge", 0,
        (1.0, -0.5), (0.2, 0.4),
        notes={"coupling": "kinetic and potential"},
    ),
    ModelLibraryEntry(
        "firstorder",
        _src("firstorder", "q1, q2", "q2*qd1 - 0.5*(q1^2+q2^2)"),
        0, "nongauge", 2,
        (1.0, 0.0), (0.0, -1.0),
        reduced_el=("qd2", "-qd1"),
        notes={"F": [[0, -1], [1, 0]], "G": "(q1, q2)", "period": "2*pi"},
    ),
    ModelLibraryEntry(
        "gauge1",
        _src("gauge1", "q1, q2", "0.5*(qd1-q2)^2"),
        1, "abelian-limit", 0,
        (0.1, 0.5), (0.5, 0.0),
        reduced_el=("qd2", "0"),
        notes={"consistency": "p1 = 0", "q1(t)": "q1(0) + q2(0)*t for frozen q2"},
    ),
    ModelLibraryEntry(
        "rotgauge",
        _src("rotgauge", "q1, q2, q3", "0.5*(qd1-q3*q2)^2 + 0.5*(qd2+q3*q1)^2"),
        2, "abelian-limit", 0,
        (0.6, -0.3, 0.4), (0.28, -0.44, 0.0),
        reduced_el=(
            "(qd2 + q3*q1)*q3 + qd3*q2 + q3*qd2",
            "-(qd1 - q3*q2)*q3 - qd3*q1 - q3*qd1",
            "0",
        ),
        notes={"consistency": "p1*q2 - p2*q1 = 0", "gauge_directions": 1},
    ),
    ModelLibraryEntry(
        "forced",
        _src("forced", "q1", "0.5*qd1^2 - q1*sin(t)"),
        1, "nongauge", 0,
        (0.0,), (1.0,),
        time_dependent=True,
        notes={"conservation": "skipped: H0 depends on t explicitly"},
    ),
    ModelLibraryEntry(
        "tfirstorder",
        _src("tfirstorder", "q1, q2", "(q2+sin(t))*qd1 - 0.5*(q1^2+q2^2)"),
        0, "nongauge", 2,
        (1.0, 0.0), (0.0, -1.0),
        reduced_el=("qd2", "-qd1 + sin(t)"),
        time_dependent=True,
        notes={"conservation": "skipped: H0 depends on t explicitly"},
    ),
    ModelLibraryEntry(
        "shiftosc",
        _src("shiftosc", "q1, q2", "0.5*(qd1+qd2)^2 - 0.5*(q1+q2)^2"),
        1, "abelian-limit", 0,
        (0.7, 0.3), (0.0, 0.0),
        reduced_el=("-(q1+q2)", "0"),
        notes={"integrable": "multi-time residual vanishes identically"},
    ),
)


def library() -> list[ModelLibraryEntry]:
    return list(_ENTRIES)


def get(name: str) -> ModelLibraryEntry:
    for e in _ENTRIES:
        if e.name == name:
            return e
    raise ConfigError(f"unknown library model {name!r} (known: {', '.join(e.name for e in _ENTRIES)})")
