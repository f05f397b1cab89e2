"""The four jointly trained models and the two EM directions."""

from __future__ import annotations

from dataclasses import dataclass

from ..seqmodel.base import ROLES


@dataclass
class ModelQuad:
    zx: object  # p(z|x)
    yz: object  # p(y|z)
    zy: object  # p(z|y)
    xz: object  # p(x|z)

    def __post_init__(self):
        for role in ROLES:
            m = self.get(role)
            if m.role != role:
                raise ValueError(f"model in slot {role} has role {m.role}")

    def get(self, role: str):
        return getattr(self, role.replace("|", ""))

    def set(self, role: str, model) -> None:
        setattr(self, role.replace("|", ""), model)

    def models(self) -> dict:
        return {role: self.get(role) for role in ROLES}

    def clone(self) -> "ModelQuad":
        return ModelQuad(*(self.get(r).clone() for r in ROLES))


@dataclass(frozen=True)
class Direction:
    """Which models play generator, scorer and decoder for one EM direction."""

    name: str
    generator: str  # role updated in the E-step
    scorer: str  # approximate posterior p(z | other source)
    decoder: str  # role updated in the M-step
    gen_side: int  # index of the generator's source within a rich (x, y) pair
    true_gen: str  # corpus field with the generator's true pairs
    true_dec: str  # corpus field with the decoder's true pairs (flipped)
    ttable: str


X_TO_Y = Direction("X=>Y", "z|x", "z|y", "y|z", 0, "low_xz", "low_yz", "xz")
Y_TO_X = Direction("Y=>X", "z|y", "z|x", "x|z", 1, "low_yz", "low_xz", "yz")
DIRECTIONS = {d.name: d for d in (X_TO_Y, Y_TO_X)}


def get_direction(direction) -> Direction:
    if isinstance(direction, Direction):
        return direction
    key = str(direction).replace("⇒", "=>")
    if key not in DIRECTIONS:
        raise ValueError(f"unknown direction {direction!r}")
    return DIRECTIONS[key]
