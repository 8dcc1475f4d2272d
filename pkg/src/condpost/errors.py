"""Exception types shared across the package."""

from __future__ import annotations


class ValidationError(ValueError):
    """Bad user input: an MDP, class, or config document that fails its contract."""


class InvalidMdp(ValidationError):
    pass


class InvalidClass(ValidationError):
    pass


class ConfigError(ValidationError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class NegativeValue(ValidationError):
    def __init__(self, h: int, member: int, value: float):
        super().__init__(f"member {member} at step {h} takes negative value {value!r}")
        self.h, self.member, self.value = h, member, value


class NonPositiveEntry(ValidationError):
    pass


class EtaTooLarge(ValidationError):
    pass


class EmptyCoverSet(ArithmeticError):
    """No member of F_h is within epsilon Bellman error of a given f^{h+1}."""

    def __init__(self, h: int, next_member: int, epsilon: float):
        super().__init__(
            f"cover set at step {h} is empty for next-step member {next_member} "
            f"(epsilon={epsilon!r}); completeness fails at this level"
        )
        self.h, self.next_member, self.epsilon = h, next_member, epsilon


class CapExceeded(RuntimeError):
    pass
