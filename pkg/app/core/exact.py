from fractions import Fraction
from numbers import Rational

Number = int | float | Fraction


def as_fraction(x: Number) -> Fraction:
    """Exact value of `x`; floats go through their shortest repr so 0.3 means 3/10."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, Rational):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(float.__repr__(float(x)))
    return Fraction(str(x))


def parse_probability(text: str) -> Fraction:
    value = Fraction(text.strip())
    if value < 0 or value > 1:
        raise ValueError(f"probability out of range: {text}")
    return value
