"""Plain-text serialization of a policy and its stationary distribution.

The format is line oriented and diffable: a header of key = value scenario
parameters, then one row per state with the four action probabilities and
the state's long-run occupancy. Floats are written with repr so that a
load/save round trip is bit exact.
"""

from __future__ import annotations

import numpy as np

from .model import Policy, StationaryDistribution, SystemParams

_HEADER = "# twronc policy v1"
_PARAM_FIELDS = ("lambda_a", "lambda_b", "n_a", "n_b", "d_max", "rate_r", "scale_a", "scale_b")


class PolicyFileError(ValueError):
    """Raised when a policy file is malformed."""


def dumps_policy(params: SystemParams, policy: Policy, pi: StationaryDistribution) -> str:
    lines = [_HEADER]
    for name in _PARAM_FIELDS:
        lines.append(f"{name} = {getattr(params, name)!r}")
    lines.append("[table]")
    lines.append("# i j g1 g2 g3 g4 pi")
    for i in range(params.n_a + 1):
        for j in range(params.n_b + 1):
            row = policy.g[i, j]
            cells = " ".join(repr(float(v)) for v in row)
            lines.append(f"{i} {j} {cells} {float(pi.pi[i, j])!r}")
    return "\n".join(lines) + "\n"


def save_policy(path, params: SystemParams, policy: Policy, pi: StationaryDistribution):
    with open(path, "w") as fh:
        fh.write(dumps_policy(params, policy, pi))


def loads_policy(text: str) -> tuple[SystemParams, Policy, StationaryDistribution]:
    lines = [ln.strip() for ln in text.splitlines()]
    if not lines or lines[0] != _HEADER:
        raise PolicyFileError(f"missing header {_HEADER!r}")
    fields: dict[str, float] = {}
    idx = 1
    while idx < len(lines) and lines[idx] != "[table]":
        line = lines[idx]
        idx += 1
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise PolicyFileError(f"malformed parameter line {line!r}")
        name, value = (part.strip() for part in line.split("=", 1))
        if name not in _PARAM_FIELDS:
            raise PolicyFileError(f"unknown parameter {name!r}")
        fields[name] = float(value)
    missing = [n for n in _PARAM_FIELDS if n not in fields]
    if missing:
        raise PolicyFileError(f"missing parameters: {', '.join(missing)}")
    if idx == len(lines):
        raise PolicyFileError("missing [table] section")
    params = SystemParams(
        lambda_a=fields["lambda_a"], lambda_b=fields["lambda_b"],
        n_a=int(fields["n_a"]), n_b=int(fields["n_b"]),
        d_max=fields["d_max"], rate_r=fields["rate_r"],
        scale_a=fields["scale_a"], scale_b=fields["scale_b"],
    )
    g = np.full((params.n_a + 1, params.n_b + 1, 4), np.nan)
    pi = np.full((params.n_a + 1, params.n_b + 1), np.nan)
    for line in lines[idx + 1:]:
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 7:
            raise PolicyFileError(f"expected 7 columns, got {len(parts)} in {line!r}")
        i, j = int(parts[0]), int(parts[1])
        if not (0 <= i <= params.n_a and 0 <= j <= params.n_b):
            raise PolicyFileError(f"state ({i}, {j}) outside the buffer grid")
        g[i, j] = [float(v) for v in parts[2:6]]
        pi[i, j] = float(parts[6])
    if np.isnan(g).any() or np.isnan(pi).any():
        raise PolicyFileError("table does not cover every state")
    return params, Policy(g), StationaryDistribution(pi, pi > 0)


def load_policy(path) -> tuple[SystemParams, Policy, StationaryDistribution]:
    with open(path) as fh:
        return loads_policy(fh.read())
