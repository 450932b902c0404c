"""Analytic parameter and optimizer-state counts per method.

All figures are exact integers from closed-form expressions; nothing is
measured.  The complex flag doubles every stored value scalar but never the
integer index slots of a sparse representation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, prod

__all__ = ["MemoryReport", "memory_count", "matched_rank_parameter_counts"]

METHODS = ("adam", "galore_matrix", "tucker", "tensorgrad")


@dataclass
class MemoryReport:
    method: str
    weight_params: int
    moment_scalars: int
    factor_scalars: int
    index_slots: int
    complex_doubled: bool
    figures: dict[str, int] = field(default_factory=dict)

    @property
    def state_scalars(self) -> int:
        return self.moment_scalars + self.factor_scalars + self.index_slots


def memory_count(
    method: str,
    dims: tuple[int, ...],
    ranks: tuple[int, ...] | None = None,
    rho: float | None = None,
    matrix_rank: int | None = None,
    matricize_dim: int = 1,
    complex_values: bool = False,
) -> MemoryReport:
    """Closed-form optimizer-state counts for one weight tensor.

    adam:          2 * prod(N)
    galore_matrix: 2 * r * (rows + cols) of the matricization (table row)
    tucker:        moment footprint 2 * prod(R); factor storage sum(N_n * R_n);
                   the parameter footprint prod(R) + sum(N_n R_n) and the
                   uniform-rank table figure 2 r sum(N_n) ride along in figures
    tensorgrad:    2 * prod(r) + 2k moments, sum(N_n r_n) factors, k index slots
    """
    dims = tuple(int(d) for d in dims)
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if any(d < 1 for d in dims):
        raise ValueError("dims must be positive")
    mult = 2 if complex_values else 1
    weight_params = prod(dims)

    if method == "adam":
        return MemoryReport(method, weight_params, mult * 2 * weight_params, 0, 0,
                            complex_values)

    if method == "galore_matrix":
        if matrix_rank is None:
            raise ValueError("galore_matrix needs matrix_rank")
        if not 1 <= matricize_dim < max(2, len(dims)):
            raise ValueError(f"matricize_dim {matricize_dim} out of range")
        rows = prod(dims[:matricize_dim]) if len(dims) > 2 else dims[0]
        cols = weight_params // rows
        if matrix_rank > min(rows, cols):
            raise ValueError(f"rank {matrix_rank} exceeds matricization {(rows, cols)}")
        states = mult * 2 * matrix_rank * (rows + cols)
        return MemoryReport(method, weight_params, states, 0, 0, complex_values,
                            figures={"rows": rows, "cols": cols})

    if ranks is None:
        raise ValueError(f"{method} needs per-mode ranks")
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != len(dims) or any(not 1 <= r <= d for r, d in zip(ranks, dims)):
        raise ValueError(f"ranks {ranks} invalid for dims {dims}")
    core = prod(ranks)
    factor_store = sum(d * r for d, r in zip(dims, ranks))

    if method == "tucker":
        figures = {
            "parameter_footprint": core + factor_store,
            "moment_footprint": 2 * core,
            # factor-storage reading of the uniform-rank table row 2 r sum(N_n)
            "table_row_factor_reading": 2 * ranks[0] * sum(dims),
        }
        return MemoryReport(method, weight_params, mult * 2 * core,
                            mult * factor_store, 0, complex_values, figures=figures)

    # tensorgrad: low-rank moments + k sparse moment entries + factors + indices
    if rho is None:
        raise ValueError("tensorgrad needs a sparse density rho")
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"density {rho} outside (0, 1]")
    k = ceil(rho * weight_params)
    moments = mult * (2 * core + 2 * k)
    return MemoryReport("tensorgrad", weight_params, moments, mult * factor_store,
                        k, complex_values, figures={"sparse_entries": k})


def matched_rank_parameter_counts(n_channels: int, n_modes: int, r: int) -> tuple[int, int]:
    """Factor-storage comparison at matched rank for a (N, N, M, M) weight.

    The matrix route stores both sides of a rank R = r^2 factorization of the
    (N^2 x M^2) reshaping: R * (N^2 + M^2).  The tensor route stores the core
    plus per-mode factors at uniform rank r: r^4 + 2 r N + 2 r M.
    """
    n, m = int(n_channels), int(n_modes)
    if r < 1 or r > min(n, m):
        raise ValueError("rank out of range")
    p_matrix = (r * r) * (n * n + m * m)
    p_tensor = r ** 4 + 2 * r * n + 2 * r * m
    return p_matrix, p_tensor
