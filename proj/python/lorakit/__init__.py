"""Weight-space analysis and orthogonality-aware merging of low-rank updates."""

from lorakit._core import (
    alignment_metrics,
    frobenius_norm,
    load_tensor_map,
    low_rank_base,
    materialize_adapter,
    merge_vanilla,
    ortho_merge_both,
    ortho_merge_col,
    pass_at_1,
    penalty_grads,
    penalty_value,
    project_col_complement,
    project_row_complement,
    run_toy_scenario,
    safety_score,
    save_tensor_map,
    spectral_norm,
    stable_rank,
    truncated_svd,
)

__all__ = [
    "alignment_metrics",
    "frobenius_norm",
    "load_tensor_map",
    "low_rank_base",
    "materialize_adapter",
    "merge_vanilla",
    "ortho_merge_both",
    "ortho_merge_col",
    "pass_at_1",
    "penalty_grads",
    "penalty_value",
    "project_col_complement",
    "project_row_complement",
    "run_toy_scenario",
    "safety_score",
    "save_tensor_map",
    "spectral_norm",
    "stable_rank",
    "truncated_svd",
]
