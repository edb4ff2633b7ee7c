"""
Exports Service
Plot-ready TSV tables of a fitted BPTD state

Factor tables have one row per country, action or time step. Columns are reordered
for reading: communities by within-community weight (ascending), topics by topic weight
(descending). Network tables cover the most active regime.
"""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import DataError
from src.models.core import Vocabulary
from src.models.params import BPTDState
from src.models.results import Assignments
from src.models.tensors import CountTensor, TokenArrays
from src.services.bptd_model import community_networks, effective_dims, role_rates
from src.services.distributions import RngStream
from src.services.gibbs import allocate_joint, dyad_topic_counts
from src.utils.tsv import write_rows

logger = logging.getLogger(__name__)


def community_order(state: BPTDState) -> np.ndarray:
    return np.argsort(state.eta_within, kind="stable")


def topic_order(state: BPTDState) -> np.ndarray:
    return np.argsort(-state.nu, kind="stable")


def most_active_regime(state: BPTDState) -> int:
    return int(np.argmax(state.rho))


def _labels(vocab: Optional[Vocabulary], n: int) -> List[str]:
    if vocab is None:
        return [str(i) for i in range(n)]
    if len(vocab) != n:
        raise ValueError(f"vocabulary has {len(vocab)} labels for {n} rows")
    return list(vocab.labels)


def write_factor(
    matrix: np.ndarray,
    labels: Sequence[str],
    column_prefix: str,
    order: np.ndarray,
    target: Path,
) -> int:
    header = ["label"] + [f"{column_prefix}{int(c)}" for c in order]
    rows = ([label] + [float(v) for v in matrix[row, order]] for row, label in enumerate(labels))
    return write_rows(target, header, rows)


def write_core(state: BPTDState, target: Path) -> int:
    cells = np.argwhere(np.ones(state.core.shape, dtype=bool))
    rows = ((int(c), int(d), int(k), int(r), float(state.core[c, d, k, r])) for c, d, k, r in cells)
    return write_rows(target, ("sender_community", "receiver_community", "topic", "regime", "rate"), rows)


def write_networks(state: BPTDState, regime: int, target: Path) -> int:
    """Long-format per-topic community-to-community rates, topics in display order"""
    nets = community_networks(state, regime)
    comms = community_order(state)
    rows = (
        (int(k), int(c), int(d), float(nets[k, c, d]))
        for k in topic_order(state) for c in comms for d in comms
    )
    return write_rows(target, ("topic", "sender_community", "receiver_community", "rate"), rows)


def write_weights(state: BPTDState, target: Path) -> int:
    rows = []
    for name in ("eta_within", "eta_between", "nu", "rho"):
        rows.extend((name, idx, float(v)) for idx, v in enumerate(getattr(state, name)))
    rows.append(("delta", 0, state.delta))
    rows.append(("zeta", 0, state.zeta))
    return write_rows(target, ("weight", "index", "value"), rows)


def write_effective_dims(state: BPTDState, threshold_fraction: float, target: Path) -> int:
    eff = effective_dims(state, threshold_fraction)
    totals = state.core.shape[0], state.core.shape[2], state.core.shape[3]
    rows = zip(("communities", "topics", "regimes"), eff, totals)
    return write_rows(target, ("dimension", "effective", "total"), rows, comments=[f"threshold_fraction={threshold_fraction}"])


def write_role_rates(state: BPTDState, topic: int, regime: int, labels: Sequence[str], target: Path) -> int:
    send, recv = role_rates(state, topic, regime)
    comms = community_order(state)
    rows = (
        (label, int(c), float(send[i, c]), float(recv[i, c]))
        for i, label in enumerate(labels) for c in comms
    )
    return write_rows(
        target, ("country", "community", "send_rate", "receive_rate"), rows,
        comments=[f"topic={topic}", f"regime={regime}"],
    )


def write_dyad_topic_counts(
    tokens: TokenArrays,
    assignments: Assignments,
    labels: Sequence[str],
    topic: int,
    regime: int,
    target: Path,
) -> int:
    counts = dyad_topic_counts(tokens, assignments, len(labels), topic, regime)
    rows = (
        (labels[i], labels[j], int(counts[i, j]))
        for i, j in np.argwhere(counts > 0)
    )
    return write_rows(target, ("sender", "receiver", "count"), rows, comments=[f"topic={topic}", f"regime={regime}"])


def reallocate(state: BPTDState, tensor: CountTensor, rng: RngStream) -> Tuple[TokenArrays, Assignments]:
    """
    Token assignments of `tensor` under a saved state, from one exact allocation pass

    Checkpoints keep parameters only, so the dyad-topic table is rebuilt this way.

    Raises:
        DataError: tensor dims differ from the state's country, action or time-step counts
    """
    v, _, a, t = tensor.dims
    expected = (state.theta.shape[0], state.phi.shape[0], state.psi.shape[0])
    if (v, a, t) != expected:
        raise DataError(f"tensor dims (V, A, T) = {(v, a, t)} do not match the state's {expected}")
    tokens = tensor.tokens()
    assignments, _ = allocate_joint(state, tokens, rng)
    return tokens, assignments


def export_state(
    state: BPTDState,
    out_dir: Path,
    countries: Optional[Vocabulary] = None,
    actions: Optional[Vocabulary] = None,
    threshold_fraction: float = 0.05,
    tokens: Optional[TokenArrays] = None,
    assignments: Optional[Assignments] = None,
) -> Dict[str, Path]:
    """
    Write every table of a state under `out_dir`

    Returns:
        Dict[str, Path]: table name to file written
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    country_labels = _labels(countries, state.theta.shape[0])
    action_labels = _labels(actions, state.phi.shape[0])
    regime = most_active_regime(state)
    lead_topic = int(topic_order(state)[0])
    paths = {
        name: out_dir / f"{name}.tsv"
        for name in ("theta", "phi", "psi", "core", "weights", "networks", "effective_dims", "role_rates")
    }

    write_factor(state.theta, country_labels, "c", community_order(state), paths["theta"])
    write_factor(state.phi, action_labels, "k", topic_order(state), paths["phi"])
    write_factor(state.psi, [str(t) for t in range(state.psi.shape[0])], "r", np.arange(state.psi.shape[1]), paths["psi"])
    write_core(state, paths["core"])
    write_weights(state, paths["weights"])
    write_networks(state, regime, paths["networks"])
    write_effective_dims(state, threshold_fraction, paths["effective_dims"])
    write_role_rates(state, lead_topic, regime, country_labels, paths["role_rates"])
    if tokens is not None and assignments is not None:
        paths["dyad_topic_counts"] = out_dir / "dyad_topic_counts.tsv"
        write_dyad_topic_counts(tokens, assignments, country_labels, lead_topic, regime, paths["dyad_topic_counts"])

    logger.info(f"Exported {len(paths)} tables to {out_dir} (regime {regime}, lead topic {lead_topic})")
    return paths
