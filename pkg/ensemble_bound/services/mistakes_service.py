import logging
from collections import defaultdict
from typing import Iterable, Optional, Sequence

import numpy as np

from ensemble_bound.core.exceptions import InvalidInputError, InvalidRecordError
from ensemble_bound.core.settings import Settings, get_settings
from ensemble_bound.schemas.mistakes import (
    MistakeArc,
    MistakeDecomposition,
    MistakesGraph,
    Placement,
    PlantedTruth,
    RerouteMode,
)
from ensemble_bound.schemas.occupancy import CellIndex, PredictionRecord
from ensemble_bound.utils.seeding import make_rng

logger = logging.getLogger(__name__)

# Above this many cells, distinct cells are drawn by rejection instead of
# numpy's without-replacement choice.
_MAX_DIRECT_CELLS = 2**62


def _decode(codes: np.ndarray, arity: int, label_count: int) -> np.ndarray:
    radix = label_count ** np.arange(arity - 1, -1, -1, dtype=np.int64)
    return (np.asarray(codes, dtype=np.int64)[:, None] // radix) % label_count


def _distinct_cells(
    rng: np.random.Generator, count: int, arity: int, label_count: int
) -> np.ndarray:
    cell_count = label_count**arity
    if cell_count <= _MAX_DIRECT_CELLS:
        codes = rng.choice(cell_count, size=count, replace=False)
        return _decode(codes, arity, label_count)
    seen: set[tuple[int, ...]] = set()
    rows: list[tuple[int, ...]] = []
    while len(rows) < count:
        cell = tuple(int(c) for c in rng.integers(0, label_count, size=arity))
        if cell not in seen:
            seen.add(cell)
            rows.append(cell)
    return np.asarray(rows, dtype=np.int64)


def plant_truth(
    class_count: int,
    class_size: int,
    arity: int,
    label_count: int,
    seed: int,
    placement: Placement = Placement.INJECTIVE,
) -> PlantedTruth:
    """
    Draw the true cell of every class.

    ``independent`` lets each classifier label each class uniformly, so
    classes may collide; ``injective`` gives every class its own cell.

    Raises:
        InvalidInputError: If injective placement has fewer cells than classes
    """
    if min(class_count, class_size, arity, label_count) < 1:
        raise InvalidInputError("K, S, Q and L must all be positive")
    placement = Placement(placement)
    rng = make_rng(seed, 0)
    if placement is Placement.INJECTIVE:
        if label_count**arity < class_count:
            raise InvalidInputError(
                f"injective placement needs L^Q >= K, "
                f"got {label_count}^{arity} < {class_count}"
            )
        cells = _distinct_cells(rng, class_count, arity, label_count)
    else:
        cells = rng.integers(0, label_count, size=(class_count, arity))
    return PlantedTruth(
        class_count=class_count,
        class_size=class_size,
        arity=arity,
        label_count=label_count,
        class_cells={k: tuple(int(c) for c in cells[k]) for k in range(class_count)},
        seed=seed,
        placement=placement,
    )


def plant_correlated_truth(
    class_count: int,
    class_size: int,
    label_count: int,
    agreement: float,
    seed: int,
) -> PlantedTruth:
    """
    Two-classifier truth; classifier 2 copies classifier 1 with probability
    ``agreement``.

    Classifier 1 labels classes injectively when L >= K, uniformly otherwise;
    a class that is not copied gets a uniform label from classifier 2.
    """
    if min(class_count, class_size, label_count) < 1:
        raise InvalidInputError("K, S and L must all be positive")
    if not 0.0 <= agreement <= 1.0:
        raise InvalidInputError(f"agreement {agreement} outside [0, 1]")
    rng = make_rng(seed, 0)
    if label_count >= class_count:
        first = rng.permutation(label_count)[:class_count]
    else:
        first = rng.integers(0, label_count, size=class_count)
    copied = rng.random(class_count) < agreement
    second = np.where(copied, first, rng.integers(0, label_count, size=class_count))
    cells = {k: (int(first[k]), int(second[k])) for k in range(class_count)}
    distinct = len(set(cells.values())) == class_count
    return PlantedTruth(
        class_count=class_count,
        class_size=class_size,
        arity=2,
        label_count=label_count,
        class_cells=cells,
        seed=seed,
        placement=Placement.INJECTIVE if distinct else Placement.INDEPENDENT,
    )


def simulate_outputs(
    truth: PlantedTruth,
    mistakes: int,
    seed: int,
    mode: RerouteMode = RerouteMode.CLASS,
) -> tuple[np.ndarray, np.ndarray, int]:
    """
    Array form of :func:`inject_mistakes`.

    Returns:
        (outputs of shape (K*S, Q), true class per sample, actual mistakes)
    """
    total = truth.sample_count
    if not 0 <= mistakes <= total:
        raise InvalidInputError(f"m = {mistakes} outside [0, {total}]")
    mode = RerouteMode(mode)
    if mode is RerouteMode.CLASS and truth.class_count < 2 and mistakes:
        raise InvalidInputError("rerouting to another class needs K >= 2")
    if mode is RerouteMode.CELL and truth.label_count**truth.arity < 2 and mistakes:
        raise InvalidInputError("rerouting to another cell needs L^Q >= 2")
    if mode is RerouteMode.OUTPUT and truth.label_count < 2 and mistakes:
        raise InvalidInputError("changing an output needs L >= 2")

    rng = make_rng(seed, 1)
    class_cells = np.asarray(
        [truth.class_cells[k] for k in range(truth.class_count)], dtype=np.int64
    )
    true_labels = np.repeat(np.arange(truth.class_count), truth.class_size)
    outputs = class_cells[true_labels].copy()

    rerouted = rng.choice(total, size=mistakes, replace=False)
    if mode is RerouteMode.CLASS:
        if mistakes:
            draws = rng.integers(0, truth.class_count - 1, size=mistakes)
        else:
            draws = np.empty(0, dtype=np.int64)
        sources = true_labels[rerouted]
        # Skip over the sample's own class: uniform over the K - 1 others.
        targets = draws + (draws >= sources)
        outputs[rerouted] = class_cells[targets]
    elif mode is RerouteMode.OUTPUT:
        columns = rng.integers(0, truth.arity, size=mistakes)
        shifts = rng.integers(1, max(truth.label_count, 2), size=mistakes)
        changed = outputs[rerouted, columns] + shifts
        outputs[rerouted, columns] = changed % truth.label_count
    else:
        for index in rerouted:
            own = tuple(outputs[index])
            while True:
                cell = rng.integers(0, truth.label_count, size=truth.arity)
                if tuple(cell) != own:
                    break
            outputs[index] = cell

    moved = (outputs != class_cells[true_labels]).any(axis=1)
    return outputs, true_labels, int(moved.sum())


def records_from_arrays(
    outputs: np.ndarray, true_labels: Sequence[int], class_size: int
) -> list[PredictionRecord]:
    """Prediction records with ids of the form ``c<class>-<index>``."""
    return [
        PredictionRecord(
            sample_id=f"c{int(k)}-{index % class_size}",
            outputs=tuple(int(v) for v in row),
            true_label=int(k),
        )
        for index, (row, k) in enumerate(zip(outputs, true_labels))
    ]


def inject_mistakes(
    truth: PlantedTruth,
    mistakes: int,
    seed: int,
    mode: RerouteMode = RerouteMode.CLASS,
) -> tuple[list[PredictionRecord], int]:
    """
    Reroute exactly ``mistakes`` samples, chosen uniformly without replacement.

    In class mode a rerouted sample takes the cell of a class drawn uniformly
    from the K - 1 others. In output mode one classifier, drawn uniformly,
    switches to one of its L - 1 other labels. ``actual_mistakes`` counts
    rerouted samples that really left their true cell.

    Returns:
        (records with true_label filled, actual mistakes)
    """
    outputs, true_labels, actual = simulate_outputs(truth, mistakes, seed, mode)
    records = records_from_arrays(outputs, true_labels, truth.class_size)
    logger.debug(f"Injected {mistakes} reroutes, {actual} actual mistakes")
    return records, actual


def build_mistakes_graph(
    truth: PlantedTruth, records: Iterable[PredictionRecord]
) -> MistakesGraph:
    """
    One arc per sample observed outside its true cell.

    Raises:
        InvalidRecordError: If a record lacks its true label
    """
    nodes: set[CellIndex] = set()
    arcs: list[MistakeArc] = []
    for record in records:
        if record.true_label is None:
            raise InvalidRecordError("true_label is required", record.sample_id)
        if record.true_label >= truth.class_count or len(record.outputs) != truth.arity:
            raise InvalidRecordError(
                "does not match the planted truth", record.sample_id
            )
        source = truth.class_cells[record.true_label]
        target = tuple(record.outputs)
        if source == target:
            continue
        nodes.update((source, target))
        arcs.append(
            MistakeArc(source=source, target=target, sample_id=record.sample_id)
        )
    return MistakesGraph(nodes=nodes, arcs=arcs)


def _path_hidden(length: int) -> int:
    """Interior arcs of a path; the first and last arcs are visible."""
    return max(0, length - 2)


def greedy_decomposition(graph: MistakesGraph) -> MistakeDecomposition:
    """Cycles first, then maximal paths from the remaining DAG."""
    arcs = graph.arcs
    outgoing: dict[CellIndex, list[int]] = defaultdict(list)
    order = sorted(range(len(arcs)), key=lambda a: (arcs[a].target, arcs[a].sample_id))
    for index in order:
        outgoing[arcs[index].source].append(index)
    used = [False] * len(arcs)

    def live(node: CellIndex, excluded: set[CellIndex]) -> Optional[int]:
        for index in outgoing.get(node, ()):
            if not used[index] and arcs[index].target not in excluded:
                return index
        return None

    hidden = cycles = 0
    # Nodes that cannot lie on a cycle of the remaining arcs.
    dead: set[CellIndex] = set()
    while True:
        starts = [
            n for n in sorted(outgoing) if n not in dead and live(n, dead) is not None
        ]
        if not starts:
            break
        walk_nodes = [starts[0]]
        walk_arcs: list[int] = []
        position = {starts[0]: 0}
        while True:
            node = walk_nodes[-1]
            index = live(node, dead)
            if index is None:
                dead.add(node)
                del position[node]
                walk_nodes.pop()
                if not walk_arcs:
                    break
                walk_arcs.pop()
                continue
            head = arcs[index].target
            if head in position:
                cycle = walk_arcs[position[head] :] + [index]
                for a in cycle:
                    used[a] = True
                hidden += len(cycle)
                cycles += 1
                break
            position[head] = len(walk_nodes)
            walk_nodes.append(head)
            walk_arcs.append(index)

    # The remaining arcs form a DAG; peel maximal paths from its sources.
    indegree: dict[CellIndex, int] = defaultdict(int)
    for index, arc in enumerate(arcs):
        if not used[index]:
            indegree[arc.target] += 1
    visible = paths = 0
    while True:
        sources = [
            n
            for n in sorted(outgoing)
            if indegree[n] == 0 and live(n, set()) is not None
        ]
        if not sources:
            break
        node, length = sources[0], 0
        while (index := live(node, set())) is not None:
            used[index] = True
            node = arcs[index].target
            indegree[node] -= 1
            length += 1
        paths += 1
        hidden += _path_hidden(length)
        visible += length - _path_hidden(length)

    return MistakeDecomposition(
        hidden=hidden,
        visible=visible,
        cycles_used=cycles,
        paths_used=paths,
        exact=False,
    )


def exact_decomposition(graph: MistakesGraph) -> MistakeDecomposition:
    """Exhaustive search for the cover by simple cycles and paths hiding most arcs."""
    arcs = graph.arcs
    total = len(arcs)
    best = (-1, 0, 0)

    def pieces_through(first: int, free: set[int]) -> list[tuple[list[int], bool]]:
        """Simple paths and cycles that use arc ``first`` and only free arcs."""
        found: list[tuple[list[int], bool]] = []
        start, end = arcs[first].source, arcs[first].target

        def backward(piece: list[int], visited: set[CellIndex]) -> None:
            found.append((piece, False))
            head = arcs[piece[0]].source
            for a in free:
                tail = arcs[a].source
                if a not in piece and arcs[a].target == head and tail not in visited:
                    backward([a] + piece, visited | {tail})

        def forward(piece: list[int], visited: set[CellIndex]) -> None:
            tail = arcs[piece[-1]].target
            backward(piece, visited)
            for a in free:
                if a in piece or arcs[a].source != tail:
                    continue
                if arcs[a].target == start:
                    found.append((piece + [a], True))
                elif arcs[a].target not in visited:
                    forward(piece + [a], visited | {arcs[a].target})

        forward([first], {start, end})
        return found

    def search(free: set[int], hidden: int, cycles: int, paths: int) -> None:
        nonlocal best
        if not free:
            # most hidden arcs first, then fewest pieces
            if (hidden, -(cycles + paths)) > (best[0], -(best[1] + best[2])):
                best = (hidden, cycles, paths)
            return
        first = min(free)
        for piece, closed in pieces_through(first, free - {first}):
            gained = len(piece) if closed else _path_hidden(len(piece))
            search(
                free - set(piece),
                hidden + gained,
                cycles + closed,
                paths + (not closed),
            )

    search(set(range(total)), 0, 0, 0)
    hidden, cycles, paths = best if total else (0, 0, 0)
    return MistakeDecomposition(
        hidden=hidden,
        visible=total - hidden,
        cycles_used=cycles,
        paths_used=paths,
        exact=True,
    )


def decompose_mistakes(
    graph: MistakesGraph,
    exact_limit: Optional[int] = None,
    settings: Optional[Settings] = None,
) -> MistakeDecomposition:
    """
    Split mistakes into hidden (cycle or path-interior arcs) and visible ones.

    Graphs with at most ``exact_limit`` arcs get the exhaustive cover; larger
    ones the greedy: cycles first, each found by walking from the smallest
    cell with a live out-arc, then maximal paths from the remaining DAG.
    """
    if exact_limit is None:
        exact_limit = (settings or get_settings()).EXACT_COVER_MAX_ARCS
    if graph.arc_count <= exact_limit:
        return exact_decomposition(graph)
    return greedy_decomposition(graph)
