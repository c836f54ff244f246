import logging
from collections import deque
from typing import Iterator, Literal, Optional, Sequence

from scipy.special import comb

from ensemble_bound.core.exceptions import (
    InfeasibleInstanceError,
    InvalidInputError,
    SolverRefusedError,
)
from ensemble_bound.core.settings import Settings, get_settings
from ensemble_bound.schemas.bounds import (
    AssignmentMatrix,
    BoundResult,
    SolverTag,
    Strategy,
)
from ensemble_bound.schemas.occupancy import InstanceSpec, OccupancyTable
from ensemble_bound.services.occupancy_service import reduce_instance

logger = logging.getLogger(__name__)

Entries = dict[tuple[int, int], int]
State = tuple[int, ...]


def coherence_of(assignment: AssignmentMatrix) -> int:
    """
    Sum of squared entries of a feasible assignment.

    Raises:
        MarginalViolationError: If a class or cell marginal is not met
    """
    assignment.check_marginals()
    # Python ints do not overflow.
    return sum(value * value for value in assignment.entries.values())


def _phi_star(witness: AssignmentMatrix) -> dict[int, int]:
    """Argmax cell of every class row; ties go to the earliest position."""
    best: dict[int, tuple[int, int]] = {}
    for (k, i), value in witness.entries.items():
        current = best.get(k)
        if current is None or (value, -i) > (current[0], -current[1]):
            best[k] = (value, i)
    return {k: best[k][1] for k in range(witness.class_count)}


def _build_result(
    spec: InstanceSpec,
    entries: Entries,
    solver: SolverTag,
    exact: bool,
    **provenance: Optional[int],
) -> BoundResult:
    """
    Package a solver's assignment as a result.

    Args:
        spec: Reduced instance the entries were solved on
        entries: Nonzero assignment entries keyed by (class, cell)
        solver: Solver that produced the entries
        exact: Whether the entries are a proven maximum
        provenance: Solver extras (oracle_mistake_bound, enumerated, states)

    Returns:
        BoundResult with the witness, phi* and the bound on the reduced instance
    """
    witness = AssignmentMatrix(
        class_count=spec.reduced_class_count,
        cell_sizes=list(spec.reduced_cell_sizes),
        class_sizes=spec.row_sizes(),
        entries=entries,
    )
    phi_star = _phi_star(witness)
    coherence = sum(value * value for value in entries.values())
    placed = sum(entries[(k, i)] for k, i in phi_star.items())
    return BoundResult(
        coherence=coherence,
        mistake_bound=spec.reduced_total - placed,
        phi_star=phi_star,
        witness=witness,
        solver=solver,
        exact=exact,
        class_size=spec.class_size,
        removed_pairs=spec.removed_pairs,
        total_coherence=coherence + spec.removed_pairs * spec.class_size**2,
        cells=spec.reduced_cells,
        removed_cells=spec.removed_cells,
        **provenance,
    )


def mistake_bound_of(
    result: BoundResult, spec: InstanceSpec, removed_pairs: int
) -> int:
    """
    Samples the witness places outside their class's phi* cell.

    Removed (size-S cell, class) pairs are matched perfectly and add no
    mistakes.
    """
    witness = result.witness
    if (
        witness.cell_sizes != list(spec.reduced_cell_sizes)
        or witness.class_sizes != spec.row_sizes()
    ):
        raise InvalidInputError("witness does not belong to this instance")
    witness.check_marginals()
    if removed_pairs < 0:
        raise InvalidInputError("removed_pairs must be non-negative")
    matched = removed_pairs * spec.class_size
    placed = sum(witness.entries.get((k, i), 0) for k, i in result.phi_star.items())
    return (spec.reduced_total + matched) - (placed + matched)


def _columns(
    total: int, caps: Sequence[int], prev_same: Optional[Sequence[int]] = None
) -> Iterator[tuple[int, ...]]:
    """
    Yield every split of ``total`` samples over classes with capacities ``caps``.

    ``prev_same[j]`` names an earlier interchangeable class; class ``j`` then
    never takes more than it, so each split is produced once up to relabeling.
    Splits come in descending lexicographic order.
    """
    count = len(caps)
    room = [0] * (count + 1)
    for j in range(count - 1, -1, -1):
        room[j] = room[j + 1] + caps[j]
    column = [0] * count

    def fill(j: int, remaining: int) -> Iterator[tuple[int, ...]]:
        if j == count:
            if remaining == 0:
                yield tuple(column)
            return
        upper = min(caps[j], remaining)
        if prev_same is not None and prev_same[j] >= 0:
            upper = min(upper, column[prev_same[j]])
        lower = max(0, remaining - room[j + 1])
        for amount in range(upper, lower - 1, -1):
            column[j] = amount
            yield from fill(j + 1, remaining - amount)
        column[j] = 0

    yield from fill(0, total)


def estimate_enumeration(cell_sizes: Sequence[int], class_count: int) -> int:
    """Upper bound on brute-force leaves: compositions of every cell but the largest."""
    if class_count <= 1 or len(cell_sizes) <= 1:
        return 1
    estimate = 1
    for size in sorted(cell_sizes)[:-1]:
        estimate *= int(comb(size + class_count - 1, class_count - 1, exact=True))
    return estimate


def bruteforce_refusal(
    spec: InstanceSpec, settings: Optional[Settings] = None
) -> Optional[str]:
    """Reason the brute-force guard rejects ``spec``, or None if it passes."""
    settings = settings or get_settings()
    if spec.reduced_class_count > settings.BRUTEFORCE_MAX_CLASSES:
        return f"K_r = {spec.reduced_class_count} > {settings.BRUTEFORCE_MAX_CLASSES}"
    if spec.largest_cell > settings.BRUTEFORCE_MAX_CELL:
        return f"C_m = {spec.largest_cell} > {settings.BRUTEFORCE_MAX_CELL}"
    if spec.reduced_total > settings.BRUTEFORCE_MAX_TOTAL:
        return f"K_r * S = {spec.reduced_total} > {settings.BRUTEFORCE_MAX_TOTAL}"
    estimate = estimate_enumeration(spec.reduced_cell_sizes, spec.reduced_class_count)
    if estimate > settings.BRUTEFORCE_MAX_ENUMERATION:
        limit = settings.BRUTEFORCE_MAX_ENUMERATION
        return f"enumeration estimate {estimate} > {limit}"
    return None


def solve_bruteforce(
    spec: InstanceSpec, settings: Optional[Settings] = None
) -> BoundResult:
    """
    Exact CB by enumerating every feasible assignment matrix.

    Among coherence-optimal matrices the one with the largest sum of row
    maxima wins, then the lexicographically largest. The minimum implied
    mistake count over *all* feasible matrices is recorded as
    ``oracle_mistake_bound``.

    Raises:
        SolverRefusedError: If the instance exceeds the brute-force guard
    """
    settings = settings or get_settings()
    reason = bruteforce_refusal(spec, settings)
    estimate = estimate_enumeration(spec.reduced_cell_sizes, spec.reduced_class_count)
    if reason is not None:
        raise SolverRefusedError(
            f"brute force refused ({reason}); estimated enumeration size {estimate}",
            estimate,
        )

    class_count = spec.reduced_class_count
    if class_count == 0:
        return _build_result(
            spec, {}, SolverTag.BRUTEFORCE, True, oracle_mistake_bound=0, enumerated=1
        )

    sizes = spec.reduced_cell_sizes
    row_sizes = spec.row_sizes()
    total = spec.reduced_total
    # Largest cell last: its column is whatever capacity remains.
    order = sorted(range(len(sizes)), key=lambda i: (-sizes[i], i))
    order = order[1:] + order[:1]
    last = len(order) - 1

    caps = list(row_sizes)
    row_max = [0] * class_count
    chosen: list[tuple[int, ...]] = []
    best_key: tuple[int, int] = (-1, -1)
    best_flat: tuple[int, ...] = ()
    best_columns: list[tuple[int, ...]] = []
    min_mistakes = total
    leaves = 0

    def flatten(columns: list[tuple[int, ...]]) -> tuple[int, ...]:
        by_position = dict(zip(order, columns))
        return tuple(
            by_position[i][k] for k in range(class_count) for i in range(len(sizes))
        )

    def search(step: int, coherence: int, prev_same: list[int]) -> None:
        nonlocal best_key, best_flat, best_columns, min_mistakes, leaves
        if step == last:
            column = tuple(caps)
            leaves += 1
            leaf_coherence = coherence + sum(h * h for h in column)
            row_sum = sum(max(m, h) for m, h in zip(row_max, column))
            min_mistakes = min(min_mistakes, total - row_sum)
            key = (leaf_coherence, row_sum)
            if key >= best_key:
                columns = chosen + [column]
                flat = flatten(columns)
                if key > best_key or flat > best_flat:
                    best_key, best_flat, best_columns = key, flat, columns
            return

        for column in _columns(sizes[order[step]], tuple(caps), prev_same):
            saved = row_max[:]
            for k, h in enumerate(column):
                caps[k] -= h
                if h > row_max[k]:
                    row_max[k] = h
            chosen.append(column)
            refined = [
                p if p >= 0 and column[p] == column[k] else -1
                for k, p in enumerate(prev_same)
            ]
            search(step + 1, coherence + sum(h * h for h in column), refined)
            chosen.pop()
            row_max[:] = saved
            for k, h in enumerate(column):
                caps[k] += h

    prev_same = []
    for k, size in enumerate(row_sizes):
        earlier = [j for j in range(k) if row_sizes[j] == size]
        prev_same.append(earlier[-1] if earlier else -1)
    search(0, 0, prev_same)

    entries: Entries = {}
    for position, column in zip(order, best_columns):
        for k, h in enumerate(column):
            if h:
                entries[(k, position)] = h
    logger.debug(f"Brute force enumerated {leaves} matrices (estimate {estimate})")
    return _build_result(
        spec,
        entries,
        SolverTag.BRUTEFORCE,
        True,
        oracle_mistake_bound=min_mistakes,
        enumerated=leaves,
    )


def _require_uniform(spec: InstanceSpec, solver: str) -> None:
    if not spec.is_uniform:
        raise InvalidInputError(f"{solver} supports a uniform class size only")


def estimate_dp_memory(spec: InstanceSpec, settings: Optional[Settings] = None) -> int:
    """(C_m + 1)^(K_r - 1) state records."""
    settings = settings or get_settings()
    exponent = max(spec.reduced_class_count - 1, 0)
    return (spec.largest_cell + 1) ** exponent * settings.DP_STATE_RECORD_BYTES


def _advance(state: State, column: Sequence[int]) -> State:
    return tuple(sorted(c - h for c, h in zip(state, column)))


def _equal_runs(state: State) -> list[int]:
    return [
        j - 1 if j > 0 and state[j - 1] == state[j] else -1 for j in range(len(state))
    ]


def solve_exact_dp(
    spec: InstanceSpec,
    memory_budget: Optional[int] = None,
    settings: Optional[Settings] = None,
) -> BoundResult:
    """
    Exact CB by dynamic programming over remaining class capacities.

    Cells are processed in position order. A state is the sorted vector of
    remaining capacities (the last one is implied by the cells still to
    place); cells may be split between classes.

    Raises:
        SolverRefusedError: If the memory estimate exceeds the budget
    """
    settings = settings or get_settings()
    _require_uniform(spec, "exact_dp")
    budget = settings.DP_MEMORY_BUDGET if memory_budget is None else memory_budget
    estimate = estimate_dp_memory(spec, settings)
    if estimate > budget:
        raise SolverRefusedError(
            f"exact DP needs an estimated {estimate} bytes, budget is {budget}; "
            "use the greedy solver",
            estimate,
        )

    class_count = spec.reduced_class_count
    if class_count == 0:
        return _build_result(spec, {}, SolverTag.EXACT_DP, True, states=0)

    sizes = spec.reduced_cell_sizes
    start: State = (spec.class_size,) * class_count

    layers: list[set[State]] = [{start}]
    for size in sizes:
        reached: set[State] = set()
        for state in layers[-1]:
            for column in _columns(size, state, _equal_runs(state)):
                reached.add(_advance(state, column))
        layers.append(reached)

    values: list[dict[State, int]] = [{} for _ in sizes]
    values.append({state: 0 for state in layers[-1]})
    for i in range(len(sizes) - 1, -1, -1):
        following = values[i + 1]
        for state in layers[i]:
            values[i][state] = max(
                sum(h * h for h in column) + following[_advance(state, column)]
                for column in _columns(sizes[i], state, _equal_runs(state))
            )

    caps = list(start)
    entries: Entries = {}
    for i, size in enumerate(sizes):
        target = values[i][tuple(sorted(caps))]
        for column in _columns(size, tuple(caps)):
            rest = values[i + 1][_advance(tuple(caps), column)]
            if sum(h * h for h in column) + rest == target:
                break
        else:
            raise RuntimeError(f"no optimal split found for cell {i}")
        for k, h in enumerate(column):
            if h:
                entries[(k, i)] = h
                caps[k] -= h

    state_count = sum(len(layer) for layer in layers)
    logger.debug(f"Exact DP visited {state_count} states (estimate {estimate} bytes)")
    return _build_result(spec, entries, SolverTag.EXACT_DP, True, states=state_count)


def _descending_positions(
    sizes: Sequence[int], sort: Literal["counting", "comparison"] = "counting"
) -> list[int]:
    """Cell positions by descending size, ties by position."""
    if sort == "comparison":
        return sorted(range(len(sizes)), key=lambda i: (-sizes[i], i))
    buckets: list[list[int]] = [[] for _ in range(max(sizes, default=0) + 1)]
    for position, size in enumerate(sizes):
        buckets[size].append(position)
    return [
        position
        for size in range(len(buckets) - 1, 0, -1)
        for position in buckets[size]
    ]


def solve_greedy(
    spec: InstanceSpec, sort: Literal["counting", "comparison"] = "counting"
) -> BoundResult:
    """
    Largest-first greedy approximation of CB.

    Cells go in descending size to the class with the most remaining
    capacity; a cell larger than that capacity fills the class and the
    remainder continues with the next class. Capacities live in a bucket
    queue, so the pass is linear in cells plus S.

    Raises:
        InfeasibleInstanceError: If the cells do not hold K_r * S samples
    """
    _require_uniform(spec, "greedy")
    class_count = spec.reduced_class_count
    sizes = spec.reduced_cell_sizes
    if class_count == 0:
        return _build_result(spec, {}, SolverTag.GREEDY, True)
    if not sizes:
        raise InvalidInputError("greedy needs at least one cell")
    if sum(sizes) != spec.reduced_total:
        raise InfeasibleInstanceError(
            f"cells hold {sum(sizes)} samples, classes need {spec.reduced_total}"
        )

    capacity = spec.class_size
    caps = [capacity] * class_count
    buckets: list[deque[int]] = [deque() for _ in range(capacity + 1)]
    buckets[capacity].extend(range(class_count))
    top = capacity
    entries: Entries = {}

    for position in _descending_positions(sizes, sort):
        remaining = sizes[position]
        while remaining:
            while top > 0 and not buckets[top]:
                top -= 1
            if top == 0:
                raise InfeasibleInstanceError("classes ran out of capacity")
            k = buckets[top].popleft()
            take = min(remaining, caps[k])
            entries[(k, position)] = entries.get((k, position), 0) + take
            caps[k] -= take
            remaining -= take
            if caps[k]:
                buckets[caps[k]].append(k)

    return _build_result(spec, entries, SolverTag.GREEDY, spec.reduced_total == 0)


def solve(
    spec: InstanceSpec,
    strategy: Strategy = Strategy.AUTO,
    memory_budget: Optional[int] = None,
    settings: Optional[Settings] = None,
) -> BoundResult:
    """Run the requested solver; ``auto`` tries brute force, then DP, then greedy."""
    settings = settings or get_settings()
    strategy = Strategy(strategy)
    if strategy is Strategy.AUTO:
        budget = settings.DP_MEMORY_BUDGET if memory_budget is None else memory_budget
        if bruteforce_refusal(spec, settings) is None:
            strategy = Strategy.BRUTEFORCE
        elif spec.is_uniform and estimate_dp_memory(spec, settings) <= budget:
            strategy = Strategy.EXACT_DP
        else:
            strategy = Strategy.GREEDY
        logger.info(
            f"auto strategy picked {strategy.value} for K_r={spec.reduced_class_count}"
        )

    if strategy is Strategy.BRUTEFORCE:
        return solve_bruteforce(spec, settings)
    if strategy is Strategy.EXACT_DP:
        return solve_exact_dp(spec, memory_budget, settings)
    return solve_greedy(spec)


def bound_pipeline(
    table: OccupancyTable,
    class_count: int,
    class_size: int,
    strategy: Strategy = Strategy.AUTO,
    memory_budget: Optional[int] = None,
    settings: Optional[Settings] = None,
) -> BoundResult:
    """
    Reduce the table, solve, and derive the mistake bound.

    Raises:
        InvalidInputError: If the table is empty
        InfeasibleInstanceError: If N != K * S
        SolverRefusedError: If a forced solver refuses the instance
    """
    if table.total == 0:
        raise InvalidInputError("the occupancy table is empty")
    spec = reduce_instance(table, class_count, class_size)
    result = solve(spec, strategy, memory_budget, settings)
    mistakes = mistake_bound_of(result, spec, spec.removed_pairs)
    logger.info(
        f"{result.solver.value}: coherence {result.total_coherence}, "
        f"mistake bound {mistakes} (exact={result.exact})"
    )
    return result.model_copy(update={"mistake_bound": mistakes})
