"""Lock-step cooperative scheduler for shared-memory algorithms.

A simulated process is a generator.  It yields immediately *before* each
access to a shared object, so the code between two yields is one indivisible
scheduler step containing at most one shared access.  Schedules are either
drawn from a seeded RNG or enumerated exhaustively by replaying choice
prefixes (stateless exploration; generators cannot be copied).
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Generator, Iterator, Optional, Sequence

Step = Generator[None, None, object]


@dataclass
class RunResult:
    choices: list[int]
    branching: list[int]
    steps: dict[int, int]
    finished: set[int]
    results: dict[int, object] = field(default_factory=dict)


class Scheduler:
    """Drives a set of process generators one step at a time."""

    def __init__(self, procs: dict[int, Step]):
        self.procs = dict(procs)
        self.enabled = sorted(self.procs)
        self.steps = {pid: 0 for pid in self.procs}
        self.results: dict[int, object] = {}

    def step(self, pid: int) -> bool:
        """Advance ``pid`` by one step; return ``True`` if it just finished."""
        self.steps[pid] += 1
        try:
            next(self.procs[pid])
        except StopIteration as stop:
            self.results[pid] = stop.value
            self.enabled.remove(pid)
            return True
        return False

    def run_solo(self, pid: int, max_steps: int) -> bool:
        """Run ``pid`` alone; ``False`` if it did not finish within ``max_steps``."""
        for _ in range(max_steps):
            if pid not in self.enabled:
                return True
            self.step(pid)
        return pid not in self.enabled

    def run(
        self,
        choose: Callable[[list[int]], int],
        paused: frozenset = frozenset(),
        max_steps: int = 1_000_000,
    ) -> RunResult:
        choices: list[int] = []
        branching: list[int] = []
        for _ in range(max_steps):
            runnable = [p for p in self.enabled if p not in paused]
            if not runnable:
                break
            idx = choose(runnable)
            choices.append(idx)
            branching.append(len(runnable))
            self.step(runnable[idx])
        else:
            raise RuntimeError("step budget exhausted")
        finished = set(self.procs) - set(self.enabled)
        return RunResult(choices, branching, dict(self.steps), finished, dict(self.results))


def random_chooser(rng: random.Random) -> Callable[[list[int]], int]:
    return lambda runnable: rng.randrange(len(runnable))


def prefix_chooser(prefix: Sequence[int]) -> Callable[[list[int]], int]:
    pos = iter(prefix)
    return lambda runnable: next(pos, 0)


def exhaustive_runs(
    build: Callable[[], dict[int, Step]], limit: Optional[int] = None
) -> Iterator[tuple[RunResult, object]]:
    """Yield ``(run, context)`` for every interleaving of the system ``build`` makes.

    ``build`` returns either a process dict or ``(procs, context)``; the
    context (e.g. a history recorder) is handed back alongside each run.
    """
    prefix: list[int] = []
    count = 0
    while True:
        built = build()
        procs, ctx = built if isinstance(built, tuple) else (built, None)
        run = Scheduler(procs).run(prefix_chooser(prefix))
        yield run, ctx
        count += 1
        if limit is not None and count >= limit:
            return
        i = len(run.choices) - 1
        while i >= 0 and run.choices[i] + 1 >= run.branching[i]:
            i -= 1
        if i < 0:
            return
        prefix = run.choices[:i] + [run.choices[i] + 1]
