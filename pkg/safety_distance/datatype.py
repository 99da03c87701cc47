from dataclasses import asdict, dataclass, field


@dataclass
class Witness:
    x0: list[float]
    time: float
    state: list[float]
    point: list[float]
    unsafe_point: list[float]
    distance: float
    body_point: list[float] | None = None


@dataclass
class DistanceResult:
    problem: str
    degree: int
    tilde_degree: int
    objective: str
    sparse: bool
    status: str
    raw_bound: float | None
    bound: float | None
    dual_bound: float | None
    gap: float | None
    iterations: int
    solve_time: float
    moment_sizes: dict[str, int] = field(default_factory=dict)
    ratios: dict[str, float] = field(default_factory=dict)
    atoms: dict[str, list[float]] | None = None
    peak_time: float | None = None
    certificate: dict | None = None

    def to_dict(self, timings: bool = True) -> dict:
        out = asdict(self)
        if not timings:
            del out["solve_time"]
        return out


@dataclass
class DegreeRecord:
    degree: int
    bound: float | None
    raw_bound: float | None
    status: str
    solve_time: float | None
    error: str | None = None


@dataclass
class ResultRecord:
    problem: str
    objective: str
    results: list[DistanceResult] = field(default_factory=list)
    failures: dict[int, str] = field(default_factory=dict)
    upper_bound: float | None = None
    witness: Witness | None = None
    empirical: bool = False
    monotone: bool = True
    warnings: list[str] = field(default_factory=list)

    def rows(self) -> list[DegreeRecord]:
        rows = [
            DegreeRecord(r.degree, r.bound, r.raw_bound, r.status, r.solve_time)
            for r in self.results
        ]
        rows.extend(
            DegreeRecord(d, None, None, "failed", None, error) for d, error in self.failures.items()
        )
        return sorted(rows, key=lambda row: row.degree)

    def to_dict(self, timings: bool = True) -> dict:
        return {
            "problem": self.problem,
            "objective": self.objective,
            "results": [r.to_dict(timings) for r in self.results],
            "failures": {str(d): e for d, e in sorted(self.failures.items())},
            "upper_bound": self.upper_bound,
            "witness": None if self.witness is None else asdict(self.witness),
            "empirical": self.empirical,
            "monotone": self.monotone,
            "warnings": list(self.warnings),
        }
