"""Seeded bit-flip injection into protected parameter words and fault campaigns.

Every run draws from its own generator, derived from ``(master_seed, run_index)``
through :class:`numpy.random.SeedSequence`, so a campaign gives the same
numbers whatever the worker count or execution order.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import binom
from stable_baselines3.common.logger import Logger

from .artifacts import dumps_json
from .constants import CI_Z, SDC_DELTA, FaultMode, TargetMask
from .errors import CampaignError, FaultModelError, LayoutError
from .tensor import Dataset, Model, evaluate
from .quantizer import QuantizedModel
from .wordpack import ProtectedImage, WordLayout, decode, encode, protect

_RUN_STREAM = 0
_SUBSET_STREAM = 1
_SAMPLE_STREAM = 2


@dataclass(frozen=True)
class FaultModel:
    mode: FaultMode = FaultMode.BERNOULLI
    p: float = 0.0
    k: int = 0
    target_mask: TargetMask = TargetMask.WHOLE_WORD
    master_seed: int = 0
    bit_position: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", FaultMode(self.mode))
        object.__setattr__(self, "target_mask", TargetMask(self.target_mask))
        if not 0.0 <= self.p <= 1.0:
            raise FaultModelError(f"bit error rate must be in [0, 1], got {self.p}")
        if self.k < 0:
            raise FaultModelError(f"k must be >= 0, got {self.k}")
        if not 0 <= self.master_seed < 2**64:
            raise FaultModelError(f"master_seed must be an unsigned 64-bit integer, got {self.master_seed}")
        if self.target_mask == TargetMask.SINGLE_BIT and self.bit_position is None:
            raise FaultModelError("single_bit target needs bit_position")

    def mask(self, layout: WordLayout) -> int:
        if self.target_mask == TargetMask.WHOLE_WORD:
            return layout.word_mask
        if self.target_mask == TargetMask.VALUE_BITS_ONLY:
            return layout.value_mask
        if self.target_mask == TargetMask.PROTECTION_BITS_ONLY:
            return layout.copies_mask
        if self.target_mask == TargetMask.MSB_GROUP_ONLY:
            return layout.msb_group_mask
        if not 0 <= self.bit_position < layout.word_width:
            raise FaultModelError(
                f"bit_position {self.bit_position} outside a {layout.word_width}-bit word"
            )
        return 1 << self.bit_position

    def positions(self, layout: WordLayout) -> np.ndarray:
        mask = self.mask(layout)
        return np.array([i for i in range(layout.word_width) if (mask >> i) & 1], dtype=np.uint64)

    @property
    def rate(self) -> float | None:
        return self.p if self.mode == FaultMode.BERNOULLI else None

    def to_dict(self) -> dict:
        data = {
            "mode": self.mode.value,
            "target_mask": self.target_mask.value,
            "master_seed": self.master_seed,
        }
        if self.mode == FaultMode.BERNOULLI:
            data["p"] = self.p
        else:
            data["k"] = self.k
        if self.bit_position is not None:
            data["bit_position"] = self.bit_position
        return data


def run_rng(master_seed: int, run_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(_RUN_STREAM, run_index)))


def inject(words: np.ndarray, layout: WordLayout, fm: FaultModel, run_index: int) -> np.ndarray:
    """Return a faulted copy of ``words``; the input array is never modified."""
    words = np.asarray(words)
    positions = fm.positions(layout)
    total = words.size * positions.size
    rng = run_rng(fm.master_seed, run_index)
    if fm.mode == FaultMode.BERNOULLI:
        k = int(rng.binomial(total, fm.p)) if total else 0
    else:
        k = fm.k
        if k > total:
            raise FaultModelError(f"k={k} exceeds the {total} targeted bits")
    faulted = words.copy()
    if k == 0:
        return faulted
    chosen = rng.choice(total, size=k, replace=False)
    word_idx, bit_idx = np.divmod(chosen, positions.size)
    flips = np.zeros(words.size, dtype=np.uint64)
    np.bitwise_or.at(flips, word_idx, np.uint64(1) << positions[bit_idx])
    flat = faulted.reshape(-1)
    flat ^= flips.astype(words.dtype)
    return faulted


def count_flips(before: np.ndarray, after: np.ndarray) -> int:
    diff = np.ascontiguousarray(np.bitwise_xor(before, after))
    return int(np.unpackbits(diff.view(np.uint8)).sum())


def analytic_msb_error_prob(p: float, votes: int) -> float:
    """Probability a majority vote over ``votes`` independently flipped copies is wrong."""
    if not 0.0 <= p <= 1.0:
        raise FaultModelError(f"p must be in [0, 1], got {p}")
    if votes < 1 or votes % 2 == 0:
        raise FaultModelError(f"vote count must be odd, got {votes}")
    # wrong when more than half of the votes flipped
    return float(binom.sf(votes // 2, votes, p))


def simulate_msb_error_rate(p: float, layout: WordLayout, n_words: int, seed: int) -> float:
    """Monte-Carlo fraction of words whose decoded MSB is wrong after flips in the vote group."""
    limit = (1 << (layout.value_bits - 1)) - 1
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_SAMPLE_STREAM,)))
    q = rng.integers(-limit, limit + 1, size=n_words)
    words = encode(q, layout)
    faulted = inject(words, layout, FaultModel(FaultMode.BERNOULLI, p, 0, TargetMask.MSB_GROUP_ONLY, seed), 0)
    decoded, _ = decode(faulted, layout)
    msb = layout.value_bits - 1
    wrong = ((decoded >> msb) & 1) != ((q >> msb) & 1)
    return float(np.count_nonzero(wrong)) / n_words


# ─────────────────────────────────────────────────────────────────────────────
# campaigns
# ─────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Campaign:
    fault_model: FaultModel
    n_runs: int = 30
    eval_subset_size: int | None = None
    record_per_run: bool = True
    sdc_delta: float = SDC_DELTA

    def __post_init__(self):
        if self.n_runs < 1:
            raise CampaignError(f"n_runs must be >= 1, got {self.n_runs}")
        if self.eval_subset_size is not None and self.eval_subset_size < 1:
            raise CampaignError(f"eval_subset_size must be >= 1, got {self.eval_subset_size}")


@dataclass(frozen=True)
class RunRecord:
    run_index: int
    accuracy: float
    flips: int
    corrections: int


@dataclass
class CampaignResult:
    label: str
    fault_model: dict
    n_runs: int
    eval_subset_size: int
    clean_accuracy: float
    accuracies: list[float]
    mean: float
    std: float
    ci_half_width: float
    correction_events: int
    sdc_rate: float
    sdc_delta: float
    records: list[RunRecord] = field(default_factory=list)

    @property
    def accuracy_drop(self) -> float:
        return self.clean_accuracy - self.mean

    @property
    def ci_low(self) -> float:
        return self.mean - self.ci_half_width

    @property
    def ci_high(self) -> float:
        return self.mean + self.ci_half_width

    def to_dict(self) -> dict:
        data = asdict(self)
        data["accuracy_drop"] = self.accuracy_drop
        return data

    def to_json(self) -> str:
        return dumps_json(self.to_dict())

    def csv_rows(self) -> list[tuple]:
        return [(r.run_index, r.accuracy, r.flips, r.corrections) for r in self.records]

    @classmethod
    def from_dict(cls, data: dict) -> "CampaignResult":
        fields = {k: v for k, v in data.items() if k != "accuracy_drop"}
        fields["records"] = [RunRecord(**r) for r in data.get("records", [])]
        return cls(**fields)


CSV_COLUMNS = ("run_index", "accuracy", "flips", "corrections")


def summarize(accuracies: list[float]) -> tuple[float, float, float]:
    """Mean, sample standard deviation and normal-approximation 95% CI half-width."""
    values = np.asarray(accuracies, dtype=np.float64)
    mean = float(values.mean())
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return mean, std, CI_Z * std / math.sqrt(values.size)


def select_subset(dataset: Dataset, size: int | None, master_seed: int) -> Dataset:
    """Fixed evaluation subset for a seed: the same images in every run."""
    if size is None or size == len(dataset):
        return dataset
    if size > len(dataset):
        raise CampaignError(f"eval_subset_size {size} exceeds dataset size {len(dataset)}")
    rng = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(_SUBSET_STREAM,)))
    return dataset.subset(np.sort(rng.choice(len(dataset), size=size, replace=False)))


@dataclass(eq=False)
class _RunTask:
    image: ProtectedImage
    fault_model: FaultModel
    dataset: Dataset

    def __call__(self, run_index: int) -> RunRecord:
        faulted = inject(self.image.words, self.image.layout, self.fault_model, run_index)
        model, corrections = self.image.restore(faulted)
        return RunRecord(
            run_index,
            evaluate(model, self.dataset),
            count_flips(self.image.words, faulted),
            corrections,
        )


_worker_task: _RunTask | None = None


def _init_worker(task: _RunTask) -> None:
    global _worker_task
    _worker_task = task


def _run_in_worker(run_index: int) -> RunRecord:
    return _worker_task(run_index)


def _execute(task: _RunTask, n_runs: int, jobs: int) -> list[RunRecord]:
    if jobs <= 1 or n_runs == 1:
        return [task(i) for i in range(n_runs)]
    workers = min(jobs, n_runs)
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(task,)) as ex:
        return list(ex.map(_run_in_worker, range(n_runs), chunksize=max(1, n_runs // (4 * workers))))


def run_campaign(
    source: Model | QuantizedModel | ProtectedImage,
    layout: WordLayout | None,
    campaign: Campaign,
    dataset: Dataset,
    jobs: int = 1,
    logger: Logger | None = None,
) -> CampaignResult:
    """Inject, decode, rebuild and evaluate ``campaign.n_runs`` times."""
    if isinstance(source, ProtectedImage):
        if layout is not None and layout != source.layout:
            raise LayoutError(f"image layout {source.layout.label} != requested {layout.label}")
        image = source
    else:
        image = protect(source, layout)
    fm = campaign.fault_model
    targeted = image.n_params * fm.positions(image.layout).size
    if fm.mode == FaultMode.EXACT_K and fm.k > targeted:
        raise FaultModelError(f"k={fm.k} exceeds the {targeted} targeted bits")

    subset = select_subset(dataset, campaign.eval_subset_size, fm.master_seed)
    clean_model, _ = image.restore()
    clean_accuracy = evaluate(clean_model, subset)

    records = _execute(_RunTask(image, fm, subset), campaign.n_runs, jobs)
    accuracies = [r.accuracy for r in records]
    mean, std, ci = summarize(accuracies)
    threshold = clean_accuracy - campaign.sdc_delta
    result = CampaignResult(
        label=image.layout.label,
        fault_model=fm.to_dict(),
        n_runs=campaign.n_runs,
        eval_subset_size=len(subset),
        clean_accuracy=clean_accuracy,
        accuracies=accuracies,
        mean=mean,
        std=std,
        ci_half_width=ci,
        correction_events=sum(r.corrections for r in records),
        sdc_rate=sum(a < threshold for a in accuracies) / len(accuracies),
        sdc_delta=campaign.sdc_delta,
        records=records if campaign.record_per_run else [],
    )

    if logger is not None:
        for r in records:
            logger.record("campaign/accuracy", r.accuracy)
            logger.record("campaign/flips", r.flips)
            logger.record("campaign/corrections", r.corrections)
            logger.dump(step=r.run_index)
        logger.info(
            f"{result.label}: mean accuracy {mean:.4f} ± {ci:.4f} over {campaign.n_runs} runs "
            f"(clean {clean_accuracy:.4f}, {result.correction_events} corrections)"
        )
    return result


# ─────────────────────────────────────────────────────────────────────────────
# per-bit resilience
# ─────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class BitSensitivity:
    bit: int
    mean: float
    ci_half_width: float
    accuracy_drop: float


def bit_sensitivity(
    image: ProtectedImage,
    dataset: Dataset,
    p: float,
    n_runs: int,
    master_seed: int,
    eval_subset_size: int | None = None,
    jobs: int = 1,
) -> list[BitSensitivity]:
    """Campaign per bit position of the stored word, lowest bit first."""
    out = []
    for bit in range(image.layout.word_width):
        fm = FaultModel(FaultMode.BERNOULLI, p, 0, TargetMask.SINGLE_BIT, master_seed, bit)
        result = run_campaign(image, None, Campaign(fm, n_runs, eval_subset_size, False), dataset, jobs)
        out.append(BitSensitivity(bit, result.mean, result.ci_half_width, result.accuracy_drop))
    return out
