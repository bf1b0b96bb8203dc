import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from src.core.config import Strategy
from src.core.errors import ContractError, NonFiniteError, TrainingAborted
from src.components.checkpoint import RunState, load_checkpoint, save_checkpoint
from src.components.data import augment_config_for, partition, shuffle_cases, steps_per_subset
from src.components.network import build_model
from src.components.optim import LrSchedule, MomentumPolicy, cosine_lr, init_optimizer
from src.components.selection import (
    ModelCorrectness, SelectionOutcome, Termination, lexicase_select, random_select, tournament_select,
)
from src.entities.candidate import Candidate
from src.utils.logs import log_event
from src.utils.timer import ThroughputCounter

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
CHECKPOINT_FILE = "checkpoint.lxgd"


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    strategy: str
    selected: int
    train_accuracy: object
    cases_consumed: int
    selection_evaluations: int
    termination: object
    survivor_trace: tuple
    steps: int
    lineage_steps: int
    lr: float
    mean_loss: tuple
    subset_sizes: tuple
    wall_time: float
    samples_per_second: float

    TIMING_FIELDS = ("wall_time", "samples_per_second")

    def to_dict(self):
        out = asdict(self)
        out["survivor_trace"] = list(self.survivor_trace)
        out["mean_loss"] = list(self.mean_loss)
        out["subset_sizes"] = list(self.subset_sizes)
        return out

    def deterministic_view(self):
        """Every field except wall-clock timings"""
        out = self.to_dict()
        for name in self.TIMING_FIELDS:
            out.pop(name)
        return out


def effective_policy(cfg):
    """
    Momentum policy actually applied. With a single candidate there is no
    selection event to reset at, so Reset carries the velocity like Inherit
    (plain momentum SGD); NoMomentum stays as is.
    """
    if cfg.candidates == 1 and cfg.momentum_policy is MomentumPolicy.RESET:
        return MomentumPolicy.INHERIT
    return cfg.momentum_policy


def steps_per_generation(cfg, n):
    """Optimizer steps of the largest subset in one generation"""
    return steps_per_subset(-(-n // cfg.candidates), cfg.batch_size)


def build_schedule(cfg, n, generations=None):
    """Cosine schedule over every step the selected lineage will take"""
    generations = cfg.total_generations() if generations is None else generations
    horizon = max(1, generations * steps_per_generation(cfg, n))
    return LrSchedule(eta_max=cfg.lr, eta_min=cfg.lr_min, horizon=horizon)


def generation_rng(seed, generation):
    """Stream for one generation's partition, case order and random picks"""
    return np.random.default_rng([int(seed), int(generation)])


def initial_parent(cfg, dataset):
    model = build_model(cfg.model, dataset.sample_shape, dataset.num_classes,
                        np.random.default_rng(cfg.seed), hidden=cfg.hidden,
                        conv_channels=cfg.conv_channels)
    momentum = 0.0 if cfg.momentum_policy is MomentumPolicy.NONE else cfg.momentum
    return Candidate(id=0, model=model, opt=init_optimizer(model, momentum), rng_seed=cfg.seed)


def clone_parent(parent, p, policy, generation=0, momentum=0.9):
    """p offspring with the parent's weights and per-policy optimizer states"""
    if p < 1:
        raise ContractError(f"population size must be >= 1, got {p}")
    return [parent.spawn(index, generation, policy, momentum) for index in range(p)]


def _select(cfg, trained, dataset, rng, executor):
    """
    Choose the next parent. Returns (outcome, per-candidate accuracy or None,
    correctness evaluations the selection itself needed). Recorded accuracies
    are filled in after lexicase has run, from the same cache.
    """
    p = len(trained)
    cases = shuffle_cases(len(dataset), rng).truncated(cfg.selection_cases)
    provider = ModelCorrectness([c.model for c in trained], dataset, executor)
    accuracies = None
    if cfg.strategy is Strategy.TOURNAMENT:
        accuracies = provider.accuracies(range(p), cases.order)

    if cfg.strategy is Strategy.LEXICASE:
        outcome = lexicase_select(provider, range(p), cases, rng, cfg.selection_mode,
                                  cfg.selection_window, cfg.trace_cap)
    elif cfg.strategy is Strategy.TOURNAMENT:
        outcome = SelectionOutcome(tournament_select(accuracies, rng), len(cases), None)
    elif cfg.strategy is Strategy.RANDOM:
        outcome = SelectionOutcome(random_select(p, rng), 0, None)
    else:
        outcome = SelectionOutcome(0, 0, Termination.SINGLE_SURVIVOR)
    evaluations = provider.evaluations
    if accuracies is None and cfg.record_train_accuracy:
        accuracies = provider.accuracies(range(p), cases.order)
    return outcome, accuracies, evaluations


def run_generation(parent, cfg, dataset, rng, generation=0, schedule=None, executor=None):
    """
    One generation: clone the parent, mutate every offspring by SGD on its
    own disjoint subset, then select the next parent on the un-augmented
    training set.
    """
    p = cfg.candidates
    if len(dataset) < p:
        raise ContractError(f"dataset of {len(dataset)} samples is smaller than population {p}")
    schedule = schedule or build_schedule(cfg, len(dataset))
    augment_cfg = augment_config_for(dataset.kind, cfg.augment, cfg.crop_padding, cfg.hflip_prob)
    started = time.perf_counter()
    counter = ThroughputCounter().start()

    offspring = clone_parent(parent, p, effective_policy(cfg), generation, cfg.momentum)
    subsets = partition(len(dataset), p, rng)
    lr = float(schedule.eta_max)

    def mutate(pair):
        candidate, indices = pair
        try:
            return candidate.mutate(indices, dataset, schedule, cfg.batch_size, augment_cfg, cfg.weight_decay)
        except NonFiniteError as e:
            raise TrainingAborted(f"candidate {candidate.id} diverged in generation {generation}: {e}",
                                  candidate_id=candidate.id, generation=generation) from e

    pairs = list(zip(offspring, subsets.assignments))
    results = list(executor.map(mutate, pairs) if executor is not None else map(mutate, pairs))
    for result in results:
        counter.update(result.samples)
    trained = [result.candidate for result in results]

    outcome, accuracies, evaluations = _select(cfg, trained, dataset, rng, executor)
    chosen = results[outcome.selected]
    if chosen.steps:
        lr = cosine_lr(schedule, chosen.candidate.opt.step_counter - 1)
    counter.stop()

    termination = outcome.termination.value if outcome.termination is not None else None
    record = GenerationRecord(
        generation=generation,
        strategy=cfg.strategy.value,
        selected=outcome.selected,
        train_accuracy=None if accuracies is None else [float(a) for a in accuracies],
        cases_consumed=outcome.cases_consumed,
        selection_evaluations=evaluations,
        termination=termination,
        survivor_trace=tuple(outcome.trace),
        steps=chosen.steps,
        lineage_steps=chosen.candidate.opt.step_counter,
        lr=float(lr),
        mean_loss=tuple(result.mean_loss for result in results),
        subset_sizes=tuple(subsets.sizes()),
        wall_time=time.perf_counter() - started,
        samples_per_second=counter.rate,
    )
    log_event(logger, "selection", generation=generation, strategy=cfg.strategy.value,
              selected=outcome.selected, cases_consumed=outcome.cases_consumed,
              termination=termination, survivor_trace=list(outcome.trace))
    new_parent = Candidate(0, chosen.candidate.model, chosen.candidate.opt, chosen.candidate.rng_seed)
    return new_parent, record


class Trainer:
    """
    Drives a whole run: builds the initial parent, loops over generations,
    streams records to ``metrics.jsonl`` and checkpoints every
    ``checkpoint_every`` generations and at the end.

    A resumed run takes the parent, the generation index and the schedule
    horizon from the checkpoint, so it continues the interrupted run's
    cosine schedule instead of starting a new one.
    """
    def __init__(self, cfg, dataset, out_dir=None, resume_from=None):
        self.cfg = cfg
        self.dataset = dataset
        self.out_dir = out_dir
        self.generations = cfg.total_generations()
        self.schedule = build_schedule(cfg, len(dataset), self.generations)
        self.records = []
        self.start_generation = 0

        if resume_from is not None:
            checkpoint = load_checkpoint(resume_from)
            if checkpoint.opt is None or checkpoint.run_state is None:
                raise ContractError(f"checkpoint {resume_from} has no optimizer/run state to resume from")
            state = checkpoint.run_state
            self.parent = Candidate(0, checkpoint.model, checkpoint.opt, state.lineage_seed)
            self.start_generation = state.generation
            if state.horizon and state.horizon != self.schedule.horizon:
                logger.warning("Keeping the checkpoint's schedule horizon %d (config gives %d)",
                               state.horizon, self.schedule.horizon)
                self.schedule = replace(self.schedule, horizon=state.horizon)
            logger.info("Resuming from %s at generation %d", resume_from, self.start_generation)
        else:
            self.parent = initial_parent(cfg, dataset)

    @property
    def metrics_path(self):
        return os.path.join(self.out_dir, METRICS_FILE) if self.out_dir else None

    @property
    def checkpoint_path(self):
        return os.path.join(self.out_dir, CHECKPOINT_FILE) if self.out_dir else None

    def _prepare_metrics(self):
        """Start a fresh file, or drop records past the resume point"""
        if not os.path.exists(self.metrics_path):
            return
        if self.start_generation == 0:
            os.remove(self.metrics_path)
            return
        with open(self.metrics_path, "r") as f:
            kept = [line for line in f if line.strip()
                    and json.loads(line)["generation"] < self.start_generation]
        with open(self.metrics_path, "w") as f:
            f.writelines(kept)

    def _write_record(self, record):
        if self.metrics_path is None:
            return
        with open(self.metrics_path, "a") as f:
            f.write(json.dumps(record.to_dict()) + "\n")

    def save(self, generation):
        """Checkpoint the current parent as having completed ``generation`` generations"""
        if self.checkpoint_path is None:
            return
        save_checkpoint(self.checkpoint_path, self.parent.model, self.parent.opt,
                        RunState(generation, self.parent.rng_seed, self.schedule.horizon))
        logger.debug("Checkpoint for generation %d written to %s", generation, self.checkpoint_path)

    def run(self):
        cfg = self.cfg
        if self.out_dir:
            os.makedirs(self.out_dir, exist_ok=True)
            self._prepare_metrics()
        logger.info("Training %s, population %d, %d generations on %s (%d samples)",
                    cfg.strategy.value, cfg.candidates, self.generations, self.dataset.name,
                    len(self.dataset))

        executor = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
        try:
            for generation in range(self.start_generation, self.generations):
                rng = generation_rng(cfg.seed, generation)
                self.parent, record = run_generation(self.parent, cfg, self.dataset, rng,
                                                     generation, self.schedule, executor)
                self.records.append(record)
                self._write_record(record)
                done = generation + 1
                if done < self.generations and done % cfg.checkpoint_every == 0:
                    self.save(done)
                if record.train_accuracy is not None:
                    logger.debug("Generation %d: selected %d, train accuracy %.4f",
                                 generation, record.selected, record.train_accuracy[record.selected])
        finally:
            if executor is not None:
                executor.shutdown()

        self.save(max(self.generations, self.start_generation))
        logger.info("Checkpoint written to %s", self.checkpoint_path)
        return self.parent.model, self.records


def run_training(cfg, dataset, out_dir=None, resume_from=None):
    """Run every generation; returns (final model, generation records)"""
    trainer = Trainer(cfg, dataset, out_dir, resume_from)
    return trainer.run()
