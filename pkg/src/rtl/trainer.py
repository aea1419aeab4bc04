"""Pretraining, the joint transfer/selector loop, baselines and run outputs."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .checkpoint import save_checkpoint
from .config import TrainConfig, rng_for
from .dam import DamConfig
from .data import SOURCE, TARGET, BatchStream, Corpus, make_batches
from .selector import (
    DROP,
    KEEP,
    EpisodeRecord,
    SelectionLog,
    SelectorNets,
    build_states,
    compute_reward,
    filter_batch,
    policy_forward,
    policy_update,
    sample_actions,
    state_width,
    value_update,
    write_selection_log,
)
from .transfer import TransferModel

log = logging.getLogger(__name__)


@dataclass
class EpisodeStats:
    episode: int
    val_acc: float
    val_auc: float | None
    test_acc: float
    test_auc: float | None
    selection_rate: float | None
    mean_reward: float | None


@dataclass
class RunReport:
    mode: str
    episodes: list[EpisodeStats] = field(default_factory=list)
    best_episode: int = 0
    selection: SelectionLog = field(default_factory=SelectionLog)
    checkpoints: list[str] = field(default_factory=list, compare=False)

    @property
    def final(self) -> EpisodeStats:
        return self.episodes[-1]

    @property
    def best(self) -> EpisodeStats:
        return self.episodes[self.best_episode - 1]


class RunState:
    """Model, selector nets and every seeded stream of one training run."""

    def __init__(self, cfg: TrainConfig, corpus: Corpus, embeddings: np.ndarray | None = None) -> None:
        cfg.validate()
        self.cfg = cfg
        self.corpus = corpus
        seed = cfg.seed
        dam_cfg = DamConfig(cfg.hidden_size, cfg.embedding_dim)
        if embeddings is None:
            emb_rng = rng_for(seed, "init.embedding")
            embeddings = emb_rng.uniform(-0.05, 0.05, size=(len(corpus.vocab), cfg.embedding_dim))
            embeddings[0] = 0.0
        self.model = TransferModel.create(
            len(corpus.vocab),
            dam_cfg,
            rng_for(seed, "init.model"),
            embeddings=embeddings,
            trainable_embeddings=cfg.trainable_embeddings,
            clip_norm=cfg.clip_norm,
        )
        self.nets = None
        if cfg.policy_mode is not None:
            self.nets = SelectorNets(
                state_width(dam_cfg.z_dim), cfg.policy_hidden, rng_for(seed, "init.selector"), cfg.clip_norm
            )
        self.source_stream = None
        if cfg.mode != "base_only":
            if not corpus.source_train:
                raise ValueError(f"mode {cfg.mode} needs source training data")
            self.source_stream = BatchStream(corpus.source_train, cfg.batch_size, rng_for(seed, "data.source"), SOURCE)
        self.pretrain_stream = BatchStream(
            corpus.target_train, cfg.batch_size, rng_for(seed, "data.pretrain_target"), TARGET
        )
        self.target_rng = rng_for(seed, "data.target")
        self.action_rng = rng_for(seed, "actions")
        self.reward_rng = rng_for(seed, "reward.subsample")
        self.updates = {SOURCE: 0, TARGET: 0}

    def update(self, batch, domain: str) -> float:
        self.updates[domain] += 1
        return self.model.update_domain(batch, domain, self.cfg.lr_transfer)


def pretrain(state: RunState, k: int) -> None:
    """``k`` iterations of one source update then one target update; the
    source half is skipped when the run has no source stream."""
    if k < 0:
        raise ValueError("k must be >= 0")
    for _ in range(k):
        if state.source_stream is not None:
            state.update(state.source_stream.next(), SOURCE)
        state.update(state.pretrain_stream.next(), TARGET)


def _reward_pairs(state: RunState):
    val = state.corpus.target_val
    n = state.cfg.reward_subsample
    if n and n < len(val):
        idx = np.sort(state.reward_rng.choice(len(val), size=n, replace=False))
        return [val[i] for i in idx]
    return val


def train_episode(state: RunState, episode: int, selection: SelectionLog | None = None) -> EpisodeRecord:
    """One pass of the joint loop over the target batches.

    Per step: states, actions, filtered source update (skipped when empty),
    reward on the target validation pairs, target update. Afterwards the
    policy and then the value net are updated from the stored steps.
    """
    cfg = state.cfg
    record = EpisodeRecord(cfg.gamma)
    target_batches = make_batches(state.corpus.target_train, cfg.batch_size, state.target_rng, TARGET)
    reward_pairs = _reward_pairs(state)
    final_actions: dict[int, int] = {}
    for b, tgt in enumerate(target_batches, start=1):
        src = state.source_stream.next()
        states = None
        if state.nets is not None:
            states = build_states(src, state.model)
        if state.nets is None or cfg.force == "keep_all":
            actions = np.full(len(src), KEEP, dtype=np.int64)
        elif cfg.force == "drop_all":
            actions = np.full(len(src), DROP, dtype=np.int64)
        else:
            probs = policy_forward(states, state.nets)
            actions = sample_actions(probs, state.action_rng, greedy=cfg.greedy).actions
        kept = filter_batch(src, actions)
        if kept is not None:
            state.update(kept, SOURCE)
        reward = compute_reward(state.model, reward_pairs)
        state.update(tgt, TARGET)
        if states is not None:
            record.add(states, actions, reward, src.index)
        else:
            record.add(np.zeros((len(src), 0)), actions, reward, src.index)
        for i, a in zip(src.index.tolist(), actions.tolist()):
            final_actions[i] = a
        if selection is not None:
            selection.rows.append((episode, b, int(actions.sum()), len(actions), reward))
    if selection is not None:
        selection.final_actions = final_actions
    if state.nets is not None:
        policy_update(record, state.nets, cfg.policy_mode, cfg.lr_policy)
        if cfg.policy_mode == "actor_critic":
            value_update(record, state.nets, cfg.value_lr)
    return record


def base_episode(state: RunState) -> None:
    for tgt in make_batches(state.corpus.target_train, state.cfg.batch_size, state.target_rng, TARGET):
        state.update(tgt, TARGET)


def train(
    cfg: TrainConfig,
    corpus: Corpus,
    out_dir: str | Path | None = None,
    header: Sequence[str] = (),
    embeddings: np.ndarray | None = None,
) -> RunReport:
    """Run ``cfg.episodes`` episodes in ``cfg.mode``; evaluate every episode.

    With ``out_dir`` a checkpoint is written per episode, plus
    ``report.json``, ``report.txt`` and ``selection_log.csv``.
    """
    state = RunState(cfg, corpus, embeddings)
    out = Path(out_dir) if out_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    report = RunReport(cfg.mode)
    t0 = time.perf_counter()
    pretrain(state, cfg.pretrain_iterations)
    log.info("pretrained %d iterations (%.1fs)", cfg.pretrain_iterations, time.perf_counter() - t0)
    for ep in range(1, cfg.episodes + 1):
        if cfg.mode == "base_only":
            base_episode(state)
            sel_rate = mean_reward = None
        else:
            record = train_episode(state, ep, report.selection)
            n_kept = sum(int(s.actions.sum()) for s in record.steps)
            n_total = sum(len(s.actions) for s in record.steps)
            sel_rate = n_kept / n_total
            mean_reward = float(np.mean([s.reward for s in record.steps]))
        val_acc, val_auc = state.model.evaluate(corpus.target_val, TARGET)
        test_acc, test_auc = state.model.evaluate(corpus.target_test, TARGET)
        stats = EpisodeStats(ep, val_acc, val_auc, test_acc, test_auc, sel_rate, mean_reward)
        report.episodes.append(stats)
        log.info(
            "episode %d: val_acc=%.4f test_acc=%.4f selection_rate=%s (%.1fs)",
            ep, val_acc, test_acc, "n/a" if sel_rate is None else f"{sel_rate:.3f}", time.perf_counter() - t0,
        )
        if out is not None:
            path = save_checkpoint(
                out / f"checkpoint_ep{ep:03d}.npz",
                state.model,
                corpus.vocab,
                state.nets,
                header,
                extra={"episode": ep, "max_len": cfg.effective_max_len},
            )
            report.checkpoints.append(str(path))
    accs = [e.val_acc for e in report.episodes]
    report.best_episode = int(np.argmax(accs)) + 1
    if out is not None:
        write_outputs(report, out, header)
    return report


def _fmt(x) -> str:
    if x is None:
        return "undefined"
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return f"{x:.6f}" if isinstance(x, float) else str(x)


def write_outputs(report: RunReport, out: Path, header: Sequence[str]) -> None:
    head = [f"rtl {__version__}"] + [f"config: {line}" for line in header]
    with open(out / "report.txt", "w", encoding="utf-8") as fh:
        for line in head:
            fh.write(f"# {line}\n")
        for e in report.episodes:
            fh.write(" ".join(f"{k}={_fmt(v)}" for k, v in asdict(e).items()) + "\n")
        fh.write(f"best_episode={report.best_episode}\n")
        fh.write(f"final_test_acc={_fmt(report.final.test_acc)}\n")
        fh.write(f"final_test_auc={_fmt(report.final.test_auc)}\n")
        fh.write(f"best_test_acc={_fmt(report.best.test_acc)}\n")
        fh.write(f"best_test_auc={_fmt(report.best.test_auc)}\n")
    payload = {
        "version": __version__,
        "config": list(header),
        "mode": report.mode,
        "episodes": [asdict(e) for e in report.episodes],
        "best_episode": report.best_episode,
        "checkpoints": [Path(p).name for p in report.checkpoints],
    }
    (out / "report.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    if report.mode != "base_only":
        write_selection_log(out / "selection_log.csv", report.selection, head)
