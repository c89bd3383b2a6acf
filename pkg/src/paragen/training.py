"""Losses and the alternating adversarial training loop.

The critics maximize the mean score gap between real and generated text
(implemented as minimizing the negated gap) under weight clipping; the
generator minimizes teacher-forced reconstruction plus a policy-gradient
surrogate whose per-action rewards come from critic scores of rollout
completions. Five critic updates alternate with one generator update, and
everything runs on RMSprop at batch size 1.

Sampling (paragraph traces, rollouts) happens outside any tape; only the
replayed teacher-forced pass and the critic scoring passes build graphs.
A sampled trace's per-position word distributions do not depend on the
tokens drawn, so rollouts of the current sentence are completed directly
from the distributions cached in the trace, with no extra forward passes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .config import CONTINUE, END_ID, STOP, TrainConfig
from .critics import CriticPair, score_paragraph, score_sentence
from .data import TrainingExample
from .generator import (
    GeneratorParams, RegionSet, SampleTrace, continue_paragraph, generate,
    sample_trace, teacher_force,
)
from .layers import ParamCollection
from .tensor import NonFiniteError, Tape, Tensor, add, backward, log, pick, scale


class TrainingAborted(RuntimeError):
    """Raised when a loss goes non-finite; carries diagnostics for a dump."""

    def __init__(self, message: str, diagnostics: dict, log: list[dict]):
        super().__init__(message)
        self.diagnostics = diagnostics
        self.log = log


# ---------------------------------------------------------------------------
# optimizer and clipping

class RmsProp:
    """RMSprop with per-parameter squared-gradient accumulators:
    s <- rho*s + (1-rho)*g^2;  p <- p - lr*g/sqrt(s+eps)."""

    def __init__(self, collection: ParamCollection, lr: float,
                 rho: float = 0.9, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.collection = collection
        self.lr = lr
        self.rho = rho
        self.eps = eps
        self.square_avg = {name: np.zeros_like(t.data)
                           for name, t in collection.items()}

    def step(self) -> None:
        for name, t in self.collection.items():
            g = t.grad
            if g is None:
                continue
            s = self.square_avg[name]
            s *= self.rho
            s += (1.0 - self.rho) * g * g
            t.data -= self.lr * g / np.sqrt(s + self.eps)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: a.copy() for name, a in self.square_avg.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, arr in state.items():
            if name not in self.square_avg:
                raise KeyError(f"unknown accumulator {name!r}")
            if arr.shape != self.square_avg[name].shape:
                raise ValueError(f"accumulator {name!r}: shape {arr.shape} != "
                                 f"{self.square_avg[name].shape}")
            self.square_avg[name][...] = arr


def clip_weights(collection: ParamCollection, clip: float) -> None:
    """Clamp every parameter into [-clip, clip], in place."""
    if clip <= 0:
        raise ValueError("clip must be positive")
    for _, t in collection.items():
        np.clip(t.data, -clip, clip, out=t.data)


# ---------------------------------------------------------------------------
# losses

def _chain_add(terms: list[Tensor]) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return total


def _neg_gap(real: list[Tensor], fake: list[Tensor]) -> Tensor:
    """-(mean(real) - mean(fake)): the quantity a critic minimizes."""
    if not real or not fake:
        raise ValueError("need at least one real and one fake score")
    mean_real = scale(_chain_add(real), 1.0 / len(real))
    mean_fake = scale(_chain_add(fake), 1.0 / len(fake))
    return add(mean_fake, scale(mean_real, -1.0))


def critic_losses(real_sentence_scores: list[Tensor],
                  fake_sentence_scores: list[Tensor],
                  real_paragraph_scores: list[Tensor],
                  fake_paragraph_scores: list[Tensor]) -> tuple[Tensor, Tensor]:
    """Per-critic losses, negated mean gaps (the optimizer minimizes)."""
    loss_ds = _neg_gap(real_sentence_scores, fake_sentence_scores)
    loss_dr = _neg_gap(real_paragraph_scores, fake_paragraph_scores)
    return loss_ds, loss_dr


def reconstruction_loss(params: GeneratorParams, regions: RegionSet,
                        target: list[list[int]]) -> Tensor:
    """Negated teacher-forced log-probability of the supervised sentences."""
    tf = teacher_force(params, regions, target)
    return scale(tf.total_log_prob(), -1.0)


def stop_cross_entropy(stop_dists: list[Tensor], n_sentences: int) -> Tensor:
    """Cross-entropy supervision of the stop head from the groundtruth
    sentence count: continue everywhere except the final sentence."""
    if n_sentences != len(stop_dists):
        raise ValueError(f"{len(stop_dists)} stop distributions for "
                         f"{n_sentences} sentences")
    terms = []
    for t, dist in enumerate(stop_dists):
        target = STOP if t == n_sentences - 1 else CONTINUE
        terms.append(pick(log(dist), target))
    return scale(_chain_add(terms), -1.0)


# ---------------------------------------------------------------------------
# rewards

class RewardModel(Protocol):
    def sentence_score(self, tokens: list[int]) -> float: ...
    def paragraph_final_score(self, sentences: list[list[int]]) -> float: ...


class CriticRewardModel:
    """Reward source backed by the two critics (read-only, untaped)."""

    def __init__(self, critics: CriticPair):
        self.critics = critics

    def sentence_score(self, tokens: list[int]) -> float:
        return score_sentence(self.critics.sentence, tokens).item()

    def paragraph_final_score(self, sentences: list[list[int]]) -> float:
        return score_paragraph(self.critics.paragraph, sentences)[-1].item()


@dataclass
class RewardSet:
    """Reward per taken action: one per word position, one per sampled stop
    decision (None where the stop was forced by the cap and is not an action)."""

    word: list[list[float]]
    stop: list[float | None]

    def flat(self) -> list[float]:
        out = [r for sent in self.word for r in sent]
        out += [r for r in self.stop if r is not None]
        return out


def _complete_from_dists(trace: SampleTrace, t: int, i: int,
                         rng: np.random.Generator, n_max: int) -> list[int]:
    """Finish sentence t from position i+1 by sampling the cached
    distributions; valid because they are independent of the tokens drawn."""
    tokens = list(trace.sentences[t][:i + 1])
    dists = trace.word_dists[t]
    while len(tokens) < n_max and tokens[-1] != END_ID:
        p = dists[len(tokens)]
        tokens.append(int(rng.choice(p.shape[0], p=p / p.sum())))
    return tokens


def rollout_rewards(params: GeneratorParams, rewards: RewardModel,
                    regions: RegionSet, trace: SampleTrace, n_rollouts: int,
                    rng: np.random.Generator, s_max: int, n_max: int) -> RewardSet:
    """Monte-Carlo reward for every action in the trace.

    Intermediate word positions: complete the sentence from the cached
    distributions, sample the remaining paragraph with the generator itself,
    and average sentence score plus final-step paragraph score over
    n_rollouts. Final word positions use the direct critic scores of the
    already-complete prefix, no rollout. Sampled stop decisions are treated
    like word actions (sentence score of the finished sentence plus a
    paragraph score): a stop's outcome is fully determined, so its paragraph
    term is the direct prefix score; a continue's future is sampled."""
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    n_sent = len(trace.sentences)
    ds_direct = [rewards.sentence_score(s) for s in trace.sentences]
    dr_prefix = [rewards.paragraph_final_score(trace.sentences[:t + 1])
                 for t in range(n_sent)]

    word: list[list[float]] = []
    for t, sent in enumerate(trace.sentences):
        per_pos: list[float] = []
        for i in range(len(sent)):
            if i == len(sent) - 1:
                per_pos.append(ds_direct[t] + dr_prefix[t])
                continue
            acc = 0.0
            for _ in range(n_rollouts):
                completed = _complete_from_dists(trace, t, i, rng, n_max)
                future = continue_paragraph(params, regions, trace.states[t],
                                            completed, rng, s_max - (t + 1), n_max)
                paragraph = trace.sentences[:t] + [completed] + future
                acc += (rewards.sentence_score(completed)
                        + rewards.paragraph_final_score(paragraph))
            per_pos.append(acc / n_rollouts)
        word.append(per_pos)

    stop: list[float | None] = []
    for t in range(n_sent):
        if trace.stop_forced and t == n_sent - 1:
            stop.append(None)
        elif trace.stop_actions[t] == STOP:
            stop.append(ds_direct[t] + dr_prefix[t])
        else:
            acc = 0.0
            for _ in range(n_rollouts):
                future = continue_paragraph(params, regions, trace.states[t],
                                            trace.sentences[t], rng,
                                            s_max - (t + 1), n_max)
                acc += rewards.paragraph_final_score(trace.sentences[:t + 1] + future)
            stop.append(ds_direct[t] + acc / n_rollouts)
    return RewardSet(word, stop)


class RewardBaseline:
    """Optional moving-average baseline subtracted from every reward."""

    def __init__(self, momentum: float = 0.9):
        self.momentum = momentum
        self.value = 0.0

    def advantage(self, reward: float) -> float:
        return reward - self.value

    def update(self, step_mean: float) -> None:
        self.value = self.momentum * self.value + (1.0 - self.momentum) * step_mean


# ---------------------------------------------------------------------------
# update phases

def _supervision_for(example: TrainingExample, mode: str) -> list[list[int]] | None:
    if mode == "fully":
        if example.paragraph is None:
            raise ValueError(f"example {example.example_id}: fully-supervised "
                             "training needs a groundtruth paragraph")
        return example.paragraph.sentences
    if example.caption is not None:
        return [example.caption]
    return None


def generator_step(params: GeneratorParams, rewards: RewardModel | None,
                   examples: list[TrainingExample], config: TrainConfig,
                   opt: RmsProp, rng: np.random.Generator,
                   baseline: RewardBaseline | None = None) -> dict:
    """One generator update on a batch of examples: teacher-forced
    reconstruction (plus stop-head cross-entropy when fully supervised) and,
    when the adversarial weight is nonzero, the policy-gradient surrogate
    over a sampled trace. With a zero weight no sampling happens at all."""
    lam = config.lambda_adv
    use_policy = lam > 0.0
    if use_policy and rewards is None:
        raise ValueError("adversarial training needs a reward model")

    # all sampling happens before the tape opens
    traces: list[tuple[SampleTrace, RewardSet]] = []
    if use_policy:
        for ex in examples:
            trace = sample_trace(params, ex.regions, rng, config.s_max, config.n_max)
            rset = rollout_rewards(params, rewards, ex.regions, trace,
                                   config.n_rollouts, rng, config.s_max,
                                   config.n_max)
            traces.append((trace, rset))

    diag: dict = {"recon": None, "stop_ce": None, "policy": None,
                  "reward_mean": None, "reward_var": None, "n_words": 0}
    loss_terms: list[Tensor] = []
    all_rewards: list[float] = []
    with Tape() as tape:
        for ex in examples:
            target = _supervision_for(ex, config.mode)
            if target is not None:
                tf = teacher_force(params, ex.regions, target)
                recon = scale(tf.total_log_prob(), -1.0)
                loss_terms.append(recon)
                diag["recon"] = (diag["recon"] or 0.0) + recon.item()
                diag["n_words"] += tf.n_words()
                if config.mode == "fully":
                    ce = stop_cross_entropy(tf.stop_dists, len(target))
                    loss_terms.append(ce)
                    diag["stop_ce"] = (diag["stop_ce"] or 0.0) + ce.item()
        for k, ex in enumerate(examples):
            if not use_policy:
                break
            trace, rset = traces[k]
            replay = teacher_force(params, ex.regions, trace.sentences)
            terms: list[Tensor] = []
            for t, sent_lps in enumerate(replay.word_logps):
                for i, lp in enumerate(sent_lps):
                    adv = rset.word[t][i]
                    if baseline is not None:
                        adv = baseline.advantage(adv)
                    terms.append(scale(lp, -adv))
            for t, r in enumerate(rset.stop):
                if r is None:
                    continue
                adv = baseline.advantage(r) if baseline is not None else r
                lp_stop = pick(log(replay.stop_dists[t]), trace.stop_actions[t])
                terms.append(scale(lp_stop, -adv))
            policy = scale(_chain_add(terms), lam)
            loss_terms.append(policy)
            diag["policy"] = (diag["policy"] or 0.0) + policy.item()
            all_rewards.extend(rset.flat())
        if not loss_terms:
            return diag
        total = _chain_add(loss_terms)
    params.collection.zero_grad()  # the step below must see only this loss
    backward(tape, total)
    opt.step()
    if all_rewards:
        diag["reward_mean"] = float(np.mean(all_rewards))
        diag["reward_var"] = float(np.var(all_rewards))
        if baseline is not None:
            baseline.update(diag["reward_mean"])
    diag["loss"] = total.item()
    return diag


def critic_update(critics: CriticPair,
                  real_sentences: list[list[int]],
                  fake_sentences: list[list[int]],
                  opt_s: RmsProp, opt_r: RmsProp, clip: float,
                  real_paragraphs: list[list[list[int]]] | None = None,
                  fake_paragraphs: list[list[list[int]]] | None = None) -> dict:
    """One clipped update of both critics from explicit materials. Paragraph
    lists may be omitted to train the sentence critic alone."""
    with_para = bool(real_paragraphs) and bool(fake_paragraphs)
    with Tape() as tape:
        real_s = [score_sentence(critics.sentence, s) for s in real_sentences]
        fake_s = [score_sentence(critics.sentence, s) for s in fake_sentences]
        loss_ds = _neg_gap(real_s, fake_s)
        total = loss_ds
        loss_dr = None
        if with_para:
            real_p = [score_paragraph(critics.paragraph, p)[-1]
                      for p in real_paragraphs]
            fake_p = [score_paragraph(critics.paragraph, p)[-1]
                      for p in fake_paragraphs]
            loss_dr = _neg_gap(real_p, fake_p)
            total = add(loss_ds, loss_dr)
    critics.sentence.collection.zero_grad()  # steps must see only this loss
    critics.paragraph.collection.zero_grad()
    backward(tape, total)
    opt_s.step()
    opt_r.step()
    clip_weights(critics.sentence.collection, clip)
    clip_weights(critics.paragraph.collection, clip)
    diag = {
        "loss_ds": loss_ds.item(),
        "loss_dr": loss_dr.item() if loss_dr is not None else None,
        "gap_ds": -loss_ds.item(),
        "gap_dr": -loss_dr.item() if loss_dr is not None else None,
    }
    return diag


def critic_phase(gen_params: GeneratorParams, critics: CriticPair,
                 example: TrainingExample, real_paragraph: list[list[int]],
                 config: TrainConfig, opt_s: RmsProp, opt_r: RmsProp,
                 rng: np.random.Generator) -> dict:
    """One critic update during adversarial training: sample one paragraph
    from the generator for the example's regions, use all its sentences as
    fakes and the real paragraph's sentences as reals."""
    fake = generate(gen_params, example.regions, "sample", rng=rng,
                    s_max=config.s_max, n_max=config.n_max).paragraph.sentences
    return critic_update(critics, real_paragraph, fake, opt_s, opt_r,
                         config.clip, [real_paragraph], [fake])


# ---------------------------------------------------------------------------
# the training loop

@dataclass
class TrainResult:
    log: list[dict] = field(default_factory=list)
    n_critic_phases: int = 0
    n_generator_phases: int = 0
    checkpoints: list[str] = field(default_factory=list)


def train(gen_params: GeneratorParams, critics: CriticPair, config: TrainConfig,
          dataset: list[TrainingExample], paragraphs: list[list[list[int]]],
          *, out_dir=None, vocab=None, log_path=None, clock=None,
          optimizers: dict[str, RmsProp] | None = None) -> TrainResult:
    """Alternating loop: n_critic clipped critic updates, then one generator
    update, repeated over the dataset for the configured number of epochs.
    Logs one JSON-ready record per optimizer phase; checkpoints once per
    epoch when out_dir is given. A non-finite loss aborts with diagnostics."""
    config.validate()
    if not dataset:
        raise ValueError("dataset is empty")
    if not paragraphs:
        raise ValueError("paragraph corpus is empty")
    clock = clock or time.time
    rng = np.random.default_rng(config.seed)
    if optimizers is None:
        optimizers = make_optimizers(gen_params, critics, config)
    opt_gen = optimizers["generator"]
    opt_s = optimizers["sentence_critic"]
    opt_r = optimizers["topic_critic"]
    rewards = CriticRewardModel(critics)
    baseline = RewardBaseline() if config.use_reward_baseline else None

    result = TrainResult()
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    iteration = 0

    def emit(record: dict) -> None:
        result.log.append(record)
        if log_fh is not None:
            import json
            log_fh.write(json.dumps(record) + "\n")
            log_fh.flush()

    try:
        for epoch in range(config.epochs):
            for start in range(0, len(dataset), config.batch):
                chunk = dataset[start:start + config.batch]
                for _ in range(config.n_critic):
                    real = paragraphs[int(rng.integers(len(paragraphs)))]
                    try:
                        diag = critic_phase(gen_params, critics, chunk[0], real,
                                            config, opt_s, opt_r, rng)
                    except NonFiniteError as exc:
                        raise TrainingAborted(
                            f"non-finite value in critic phase: {exc}",
                            {"iteration": iteration + 1, "phase": "critic",
                             "error": str(exc)}, result.log) from exc
                    iteration += 1
                    result.n_critic_phases += 1
                    emit({"iteration": iteration, "phase": "critic", **diag,
                          "timestamp": clock()})
                try:
                    diag = generator_step(gen_params, rewards, chunk, config,
                                          opt_gen, rng, baseline)
                except NonFiniteError as exc:
                    raise TrainingAborted(
                        f"non-finite value in generator phase: {exc}",
                        {"iteration": iteration + 1, "phase": "generator",
                         "error": str(exc)}, result.log) from exc
                iteration += 1
                result.n_generator_phases += 1
                emit({"iteration": iteration, "phase": "generator", **diag,
                      "timestamp": clock()})
            if out_dir is not None:
                from .checkpoint import save_checkpoint
                path = f"{out_dir}/epoch_{epoch + 1}"
                save_checkpoint(path, gen_params, critics, config, vocab,
                                optimizers)
                result.checkpoints.append(path)
    finally:
        if log_fh is not None:
            log_fh.close()
    return result


def make_optimizers(gen_params: GeneratorParams, critics: CriticPair,
                    config: TrainConfig) -> dict[str, RmsProp]:
    return {
        "generator": RmsProp(gen_params.collection, config.lr),
        "sentence_critic": RmsProp(critics.sentence.collection, config.lr),
        "topic_critic": RmsProp(critics.paragraph.collection, config.lr),
    }
