"""Recurrent scoring networks for adversarial training.

Two critics, each an LSTM with a scalar head and its own embedding table
(sharing the generator's table would let weight clipping corrupt it).
The sentence critic reads one sentence word by word and scores its
plausibility; the topic-transition critic reads a paragraph as a sequence
of averaged sentence embeddings and scores every prefix, so coherence of
the sentence flow is judged causally. Neither output is squashed: the
scores feed a Wasserstein objective and must stay unbounded.
"""

from __future__ import annotations

import numpy as np

from .config import Dims
from .layers import EmbeddingTable, LinearLayer, LstmCell, ParamCollection, lstm_step
from .tensor import Tensor, mean_rows, pick, reshape, slice_rows


class _RecurrentScorer:
    """Embedding table + LSTM + scalar head over a sequence of input vectors."""

    def __init__(self, name: str, dims: Dims, vocab_size: int, seed: int):
        if vocab_size < 5:
            raise ValueError("vocabulary must hold the specials plus at least one word")
        self.dims = dims
        self.vocab_size = vocab_size
        rng = np.random.default_rng(seed)
        coll = ParamCollection(name)
        self.collection = coll
        self.embed = EmbeddingTable(coll, "embed", vocab_size, dims.critic_embed, rng)
        self.lstm = LstmCell(coll, "lstm", dims.critic_embed, dims.critic_hidden, rng)
        self.score_head = LinearLayer(coll, "score_head", dims.critic_hidden, 1, rng)

    def _score_steps(self, xs: list[Tensor]) -> list[Tensor]:
        """Run the LSTM from zero state over xs; scalar score at every step."""
        h = Tensor.zeros(self.dims.critic_hidden)
        c = Tensor.zeros(self.dims.critic_hidden)
        scores = []
        for x in xs:
            h, c = lstm_step(self.lstm, x, h, c)
            scores.append(pick(self.score_head(h), 0))
        return scores


class SentenceCritic(_RecurrentScorer):
    """Scores a single sentence for plausibility."""

    def __init__(self, dims: Dims, vocab_size: int, seed: int):
        super().__init__("sentence_critic", dims, vocab_size, seed)


class TopicTransitionCritic(_RecurrentScorer):
    """Scores paragraph prefixes for smoothness of the sentence sequence."""

    def __init__(self, dims: Dims, vocab_size: int, seed: int):
        super().__init__("topic_critic", dims, vocab_size, seed)


def score_sentence(critic: SentenceCritic, sentence: list[int]) -> Tensor:
    """Unbounded plausibility score: LSTM over the sentence's word embeddings
    from zero state, scalar head on the final hidden state."""
    if len(sentence) == 0:
        raise ValueError("cannot score an empty sentence")
    for tok in sentence:
        if not (0 <= int(tok) < critic.vocab_size):
            raise IndexError(f"token id {tok} outside vocabulary of {critic.vocab_size}")
    emb = critic.embed(sentence)                          # [n, critic_embed]
    xs = [reshape(slice_rows(emb, i, i + 1), (critic.dims.critic_embed,))
          for i in range(len(sentence))]
    return critic._score_steps(xs)[-1]


def critic_sentence_embedding(critic: TopicTransitionCritic,
                              sentence: list[int]) -> Tensor:
    """Average of the critic's own word-embedding rows, mirroring the
    generator's sentence-embedding rule but on the critic's table."""
    if len(sentence) == 0:
        raise ValueError("cannot embed an empty sentence")
    for tok in sentence:
        if not (0 <= int(tok) < critic.vocab_size):
            raise IndexError(f"token id {tok} outside vocabulary of {critic.vocab_size}")
    return mean_rows(critic.embed(sentence))


def score_paragraph_prefix(critic: TopicTransitionCritic,
                           sentence_embs: list[Tensor]) -> list[Tensor]:
    """One unbounded score per prefix: LSTM over the sentence embeddings,
    scalar head on every hidden state. The recurrence is causal, so the
    scores for a shorter prefix are a prefix of the longer run's scores."""
    if len(sentence_embs) == 0:
        raise ValueError("cannot score an empty paragraph")
    for e in sentence_embs:
        if e.shape != (critic.dims.critic_embed,):
            raise ValueError(
                f"sentence embedding shape {e.shape} != ({critic.dims.critic_embed},)")
    return critic._score_steps(sentence_embs)


def score_paragraph(critic: TopicTransitionCritic,
                    sentences: list[list[int]]) -> list[Tensor]:
    """Convenience: embed token-id sentences with the critic's table, then
    score every prefix."""
    embs = [critic_sentence_embedding(critic, s) for s in sentences]
    return score_paragraph_prefix(critic, embs)


class CriticPair:
    """The two critics created together with derived seeds."""

    def __init__(self, dims: Dims, vocab_size: int, seed: int):
        self.sentence = SentenceCritic(dims, vocab_size, seed)
        self.paragraph = TopicTransitionCritic(dims, vocab_size, seed + 1)

    @classmethod
    def create(cls, dims: Dims, vocab_size: int, seed: int) -> "CriticPair":
        return cls(dims, vocab_size, seed)

    def collections(self) -> list[ParamCollection]:
        return [self.sentence.collection, self.paragraph.collection]
