"""Hierarchical paragraph decoder over region features and region phrases.

Three recurrences are stacked. A paragraph LSTM carries context across
sentences, consuming the embedding of the previously produced sentence (or a
learned start vector at the first step). A sentence LSTM turns a spatially
attended summary of the region features into a topic vector and a
continue/stop distribution. A word LSTM emits tokens: at each position a
language attention scores every word occurrence inside the region phrases
against a query built from the topic and the previous word state, and the
resulting convex combination of phrase-word embeddings is the word LSTM's
entire input. Chosen tokens therefore influence later words only across
sentence boundaries, through the embedding of the finished sentence.

Both attentions are single linear scoring layers over concatenated inputs,
normalized with softmax; the language attention folds the region weights in
by adding log a_j to each candidate score before normalizing, which keeps the
combined weights a single convex combination that sums to one.

All math runs through the tape ops in `tensor`, so the same code path serves
taped training passes and cheap untaped decoding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import CONTINUE, END_ID, STOP, Dims
from .layers import EmbeddingTable, LinearLayer, LstmCell, ParamCollection, lstm_step
from .tensor import (
    Tensor, add, concat, log, lookup, matmul, mean_rows, pick, softmax,
    tile_rows,
)


@dataclass
class RegionSet:
    """Detected regions for one image: a feature vector and a phrase per region."""

    features: list[np.ndarray]
    phrases: list[list[int]]

    def __post_init__(self):
        if len(self.features) == 0:
            raise ValueError("a region set needs at least one region")
        if len(self.features) != len(self.phrases):
            raise ValueError(
                f"{len(self.features)} feature vectors vs {len(self.phrases)} phrases")
        dim = None
        feats = []
        for i, f in enumerate(self.features):
            arr = np.asarray(f, dtype=np.float64)
            if arr.ndim != 1:
                raise ValueError(f"region {i}: feature must be a flat vector")
            if dim is None:
                dim = arr.shape[0]
            elif arr.shape[0] != dim:
                raise ValueError(
                    f"region {i}: feature length {arr.shape[0]} != {dim} of region 0")
            feats.append(arr)
        self.features = feats
        for i, p in enumerate(self.phrases):
            if len(p) == 0:
                raise ValueError(f"region {i}: empty phrase")
            if any((not isinstance(t, (int, np.integer))) or t < 0 for t in p):
                raise ValueError(f"region {i}: phrase tokens must be non-negative ids")

    @property
    def m(self) -> int:
        return len(self.features)

    @property
    def feat_dim(self) -> int:
        return self.features[0].shape[0]


@dataclass
class Paragraph:
    """An ordered list of sentences, each a list of token ids.

    Sentences are non-empty and the end-of-sentence token may appear only in
    final position (a sentence truncated at the word cap carries no end token).
    """

    sentences: list[list[int]]

    def __post_init__(self):
        if len(self.sentences) == 0:
            raise ValueError("a paragraph needs at least one sentence")
        for t, s in enumerate(self.sentences):
            if len(s) == 0:
                raise ValueError(f"sentence {t} is empty")
            if any((not isinstance(w, (int, np.integer))) or w < 0 for w in s):
                raise ValueError(f"sentence {t}: tokens must be non-negative ids")
            if any(w == END_ID for w in s[:-1]):
                raise ValueError(f"sentence {t}: end token before final position")
        self.sentences = [[int(w) for w in s] for s in self.sentences]

    @property
    def n_sentences(self) -> int:
        return len(self.sentences)

    @property
    def n_words(self) -> int:
        return sum(len(s) for s in self.sentences)


class GeneratorParams:
    """All learned parameters of the decoder, in one collection.

    Creation order is fixed so a seed fully determines every value.
    """

    def __init__(self, dims: Dims, vocab_size: int, seed: int):
        if vocab_size < 5:
            raise ValueError("vocabulary must hold the specials plus at least one word")
        self.dims = dims
        self.vocab_size = vocab_size
        rng = np.random.default_rng(seed)
        coll = ParamCollection("generator")
        self.collection = coll

        self.word_embed = EmbeddingTable(coll, "word_embed", vocab_size, dims.embed, rng)
        self.para_lstm = LstmCell(coll, "para_lstm", dims.embed, dims.para_hidden, rng)
        self.sent_lstm = LstmCell(coll, "sent_lstm", dims.feat, dims.sent_hidden, rng)
        self.word_lstm = LstmCell(coll, "word_lstm", dims.embed, dims.word_hidden, rng)
        # visual attention: query projection and scorer
        self.beta_v = LinearLayer(coll, "beta_v",
                                  dims.para_hidden + dims.sent_hidden, dims.feat, rng)
        self.alpha_v = LinearLayer(coll, "alpha_v", dims.feat * 2, 1, rng)
        # language attention: query projection and scorer
        self.beta_l = LinearLayer(coll, "beta_l",
                                  dims.sent_hidden + dims.word_hidden, dims.embed, rng)
        self.alpha_l = LinearLayer(coll, "alpha_l", dims.embed * 2, 1, rng)
        self.stop_head = LinearLayer(coll, "stop_head", dims.sent_hidden, 2, rng)
        self.vocab_head = LinearLayer(coll, "vocab_head", dims.word_hidden, vocab_size, rng)
        self.topic_to_word = LinearLayer(coll, "topic_to_word",
                                         dims.sent_hidden, dims.word_hidden, rng)
        self.start_of_paragraph = coll.register(
            "start_of_paragraph", np.zeros(dims.embed))
        self.start_of_paragraph.data[:] = rng.uniform(
            -1.0 / np.sqrt(dims.embed), 1.0 / np.sqrt(dims.embed), size=dims.embed)

    @classmethod
    def create(cls, dims: Dims, vocab_size: int, seed: int) -> "GeneratorParams":
        return cls(dims, vocab_size, seed)


@dataclass
class GenState:
    """Recurrent state carried through decoding. Mutated in place by the step ops."""

    h_para: Tensor
    c_para: Tensor
    h_sent: Tensor
    c_sent: Tensor
    h_word: Tensor
    c_word: Tensor
    last_a: Tensor | None = None

    @classmethod
    def initial(cls, params: GeneratorParams) -> "GenState":
        d = params.dims
        return cls(
            h_para=Tensor.zeros(d.para_hidden), c_para=Tensor.zeros(d.para_hidden),
            h_sent=Tensor.zeros(d.sent_hidden), c_sent=Tensor.zeros(d.sent_hidden),
            h_word=Tensor.zeros(d.word_hidden), c_word=Tensor.zeros(d.word_hidden),
        )

    def snapshot(self) -> tuple[np.ndarray, ...]:
        """Copy the sentence-level state as raw arrays (word state excluded)."""
        return (self.h_para.data.copy(), self.c_para.data.copy(),
                self.h_sent.data.copy(), self.c_sent.data.copy())

    def restore(self, snap: tuple[np.ndarray, ...]) -> None:
        self.h_para, self.c_para = Tensor(snap[0].copy()), Tensor(snap[1].copy())
        self.h_sent, self.c_sent = Tensor(snap[2].copy()), Tensor(snap[3].copy())


class _RegionContext:
    """Per-region constants reused across steps: the stacked feature matrix,
    the flat list of phrase-word candidate ids, and the 0/1 matrix mapping
    candidates back to their source region."""

    def __init__(self, params: GeneratorParams, regions: RegionSet):
        if regions.feat_dim != params.dims.feat:
            raise ValueError(
                f"region features have length {regions.feat_dim}, "
                f"model expects {params.dims.feat}")
        self.regions = regions
        self.vmat = Tensor(np.stack(regions.features))          # [M, feat]
        ids: list[int] = []
        owner: list[int] = []
        for j, phrase in enumerate(regions.phrases):
            for w in phrase:
                ids.append(int(w))
                owner.append(j)
        self.cand_ids = np.asarray(ids, dtype=np.intp)          # [C]
        sel = np.zeros((len(ids), regions.m))
        sel[np.arange(len(ids)), owner] = 1.0
        self.sel = Tensor(sel)                                  # [C, M]
        self.owner = np.asarray(owner, dtype=np.intp)

    def embed_candidates(self, params: GeneratorParams) -> Tensor:
        """Look the candidate rows up afresh (once per tape) so gradients reach
        the embedding table."""
        return lookup(params.word_embed.rows, self.cand_ids)    # [C, embed]


# ---------------------------------------------------------------------------
# step-level operations

def sentence_embedding(sentence: list[int], embed: EmbeddingTable) -> Tensor:
    """Mean of the word-embedding rows of a sentence, end token included."""
    if len(sentence) == 0:
        raise ValueError("cannot embed an empty sentence")
    return mean_rows(embed(sentence))


def paragraph_step(params: GeneratorParams, state: GenState,
                   prev_sentence_emb: Tensor) -> Tensor:
    """Advance the paragraph LSTM on the previous sentence's embedding."""
    h, c = lstm_step(params.para_lstm, prev_sentence_emb, state.h_para, state.c_para)
    state.h_para, state.c_para = h, c
    return h


def visual_attention(params: GeneratorParams, regions: RegionSet,
                     h_para: Tensor, h_sent_prev: Tensor) -> tuple[Tensor, Tensor]:
    """Softmax attention over region features.

    The query is a projection of the concatenated paragraph state and previous
    sentence state into feature space; each region is scored by a linear layer
    on [feature, query]. Returns (attended feature vector, weights a)."""
    ctx = _RegionContext(params, regions)
    return _visual_attention(params, ctx, h_para, h_sent_prev)


def _visual_attention(params: GeneratorParams, ctx: _RegionContext,
                      h_para: Tensor, h_sent_prev: Tensor) -> tuple[Tensor, Tensor]:
    q = params.beta_v(concat([h_para, h_sent_prev]))            # [feat]
    x = concat([ctx.vmat, tile_rows(q, ctx.regions.m)], axis=-1)
    scores = params.alpha_v.score_rows(x)                       # [M]
    a = softmax(scores)
    f_v = matmul(a, ctx.vmat)                                   # [feat]
    return f_v, a


def sentence_step(params: GeneratorParams, state: GenState,
                  f_v: Tensor) -> tuple[Tensor, Tensor]:
    """Advance the sentence LSTM on the attended feature; the new hidden state
    is the topic vector. Returns (topic, continue/stop distribution)."""
    h, c = lstm_step(params.sent_lstm, f_v, state.h_sent, state.c_sent)
    state.h_sent, state.c_sent = h, c
    p_stop = softmax(params.stop_head(h))
    return h, p_stop


def init_word_state(params: GeneratorParams, state: GenState) -> None:
    """Start the word recurrence for a new sentence: hidden from a learned
    projection of the topic, cell state zero."""
    state.h_word = params.topic_to_word(state.h_sent)
    state.c_word = Tensor.zeros(params.dims.word_hidden)


def language_attention(params: GeneratorParams, regions: RegionSet, a: Tensor,
                       h_sent: Tensor, h_word_prev: Tensor) -> tuple[Tensor, Tensor]:
    """Attention over every word occurrence in the region phrases.

    Candidate scores get log a_j of their source region added before the
    softmax, so the result is a single convex combination jointly weighted by
    the region attention. Returns (attended embedding f_l, weights b)."""
    ctx = _RegionContext(params, regions)
    e = ctx.embed_candidates(params)
    log_a = matmul(ctx.sel, log(a))
    return _language_attention(params, ctx, e, log_a, h_sent, h_word_prev)


def _language_attention(params: GeneratorParams, ctx: _RegionContext, e: Tensor,
                        log_a: Tensor, h_sent: Tensor,
                        h_word_prev: Tensor) -> tuple[Tensor, Tensor]:
    q = params.beta_l(concat([h_sent, h_word_prev]))            # [embed]
    x = concat([e, tile_rows(q, e.shape[0])], axis=-1)
    raw = params.alpha_l.score_rows(x)                          # [C]
    b = softmax(add(raw, log_a))
    f_l = matmul(b, e)                                          # [embed]
    return f_l, b


def word_step(params: GeneratorParams, state: GenState, f_l: Tensor) -> Tensor:
    """Advance the word LSTM on the attended embedding; return the next-token
    distribution over the vocabulary."""
    h, c = lstm_step(params.word_lstm, f_l, state.h_word, state.c_word)
    state.h_word, state.c_word = h, c
    return softmax(params.vocab_head(h))


def _advance_topic(params: GeneratorParams, state: GenState, ctx: _RegionContext,
                   prev_emb: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """One sentence-level step: paragraph LSTM, visual attention, sentence LSTM."""
    h_p = paragraph_step(params, state, prev_emb)
    f_v, a = _visual_attention(params, ctx, h_p, state.h_sent)
    topic, p_stop = sentence_step(params, state, f_v)
    state.last_a = a
    return topic, p_stop, a


# ---------------------------------------------------------------------------
# teacher forcing

@dataclass
class TeacherForced:
    """Per-token log-probabilities and per-sentence stop distributions for a
    fixed paragraph, as live graph tensors."""

    word_logps: list[list[Tensor]]
    stop_dists: list[Tensor]
    attention_a: list[Tensor]
    attention_b: list[list[Tensor]]

    def total_log_prob(self) -> Tensor:
        total = None
        for sent in self.word_logps:
            for lp in sent:
                total = lp if total is None else add(total, lp)
        return total

    def n_words(self) -> int:
        return sum(len(s) for s in self.word_logps)


def teacher_force(params: GeneratorParams, regions: RegionSet,
                  sentences: list[list[int]]) -> TeacherForced:
    """Run the decoder with every token fixed to the given paragraph,
    collecting the log-probability assigned to each token and the stop
    distribution at each sentence step."""
    if len(sentences) == 0:
        raise ValueError("teacher forcing needs at least one sentence")
    ctx = _RegionContext(params, regions)
    e = ctx.embed_candidates(params)
    state = GenState.initial(params)
    prev_emb: Tensor = params.start_of_paragraph

    word_logps: list[list[Tensor]] = []
    stop_dists: list[Tensor] = []
    attn_a: list[Tensor] = []
    attn_b: list[list[Tensor]] = []
    for sent in sentences:
        if len(sent) == 0:
            raise ValueError("cannot teacher-force an empty sentence")
        topic, p_stop, a = _advance_topic(params, state, ctx, prev_emb)
        stop_dists.append(p_stop)
        attn_a.append(a)
        init_word_state(params, state)
        log_a = matmul(ctx.sel, log(a))
        sent_logps: list[Tensor] = []
        sent_b: list[Tensor] = []
        for tok in sent:
            if not (0 <= tok < params.vocab_size):
                raise IndexError(f"token id {tok} outside vocabulary of {params.vocab_size}")
            f_l, b = _language_attention(params, ctx, e, log_a, state.h_sent, state.h_word)
            dist = word_step(params, state, f_l)
            sent_logps.append(pick(log(dist), tok))
            sent_b.append(b)
        word_logps.append(sent_logps)
        attn_b.append(sent_b)
        prev_emb = sentence_embedding(sent, params.word_embed)
    return TeacherForced(word_logps, stop_dists, attn_a, attn_b)


def log_prob(params: GeneratorParams, regions: RegionSet,
             paragraph: Paragraph) -> Tensor:
    """Total log-probability of the paragraph: the sum over all sentences and
    word positions of the log-probability of each token, teacher-forced."""
    return teacher_force(params, regions, paragraph.sentences).total_log_prob()


# ---------------------------------------------------------------------------
# sampling and decoding

@dataclass
class SampleTrace:
    """A sampled paragraph plus everything policy-gradient training needs to
    replay and extend it: the actions taken, the per-position next-token
    distributions over the full word horizon (they do not depend on the tokens
    chosen, so rollouts can reuse them), and sentence-level state snapshots
    for restarting the recurrences mid-paragraph."""

    sentences: list[list[int]]
    stop_actions: list[int]
    stop_forced: bool
    word_dists: list[list[np.ndarray]]
    stop_dists: list[np.ndarray]
    states: list[tuple[np.ndarray, ...]]


def _sample_one_sentence(params, state, ctx, e, log_a, rng, n_max,
                         full_horizon: bool):
    """Sample word tokens for the current sentence. Distributions are computed
    with the shared (token-independent) word state; when full_horizon is set
    they are extended to n_max positions even past the sampled end token."""
    tokens: list[int] = []
    dists: list[np.ndarray] = []
    done = False
    for i in range(n_max):
        if done and not full_horizon:
            break
        f_l, _ = _language_attention(params, ctx, e, log_a, state.h_sent, state.h_word)
        dist = word_step(params, state, f_l)
        p = dist.data
        dists.append(p)
        if not done:
            tok = int(rng.choice(p.shape[0], p=p / p.sum()))
            tokens.append(tok)
            if tok == END_ID:
                done = True
    return tokens, dists


def sample_trace(params: GeneratorParams, regions: RegionSet,
                 rng: np.random.Generator, s_max: int, n_max: int) -> SampleTrace:
    """Sample a full paragraph, recording actions, distributions, and state
    snapshots. Word tokens and continue/stop decisions are both sampled; the
    stop at the sentence cap is forced, not sampled."""
    _check_limits(s_max, n_max)
    ctx = _RegionContext(params, regions)
    e = ctx.embed_candidates(params)
    state = GenState.initial(params)
    prev_emb: Tensor = params.start_of_paragraph

    sentences, stop_actions, word_dists, stop_dists, states = [], [], [], [], []
    stop_forced = False
    for t in range(1, s_max + 1):
        topic, p_stop, a = _advance_topic(params, state, ctx, prev_emb)
        states.append(state.snapshot())
        init_word_state(params, state)
        log_a = matmul(ctx.sel, log(a))
        tokens, dists = _sample_one_sentence(params, state, ctx, e, log_a, rng,
                                             n_max, full_horizon=True)
        sentences.append(tokens)
        word_dists.append(dists)
        stop_dists.append(p_stop.data)
        if t == s_max:
            stop_actions.append(STOP)
            stop_forced = True
            break
        act = int(rng.choice(2, p=p_stop.data / p_stop.data.sum()))
        stop_actions.append(act)
        if act == STOP:
            break
        prev_emb = sentence_embedding(tokens, params.word_embed)
    return SampleTrace(sentences, stop_actions, stop_forced,
                       word_dists, stop_dists, states)


def continue_paragraph(params: GeneratorParams, regions: RegionSet,
                       snapshot: tuple[np.ndarray, ...], completed_sentence: list[int],
                       rng: np.random.Generator, sentences_left: int,
                       n_max: int) -> list[list[int]]:
    """Sample follow-on sentences given the sentence-level state snapshot taken
    after some sentence's topic and a completed version of that sentence.
    Used by rollout scoring; returns only the new sentences."""
    if sentences_left <= 0:
        return []
    ctx = _RegionContext(params, regions)
    e = ctx.embed_candidates(params)
    state = GenState.initial(params)
    state.restore(snapshot)
    prev_emb = sentence_embedding(completed_sentence, params.word_embed)

    out: list[list[int]] = []
    for t in range(1, sentences_left + 1):
        topic, p_stop, a = _advance_topic(params, state, ctx, prev_emb)
        init_word_state(params, state)
        log_a = matmul(ctx.sel, log(a))
        tokens, _ = _sample_one_sentence(params, state, ctx, e, log_a, rng,
                                         n_max, full_horizon=False)
        out.append(tokens)
        if t == sentences_left:
            break
        act = int(rng.choice(2, p=p_stop.data / p_stop.data.sum()))
        if act == STOP:
            break
        prev_emb = sentence_embedding(tokens, params.word_embed)
    return out


# ---------------------------------------------------------------------------
# deterministic decoding

@dataclass
class GenerationResult:
    paragraph: Paragraph
    logprob: float
    stop_forced: bool
    conditioned: bool
    attention: list[dict] = field(default_factory=list)


def _check_limits(s_max: int, n_max: int) -> None:
    if not (isinstance(s_max, int) and s_max >= 1):
        raise ValueError(f"s_max must be a positive integer, got {s_max!r}")
    if not (isinstance(n_max, int) and n_max >= 1):
        raise ValueError(f"n_max must be a positive integer, got {n_max!r}")


def _validate_first_sentence(params: GeneratorParams, first_sentence: list[int]) -> None:
    if len(first_sentence) == 0:
        raise ValueError("conditioning first sentence is empty")
    for tok in first_sentence:
        if not (0 <= int(tok) < params.vocab_size):
            raise ValueError(f"conditioning token id {tok} outside vocabulary "
                             f"of {params.vocab_size}")
    if any(t == END_ID for t in first_sentence[:-1]):
        raise ValueError("conditioning first sentence has an interior end token")


def _greedy_sentence(params, state, ctx, e, log_a, n_max):
    """Argmax token at every position until the end token or the word cap."""
    tokens: list[int] = []
    logp = 0.0
    b_records: list[np.ndarray] = []
    for _ in range(n_max):
        f_l, b = _language_attention(params, ctx, e, log_a, state.h_sent, state.h_word)
        dist = word_step(params, state, f_l)
        tok = int(np.argmax(dist.data))
        tokens.append(tok)
        logp += float(np.log(dist.data[tok]))
        b_records.append(ctx.sel.data.T @ b.data)
        if tok == END_ID:
            break
    return tokens, logp, b_records


def _beam_sentence(params, state, ctx, e, log_a, n_max, width):
    """Per-sentence beam over token choices, ranked by total log-probability.

    The per-position distributions are shared by every hypothesis (they do not
    depend on the chosen tokens), so each position costs one forward step.
    Completed hypotheses end with the end token or run to the word cap."""
    live: list[tuple[float, list[int]]] = [(0.0, [])]
    completed: list[tuple[float, list[int]]] = []
    b_records: list[np.ndarray] = []
    for pos in range(n_max):
        f_l, b = _language_attention(params, ctx, e, log_a, state.h_sent, state.h_word)
        dist = word_step(params, state, f_l)
        b_records.append(ctx.sel.data.T @ b.data)
        logd = np.log(dist.data)
        top = np.argsort(logd)[::-1][:width + 1]  # enough non-end candidates
        nxt: list[tuple[float, list[int]]] = []
        for lp, toks in live:
            completed.append((lp + float(logd[END_ID]), toks + [END_ID]))
            for tok in top:
                if tok == END_ID:
                    continue
                nxt.append((lp + float(logd[tok]), toks + [int(tok)]))
        nxt.sort(key=lambda h: h[0], reverse=True)
        live = nxt[:width]
    completed.extend(live)  # word-cap truncation, no end token
    best_lp, best_tokens = max(completed, key=lambda h: h[0])
    return best_tokens, best_lp, b_records


def _decode_chain(params, regions, sentence_decoder, s_max, n_max,
                  first_sentence):
    """Shared sentence-level loop for greedy and beam chains. The stop decision
    is read off the topic before the sentence is decoded, and the chain ends
    when stop wins or the sentence cap is reached."""
    ctx = _RegionContext(params, regions)
    e = ctx.embed_candidates(params)
    state = GenState.initial(params)
    sentences: list[list[int]] = []
    attention: list[dict] = []
    total_logp = 0.0
    stop_forced = False

    if first_sentence is not None:
        sentences.append(list(first_sentence))
        prev_emb = sentence_embedding(first_sentence, params.word_embed)
    else:
        prev_emb = params.start_of_paragraph

    while len(sentences) < s_max:
        topic, p_stop, a = _advance_topic(params, state, ctx, prev_emb)
        init_word_state(params, state)
        log_a = matmul(ctx.sel, log(a))
        tokens, logp, b_records = sentence_decoder(params, state, ctx, e, log_a, n_max)
        sentences.append(tokens)
        total_logp += logp
        attention.append({
            "t": len(sentences),
            "a": [float(v) for v in a.data],
            "b_per_word": [[float(v) for v in row] for row in b_records[:len(tokens)]],
        })
        stop = bool(p_stop.data[STOP] > p_stop.data[CONTINUE])
        if stop:
            break
        prev_emb = sentence_embedding(tokens, params.word_embed)
    else:
        if first_sentence is None or len(sentences) > 1:
            stop_forced = len(sentences) == s_max
    return sentences, total_logp, attention, stop_forced


def _decode_sample(params, regions, rng, s_max, n_max, first_sentence):
    ctx = _RegionContext(params, regions)
    e = ctx.embed_candidates(params)
    state = GenState.initial(params)
    sentences: list[list[int]] = []
    attention: list[dict] = []
    total_logp = 0.0
    stop_forced = False

    if first_sentence is not None:
        sentences.append(list(first_sentence))
        prev_emb = sentence_embedding(first_sentence, params.word_embed)
    else:
        prev_emb = params.start_of_paragraph

    while len(sentences) < s_max:
        topic, p_stop, a = _advance_topic(params, state, ctx, prev_emb)
        init_word_state(params, state)
        log_a = matmul(ctx.sel, log(a))
        tokens: list[int] = []
        b_records: list[np.ndarray] = []
        for _ in range(n_max):
            f_l, b = _language_attention(params, ctx, e, log_a, state.h_sent, state.h_word)
            dist = word_step(params, state, f_l)
            p = dist.data
            tok = int(rng.choice(p.shape[0], p=p / p.sum()))
            tokens.append(tok)
            total_logp += float(np.log(p[tok]))
            b_records.append(ctx.sel.data.T @ b.data)
            if tok == END_ID:
                break
        sentences.append(tokens)
        attention.append({
            "t": len(sentences),
            "a": [float(v) for v in a.data],
            "b_per_word": [[float(v) for v in row] for row in b_records],
        })
        if len(sentences) == s_max:
            stop_forced = True
            break
        act = int(rng.choice(2, p=p_stop.data / p_stop.data.sum()))
        if act == STOP:
            break
        prev_emb = sentence_embedding(tokens, params.word_embed)
    return sentences, total_logp, attention, stop_forced


def generate(params: GeneratorParams, regions: RegionSet, mode: str = "greedy",
             *, seed: int | None = None, rng: np.random.Generator | None = None,
             beam_width: int = 2, s_max: int = 6, n_max: int = 30,
             first_sentence: list[int] | None = None) -> GenerationResult:
    """Decode a paragraph for one region set.

    mode "greedy" takes the argmax token everywhere; "sample" draws tokens and
    stop decisions from the model distributions (seeded); "beam" runs a
    per-sentence beam re-seeded from the best hypothesis at each boundary and
    returns the better of the beam chain and the greedy chain by total
    log-probability, so its score never falls below greedy's. The log-prob
    reported counts word tokens only. A conditioning first sentence is copied
    into the output verbatim and drives the paragraph recurrence; it
    contributes nothing to the reported log-probability.
    """
    _check_limits(s_max, n_max)
    if first_sentence is not None:
        _validate_first_sentence(params, first_sentence)

    if mode == "greedy":
        sentences, logp, attn, forced = _decode_chain(
            params, regions, _greedy_sentence, s_max, n_max, first_sentence)
    elif mode == "sample":
        if rng is None:
            rng = np.random.default_rng(seed)
        sentences, logp, attn, forced = _decode_sample(
            params, regions, rng, s_max, n_max, first_sentence)
    elif mode == "beam":
        if beam_width < 1:
            raise ValueError("beam_width must be >= 1")

        def beam_decoder(p, st, ctx, e, la, nm):
            return _beam_sentence(p, st, ctx, e, la, nm, beam_width)

        beam_out = _decode_chain(params, regions, beam_decoder, s_max, n_max,
                                 first_sentence)
        greedy_out = _decode_chain(params, regions, _greedy_sentence, s_max,
                                   n_max, first_sentence)
        # The candidate set ranked by total log-prob contains the greedy path.
        sentences, logp, attn, forced = (
            beam_out if beam_out[1] >= greedy_out[1] else greedy_out)
    else:
        raise ValueError(f"unknown decode mode {mode!r}")

    return GenerationResult(
        paragraph=Paragraph(sentences),
        logprob=logp,
        stop_forced=forced,
        conditioned=first_sentence is not None,
        attention=attn,
    )
