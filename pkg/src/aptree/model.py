"""Attentional seq2tree model over the transition system.

The encoder is a bidirectional LSTM over NL tokens.  The decoder is an LSTM
whose input at step t is ``[prev action embedding : previous attentional
vector : parent action embedding]``.  Composite fields are scored against
constructor (and Reduce) embeddings; primitive fields mix a generation
softmax over the token vocabulary with a copy softmax over input positions.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .aploss import LossConfig, step_weights
from .asdl import Grammar
from .corpus import Example
from .transition import REDUCE, Action, ApplyRule, FrontierState, GenToken, Reduce, TransitionError

UNK = "<unk>"
PAD = "<pad>"
CHECKPOINT_VERSION = 1
CHECKPOINT_MAGIC = b"APTREE-CKPT\n"


@dataclass
class ModelConfig:
    word_dim: int = 32
    action_dim: int = 32
    hidden: int = 64
    seed: int = 0
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 10
    beam: int = 5
    clip: float = 5.0
    traversal: str = "preorder"

    def __post_init__(self):
        for name in ("word_dim", "action_dim", "hidden", "epochs", "batch_size", "beam"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


class ScheduleMode(str, Enum):
    TEACHER_FORCING = "tf"
    FIXED = "fixed"
    EXPONENTIAL = "ed"
    LINEAR = "ld"


@dataclass(frozen=True)
class SamplingSchedule:
    """Probability of feeding the gold previous action, per epoch."""

    mode: ScheduleMode = ScheduleMode.TEACHER_FORCING
    p: float = 1.0
    base: float = 0.99

    def __post_init__(self):
        object.__setattr__(self, "mode", ScheduleMode(self.mode))
        if not 0 <= self.p <= 1:
            raise ValueError("p must lie in [0, 1]")

    def prob(self, epoch: int, total_epochs: int) -> float:
        if self.mode is ScheduleMode.TEACHER_FORCING:
            return 1.0
        if self.mode is ScheduleMode.FIXED:
            return self.p
        if self.mode is ScheduleMode.EXPONENTIAL:
            return self.base ** epoch
        if total_epochs <= 1:
            return 1.0
        return max(0.0, 1.0 - epoch / (total_epochs - 1))

    @classmethod
    def parse(cls, text: str) -> "SamplingSchedule":
        """``tf``, ``fixed:0.5``, ``ed:0.99`` or ``ld``."""
        kind, _, arg = text.partition(":")
        kind = kind.lower()
        if kind == "tf":
            return cls()
        if kind == "fixed":
            return cls(ScheduleMode.FIXED, p=float(arg))
        if kind == "ed":
            return cls(ScheduleMode.EXPONENTIAL, base=float(arg or 0.99))
        if kind == "ld":
            return cls(ScheduleMode.LINEAR)
        raise ValueError(f"unknown schedule {text!r}")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int):
        self.epoch, self.batch = epoch, batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")


@dataclass
class Vocab:
    nl: list[str]
    tokens: list[str]

    def __post_init__(self):
        self.nl_index = {w: i for i, w in enumerate(self.nl)}
        self.token_index = {w: i for i, w in enumerate(self.tokens)}

    @classmethod
    def build(cls, examples: Sequence[Example]) -> "Vocab":
        nl = sorted({w for e in examples for w in e.nl})
        toks = sorted({s.action.token for e in examples for s in e.actions if isinstance(s.action, GenToken)})
        return cls([PAD, UNK] + nl, [UNK] + toks)

    def nl_ids(self, words: Sequence[str]) -> np.ndarray:
        return np.array([self.nl_index.get(w, 1) for w in words], dtype=np.int64)


def _uniform(rng: np.random.Generator, shape: tuple, scale: float) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


@dataclass
class Prepared:
    """Per-example arrays for teacher-forced computation."""

    nl_ids: np.ndarray
    nl_tokens: tuple[str, ...]
    is_prim: np.ndarray      # (T,)
    rule_gold: np.ndarray    # (T,)
    rule_mask: np.ndarray    # (T, C+1)
    gen_gold: np.ndarray     # (T,)
    gen_mask: np.ndarray     # (T, Vt+1)
    copy_match: np.ndarray   # (T, n)
    prev_row: np.ndarray     # (T,)
    parent_row: np.ndarray   # (T,)
    gold_row: np.ndarray     # (T,)
    weights: np.ndarray      # (T,)


@dataclass
class DecoderState:
    hc: np.ndarray   # (1, 2H) recurrent [h : c]
    att: np.ndarray  # (1, H) attentional vector from the previous step


@dataclass
class Encoding:
    z: np.ndarray        # (n, 2H)
    tokens: tuple[str, ...]
    hc0: np.ndarray      # (1, 2H) initial decoder [h : c]


@dataclass
class Hypothesis:
    actions: tuple[Action, ...]
    score: float


@dataclass
class EpochLog:
    epoch: int
    loss: float
    train_em: float
    sampling_p: float


def backprop(loss: ad.Tensor, leaves: dict[str, ad.Tensor], params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    loss.backward()
    return {k: (np.zeros_like(params[k]) if leaves[k].grad is None else leaves[k].grad) for k in params}


class Seq2Tree:
    def __init__(self, grammar: Grammar, vocab: Vocab, config: ModelConfig | None = None,
                 params: dict[str, np.ndarray] | None = None):
        self.grammar = grammar
        self.vocab = vocab
        self.config = config or ModelConfig()
        self.ctors = list(grammar.constructors)
        self.ctor_index = {c: i for i, c in enumerate(self.ctors)}
        self.C = len(self.ctors)
        self.Vt = len(vocab.tokens)
        self.start_row = self.C + 1 + self.Vt
        self.params = params if params is not None else self._init_params()

    # -- parameters -----------------------------------------------------------

    def _init_params(self) -> dict[str, np.ndarray]:
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        H, dw, da = cfg.hidden, cfg.word_dim, cfg.action_dim
        n_actions = self.C + 1 + self.Vt + 1

        def w(rows, cols):
            return _uniform(rng, (rows, cols), 1 / math.sqrt(rows))

        def lstm_bias():
            b = np.zeros((1, 4 * H))
            b[0, H:2 * H] = 1.0  # forget gate
            return b

        return {
            "word_emb": _uniform(rng, (len(self.vocab.nl), dw), 0.1),
            "action_emb": _uniform(rng, (n_actions, da), 0.1),
            "enc_fwd_W": w(dw + H, 4 * H), "enc_fwd_b": lstm_bias(),
            "enc_bwd_W": w(dw + H, 4 * H), "enc_bwd_b": lstm_bias(),
            "init_W": w(2 * H, H), "init_b": np.zeros((1, H)),
            "dec_W": w(2 * da + 2 * H, 4 * H), "dec_b": lstm_bias(),
            "att_W": w(H, 2 * H),
            "comb_W": w(3 * H, H),
            "rule_W": w(H, da),
            "gen_W": w(H, da),
            "gate_W": w(H, 2), "gate_b": np.zeros((1, 2)),
            "copy_W": w(H, 2 * H),
        }

    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    # -- action rows -----------------------------------------------------------

    def action_row(self, action: Action | None) -> int:
        if action is None:
            return self.start_row
        if isinstance(action, ApplyRule):
            return self.ctor_index[action.ctor]
        if isinstance(action, Reduce):
            return self.C
        return self.C + 1 + self.vocab.token_index.get(action.token, 0)

    def _gen_to_action(self, j: int) -> Action:
        return REDUCE if j == 0 else GenToken(self.vocab.tokens[j - 1])

    # -- preparation -----------------------------------------------------------

    def prepare(self, ex: Example, loss_cfg: LossConfig | None = None) -> Prepared:
        loss_cfg = loss_cfg or LossConfig.cross_entropy()
        steps = ex.actions
        T, n = len(steps), len(ex.nl)
        if n == 0:
            raise ValueError("empty NL input")
        state = FrontierState(self.grammar, self.config.traversal)
        is_prim = np.zeros(T)
        rule_gold = np.zeros(T, dtype=np.int64)
        gen_gold = np.zeros(T, dtype=np.int64)
        rule_mask = np.ones((T, self.C + 1), dtype=bool)
        gen_mask = np.ones((T, self.Vt + 1), dtype=bool)
        copy_match = np.zeros((T, n))
        prev_row = np.empty(T, dtype=np.int64)
        parent_row = np.empty(T, dtype=np.int64)
        gold_row = np.empty(T, dtype=np.int64)
        for i, s in enumerate(steps):
            prim, rmask, gmask = self._masks(state)
            a = s.action
            if prim:
                is_prim[i] = 1
                gen_mask[i] = gmask
                if isinstance(a, GenToken):
                    gen_gold[i] = 1 + self.vocab.token_index.get(a.token, 0)
                    copy_match[i] = [w == a.token for w in ex.nl]
            else:
                rule_mask[i] = rmask
                rule_gold[i] = self.C if isinstance(a, Reduce) else self.ctor_index[a.ctor]
            prev_row[i] = self.action_row(steps[i - 1].action if i else None)
            parent_row[i] = self.start_row if s.parent_index == 0 else self.action_row(steps[s.parent_index - 1].action)
            gold_row[i] = self.action_row(a)
            state.apply(a)
        weights = np.array(step_weights(steps, loss_cfg).weights)
        return Prepared(self.vocab.nl_ids(ex.nl), tuple(ex.nl), is_prim, rule_gold, rule_mask, gen_gold, gen_mask,
                        copy_match, prev_row, parent_row, gold_row, weights)

    def _masks(self, state: FrontierState) -> tuple[bool, np.ndarray | None, np.ndarray | None]:
        allowed = state.valid()
        if any(isinstance(a, GenToken) for a in allowed):
            gmask = np.ones(self.Vt + 1, dtype=bool)
            gmask[1] = False  # never generate <unk>
            gmask[0] = REDUCE in allowed
            return True, None, gmask
        rmask = np.zeros(self.C + 1, dtype=bool)
        for a in allowed:
            rmask[self.C if isinstance(a, Reduce) else self.ctor_index[a.ctor]] = True
        return False, rmask, None

    # -- network pieces ----------------------------------------------------------

    def _leaves(self, grad: bool) -> dict[str, ad.Tensor]:
        return {k: (ad.parameter(v) if grad else ad.Tensor(v)) for k, v in self.params.items()}

    def _encode(self, P, ids: np.ndarray, lengths: np.ndarray):
        """ids (B, n) padded; returns Z (B, n, 2H), mask (B, n), initial [h : c]."""
        B, n = ids.shape
        H = self.config.hidden
        mask = np.arange(n)[None, :] < lengths[:, None]
        outs_f, outs_b = [None] * n, [None] * n
        for direction, order, outs in (("fwd", range(n), outs_f), ("bwd", range(n - 1, -1, -1), outs_b)):
            hc = ad.Tensor(np.zeros((B, 2 * H)))
            for i in order:
                m = mask[:, i:i + 1].astype(np.float64)
                x = ad.embed(P["word_emb"], ids[:, i])
                hc = ad.lstm_cell(x, hc, P[f"enc_{direction}_W"], P[f"enc_{direction}_b"], m)
                outs[i] = hc
        Z = ad.concat([ad.stack(outs_f, axis=1)[:, :, :H], ad.stack(outs_b, axis=1)[:, :, :H]], axis=-1)
        mean = ad.einsum("bn,bnk->bk", ad.Tensor(mask / lengths[:, None]), Z)
        h0 = ad.tanh(mean @ P["init_W"] + P["init_b"])
        return Z, mask, ad.concat([h0, ad.Tensor(np.zeros((B, H)))])

    def _step(self, P, Z, mask, prev_row, parent_row, hc, att_prev):
        H = self.config.hidden
        x = ad.concat([ad.embed(P["action_emb"], prev_row), att_prev, ad.embed(P["action_emb"], parent_row)])
        hc = ad.lstm_cell(x, hc, P["dec_W"], P["dec_b"])
        h = hc[:, :H]
        alpha = ad.softmax(ad.einsum("bnk,bk->bn", Z, h @ P["att_W"]), mask)
        ctx = ad.einsum("bn,bnk->bk", alpha, Z)
        att = ad.tanh(ad.concat([ctx, h]) @ P["comb_W"])
        rule_logits = ad.einsum("bd,rd->br", att @ P["rule_W"], P["action_emb"][0:self.C + 1])
        gen_logits = ad.einsum("bd,rd->br", att @ P["gen_W"], P["action_emb"][self.C:self.C + 1 + self.Vt])
        gate = ad.softmax(att @ P["gate_W"] + P["gate_b"])
        copy_scores = ad.einsum("bnk,bk->bn", Z, att @ P["copy_W"])
        return hc, att, rule_logits, gen_logits, gate, copy_scores

    # -- teacher-forced loss -------------------------------------------------------

    def batch_loss(self, batch: Sequence[Prepared], *, grad: bool = True, p_gold: float = 1.0,
                   rng: np.random.Generator | None = None, sampled: list | None = None, track: bool = True):
        """Weighted NLL summed over steps and averaged over the batch.

        Returns (loss tensor, per-example all-steps-argmax-correct flags, parameter leaves).
        When ``p_gold < 1`` each example's previous-action input is replaced,
        with probability ``1 - p_gold``, by an action sampled from the model's
        own distribution at the previous step.  The frontier always follows
        the gold derivation.  ``sampled`` (if given) collects, per step, the
        boolean array of examples fed a sampled action.
        """
        P = self._leaves(grad)
        B = len(batch)
        n_max = max(len(p.nl_ids) for p in batch)
        T_max = max(len(p.weights) for p in batch)
        lengths = np.array([len(p.nl_ids) for p in batch])
        ids = np.zeros((B, n_max), dtype=np.int64)
        for b, p in enumerate(batch):
            ids[b, :len(p.nl_ids)] = p.nl_ids

        def pad(name, fill):
            out = np.full((B, T_max), fill, dtype=getattr(batch[0], name).dtype)
            for b, p in enumerate(batch):
                arr = getattr(p, name)
                out[b, :len(arr)] = arr
            return out

        is_prim = pad("is_prim", 0.0)
        rule_gold = pad("rule_gold", 0)
        gen_gold = pad("gen_gold", 0)
        prev_row = pad("prev_row", self.start_row)
        parent_row = pad("parent_row", self.start_row)
        weights = pad("weights", 0.0)
        rule_mask = np.ones((B, T_max, self.C + 1), dtype=bool)
        gen_mask = np.ones((B, T_max, self.Vt + 1), dtype=bool)
        copy_match = np.zeros((B, T_max, n_max))
        valid = np.zeros((B, T_max))
        for b, p in enumerate(batch):
            T = len(p.weights)
            rule_mask[b, :T] = p.rule_mask
            gen_mask[b, :T] = p.gen_mask
            copy_match[b, :T, :len(p.nl_ids)] = p.copy_match
            valid[b, :T] = 1.0

        Z, mask, hc = self._encode(P, ids, lengths)
        att = ad.Tensor(np.zeros((B, self.config.hidden)))
        total = ad.Tensor(0.0)
        correct = np.ones((B, T_max), dtype=bool)
        feed = prev_row[:, 0]
        for t in range(T_max):
            hc, att, rule_logits, gen_logits, gate, copy_scores = self._step(
                P, Z, mask, feed, parent_row[:, t], hc, att)
            rule_lp = ad.gather(ad.log_softmax(rule_logits, rule_mask[:, t]), rule_gold[:, t])
            gen_p = ad.softmax(gen_logits, gen_mask[:, t])
            copy_p = ad.softmax(copy_scores, mask)
            p_tok = gate[:, 0] * ad.gather(gen_p, gen_gold[:, t]) + gate[:, 1] * (copy_p * copy_match[:, t]).sum(axis=-1)
            prim = is_prim[:, t]
            tok_lp = ad.log(p_tok * prim + (1 - prim))
            lp = rule_lp * (1 - prim) + tok_lp
            total = total + (lp * (-weights[:, t] * valid[:, t])).sum()

            rl = np.where(rule_mask[:, t], rule_logits.value, -np.inf)
            if track:
                # argmax correctness, used for teacher-forced train EM
                tok_ok = self._token_scores_batch(gate.value, gen_p.value, copy_p.value, batch, gen_gold[:, t],
                                                  copy_match[:, t], prim)
                ok = np.where(prim > 0, tok_ok, rl.argmax(axis=1) == rule_gold[:, t])
                correct[:, t] = ok | (valid[:, t] == 0)

            if t + 1 < T_max:
                feed = prev_row[:, t + 1].copy()
                if p_gold < 1.0:
                    use_sample = rng.random(B) >= p_gold
                    if sampled is not None:
                        sampled.append(use_sample & (valid[:, t + 1] > 0))
                    for b in np.nonzero(use_sample)[0]:
                        feed[b] = self._sample_row(rng, prim[b] > 0, rl[b], gate.value[b], gen_p.value[b],
                                                   copy_p.value[b], batch[b].nl_tokens)
        return total * (1.0 / B), correct.all(axis=1), P

    def _token_scores_batch(self, gate, gen_p, copy_p, batch, gen_gold, copy_match, prim) -> np.ndarray:
        """Whether the gold token (or Reduce) is the argmax of the gen/copy mixture."""
        out = np.zeros(len(batch), dtype=bool)
        for b in np.nonzero(prim > 0)[0]:
            scores = self._mixture(gate[b], gen_p[b], copy_p[b], batch[b].nl_tokens)
            best = max(scores.items(), key=lambda kv: kv[1])[0]
            j = gen_gold[b]
            if copy_match[b].any():
                gold = batch[b].nl_tokens[int(np.argmax(copy_match[b]))]
                out[b] = best == ("tok", gold)
            else:
                out[b] = best == (("reduce", None) if j == 0 else ("tok", self.vocab.tokens[j - 1]))
        return out

    def _mixture(self, gate, gen_p, copy_p, nl_tokens) -> dict:
        """Probability of each candidate primitive action: ('reduce', None) or ('tok', value)."""
        scores: dict = {}
        if gen_p[0] > 0:
            scores[("reduce", None)] = gate[0] * gen_p[0]
        for j in range(2, self.Vt + 1):
            if gen_p[j] > 0:
                scores[("tok", self.vocab.tokens[j - 1])] = gate[0] * gen_p[j]
        for i, w in enumerate(nl_tokens):
            if i < len(copy_p):
                key = ("tok", w)
                scores[key] = scores.get(key, 0.0) + gate[1] * copy_p[i]
        return scores

    def _sample_row(self, rng, prim: bool, rule_logits, gate, gen_p, copy_p, nl_tokens) -> int:
        if not prim:
            p = np.exp(rule_logits - rule_logits.max())
            p /= p.sum()
            return int(rng.choice(len(p), p=p))
        if rng.random() < gate[0]:
            return self.C + int(rng.choice(len(gen_p), p=gen_p / gen_p.sum()))
        cp = copy_p[:len(nl_tokens)]
        i = int(rng.choice(len(cp), p=cp / cp.sum()))
        return self.action_row(GenToken(nl_tokens[i]))

    def loss(self, ex: Example, loss_cfg: LossConfig | None = None) -> float:
        with ad.no_grad():
            val, _, _ = self.batch_loss([self.prepare(ex, loss_cfg)], grad=False)
        return float(val.value)

    def gradients(self, ex: Example, loss_cfg: LossConfig | None = None) -> tuple[float, dict[str, np.ndarray]]:
        loss, _, P = self.batch_loss([self.prepare(ex, loss_cfg)], grad=True, track=False)
        return float(loss.value), backprop(loss, P, self.params)


    # -- inference -------------------------------------------------------------------

    def encode(self, nl: Sequence[str]) -> Encoding:
        if not nl:
            raise ValueError("empty NL input")
        with ad.no_grad():
            P = self._leaves(False)
            Z, _, hc = self._encode(P, self.vocab.nl_ids(nl)[None, :], np.array([len(nl)]))
        return Encoding(Z.value[0], tuple(nl), hc.value)

    def initial_state(self, enc: Encoding) -> DecoderState:
        return DecoderState(enc.hc0, np.zeros((1, self.config.hidden)))

    def decode_step(self, state: DecoderState, prev_action: Action | None, parent_action: Action | None,
                    enc: Encoding, frontier: FrontierState) -> tuple[dict[Action, float], DecoderState]:
        """Distribution over the concrete actions legal at ``frontier``."""
        dists, states = self._decode_batch([state], [prev_action], [parent_action], enc, [frontier])
        return dists[0], states[0]

    def _decode_batch(self, states, prevs, parents, enc: Encoding, frontiers):
        for fr in frontiers:
            if fr.complete:
                raise TransitionError("derivation is complete")
        B = len(states)
        with ad.no_grad():
            P = self._leaves(False)
            Z = ad.Tensor(np.broadcast_to(enc.z, (B,) + enc.z.shape))
            mask = np.ones((B, enc.z.shape[0]), dtype=bool)
            hc = ad.Tensor(np.concatenate([s.hc for s in states]))
            att = ad.Tensor(np.concatenate([s.att for s in states]))
            prev_row = np.array([self.action_row(a) for a in prevs])
            parent_row = np.array([self.action_row(a) for a in parents])
            hc, att, rule_logits, gen_logits, gate, copy_scores = self._step(
                P, Z, mask, prev_row, parent_row, hc, att)
        dists = []
        for b, fr in enumerate(frontiers):
            prim, rmask, gmask = self._masks(fr)
            if prim:
                gl = np.where(gmask, gen_logits.value[b], -np.inf)
                gen_p = np.exp(gl - gl.max())
                gen_p /= gen_p.sum()
                cs = copy_scores.value[b]
                copy_p = np.exp(cs - cs.max())
                copy_p /= copy_p.sum()
                mix = self._mixture(gate.value[b], gen_p, copy_p, enc.tokens)
                dist = {REDUCE if k[0] == "reduce" else GenToken(k[1]): float(v) for k, v in mix.items()}
            else:
                rl = np.where(rmask, rule_logits.value[b], -np.inf)
                p = np.exp(rl - rl.max())
                p /= p.sum()
                dist = {}
                for j in np.nonzero(rmask)[0]:
                    dist[REDUCE if j == self.C else ApplyRule(self.ctors[j])] = float(p[j])
            dists.append(dist)
        new_states = [DecoderState(hc.value[b:b + 1], att.value[b:b + 1]) for b in range(B)]
        return dists, new_states

    def beam_search(self, nl: Sequence[str], beam: int | None = None, max_steps: int = 100) -> list[Hypothesis]:
        """Complete action sequences ranked by total log-probability (best first).

        Returns an empty list if nothing completes within ``max_steps``.
        """
        beam = self.config.beam if beam is None else beam
        if beam < 1:
            raise ValueError("beam must be >= 1")
        enc = self.encode(nl)
        s0 = self.initial_state(enc)
        live = [(0.0, (), FrontierState(self.grammar, self.config.traversal), s0, [])]
        finished: list[Hypothesis] = []
        for _ in range(max_steps):
            if not live or len(finished) >= beam:
                break
            prevs = [acts[-1] if acts else None for _, acts, _, _, _ in live]
            parents = [acts[fr.parent_index - 1] if acts else None for _, acts, fr, _, _ in live]
            dists, states = self._decode_batch([h[3] for h in live], prevs, parents, enc, [h[2] for h in live])
            cands = []
            for k, ((score, acts, fr, _, _), dist) in enumerate(zip(live, dists)):
                for a, p in dist.items():
                    if p > 0:
                        cands.append((score + math.log(p), k, str(a), a))
            cands.sort(key=lambda x: (-x[0], x[1], x[2]))
            new_live = []
            for score, k, _, a in cands[:beam - len(finished)]:
                fr = live[k][2].copy()
                fr.apply(a)
                acts = live[k][1] + (a,)
                if fr.complete:
                    finished.append(Hypothesis(acts, score))
                else:
                    new_live.append((score, acts, fr, states[k], []))
            live = new_live
        finished.sort(key=lambda h: -h.score)
        return finished

    def greedy(self, nl: Sequence[str], max_steps: int = 100) -> Hypothesis | None:
        enc = self.encode(nl)
        state = self.initial_state(enc)
        fr = FrontierState(self.grammar, self.config.traversal)
        acts: list[Action] = []
        score = 0.0
        for _ in range(max_steps):
            parent = acts[fr.parent_index - 1] if acts else None
            dist, state = self.decode_step(state, acts[-1] if acts else None, parent, enc, fr)
            a, p = min(((a, p) for a, p in dist.items() if p > 0), key=lambda ap: (-math.log(ap[1]), str(ap[0])))
            score += math.log(p)
            fr.apply(a)
            acts.append(a)
            if fr.complete:
                return Hypothesis(tuple(acts), score)
        return None

    # -- checkpoints --------------------------------------------------------------------

    def save(self, path) -> None:
        """Write ``MAGIC | header length | JSON header | float64 tensors`` (byte-for-byte reproducible)."""
        names = sorted(self.params)
        meta = {"version": CHECKPOINT_VERSION, "config": asdict(self.config), "grammar": self.grammar.source,
                "vocab": {"nl": self.vocab.nl, "tokens": self.vocab.tokens},
                "tensors": [[k, list(self.params[k].shape)] for k in names]}
        header = json.dumps(meta, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(len(header).to_bytes(8, "little"))
            fh.write(header)
            for k in names:
                fh.write(np.ascontiguousarray(self.params[k], dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "Seq2Tree":
        from .asdl import parse_grammar

        with open(path, "rb") as fh:
            if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
                raise ValueError(f"{path} is not a checkpoint")
            size = int.from_bytes(fh.read(8), "little")
            meta = json.loads(fh.read(size).decode("utf-8"))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
            params = {}
            for name, shape in meta["tensors"]:
                count = int(np.prod(shape))
                params[name] = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
        return cls(parse_grammar(meta["grammar"]), Vocab(**meta["vocab"]), ModelConfig(**meta["config"]), params)


# -- training -----------------------------------------------------------------------------


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params, self.lr, self.betas, self.eps = params, lr, betas, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.betas
        lr_t = self.lr * math.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            self.params[k] -= lr_t * self.m[k] / (np.sqrt(self.v[k]) + self.eps)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        for g in grads.values():
            g *= max_norm / norm
    return norm


def _bucketed_batches(prepared: Sequence[Prepared], bs: int, rng: np.random.Generator, chunk: int = 10):
    """Shuffle, sort chunks of ``chunk * bs`` examples by length, then shuffle the batches."""
    order = rng.permutation(len(prepared))
    batches = []
    for start in range(0, len(order), bs * chunk):
        part = sorted(order[start:start + bs * chunk], key=lambda i: (len(prepared[i].weights), i))
        batches.extend(part[k:k + bs] for k in range(0, len(part), bs))
    return [batches[i] for i in rng.permutation(len(batches))]


def train(model: Seq2Tree, examples: Sequence[Example], loss_cfg: LossConfig | None = None,
          schedule: SamplingSchedule | None = None, epochs: int | None = None,
          on_epoch=None) -> list[EpochLog]:
    """Train in place; all randomness derives from ``model.config.seed``.

    ``loss`` in the log is the epoch's mean per-example training objective;
    ``train_em`` is the fraction of examples whose every gold action was the
    argmax under the inputs fed during that epoch.
    """
    loss_cfg = loss_cfg or LossConfig.cross_entropy()
    schedule = schedule or SamplingSchedule()
    epochs = model.config.epochs if epochs is None else epochs
    prepared = [model.prepare(ex, loss_cfg) for ex in examples]
    shuffle_seq, sample_seq = np.random.SeedSequence(model.config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    sample_rng = np.random.default_rng(sample_seq)
    opt = Adam(model.params, lr=model.config.lr)
    bs = model.config.batch_size
    log: list[EpochLog] = []
    for epoch in range(epochs):
        p_gold = schedule.prob(epoch, epochs)
        total, n_correct = 0.0, 0
        for bi, idx in enumerate(_bucketed_batches(prepared, bs, shuffle_rng)):
            batch = [prepared[i] for i in idx]
            loss, correct, leaves = model.batch_loss(batch, grad=True, p_gold=p_gold, rng=sample_rng)
            value = float(loss.value)
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, bi)
            grads = backprop(loss, leaves, model.params)
            clip_gradients(grads, model.config.clip)
            opt.step(grads)
            total += value * len(batch)
            n_correct += int(correct.sum())
        entry = EpochLog(epoch, total / len(prepared), n_correct / len(prepared), p_gold)
        log.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
    return log


def grad_check(model: Seq2Tree, ex: Example, loss_cfg: LossConfig | None = None, step: float = 1e-5,
               floor: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients over all parameters.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps
    gradients that are zero up to rounding from dominating the maximum.
    """
    _, analytic = model.gradients(ex, loss_cfg)
    prep = model.prepare(ex, loss_cfg)

    def f() -> float:
        with ad.no_grad():
            val, _, _ = model.batch_loss([prep], grad=False, track=False)
        return float(val.value)

    worst = 0.0
    for name, arr in model.params.items():
        flat = arr.reshape(-1)
        g = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f()
            flat[i] = orig - step
            down = f()
            flat[i] = orig
            numeric = (up - down) / (2 * step)
            err = abs(g[i] - numeric) / max(abs(g[i]), abs(numeric), floor)
            worst = max(worst, err)
    return worst


# -- prediction helpers ----------------------------------------------------------------------


@dataclass
class Prediction:
    actions: tuple[Action, ...]
    code: str | None
    score: float


def predict(model: Seq2Tree, nl: Sequence[str], beam: int | None = None, max_steps: int = 100) -> Prediction:
    from .ast import ast_to_code
    from .transition import actions_to_ast

    hyps = model.beam_search(nl, beam, max_steps)
    if not hyps:
        return Prediction((), None, -math.inf)
    best = hyps[0]
    tree = actions_to_ast(model.grammar, best.actions, model.config.traversal)
    return Prediction(best.actions, ast_to_code(tree), best.score)
