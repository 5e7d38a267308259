"""Seed-paired comparison of two loss settings on a synthetic corpus."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .aploss import LossConfig
from .corpus import Dataset, generate_corpus, toy_grammar
from .metrics import EvalReport, evaluate
from .model import ModelConfig, Seq2Tree, Vocab, predict, train
from .transition import format_action

@dataclass
class RunResult:
    seed: int
    report: EvalReport
    train_em: float

@dataclass
class Comparison:
    baseline: list[RunResult] = field(default_factory=list)
    treatment: list[RunResult] = field(default_factory=list)

    def wins(self, percent: int) -> int:
        """Seed pairings where the treatment's prefix-EM on actions beats the baseline's."""
        return sum(t.report.prefix_actions[percent] > b.report.prefix_actions[percent]
                   for b, t in zip(self.baseline, self.treatment))

    @staticmethod
    def mean_em(runs: Sequence[RunResult]) -> float:
        return sum(r.report.em for r in runs) / len(runs)

def run_once(dataset: Dataset, loss_cfg: LossConfig, seed: int, epochs: int = 30, beam: int = 5,
             config: ModelConfig | None = None, split: str = "test") -> RunResult:
    base = config or ModelConfig()
    cfg = ModelConfig(**{**base.__dict__, "seed": seed, "epochs": epochs, "beam": beam})
    examples = dataset.split("train")
    model = Seq2Tree(toy_grammar(), Vocab.build(examples), cfg)
    log = train(model, examples, loss_cfg, epochs=epochs)
    held = dataset.split(split)
    preds = [predict(model, e.nl, beam) for e in held]
    report = evaluate([p.code or "" for p in preds], [e.code for e in held],
                      [[format_action(a) for a in p.actions] for p in preds],
                      [[format_action(s.action) for s in e.actions] for e in held])
    return RunResult(seed, report, log[-1].train_em)

def compare(baseline: LossConfig, treatment: LossConfig, seeds: Sequence[int] = (0, 1, 2, 3, 4), *,
            dataset: Dataset | None = None, epochs: int = 30, beam: int = 5, on_run=None) -> Comparison:
    dataset = dataset or generate_corpus(n=1200, seed=0, split=(1000, 100, 100))
    out = Comparison()
    for seed in seeds:
        for name, cfg in (("baseline", baseline), ("treatment", treatment)):
            res = run_once(dataset, cfg, seed, epochs, beam)
            getattr(out, name).append(res)
            if on_run is not None:
                on_run(name, res)
    return out
