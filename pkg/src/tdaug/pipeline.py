"""Command implementations behind the CLI.

Every command reads a :class:`RunConfig`, writes its artifacts into the
output directory under a lockfile, and records one manifest under
``<out>/manifests/`` (never overwritten).
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from filelock import FileLock

from . import __version__
from .align import (
    AlignmentLinks,
    TranslationLexicon,
    lexical_tables_from_alignments,
    load_alignments,
    train_ibm1,
    viterbi_alignments,
)
from .analysis import augmentation_stats, corpus_bleu, length_ratio, rare_word_coverage, write_report
from .augment import AugmentationModels, AugmentedCorpus, oversample, read_records, run_tda
from .bpe import BPE, MergeTable, learn_bpe
from .config import RunConfig
from .corpus import (
    ParallelCorpus,
    build_vocabulary,
    count_tokens,
    load_parallel,
    rare_words,
    read_sentences,
    write_sentences,
)
from .lm import BACKWARD, FORWARD, train_ngram_lm

logger = logging.getLogger(__name__)

COMMANDS = ("build-vocab", "train-lm", "align", "augment", "oversample", "learn-bpe", "apply-bpe", "analyze")


class PipelineError(RuntimeError):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class Run:
    cfg: RunConfig
    out: Path
    artifacts: list[str] = field(default_factory=list)

    def artifact(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.out / name

    def require(self, key: str) -> Path:
        section, name = key.split(".")
        value = getattr(getattr(self.cfg, section), name)
        if value is None:
            raise PipelineError(f"config key {key} is required for this command")
        return self.cfg.path(value)

    def other_side(self) -> str:
        return "target" if self.cfg.substitution_side == "source" else "source"


def _load_bitext(run: Run) -> ParallelCorpus:
    return load_parallel(run.require("data.source"), run.require("data.target"), run.cfg.lowercase)


def _side(corpus: ParallelCorpus, side: str):
    return corpus.sources() if side == "source" else corpus.targets()


def _mono(run: Run, side: str, corpus: ParallelCorpus):
    value = getattr(run.cfg.data, f"mono_{side}")
    if value is None:
        return _side(corpus, side)
    return read_sentences(run.cfg.path(value), run.cfg.lowercase)


def _vocabs(run: Run, corpus: ParallelCorpus):
    size = run.cfg.vocab.size
    return {side: build_vocabulary(_side(corpus, side), size) for side in ("source", "target")}


def _train_lms(run: Run, corpus: ParallelCorpus, vocabs):
    sub, other = run.cfg.substitution_side, run.other_side()
    order = run.cfg.lm.order
    sub_text = _mono(run, sub, corpus)
    return {
        (sub, FORWARD): train_ngram_lm(sub_text, order, FORWARD, vocabs[sub]),
        (sub, BACKWARD): train_ngram_lm(sub_text, order, BACKWARD, vocabs[sub]),
        (other, FORWARD): train_ngram_lm(_mono(run, other, corpus), order, FORWARD, vocabs[other]),
    }


def _links(run: Run, corpus: ParallelCorpus) -> tuple[AlignmentLinks, TranslationLexicon | None]:
    """Links in source->target orientation, plus the EM lexicon when the aligner ran."""
    if run.cfg.data.alignments is not None:
        return load_alignments(run.cfg.path(run.cfg.data.alignments), corpus), None
    em = train_ibm1(corpus, run.cfg.align.iterations)
    return viterbi_alignments(corpus, em, run.cfg.align.links), em


def cmd_build_vocab(run: Run) -> None:
    corpus = _load_bitext(run)
    vocabs = _vocabs(run, corpus)
    for side, vocab in vocabs.items():
        vocab.save(run.artifact(f"vocab.{side}.tsv"))
    sub = run.cfg.substitution_side
    rare = rare_words(vocabs[sub], run.cfg.augment.rare_threshold)
    write_sentences(run.artifact(f"rare.{sub}.txt"), ([w] for w in sorted(rare.words)))
    logger.info("vocabularies: %d source / %d target words; %d rare %s words",
                len(vocabs["source"]), len(vocabs["target"]), len(rare), sub)


def cmd_train_lm(run: Run) -> None:
    corpus = _load_bitext(run)
    vocabs = _vocabs(run, corpus)
    for (side, direction), lm in _train_lms(run, corpus, vocabs).items():
        lm.save_arpa(run.artifact(f"lm.{side}.{direction}.arpa"))


def cmd_align(run: Run) -> None:
    corpus = _load_bitext(run)
    links, em = _links(run, corpus)
    links.save(run.artifact("alignments.txt"))
    lexical_tables_from_alignments(corpus, links).save(run.artifact("lexicon.tsv"))
    if em is not None:
        em.save(run.artifact("lexicon.em.tsv"))


def build_models(run: Run, corpus: ParallelCorpus) -> AugmentationModels:
    """Vocabularies, language models, links and lexicon in source->target orientation."""
    vocabs = _vocabs(run, corpus)
    lms = _train_lms(run, corpus, vocabs)
    links, _ = _links(run, corpus)
    lexicon = lexical_tables_from_alignments(corpus, links)
    sub, other = run.cfg.substitution_side, run.other_side()
    rare = rare_words(vocabs[sub], run.cfg.augment.rare_threshold)
    models = AugmentationModels(lms[sub, FORWARD], lms[sub, BACKWARD], lms[other, FORWARD], lexicon, links,
                                vocabs[sub], rare)
    if sub == "target":
        models = models.swapped_for(models.forward, models.backward, models.target_lm, models.vocab, models.rare)
    return models


def augment_corpus(run: Run, corpus: ParallelCorpus) -> AugmentedCorpus:
    cfg = run.cfg
    models = build_models(run, corpus)
    logger.info("augmenting with %s on the %s side: %d rare words", cfg.augment_config(),
                cfg.substitution_side, len(models.rare))
    if cfg.substitution_side == "source":
        return run_tda(corpus, models, cfg.augment_config())
    result = run_tda(corpus.swapped(), models, cfg.augment_config())
    result.original = corpus
    result.augmented = [p.swapped() for p in result.augmented]
    return result


def cmd_augment(run: Run) -> None:
    corpus = _load_bitext(run)
    result = augment_corpus(run, corpus)
    result.write(run.artifact("augmented.src"), run.artifact("augmented.tgt"))
    result.write_records(run.artifact("records.jsonl"))
    summary = augmentation_stats(result.records, result.discards).to_dict()
    summary["accepted_per_pass"] = result.accepted_per_pass
    summary["substitution_side"] = run.cfg.substitution_side
    with open(run.artifact("augment_stats.json"), "w", encoding="utf-8", newline="\n") as f:
        json.dump(summary, f, indent=2, ensure_ascii=False)
        f.write("\n")
    logger.info("added %d pairs (%d substitutions) over %d passes", len(result.augmented), len(result.records),
                len(result.accepted_per_pass))


def cmd_oversample(run: Run) -> None:
    corpus = _load_bitext(run)
    records_path = run.cfg.path(run.cfg.data.records) if run.cfg.data.records else run.out / "records.jsonl"
    if not records_path.exists():
        raise PipelineError(f"records file not found: {records_path} (run 'augment' first or set data.records)")
    result = oversample(corpus, read_records(records_path))
    result.write(run.artifact("oversampled.src"), run.artifact("oversampled.tgt"))


def _bpe_inputs(run: Run) -> dict[str, Path]:
    bpe = run.cfg.bpe
    return {
        "source": run.cfg.path(bpe.source_input) if bpe.source_input else run.require("data.source"),
        "target": run.cfg.path(bpe.target_input) if bpe.target_input else run.require("data.target"),
    }


def cmd_learn_bpe(run: Run) -> None:
    texts = {side: read_sentences(p, run.cfg.lowercase) for side, p in _bpe_inputs(run).items()}
    if run.cfg.bpe.joint:
        learn_bpe(texts["source"] + texts["target"], run.cfg.bpe.merges).save(run.artifact("bpe.joint.codes"))
    else:
        for side, sents in texts.items():
            learn_bpe(sents, run.cfg.bpe.merges).save(run.artifact(f"bpe.{side}.codes"))


def cmd_apply_bpe(run: Run) -> None:
    for side, path in _bpe_inputs(run).items():
        codes = run.out / ("bpe.joint.codes" if run.cfg.bpe.joint else f"bpe.{side}.codes")
        if not codes.exists():
            raise PipelineError(f"merge table not found: {codes} (run 'learn-bpe' first)")
        seg = BPE(MergeTable.load(codes))
        sents = read_sentences(path, run.cfg.lowercase)
        write_sentences(run.artifact(f"{path.name}.bpe"), (seg(s) for s in sents))


def cmd_analyze(run: Run) -> None:
    from . import plotting

    cfg = run.cfg
    refs_path = run.require("analyze.references")
    if not cfg.analyze.hypotheses:
        raise PipelineError("analyze.hypotheses must name at least one system output")
    refs = read_sentences(refs_path)
    corpus = _load_bitext(run)
    side = cfg.analyze.side or cfg.substitution_side
    vocab = build_vocabulary(_side(corpus, side), cfg.vocab.size)
    rare = rare_words(vocab, cfg.augment.rare_threshold)
    counts = None
    if cfg.analyze.augmented:
        counts = count_tokens(read_sentences(cfg.path(cfg.analyze.augmented), cfg.lowercase))

    report, coverage = {}, {}
    for name, hyp_file in cfg.analyze.hypotheses.items():
        hyp_path = cfg.path(hyp_file)
        hyps = read_sentences(hyp_path)
        if len(hyps) != len(refs):
            raise PipelineError(f"line-count mismatch: {hyp_path} has {len(hyps)} lines, "
                                f"{refs_path} has {len(refs)}")
        cov = rare_word_coverage(hyps, refs, rare, counts, cfg.augment.rare_threshold, lowercase=True)
        coverage[name] = cov
        report[name] = {
            "bleu": corpus_bleu(hyps, refs).to_dict(),
            "length_ratio": length_ratio(hyps, refs),
            "coverage": {k: v for k, v in cov.to_dict().items() if not k.startswith("words_")},
        }
    records_path = run.out / "records.jsonl"
    if records_path.exists():
        records = read_records(records_path)
        stats = augmentation_stats(records)
        report["augmentation"] = stats.to_dict()
        plotting.augmentation_histogram(stats.per_word, run.artifact("augmentation_per_word.png"),
                                        cfg.augment.max_per_word)
    write_report(report, run.artifact("report.json"), run.artifact("report.txt"),
                 header=["# coverage counts unique whole-word types before BPE, case-folded",
                         f"# rare words: {side} side, count < {cfg.augment.rare_threshold}"])
    plotting.coverage_figure(coverage, run.artifact("coverage.png"))


HANDLERS = {
    "build-vocab": cmd_build_vocab,
    "train-lm": cmd_train_lm,
    "align": cmd_align,
    "augment": cmd_augment,
    "oversample": cmd_oversample,
    "learn-bpe": cmd_learn_bpe,
    "apply-bpe": cmd_apply_bpe,
    "analyze": cmd_analyze,
}


def _write_manifest(run: Run, command: str) -> Path:
    mdir = run.out / "manifests"
    mdir.mkdir(exist_ok=True)
    seq = 1 + sum(1 for p in mdir.glob(f"{command}-*.json"))
    path = mdir / f"{command}-{seq:03d}.json"
    while path.exists():
        seq += 1
        path = mdir / f"{command}-{seq:03d}.json"
    manifest = {
        "tool": "tdaug",
        "version": __version__,
        "command": command,
        "seed": run.cfg.seed,
        "config_hash": run.cfg.fingerprint(),
        "config": {k: v for k, v in run.cfg.to_dict().items() if k != "output_dir"},
        "inputs": {k: {"path": v, "sha256": _sha256(run.cfg.path(v))}
                   for k, v in sorted(run.cfg.input_paths().items())},
        "artifacts": {name: _sha256(run.out / name) for name in sorted(set(run.artifacts))},
    }
    with open(path, "x", encoding="utf-8", newline="\n") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
    return path


def run_command(command: str, cfg: RunConfig) -> Path:
    """Execute one command; returns the manifest path."""
    if command not in HANDLERS:
        raise PipelineError(f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}")
    out = cfg.path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("tdaug")
    root.addHandler(handler)
    try:
        with FileLock(str(out / ".lock")):
            logger.info("command %s, config:\n%s", command, cfg.dump())
            run = Run(cfg, out)
            HANDLERS[command](run)
            manifest = _write_manifest(run, command)
            logger.info("wrote %s", manifest)
            return manifest
    finally:
        root.removeHandler(handler)
        handler.close()
