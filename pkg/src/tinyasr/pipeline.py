"""Experiment orchestration: prepare -> train -> evaluate, incremental-data
sweeps, and transcription of new audio.

Every run directory is self-describing: it carries the resolved config, a
copy of the corpus manifest, the split membership, and the checkpoint, so
evaluation can be reproduced from the directory alone (plus the audio).
"""

import json
import os
import shutil
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

from . import ctc
from .audio import read_wav, slice_audio
from .config import ExperimentConfig
from .corpus import read_manifest, write_manifest
from .errors import ConfigError, DataError, PipelineError
from .evaluation import build_report, confusion_report, report_to_json
from .features import FeatureConfig, extract_features, load_features, save_features
from .model import ModelConfig, forward_batch, load_checkpoint
from .training import TrainItem, rng_for, split_corpus, train
from .variants import (
    G2PRuleSet,
    LabelVocabulary,
    build_vocabulary,
    load_alignments,
    variant_units,
)

RUN_FILE = "run.json"


@contextmanager
def _stage(name):
    """Failures abort with the stage they happened in; partial artifacts
    written so far stay on disk for debugging."""
    try:
        yield
    except PipelineError as exc:
        raise type(exc)(f"stage '{name}': {exc}") from exc


@dataclass
class ResultsRow:
    experiment_id: str
    utterances: int  # training utterances
    minutes: float  # training minutes of audio
    ler: float


def emit_results_table(rows) -> str:
    """Fixed-width table with the Experiment / Utterances / Minutes / LER
    columns, LER to three decimals."""
    header = ("Experiment", "Utterances", "Minutes", "LER")
    lines = ["  ".join(header)]
    cells = [
        (row.experiment_id, str(row.utterances), str(round(row.minutes)),
         f"{row.ler:.3f}")
        for row in rows
    ]
    if cells:
        widths = [max(len(c[i]) for c in cells) for i in range(4)]
        for c in cells:
            first = c[0].ljust(widths[0])
            rest = [c[i].rjust(widths[i]) for i in range(1, 4)]
            lines.append("  ".join([first] + rest).rstrip())
    return "\n".join(lines) + "\n"


def _load_variant_inputs(variant, g2p_path, alignments_path):
    g2p = None
    alignments = None
    if variant.startswith("ipa"):
        if g2p_path is None or not Path(g2p_path).exists():
            raise ConfigError(f"variant '{variant}' needs a G2P rule file")
        g2p = G2PRuleSet.from_tsv(g2p_path)
    if variant == "ipa-pause-boundaries":
        if alignments_path is None or not Path(alignments_path).exists():
            raise ConfigError("variant 'ipa-pause-boundaries' needs word alignments")
        alignments = load_alignments(alignments_path)
    return g2p, alignments


def corpus_units(records, variant, g2p=None, alignments=None, gap_threshold=0.15):
    return {
        record.id: variant_units(record, variant, g2p, alignments, gap_threshold)
        for record in records
    }


def build_items(records, unit_map, vocab, audio_root, feature_config,
                cache_dir=None):
    """Slice audio, extract features, and encode targets for each record."""
    audio_root = Path(audio_root)
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        cache_dir.mkdir(parents=True, exist_ok=True)
    buffers = {}
    items = []
    for record in records:
        cache_path = None if cache_dir is None else cache_dir / f"{record.id}.feat"
        if cache_path is not None and cache_path.exists():
            matrix = load_features(cache_path)
        else:
            if record.audio not in buffers:
                buffers[record.audio] = read_wav(audio_root / record.audio)
            session = buffers[record.audio]
            clip = slice_audio(session, record.start_s, record.end_s)
            matrix = extract_features(clip, feature_config)
            if cache_path is not None:
                save_features(cache_path, matrix)
        target = vocab.encode(unit_map[record.id], record.id)
        items.append(TrainItem(id=record.id, features=matrix.frames, target=target))
    return items


def _decode_items(params, items, vocab, decoder="greedy", beam_width=8):
    entries = []
    for item in items:
        logits_list, _ = forward_batch(params, [item.features])
        if decoder == "beam":
            decoded = ctc.beam_decode(logits_list[0], beam_width)
        else:
            decoded = ctc.greedy_decode(logits_list[0])
        ref_units = tuple(vocab.labels[i] for i in item.target)
        hyp_units = tuple(vocab.labels[i] for i in decoded.labels)
        entries.append((item.id, ref_units, hyp_units, vocab.decode(decoded.labels)))
    return entries


def _train_minutes(records) -> float:
    return sum(r.duration for r in records) / 60.0


def _append_results(out_dir: Path, row: ResultsRow) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "results.jsonl", "a", encoding="utf-8") as fh:
        fh.write(json.dumps({
            "experiment": row.experiment_id,
            "utterances": row.utterances,
            "minutes": row.minutes,
            "ler": row.ler,
        }) + "\n")


def run_experiment(config: ExperimentConfig, fast=False, subset_ids=None,
                   run_dir=None, experiment_id=None, feature_cache=False) -> ResultsRow:
    """End-to-end train and test-evaluate one experiment.

    subset_ids restricts the train split (dev/test stay identical); the
    vocabulary always comes from the full corpus so subsets stay comparable.
    """
    experiment_id = experiment_id or config.name
    run_dir = Path(run_dir) if run_dir is not None else config.out_dir / experiment_id

    with _stage("data"):
        if config.corpus is None or not Path(config.corpus).exists():
            raise DataError(f"prepared corpus manifest not found: {config.corpus}")
        records = read_manifest(config.corpus)
        audio_root = Path(config.corpus).resolve().parent
        g2p, alignments = _load_variant_inputs(config.variant, config.g2p_rules,
                                               config.alignments)
        unit_map = corpus_units(records, config.variant, g2p, alignments,
                                config.pause_gap_threshold)
        vocab = build_vocabulary(unit_map.values())

        layers, hidden = (2, 64) if fast else (config.model_layers, config.model_hidden)
        model_config = ModelConfig(
            input_dim=config.features.dims,
            vocab_size=vocab.size - 1,
            num_layers=layers,
            hidden_units=hidden,
        )

        ratios = (config.train.split_train, config.train.split_dev,
                  config.train.split_test)
        train_records, dev_records, test_records = split_corpus(records, ratios,
                                                                config.seed)
        if subset_ids is not None:
            chosen = set(subset_ids)
            missing = chosen - {r.id for r in train_records}
            if missing:
                raise DataError(
                    f"subset ids not in the train split: {sorted(missing)[:5]}"
                )
            train_records = [r for r in train_records if r.id in chosen]

    run_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(records, run_dir / "manifest.jsonl")
    if config.g2p_rules is not None:
        shutil.copyfile(config.g2p_rules, run_dir / "g2p.tsv")
    if config.alignments is not None:
        shutil.copyfile(config.alignments, run_dir / "words.jsonl")

    run_info = {
        "schema_version": 1,
        "experiment": experiment_id,
        "variant": config.variant,
        "seed": config.seed,
        "fast": fast,
        "decoder": "greedy",
        "audio_root": str(audio_root),
        "pause_gap_threshold": config.pause_gap_threshold,
        "feature_config": config.features.to_dict(),
        "model": model_config.to_dict(),
        "train": config.train.to_dict(),
        "splits": {
            "train": [r.id for r in train_records],
            "dev": [r.id for r in dev_records],
            "test": [r.id for r in test_records],
        },
        "subset": sorted(subset_ids) if subset_ids is not None else None,
    }
    _write_run_info(run_dir, run_info)

    with _stage("features"):
        cache_dir = run_dir / "features" if feature_cache else None
        train_items = build_items(train_records, unit_map, vocab, audio_root,
                                  config.features, cache_dir)
        dev_items = build_items(dev_records, unit_map, vocab, audio_root,
                                config.features, cache_dir)

    with _stage("train"):
        result = train(train_items, dev_items, model_config, config.train, run_dir,
                       vocab.labels)

    with _stage("evaluate"):
        row, _ = _evaluate_split(run_dir, run_info, "test")
    run_info["results"] = {
        "utterances": row.utterances,
        "minutes": row.minutes,
        "ler": row.ler,
        "best_dev_ler": result.best_dev_ler,
        "best_epoch": result.best_epoch,
    }
    _write_run_info(run_dir, run_info)
    _append_results(config.out_dir, row)
    return row


def _write_run_info(run_dir: Path, info: dict) -> None:
    (run_dir / RUN_FILE).write_text(
        json.dumps(info, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _read_run_info(run_dir) -> dict:
    path = Path(run_dir) / RUN_FILE
    if not path.exists():
        raise DataError(f"not a run directory (no {RUN_FILE}): {run_dir}")
    return json.loads(path.read_text(encoding="utf-8"))


def _evaluate_split(run_dir, run_info, split, decoder=None, beam_width=8):
    run_dir = Path(run_dir)
    if split not in run_info["splits"]:
        raise ConfigError(f"unknown split '{split}' (expected train, dev, or test)")
    records = {r.id: r for r in read_manifest(run_dir / "manifest.jsonl")}
    split_ids = run_info["splits"][split]
    split_records = [records[i] for i in split_ids]
    if not split_records:
        raise DataError(f"split '{split}' is empty")

    g2p, alignments = _load_variant_inputs(
        run_info["variant"],
        run_dir / "g2p.tsv" if run_info["variant"].startswith("ipa") else None,
        run_dir / "words.jsonl" if run_info["variant"] == "ipa-pause-boundaries" else None,
    )
    unit_map = corpus_units(split_records, run_info["variant"], g2p, alignments,
                            run_info["pause_gap_threshold"])
    params, vocab_labels = load_checkpoint(run_dir / "checkpoint.bin")
    vocab = LabelVocabulary(labels=tuple(vocab_labels))
    feature_config = FeatureConfig(**run_info["feature_config"])
    items = build_items(split_records, unit_map, vocab, run_info["audio_root"],
                        feature_config)
    decoder = decoder or run_info.get("decoder", "greedy")
    entries = _decode_items(params, items, vocab, decoder, beam_width)
    report = build_report(entries, decoder)

    (run_dir / f"report-{split}.json").write_text(report_to_json(report) + "\n",
                                                  encoding="utf-8")
    (run_dir / f"report-{split}.txt").write_text(
        f"split: {split}\nmicro LER: {report.ler:.6f}\n"
        f"macro LER: {report.ler_macro:.6f}\nutterances: {report.n_utterances}\n"
        f"decoder: {report.decoder}\n\n" + confusion_report(report, 20),
        encoding="utf-8",
    )

    train_ids = run_info["subset"] if run_info.get("subset") is not None \
        else run_info["splits"]["train"]
    minutes = sum(records[i].duration for i in train_ids) / 60.0
    row = ResultsRow(run_info["experiment"], len(train_ids), minutes, report.ler)
    return row, report


def evaluate_run(run_dir, split="test", decoder=None, beam_width=8):
    """Re-evaluate a finished run from its directory alone."""
    return _evaluate_split(run_dir, _read_run_info(run_dir), split, decoder,
                           beam_width)


def augmentation_sweep(config: ExperimentConfig, sizes, fast=False) -> list:
    """Train on nested, growing subsets of the train split.

    Subsets come from one seeded shuffle, so each smaller subset is
    contained in every larger one; dev and test stay identical throughout.
    """
    sizes = [int(s) for s in sizes]
    if not sizes or sizes != sorted(sizes):
        raise ConfigError(f"sweep sizes must be ascending, got {sizes}")
    records = read_manifest(config.corpus)
    ratios = (config.train.split_train, config.train.split_dev, config.train.split_test)
    train_records, _, _ = split_corpus(records, ratios, config.seed)
    if sizes[-1] > len(train_records):
        raise ConfigError(
            f"sweep size {sizes[-1]} exceeds the train split "
            f"({len(train_records)} utterances)"
        )
    shuffled = rng_for(config.seed, "subset").permutation(len(train_records))
    ordered_ids = [train_records[i].id for i in shuffled]

    rows = []
    for size in sizes:
        subset = ordered_ids[:size]
        rows.append(
            run_experiment(
                config,
                fast=fast,
                subset_ids=subset,
                run_dir=config.out_dir / f"{config.name}-n{size}",
                experiment_id=f"{config.name}-n{size}",
            )
        )
    return rows


def transcribe_files(run_dir, wav_paths, beam_width=None):
    """Decode new WAV files with a finished run's model.

    Returns [(path, text_or_None, error_or_None)]; failures do not stop
    the remaining files. Output text is written next to each input.
    """
    run_dir = Path(run_dir)
    run_info = _read_run_info(run_dir)
    params, vocab_labels = load_checkpoint(run_dir / "checkpoint.bin")
    vocab = LabelVocabulary(labels=tuple(vocab_labels))
    feature_config = FeatureConfig(**run_info["feature_config"])

    outputs = []
    for wav_path in wav_paths:
        wav_path = Path(wav_path)
        try:
            if not wav_path.exists():
                raise DataError(f"file not found: {wav_path}")
            audio = read_wav(wav_path)
            matrix = extract_features(audio, feature_config)
            logits_list, _ = forward_batch(params, [matrix.frames])
            if beam_width:
                decoded = ctc.beam_decode(logits_list[0], beam_width)
            else:
                decoded = ctc.greedy_decode(logits_list[0])
            text = vocab.decode(decoded.labels)
            wav_path.with_suffix(".txt").write_text(text + "\n", encoding="utf-8")
            outputs.append((str(wav_path), text, None))
        except DataError as exc:
            outputs.append((str(wav_path), None, str(exc)))
    return outputs


def relocate_audio_paths(records, corpus_dir, out_dir):
    """Rewrite record audio paths relative to out_dir (used by prepare so
    the emitted manifest resolves audio from its own location)."""
    corpus_dir = Path(corpus_dir).resolve()
    out_dir = Path(out_dir).resolve()
    for record in records:
        record.audio = os.path.relpath(corpus_dir / record.audio, out_dir)
    return records
