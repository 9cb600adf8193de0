"""Synthetic tone corpus for end-to-end checks and demos.

Each utterance is 1 to 5 pure tones of 0.2 s; three frequencies map to the
labels a, b, c. Tones are separated by occasional silent gaps (so the
pause-boundary variant has real pauses to find), padded with silence on
both ends, and overlaid with light noise. The generator writes per
utterance WAVs, a JSON-lines manifest, exact word alignments, and an
identity G2P rule table.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, write_wav

TONE_LABELS = ("a", "b", "c")
TONE_FREQS = (350.0, 900.0, 2100.0)
TONE_SECONDS = 0.2


def generate_tone_corpus(out_dir, n_utterances=300, seed=0, sample_rate=16000,
                         noise=0.008, speaker="synth") -> Path:
    """Write the corpus under out_dir and return the manifest path."""
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x746F6E65]))

    manifest_lines = []
    alignment_lines = []
    for index in range(n_utterances):
        utt_id = f"tone{index:04d}"
        n_tones = int(rng.integers(1, 6))
        labels = [TONE_LABELS[int(rng.integers(3))] for _ in range(n_tones)]

        lead = float(rng.uniform(0.12, 0.20))
        pieces = [np.zeros(int(lead * sample_rate))]
        cursor = lead
        words = []
        for k, label in enumerate(labels):
            if k > 0:
                # a repeated tone with no silence in between would be one
                # unbroken sine, leaving CTC nothing to separate; identical
                # neighbours always get a gap, others only sometimes
                if label == labels[k - 1] or rng.random() < 0.5:
                    gap = float(rng.uniform(0.06, 0.30))
                else:
                    gap = 0.0
                if gap:
                    pieces.append(np.zeros(int(gap * sample_rate)))
                    cursor += gap
            freq = TONE_FREQS[TONE_LABELS.index(label)]
            n = int(TONE_SECONDS * sample_rate)
            t = np.arange(n) / sample_rate
            tone = 0.3 * np.sin(2 * np.pi * freq * t)
            # fade-in/out (20 ms) marks tone edges in the energy track
            ramp = min(int(0.02 * sample_rate), n // 4)
            envelope = np.ones(n)
            envelope[:ramp] = np.linspace(0.0, 1.0, ramp)
            envelope[-ramp:] = np.linspace(1.0, 0.0, ramp)
            pieces.append(tone * envelope)
            words.append({"w": label, "start_s": round(cursor, 6),
                          "end_s": round(cursor + TONE_SECONDS, 6)})
            cursor += TONE_SECONDS
        trail = float(rng.uniform(0.12, 0.20))
        pieces.append(np.zeros(int(trail * sample_rate)))

        samples = np.concatenate(pieces)
        samples = samples + rng.normal(0.0, noise, size=len(samples))
        wav_name = f"wav/{utt_id}.wav"
        write_wav(out_dir / wav_name, AudioBuffer(samples, sample_rate))

        duration = len(samples) / sample_rate
        manifest_lines.append(json.dumps({
            "id": utt_id,
            "audio": wav_name,
            "start_s": 0.0,
            "end_s": duration,
            "transcript": " ".join(labels),
            "speaker": speaker,
        }, ensure_ascii=False))
        alignment_lines.append(json.dumps({"id": utt_id, "words": words},
                                          ensure_ascii=False))

    manifest_path = out_dir / "utterances.jsonl"
    manifest_path.write_text("\n".join(manifest_lines) + "\n", encoding="utf-8")
    (out_dir / "words.jsonl").write_text("\n".join(alignment_lines) + "\n",
                                         encoding="utf-8")
    rules = ["# identity mapping for the tone labels"]
    rules += [f"{label}\t{label}" for label in TONE_LABELS]
    rules.append(" \t ")
    (out_dir / "g2p.tsv").write_text("\n".join(rules) + "\n", encoding="utf-8")
    return manifest_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Generate a synthetic 3-tone corpus for pipeline checks."
    )
    parser.add_argument("out_dir", help="directory to write the corpus into")
    parser.add_argument("--utterances", type=int, default=300)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--sample-rate", type=int, default=16000)
    args = parser.parse_args(argv)
    path = generate_tone_corpus(args.out_dir, args.utterances, args.seed,
                                args.sample_rate)
    print(f"wrote {args.utterances} utterances; manifest at {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
