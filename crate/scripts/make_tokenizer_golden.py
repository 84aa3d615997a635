"""Freeze reference token ids for a toy BPE vocabulary.

Trains a small merge list on a fixed corpus, builds a CLIP-layout vocabulary
from it, and records the ids produced by the HuggingFace CLIP tokenizer for the
two detection prompts, a few edge cases, and 100 seeded random ASCII strings.
"""
import json
import random
from collections import Counter

from transformers import CLIPTokenizer


def bytes_to_unicode():
    bs = list(range(ord("!"), ord("~") + 1)) + list(range(ord("¡"), ord("¬") + 1)) + list(range(ord("®"), ord("ÿ") + 1))
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return dict(zip(bs, map(chr, cs)))


CORPUS = (
    "this is a satellite image with clouds this is a satellite image with clear sky "
    "the cloud free scene shows the land and the sea clouds over the sea "
    "sentinel landsat radar image images satellites thin cloud thick cloud shadow "
    "it's what we've seen they're here i'm sure you'll find he'd say 2023 1000 steps"
)
N_MERGES = 120

b2u = bytes_to_unicode()
words = Counter()
for w in CORPUS.split():
    syms = [b2u[b] for b in w.encode("utf-8")]
    syms[-1] = syms[-1] + "</w>"
    words[tuple(syms)] += 1

merges = []
for _ in range(N_MERGES):
    pairs = Counter()
    for w, c in words.items():
        for a, b in zip(w, w[1:]):
            pairs[(a, b)] += c
    if not pairs:
        break
    best = max(pairs.items(), key=lambda kv: (kv[1], [-ord(ch) for ch in kv[0][0] + " " + kv[0][1]]))[0]
    merges.append(best)
    new_words = Counter()
    for w, c in words.items():
        out = []
        i = 0
        while i < len(w):
            if i + 1 < len(w) and (w[i], w[i + 1]) == best:
                out.append(w[i] + w[i + 1])
                i += 2
            else:
                out.append(w[i])
                i += 1
        new_words[tuple(out)] += c
    words = new_words

base = list(bytes_to_unicode().values())
vocab = base + [v + "</w>" for v in base] + ["".join(m) for m in merges] + ["<|startoftext|>", "<|endoftext|>"]
vocab_map = {tok: i for i, tok in enumerate(vocab)}
assert len(vocab_map) == len(vocab)

tok = CLIPTokenizer(vocab=vocab_map, merges=[(a, b) for a, b in merges])

rng = random.Random(20230716)
texts = [
    "This is a satellite image with clouds",
    "This is a satellite image with clear sky",
    "",
    "   ",
    "clouds",
    "clear sky",
    "It's  CLOUDY\tover\nthe sea!!",
    "numbers 2023 and 1000 steps",
    "café naïve",
]
for _ in range(100):
    n = rng.randint(0, 60)
    texts.append("".join(chr(rng.randint(32, 126)) for _ in range(n)))

cases = []
for t in texts:
    ids = tok(t)["input_ids"]
    cases.append({"text": t, "ids": ids})

golden = {
    "merges": [list(m) for m in merges],
    "vocab_size": len(vocab),
    "sot_id": vocab_map["<|startoftext|>"],
    "eot_id": vocab_map["<|endoftext|>"],
    "cases": cases,
}
with open("crates/core/tests/data/tokenizer_golden.json", "w", encoding="utf-8") as f:
    json.dump(golden, f, ensure_ascii=False, indent=1)
print(len(merges), len(vocab), cases[0], cases[6])
