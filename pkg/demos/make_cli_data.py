"""Write a planted corpus, vocab files and a config for trying the CLI.

    python demos/make_cli_data.py runs/planted
"""
import json
import sys
from pathlib import Path

from wssgg.pipeline import write_dataset
from wssgg.synthetic import planted_corpus

CONFIG = """\
entity_vocab = "entities.txt"
relation_vocab = "relations.txt"
d = 16
d_cnn = 32
hidden = 32
batch_size = 10
lr = 0.01
weight_decay = 0.0
max_steps = 1000
ks = [20, 50]
"""


def main(out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    vocab, records = planted_corpus(50, seed=0)
    vocab.save(out / "entities.txt", out / "relations.txt")
    write_dataset(str(out / "train.jsonl"), records, vocab, binary=True)
    (out / "run.toml").write_text(CONFIG)
    with open(out / "captions.jsonl", "w") as fh:
        fh.write(json.dumps({"image_id": "c1", "captions": ["a person riding a horse", "person wearing a hat"]}) + "\n")
        fh.write(json.dumps({"image_id": "c2", "captions": ["a dog sitting on the bench under an umbrella"]}) + "\n")
    print(f"wrote {len(records)} images to {out}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "runs/planted")
