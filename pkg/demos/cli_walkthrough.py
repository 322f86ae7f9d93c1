"""End-to-end run of the command-line tool on a generated corpus.

Writes a small synthetic dataset (emphasis file, parse trees, word vectors)
into a scratch directory, then drives ``inspect``, ``train``, ``eval`` and
``predict`` exactly as a shell user would.

    python demos/cli_walkthrough.py [workdir]
"""

import io
import os
import sys
import tempfile

from emphasis_gnn import synthetic
from emphasis_gnn.cli import run

SMALL = ["--dim", "16", "--d2", "4", "--hidden", "8", "--d-s", "8", "--head-hidden", "16"]


def step(*argv):
    print("$ emphasis-gnn " + " ".join(argv))
    out = io.StringIO()
    code = run(list(argv), out)
    print(out.getvalue().rstrip() or f"(exit {code})")
    print()
    if code:
        sys.exit(code)


def main(workdir):
    os.makedirs(workdir, exist_ok=True)
    train = synthetic.generate(40, dim=16, seed=1)
    test = synthetic.generate(12, dim=16, seed=2)
    paths = {k: os.path.join(workdir, f"{k}.txt") for k in ("train", "train_trees", "test", "test_trees", "emb")}
    train.write(paths["train"], paths["train_trees"], paths["emb"])
    test.write(paths["test"], paths["test_trees"])
    # the test corpus shares the generator's vocabulary but has its own vectors;
    # append the ones the training table lacks
    with open(paths["emb"], "a", encoding="utf-8") as fh:
        for token, vec in test.table.vectors.items():
            if token not in train.table.vectors:
                fh.write(token + " " + " ".join(repr(float(x)) for x in vec) + "\n")

    step("inspect", "--train-file", paths["train"], "--trees", paths["train_trees"],
         "--embeddings", paths["emb"], "--dim", "16")
    run_dir = os.path.join(workdir, "run")
    step("train", "--train-file", paths["train"], "--trees", paths["train_trees"], "--embeddings", paths["emb"],
         "--test-file", paths["test"], "--test-trees", paths["test_trees"], "--out", run_dir,
         "--epochs", "15", "--lr", "3e-3", *SMALL)
    ckpt = os.path.join(run_dir, "model.ckpt")
    step("eval", "--checkpoint", ckpt, "--test-file", paths["test"], "--trees", paths["test_trees"],
         "--embeddings", paths["emb"], "--tie-mode", "optimistic")

    sentences = os.path.join(workdir, "sentences.txt")
    trees = os.path.join(workdir, "sentence_trees.txt")
    with open(sentences, "w") as fh:
        fh.write("I love playing basketball\n")
    with open(trees, "w") as fh:
        fh.write("(S (NP (PRP I)) (VP (VBP love) (S (VP (VBG playing) (NP (NN basketball))))))\n")
    step("predict", "--checkpoint", ckpt, "--sentences", sentences, "--trees", trees, "--embeddings", paths["emb"])
    print("config echo:", os.path.join(run_dir, "config.txt"))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="emphasis-demo-"))
