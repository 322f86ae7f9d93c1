"""Does initializing tag embeddings from an SSG-only classifier speed up training?

Trains the full model twice on the same generated corpus, once from random
tag embeddings and once from embeddings pretrained with the SSG-only
variant, and prints the dev average Match per epoch side by side.  The
comparison is reported, not asserted.
"""

from emphasis_gnn import synthetic
from emphasis_gnn.train import TrainConfig, pretrain_ssg, train_loop

EPOCHS = 12


def main():
    corpus = synthetic.generate(60, dim=16, seed=9)
    train = (corpus.records[:48], corpus.trees[:48])
    dev = (corpus.records[48:], corpus.trees[48:])
    cfg = TrainConfig(d1=16, d2=4, hidden=8, d_s=8, head_hidden=16, lr=3e-3, epochs=EPOCHS, dev_fraction=0.0)
    init = pretrain_ssg(*train, corpus.table, cfg, epochs=10)
    random_run = train_loop(*train, corpus.table, cfg, dev=dev)
    pretrained_run = train_loop(*train, corpus.table, cfg, dev=dev, init_ssg=init)
    print("epoch\trandom\tpretrained")
    for a, b in zip(random_run.log, pretrained_run.log):
        print(f"{a[0]}\t{a[2][-1]:.3f}\t{b[2][-1]:.3f}")


if __name__ == "__main__":
    main()
