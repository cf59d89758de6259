"""Print the attention mixing weights for one dialogue.

Trains briefly on the synthetic corpus (or loads a checkpoint), then
shows, for each utterance, how much of its re-weighted embedding comes
from every utterance in the window. Rows sum to 1.

    python3 scripts/inspect_attention.py
    python3 scripts/inspect_attention.py --checkpoint out/checkpoint.bin --vocab out/vocab.txt
"""

import argparse

import numpy as np

from dialoglow import autodiff as ad
from dialoglow import embeddings as emb
from dialoglow import model as m
from dialoglow import preprocess as pp
from dialoglow import synthetic
from dialoglow import train as tr


def attention_matrix(texts, vocab, params, cfg):
    vectors = []
    for text in texts:
        ids = vocab.encode(pp.prepare(text))
        vectors.append(m.encode_sentence(ids, len(ids), params, cfg))
    u = ad.stack_rows(vectors)
    scores = m.attention_scores(u, u.shape[0])
    return ad.masked_softmax(scores, np.ones(u.shape[0], dtype=bool)).data


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--checkpoint", help="trained model (default: quick synthetic fit)")
    ap.add_argument("--vocab", help="vocab file matching the checkpoint")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if args.checkpoint:
        ckpt = tr.load_checkpoint(args.checkpoint)
        if not args.vocab:
            ap.error("--vocab is required with --checkpoint")
        vocab = pp.Vocab.load(args.vocab)
        cfg, params = tr.params_from_checkpoint(ckpt)
    else:
        ds = synthetic.build(n_dialogues=20, seed=args.seed)
        vocab = tr.vocab_from_dataset(ds)
        cfg = m.ModelConfig(embed_dim=16, hidden_size=8, window_size=8,
                            fc_dims=(16,), dropout_p=0.0, variant="sa-bilstm")
        table = emb.random_table(vocab, cfg.embed_dim, seed=args.seed + 1)
        tcfg = tr.TrainConfig(epochs=40, lr0=0.02, decay=0.995, dropout=0.0,
                              seed=args.seed, val_fraction=0.0)
        print("fitting a small model on the synthetic corpus...")
        result = tr.train(ds, vocab, table, cfg, tcfg)
        cfg, params = tr.params_from_checkpoint(result.last)

    dialogue = [
        "well i feel okay today",
        "so glad really",
        "um gloomy now honestly",
        "livid right now",
    ]
    weights = attention_matrix(dialogue, vocab, params, cfg)

    width = max(len(t) for t in dialogue)
    header = " " * (width + 2) + "  ".join(f"{f'u{j}':>4}" for j in range(len(dialogue)))
    print(header)
    for i, text in enumerate(dialogue):
        row = "  ".join(f"{w:.2f}" for w in weights[i])
        print(f"{text:<{width}}  {row}")
    print("\neach row: softmax of scaled dot products against every utterance")


if __name__ == "__main__":
    main()
