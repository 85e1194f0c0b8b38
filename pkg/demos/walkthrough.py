"""A two-minute tour of the workbench, entirely in memory.

Generates a small tag corpus, trains a one-layer GRU for a few epochs,
samples tags from it, and compares the sampled tags against the dataset and
a mutation baseline on two axes: validator error rate and surrogate coverage.

    python demos/walkthrough.py [--epochs 8] [--seed 0]
"""

import argparse
import random
import time

from neurofuzz import nn
from neurofuzz.analysis import error_rate, validate_tag
from neurofuzz.corpus import default_grammar, generate_corpus, make_splits
from neurofuzz.coverage import blank_baseline, effective_blocks, overlap, parse_drcov
from neurofuzz.generator import make_case_sets, sample_tags
from neurofuzz.mutation import MutationConfig, mutate_tags
from neurofuzz.seqdata import build_alphabet
from neurofuzz.surrogate import blank_runs, default_block_map, run_case
from neurofuzz.training import TrainConfig, train

N_TAGS = 256


def coverage(tags, baseline):
    (cs,) = make_case_sets(tags, (64,), prefix="demo")
    logs = [parse_drcov(run_case(c)) for c in cs.cases]
    return effective_blocks(logs, baseline)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    grammar = default_grammar()
    corpus = generate_corpus(grammar, 3000, seed=args.seed)
    alphabet = build_alphabet(corpus.text)
    print(f"corpus: {len(corpus.lines)} tags, {corpus.byte_size:,} bytes, alphabet of {alphabet.size}")
    print("  e.g.", corpus.lines[0])

    split = make_splits(corpus, 1, 200_000, 20_000, seed=args.seed).splits[0]
    mcfg = nn.ModelConfig(nn.GRU, 1, 48, alphabet.size)
    tcfg = TrainConfig(epochs=args.epochs, batch=32, seq_len=100, base_lr=0.01, seed=args.seed)
    print(f"\ntraining a {mcfg.cell_type} with {nn.count_parameters(mcfg):,} parameters")
    t0 = time.perf_counter()
    cp = train(mcfg, tcfg, corpus, split, alphabet=alphabet)
    for h in cp.history:
        print(f"  epoch {h['epoch']}: train {h['train_loss']:.3f}  val {h['val_loss']:.3f}")
    print(f"  ({time.perf_counter() - t0:.0f}s)")

    model_tags = sample_tags(cp, N_TAGS, seed=args.seed, streams=64).tags
    dataset_tags = random.Random(args.seed).sample(corpus.lines, N_TAGS)
    mutated = mutate_tags(dataset_tags, MutationConfig(0.064, alphabet, args.seed))

    print("\nsampled tags and what the validator thinks of them:")
    for tag in model_tags[:4]:
        kinds = validate_tag(tag, grammar).kinds()
        print(f"  {tag[:90]}\n    -> {kinds or 'clean'}")

    print("\nerrors per tag:")
    for name, tags in (("dataset", dataset_tags), ("model", model_tags), ("mutation 6.4%", mutated)):
        print(f"  {name:>14}: {error_rate(tags, grammar):.3f}")

    bmap = default_block_map()
    baseline = blank_baseline(blank_runs(1))
    errs = {(bmap.module, o) for o in bmap.error_offsets()}
    sets = {"dataset": coverage(dataset_tags, baseline), "model": coverage(model_tags, baseline),
            "mutation": coverage(mutated, baseline)}
    print("\nsurrogate coverage beyond the blank template:")
    for name, blocks in sets.items():
        print(f"  {name:>8}: {len(blocks)} blocks, {len(blocks & errs)} in error recovery")
    novel = sets["model"] - sets["dataset"]
    print(f"  model blocks the dataset never reached: {len(novel)}")
    for arm in sorted(bmap.arm_at(o) for _, o in novel)[:8]:
        print(f"    {arm}")
    ov = overlap(sets["model"], sets["dataset"])
    print(f"  jaccard(model, dataset) = {ov['jaccard']:.3f}")


if __name__ == "__main__":
    main()
