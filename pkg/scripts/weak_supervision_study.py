"""Teacher-vs-student study: does the weakly supervised student beat a teacher
trained on the small labeled pool alone?

Trains, for each seed, (a) a baseline classifier on a restricted labeled pool
and (b) the full teacher/student pipeline over the unlabeled pool, then
reports test UI micro-F1 for both.

Usage:
    python scripts/weak_supervision_study.py [--labeled 100] [--unlabeled 5000]
                                             [--seeds 0 1 2]
"""

import argparse
import sys

from todpipe.classifier import TrainConfig, forward, predict
from todpipe.corpus import SyntheticSpec, generate_synthetic
from todpipe.encoder import ContrastiveConfig, init_encoder, pretrain
from todpipe.evaluation import intent_prf
from todpipe.generator import INFORM_LABEL
from todpipe.taxonomy import OTHER_LABEL, default_label_space
from todpipe.text import build_vocab
from todpipe.weak import WeakConfig, run_pipeline, train_teacher


def ui_f1(params, dialogs, vocab, space):
    pred, gold = [], []
    for dialog in dialogs:
        for turn in dialog.turns:
            out = forward(params, vocab.encode(turn.user_utterance))
            ui, _, _ = predict(out, 0.1, space)
            pred.append(ui)
            gold.append(set(turn.user_intents))
    return intent_prf(pred, gold).f1


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--labeled", type=int, default=100)
    parser.add_argument("--unlabeled", type=int, default=5000)
    parser.add_argument("--corpus-labeled", type=int, default=600,
                        help="labeled dialogs generated (sets dev/test size); "
                             "training uses only --labeled of them")
    parser.add_argument("--noise", type=float, default=0.05)
    parser.add_argument("--data-seed", type=int, default=11)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = parser.parse_args()

    space = default_label_space()
    split = generate_synthetic(SyntheticSpec(
        args.corpus_labeled, args.unlabeled, 3, args.noise, args.data_seed), space)
    labeled = split.labeled[: args.labeled]
    texts = []
    for dialog in labeled + split.unlabeled:
        for turn in dialog.turns:
            texts.extend([turn.user_utterance, turn.system_response])
    vocab = build_vocab(texts, extra_tokens=[INFORM_LABEL, OTHER_LABEL])
    sequences = [vocab.encode(t.user_utterance)
                 for d in split.unlabeled for t in d.turns]
    encoder = pretrain(init_encoder(len(vocab), 64, 0, 0.1), sequences,
                       ContrastiveConfig(epochs=1, seed=0))

    wins = 0
    print(f"{'seed':>5} {'teacher':>9} {'student':>9} {'|D_hat|':>8}")
    for seed in args.seeds:
        teacher_cfg = TrainConfig(seed=seed)
        teacher = train_teacher("user", labeled, space, vocab, encoder, teacher_cfg)
        base = ui_f1(teacher, split.test, vocab, space)
        weak_cfg = WeakConfig(
            teacher=teacher_cfg,
            student=TrainConfig(epochs=3, seed=seed),
            finetune=TrainConfig(learning_rate=5e-3, epochs=30, seed=seed),
            target_precision=0.98, seed=seed,
        )
        student, report = run_pipeline(labeled, split.unlabeled, space, vocab,
                                       encoder, weak_cfg, dev=split.dev)
        score = ui_f1(student, split.test, vocab, space)
        wins += score >= base
        print(f"{seed:>5} {base:9.4f} {score:9.4f} {report['d_hat_size']:>8}")
    print(f"student >= teacher on {wins}/{len(args.seeds)} seeds")
    return 0


if __name__ == "__main__":
    sys.exit(main())
