"""Evaluation metrics with hand-derived reference values."""

import math

import pytest

from paragen.metrics import (
    bleu, cider, cider_per_image, evaluate_pairs, meteor_exact,
)


def toks(text):
    return text.split()


# ---------------------------------------------------------------------------
# n-gram precision


def test_perfect_match_scores_one_at_every_order():
    pairs = [(toks("the red ball sits here"), [toks("the red ball sits here")])]
    for n in (1, 2, 3, 4):
        assert bleu(pairs, n) == 1.0


def test_clipping_hand_value():
    # four "the" against a reference holding one: clipped to 1 match of 4
    pairs = [(toks("the the the the"), [toks("the cat")])]
    assert abs(bleu(pairs, 1) - 0.25) < 1e-12


def test_geometric_mean_and_brevity_hand_value():
    # unigrams 4/4, bigrams 2/3, candidate 4 tokens vs reference 5
    pairs = [(toks("a b c d"), [toks("a b x c d")])]
    expected = math.exp(1.0 - 5.0 / 4.0) * math.sqrt(1.0 * 2.0 / 3.0)
    assert abs(bleu(pairs, 2) - expected) < 1e-12


def test_higher_orders_never_score_higher():
    pairs = [(toks("a b c d"), [toks("a b x c d")])]
    values = [bleu(pairs, n) for n in (1, 2, 3, 4)]
    assert values[0] > values[1] > 0.0
    assert values[2] == values[3] == 0.0  # no trigram survives
    for lo, hi in zip(values[1:], values):
        assert lo <= hi


def test_unmatched_padding_lowers_precision():
    # both candidates are longer than the reference, so the brevity penalty
    # stays out of play and the extra token can only dilute the matches
    ref = [toks("a b c d e")]
    before = bleu([(toks("a b c d e x"), ref)], 1)
    after = bleu([(toks("a b c d e x y"), ref)], 1)
    assert after < before


def test_empty_candidate_warns_and_scores_zero():
    with pytest.warns(UserWarning, match="empty candidate"):
        assert bleu([([], [toks("a b")])], 1) == 0.0


def test_corpus_pooling_differs_from_averaging():
    # one strong pair and one weak pair pool their counts: 5 matches of 8
    pairs = [(toks("a b c d"), [toks("a b c d")]),
             (toks("x y z w"), [toks("x q q q")])]
    assert abs(bleu(pairs, 1) - 5.0 / 8.0) < 1e-12


def test_reference_order_does_not_matter():
    r1, r2 = toks("a b c d"), toks("c d e f")
    cand = toks("a b e f")
    assert bleu([(cand, [r1, r2])], 2) == bleu([(cand, [r2, r1])], 2)


def test_bleu_argument_validation():
    pairs = [(toks("a"), [toks("a")])]
    with pytest.raises(ValueError, match="order"):
        bleu(pairs, 0)
    with pytest.raises(ValueError, match="order"):
        bleu(pairs, 5)
    with pytest.raises(ValueError, match="no pairs"):
        bleu([], 1)
    with pytest.raises(ValueError, match="reference"):
        bleu([(toks("a"), [])], 1)


# ---------------------------------------------------------------------------
# consensus scoring


def test_self_consensus_maxes_out():
    # each candidate equals its single reference and the two images share no
    # n-grams, so every idf is positive and every cosine is exactly one
    pairs = [(toks("a red ball sits here"), [toks("a red ball sits here")]),
             (toks("two dogs run fast now"), [toks("two dogs run fast now")])]
    per = cider_per_image(pairs)
    assert abs(per[0] - 10.0) < 1e-12
    assert abs(per[1] - 10.0) < 1e-12
    assert abs(cider(pairs) - 10.0) < 1e-12


def test_disjoint_candidate_scores_zero():
    pairs = [(toks("p q r s t"), [toks("a red ball sits here")]),
             (toks("two dogs run fast now"), [toks("two dogs run fast now")])]
    per = cider_per_image(pairs)
    assert per[0] == 0.0
    assert per[1] > 0.0


def test_consensus_reference_order_invariant():
    refs = [toks("a b c d e"), toks("f g h i j")]
    other = (toks("k l m n o"), [toks("k l m n o")])
    s1 = cider_per_image([(toks("a b c d e"), refs), other])[0]
    s2 = cider_per_image([(toks("a b c d e"), list(reversed(refs))), other])[0]
    assert abs(s1 - s2) < 1e-12


def test_consensus_needs_two_images():
    with pytest.raises(ValueError, match="at least 2"):
        cider([(toks("a"), [toks("a")])])


def test_shared_grams_carry_no_idf_weight():
    # a gram present in every image's references has idf ln(2/2) = 0; matching
    # on it alone cannot produce a nonzero score
    pairs = [(toks("common common common common"), [toks("common a b c d")]),
             (toks("x y z w"), [toks("common x y z w")])]
    per = cider_per_image(pairs)
    assert per[0] == 0.0


# ---------------------------------------------------------------------------
# exact-match F-measure


def test_single_match_hand_value():
    # P = R = F = 1 but one chunk of one match halves the score
    assert abs(meteor_exact(toks("a"), [toks("a")]) - 0.5) < 1e-12


def test_long_identity_hand_value():
    ten = toks("a b c d e f g h i j")
    # one chunk over ten matches: penalty 0.5 * (1/10)^3
    assert abs(meteor_exact(ten, [ten]) - 0.9995) < 1e-12


def test_fragmentation_penalty_hand_values():
    # same words, contiguous vs swapped: one chunk vs two
    assert abs(meteor_exact(toks("a b"), [toks("a b")]) - 0.9375) < 1e-12
    assert abs(meteor_exact(toks("a b"), [toks("b a")]) - 0.5) < 1e-12


def test_no_overlap_scores_zero():
    assert meteor_exact(toks("a b"), [toks("c d")]) == 0.0
    assert meteor_exact([], [toks("a")]) == 0.0


def test_best_reference_wins():
    ten = toks("a b c d e f g h i j")
    score = meteor_exact(ten, [toks("zzz"), ten])
    assert abs(score - 0.9995) < 1e-12


def test_recall_weighted_nine_to_one():
    # candidate "a b", reference "a": P = 1/2, R = 1, one chunk of one match
    p, r = 0.5, 1.0
    f = 10 * p * r / (r + 9 * p)
    expected = f * (1 - 0.5)
    assert abs(meteor_exact(toks("a b"), [toks("a")]) - expected) < 1e-12


def test_meteor_requires_references():
    with pytest.raises(ValueError):
        meteor_exact(toks("a"), [])


# ---------------------------------------------------------------------------
# the report


def test_report_keys_and_ranges():
    pairs = [(toks("a red ball sits here"), [toks("a red ball sits there")]),
             (toks("two dogs run fast now"), [toks("two dogs walk fast now")])]
    report = evaluate_pairs(pairs)
    assert set(report) == {"bleu1", "bleu2", "bleu3", "bleu4",
                           "cider", "meteor_exact", "n_images"}
    assert report["n_images"] == 2
    for k in ("bleu1", "bleu2", "bleu3", "bleu4", "meteor_exact"):
        assert 0.0 <= report[k] <= 1.0
    assert 0.0 <= report["cider"] <= 10.0


def test_report_averages_fmeasure_over_images():
    ten = toks("a b c d e f g h i j")
    pairs = [(ten, [ten]), (toks("p q"), [toks("x y")])]
    report = evaluate_pairs(pairs)
    assert abs(report["meteor_exact"] - 0.9995 / 2) < 1e-12
