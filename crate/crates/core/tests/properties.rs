use ndarray::{Array1, Array2};
use proptest::prelude::*;

use dre::corpus::{
    align_trigger, anonymize_speakers, build_input_sequence, build_prefix_instance, parse_dialogre, to_dialogre_json,
    BasicTokenizer, DialogueInstance, RelationSet, Tokenizer, Turn,
};
use dre::encoder::{EncoderConfig, EncoderParams};
use dre::fusion::{attend, gate_fuse};
use dre::knowledge::{fuse_knowledge, guidance_loss};
use dre::trigger::{decode_span, trigger_loss, PointerScores};
use dre::corpus::Span;
use dre::math::MASKED_LOGIT;

const LABELS: [&str; 3] = ["per:friends", "per:spouse", "per:siblings"];

fn relations() -> RelationSet {
    RelationSet::new(LABELS.iter().map(|s| s.to_string()).collect()).unwrap()
}

fn vec_of(len: usize, lo: f64, hi: f64) -> impl Strategy<Value = Array1<f64>> {
    prop::collection::vec(lo..hi, len).prop_map(Array1::from)
}

fn mat_of(rows: std::ops::Range<usize>, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(prop::collection::vec(-3.0..3.0f64, cols), rows)
        .prop_map(move |r| Array2::from_shape_vec((r.len(), cols), r.concat()).unwrap())
}

fn turn() -> impl Strategy<Value = Turn> {
    (prop::sample::select(vec!["Ross", "Rachel", "Monica", "Speaker 1", "Speaker 2"]), "[a-z ,.?!:]{0,24}")
        .prop_map(|(s, t)| Turn::new(s, t))
}

fn instance() -> impl Strategy<Value = DialogueInstance> {
    (
        prop::collection::vec(turn(), 1..8),
        prop::sample::select(vec!["Ross", "Rachel", "Speaker 1", "Carol"]),
        prop::sample::select(vec!["Monica", "Rachel", "Speaker 2", "Ross"]),
        prop::sample::subsequence(LABELS.to_vec(), 1..=3),
        "[a-z ]{0,10}",
    )
        .prop_map(|(turns, a1, a2, rels, trig)| DialogueInstance {
            triggers: rels.iter().enumerate().map(|(i, _)| if i == 0 { trig.clone() } else { String::new() }).collect(),
            relations: rels.into_iter().map(String::from).collect(),
            turns,
            arg1: a1.into(),
            arg2: a2.into(),
            relation_ids: vec![],
        })
}

proptest! {
    #[test]
    fn corpus_round_trip(insts in prop::collection::vec(instance(), 0..6)) {
        let text = to_dialogre_json(&insts);
        prop_assert_eq!(parse_dialogre(&text, &relations()).unwrap(), insts);
    }

    #[test]
    fn anonymization_is_idempotent(inst in instance()) {
        let once = inst.anonymized();
        prop_assert_eq!(once.anonymized(), once);
    }

    #[test]
    fn prefix_shrinks_and_is_a_fixed_point(inst in instance()) {
        let p = build_prefix_instance(&inst);
        prop_assert!(p.instance.turns.len() <= inst.turns.len());
        prop_assert_eq!(build_prefix_instance(&p.instance).instance, p.instance);
    }

    #[test]
    fn aligned_triggers_reproduce_their_tokens(inst in instance(), from in 0usize..8, len in 1usize..4) {
        let input = build_input_sequence(&anonymize_speakers(&inst), &BasicTokenizer, 512).unwrap();
        let region: Vec<&String> = input.tokens[input.dialogue_region.clone()].iter().collect();
        prop_assume!(from + len <= region.len());
        let trigger = region[from..from + len].iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" ");
        let span = align_trigger(&trigger, &input, &BasicTokenizer).unwrap();
        prop_assert_eq!(input.span_text(span), BasicTokenizer.tokenize(&trigger).join(" "));
        prop_assert!(input.in_dialogue(span));
    }

    #[test]
    fn decode_matches_exhaustive_search(
        start in prop::collection::vec(-4i32..4, 1..=32),
        seed_end in prop::collection::vec(-4i32..4, 32),
        a_frac in 0.0..1.0f64,
        max_span in 1usize..12,
    ) {
        let len = start.len();
        let a = ((len as f64) * a_frac) as usize % len;
        let region = a..len;
        let s = Array1::from_iter(start.iter().enumerate().map(|(i, &v)| if region.contains(&i) { v as f64 } else { MASKED_LOGIT }));
        let e = Array1::from_iter((0..len).map(|i| if region.contains(&i) { seed_end[i] as f64 } else { MASKED_LOGIT }));
        let scores = PointerScores { start_logits: s.clone(), end_logits: e.clone(), region: region.clone() };
        let got = decode_span(&scores, max_span).unwrap();
        let mut best: Option<(f64, usize, usize)> = None;
        for i in region.clone() {
            for j in i..region.end {
                if j - i < max_span && best.is_none_or(|(b, _, _)| s[i] + e[j] > b) {
                    best = Some((s[i] + e[j], i, j));
                }
            }
        }
        let (_, bi, bj) = best.unwrap();
        prop_assert_eq!((got.start, got.end), (bi, bj));
        prop_assert!(got.start <= got.end && got.end - got.start < max_span && region.contains(&got.end));
    }

    #[test]
    fn trigger_loss_is_non_negative(logits in vec_of(12, -20.0, 20.0), ends in vec_of(12, -20.0, 20.0), g in 2usize..10) {
        let scores = PointerScores { start_logits: logits, end_logits: ends, region: 0..12 };
        let l = trigger_loss(&scores, Some(Span::new(g, g + 1))).unwrap();
        prop_assert!(l.value >= 0.0);
    }

    #[test]
    fn attention_stays_in_convex_hull(values in mat_of(1..7, 5), query in vec_of(5, -3.0, 3.0)) {
        let a = attend(values.view(), query.view()).unwrap();
        prop_assert!((a.weights.sum() - 1.0).abs() < 1e-6);
        prop_assert!(a.weights.iter().all(|&w| w > 0.0 && w <= 1.0));
        for j in 0..5 {
            let col = values.column(j);
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(a.output[j] >= lo - 1e-12 && a.output[j] <= hi + 1e-12);
        }
    }

    #[test]
    fn gate_swap_and_linearity(
        f in vec_of(6, -5.0, 5.0), s in vec_of(6, -5.0, 5.0), g in vec_of(6, -5.0, 5.0),
        mu in vec_of(6, -8.0, 8.0), c in -3.0..3.0f64,
    ) {
        let out = gate_fuse(f.view(), s.view(), mu.view()).unwrap();
        let swapped = gate_fuse(s.view(), f.view(), (-&mu).view()).unwrap();
        prop_assert!((&out - &swapped).iter().all(|d| d.abs() < 1e-12));
        let combined = gate_fuse((&f + &(&g * c)).view(), s.view(), mu.view()).unwrap();
        let parts = &out + &(gate_fuse(g.view(), Array1::zeros(6).view(), mu.view()).unwrap() * c);
        prop_assert!((&combined - &parts).iter().all(|d| d.abs() < 1e-9));
    }

    #[test]
    fn guidance_is_symmetric(a in vec_of(8, -5.0, 5.0), b in vec_of(8, -5.0, 5.0)) {
        let ab = guidance_loss(a.view(), b.view()).unwrap();
        prop_assert_eq!(ab, guidance_loss(b.view(), a.view()).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(guidance_loss(a.view(), a.view()).unwrap(), 0.0);
        prop_assert_eq!(ab == 0.0, a == b);
    }

    #[test]
    fn knowledge_feature_is_bounded_and_monotone(
        phrases in mat_of(1..6, 4), c1 in vec_of(4, -2.0, 2.0), c2 in vec_of(4, -2.0, 2.0),
        mu in vec_of(4, -4.0, 4.0), row in 0usize..6, col in 0usize..4, bump in 0.0..2.0f64,
    ) {
        let feat = fuse_knowledge(phrases.view(), c1.view(), c2.view(), mu.view()).unwrap();
        for j in 0..4 {
            let (lo, hi) = (feat.context_view[j].min(feat.argument_view[j]), feat.context_view[j].max(feat.argument_view[j]));
            prop_assert!(feat.value[j] >= lo - 1e-12 && feat.value[j] <= hi + 1e-12);
        }
        // raise one product k_i[j]·cls1[j] by moving k_i[j] in the sign direction of cls1[j]
        let mut raised = phrases.clone();
        let i = row % phrases.nrows();
        raised[[i, col]] += bump * c1[col].signum();
        let after = fuse_knowledge(raised.view(), c1.view(), c2.view(), mu.view()).unwrap();
        prop_assert!(after.context_view[col] >= feat.context_view[col]);
    }

    #[test]
    fn encoder_is_deterministic(seed in any::<u64>(), ids in prop::collection::vec(0usize..7, 1..10)) {
        let cfg = EncoderConfig { d_h: 4, layers: 1, vocab_size: 7, max_positions: 16, seed };
        let (a, _) = EncoderParams::init(&cfg).forward(&ids).unwrap();
        let (b, _) = EncoderParams::init(&cfg).forward(&ids).unwrap();
        prop_assert_eq!(a, b);
    }
}
