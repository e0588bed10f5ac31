use proptest::prelude::*;
use rand::Rng;
use sggec::evaluation::*;
use sggec::numerics::seeded_rng;

fn w(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

#[test]
fn identical_sentences_have_no_edits() {
    assert!(extract_edits(&w("a b c"), &w("a b c")).is_empty());
    assert!(extract_edits::<String>(&[], &[]).is_empty());
}

#[test]
fn case_study_edits() {
    let src = w("Do one who suffered from this disease keep it a secret ?");
    let hyp = w("Does one who suffers from this disease keep it a secret ?");
    let edits = extract_edits(&src, &hyp);
    assert_eq!(
        edits,
        vec![
            Edit { start: 0, end: 1, replacement: w("Does") },
            Edit { start: 3, end: 4, replacement: w("suffers") },
        ]
    );
    assert_eq!(apply_edits(&src, &edits), hyp);
}

#[test]
fn substitution_preferred_over_insert_delete() {
    assert_eq!(extract_edits(&w("a b"), &w("a c")), vec![Edit { start: 1, end: 2, replacement: w("c") }]);
    assert_eq!(extract_edits(&w("a b c"), &w("a c")), vec![Edit { start: 1, end: 2, replacement: vec![] }]);
}

#[test]
fn table_scores() {
    let (p, r) = (0.744, 0.395);
    assert!((f_beta(p, r, 0.5) - 0.632).abs() <= 5e-4);
    assert!((f_beta(0.787, 0.417, 0.5) - 0.668).abs() <= 5e-4);
    assert_eq!(f_beta(1.0, 1.0, 0.5), 1.0);
    assert_eq!(f_half(3, 3, 3), (1.0, 1.0, 1.0));
}

#[test]
fn corpus_report() {
    let sources = vec![w("he go home"), w("a cat"), w("fine .")];
    let refs = vec![w("he goes home"), w("the cat"), w("fine .")];
    let hyps = vec![w("he goes home"), w("a cat"), w("fine !")];
    let (report, per) = evaluate(&sources, &hyps, &refs).unwrap();
    // Matched 1 of 2 hypothesis edits and 1 of 2 reference edits.
    assert_eq!((report.edits_hyp, report.edits_ref, report.sentences), (2, 2, 3));
    assert_eq!(per[0], SentenceCounts { matched: 1, hyp: 1, reference: 1 });
    assert_eq!((report.precision, report.recall), (0.5, 0.5));
    assert_eq!(
        report.to_string(),
        "P=0.5000 R=0.5000 F0.5=0.5000 sentences=3 edits_hyp=2 edits_ref=2"
    );
    assert!(evaluate(&sources, &hyps[..2], &refs).is_err());

    let (same, _) = evaluate(&sources, &refs, &refs).unwrap();
    assert_eq!(same.f05, 1.0);
    let (none, _) = evaluate(&sources, &sources, &refs).unwrap();
    assert_eq!(none.f05, 0.0);
}

#[test]
fn multiset_matching() {
    let e = Edit { start: 0, end: 1, replacement: w("x") };
    assert_eq!(matching_edits(&[e.clone(), e.clone()], &[e.clone()]), 1);
    assert_eq!(matching_edits(&[e.clone()], &[e.clone(), e]), 1);
}

#[test]
fn round_trip_on_random_pairs() {
    fn sent(rng: &mut impl Rng) -> Vec<String> {
        let n = rng.gen_range(0..9);
        (0..n).map(|_| ["a", "b", "c", "d"][rng.gen_range(0..4)].to_string()).collect()
    }
    let mut rng = seeded_rng(1);
    for _ in 0..1000 {
        let (s, h) = (sent(&mut rng), sent(&mut rng));
        let edits = extract_edits(&s, &h);
        assert_eq!(apply_edits(&s, &edits), h);
        // Sorted, and separated by at least one matching token.
        assert!(edits.windows(2).all(|p| p[0].end < p[1].start));
        for e in &edits {
            assert!(e.start <= e.end && e.end <= s.len());
            assert!(e.start < e.end || !e.replacement.is_empty());
        }
    }
}

proptest! {
    #[test]
    fn f_half_properties(m in 0usize..50, extra_h in 0usize..50, extra_r in 0usize..50) {
        let (p, r, f) = f_half(m, m + extra_h, m + extra_r);
        prop_assert!((0.0..=1.0).contains(&f));
        if p == r {
            prop_assert!((f - p).abs() < 1e-12);
        }
        if p > r && r > 0.0 {
            prop_assert!(f > f_beta(p, r, 1.0));
        }
    }
}
