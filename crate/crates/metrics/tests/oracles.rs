//! Fast kernels checked against slow, independent reference routines.

use ocr_reflect_metrics::oracle::{
    all_strings, bleu_by_counting, levenshtein_recursive, random_tree, tree_edit_distance_by_mappings,
};
use ocr_reflect_metrics::{bleu, levenshtein, teds, tree_edit_distance};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[test]
fn recursive_oracle_sanity() {
    assert_eq!(levenshtein_recursive("kitten", "sitting"), 3);
    assert_eq!(levenshtein_recursive("", "abc"), 3);
    assert_eq!(all_strings(&['a', 'b', 'c'], 2).len(), 1 + 3 + 9);
}

#[test]
fn levenshtein_matches_recursive_oracle_up_to_length_four() {
    let strings = all_strings(&['a', 'b', 'c'], 4);
    for a in &strings {
        for b in &strings {
            assert_eq!(levenshtein(a, b), levenshtein_recursive(a, b), "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn mapping_oracle_on_known_pair() {
    use ocr_reflect_metrics::{TableNode, TableTree};
    let leaf = TableNode::new;
    let t1 = TableTree::new(leaf("f").with_children(vec![
        leaf("d").with_children(vec![leaf("a"), leaf("c").with_children(vec![leaf("b")])]),
        leaf("e"),
    ]));
    let t2 = TableTree::new(leaf("f").with_children(vec![
        leaf("c").with_children(vec![leaf("d").with_children(vec![leaf("a"), leaf("b")])]),
        leaf("e"),
    ]));
    assert_eq!(tree_edit_distance_by_mappings(&t1, &t2), 2);
}

#[test]
fn zhang_shasha_matches_mapping_oracle() {
    let mut rng = StdRng::seed_from_u64(0x7ed5);
    for _ in 0..300 {
        let (na, nb) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let a = random_tree(&mut rng, na, &["a", "b", "c"]);
        let b = random_tree(&mut rng, nb, &["a", "b", "c"]);
        assert_eq!(tree_edit_distance(&a, &b), tree_edit_distance_by_mappings(&a, &b), "{a:?}\n{b:?}");
        assert_eq!(teds(&a, &a).value, 1.0);
    }
}

#[test]
fn bleu_matches_counting_oracle() {
    let mut rng = StdRng::seed_from_u64(11);
    let vocab = ["the", "cat", "sat", "on", "a", "mat", "dog"];
    let sentence = |rng: &mut StdRng| -> String {
        let n = rng.random_range(0..10);
        (0..n).map(|_| vocab[rng.random_range(0..vocab.len())]).collect::<Vec<_>>().join(" ")
    };
    for _ in 0..2000 {
        let p = sentence(&mut rng);
        let r = sentence(&mut rng);
        for n in 1..=4 {
            let fast = bleu(&p, &r, n).unwrap().value;
            let slow = bleu_by_counting(&p, &r, n);
            assert!((fast - slow).abs() < 1e-12, "{p:?} / {r:?} n={n}: {fast} vs {slow}");
        }
    }
}
