//! Slow reference implementations used only to check the fast paths.
//!
//! Nothing here shares code with the production kernels beyond string
//! normalization and tokenization.

use std::collections::BTreeMap;

use rand::Rng;

use crate::normalize::{normalize, tokenize};
use crate::table::{TableNode, TableTree};

/// Levenshtein distance by direct recursion over the three edit choices,
/// memoized on suffix positions.
pub fn levenshtein_recursive(a: &str, b: &str) -> usize {
    fn go(a: &[char], b: &[char], memo: &mut BTreeMap<(usize, usize), usize>) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        let key = (a.len(), b.len());
        if let Some(&d) = memo.get(&key) {
            return d;
        }
        let d = if a[0] == b[0] {
            go(&a[1..], &b[1..], memo)
        } else {
            1 + go(&a[1..], b, memo)
                .min(go(a, &b[1..], memo))
                .min(go(&a[1..], &b[1..], memo))
        };
        memo.insert(key, d);
        d
    }
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    go(&a, &b, &mut BTreeMap::new())
}

/// Every string over `alphabet` of length `0..=max_len`.
pub fn all_strings(alphabet: &[char], max_len: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    let mut frontier = vec![String::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for &c in alphabet {
                let mut t = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

struct Flat<'a> {
    nodes: Vec<&'a TableNode>,
    pre: Vec<usize>,
    post: Vec<usize>,
}

fn flatten(root: &TableNode) -> Flat<'_> {
    fn walk<'a>(n: &'a TableNode, f: &mut Flat<'a>, post_counter: &mut usize) {
        let idx = f.nodes.len();
        f.nodes.push(n);
        f.pre.push(idx);
        f.post.push(0);
        for c in &n.children {
            walk(c, f, post_counter);
        }
        f.post[idx] = *post_counter;
        *post_counter += 1;
    }
    let mut f = Flat { nodes: Vec::new(), pre: Vec::new(), post: Vec::new() };
    let mut counter = 0;
    walk(root, &mut f, &mut counter);
    f
}

fn oracle_relabel(a: &TableNode, b: &TableNode) -> usize {
    let same = a.label == b.label
        && a.colspan == b.colspan
        && a.rowspan == b.rowspan
        && normalize(a.text.as_deref().unwrap_or("")) == normalize(b.text.as_deref().unwrap_or(""));
    usize::from(!same)
}

/// Ordered tree edit distance as the minimum cost over all valid edit
/// mappings (one-to-one node pairings that preserve both preorder and
/// postorder relations). Exponential; intended for trees of at most
/// about seven nodes.
pub fn tree_edit_distance_by_mappings(a: &TableTree, b: &TableTree) -> usize {
    let fa = flatten(&a.root);
    let fb = flatten(&b.root);
    let (n, m) = (fa.nodes.len(), fb.nodes.len());

    struct Search<'s, 'a> {
        fa: &'s Flat<'a>,
        fb: &'s Flat<'a>,
        used: Vec<bool>,
        pairs: Vec<(usize, usize)>,
        best: usize,
    }

    impl Search<'_, '_> {
        fn consistent(&self, i: usize, j: usize) -> bool {
            self.pairs.iter().all(|&(pi, pj)| {
                (self.fa.pre[pi] < self.fa.pre[i]) == (self.fb.pre[pj] < self.fb.pre[j])
                    && (self.fa.post[pi] < self.fa.post[i]) == (self.fb.post[pj] < self.fb.post[j])
            })
        }

        fn run(&mut self, i: usize, relabel: usize) {
            let (n, m) = (self.fa.nodes.len(), self.fb.nodes.len());
            if i == n {
                let k = self.pairs.len();
                let cost = relabel + (n - k) + (m - k);
                self.best = self.best.min(cost);
                return;
            }
            // leave node i unmapped (deleted)
            self.run(i + 1, relabel);
            for j in 0..m {
                if !self.used[j] && self.consistent(i, j) {
                    self.used[j] = true;
                    self.pairs.push((i, j));
                    let r = oracle_relabel(self.fa.nodes[i], self.fb.nodes[j]);
                    self.run(i + 1, relabel + r);
                    self.pairs.pop();
                    self.used[j] = false;
                }
            }
        }
    }

    let mut s = Search { fa: &fa, fb: &fb, used: vec![false; m], pairs: Vec::new(), best: n + m };
    s.run(0, 0);
    s.best
}

/// Random ordered tree with `nodes` nodes and labels drawn from `labels`.
pub fn random_tree<R: Rng>(rng: &mut R, nodes: usize, labels: &[&str]) -> TableTree {
    assert!(nodes >= 1);
    // parent[i] < i gives a random shape; children keep insertion order.
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for i in 1..nodes {
        let parent = rng.random_range(0..i);
        children[parent].push(i);
    }
    let label_of: Vec<&str> = (0..nodes).map(|_| labels[rng.random_range(0..labels.len())]).collect();
    fn build(i: usize, children: &[Vec<usize>], labels: &[&str]) -> TableNode {
        TableNode::new(labels[i]).with_children(children[i].iter().map(|&c| build(c, children, labels)).collect())
    }
    TableTree::new(build(0, &children, &label_of))
}

/// BLEU computed by explicit n-gram string counting and a direct product
/// of precisions.
pub fn bleu_by_counting(pred: &str, reference: &str, max_n: usize) -> f64 {
    let hyp = tokenize(pred);
    let refs = tokenize(reference);
    if hyp.is_empty() {
        return 0.0;
    }
    let grams = |toks: &[String], n: usize| -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        let mut i = 0;
        while i + n <= toks.len() {
            *m.entry(toks[i..i + n].join("\u{1}")).or_insert(0) += 1;
            i += 1;
        }
        m
    };
    let mut product = 1.0;
    for n in 1..=max_n {
        let h = grams(&hyp, n);
        let r = grams(&refs, n);
        let total: usize = h.values().sum();
        let mut clipped = 0;
        for (g, c) in &h {
            clipped += (*c).min(*r.get(g).unwrap_or(&0));
        }
        let p = if clipped == 0 { 1.0 / (total as f64 + 1.0) } else { clipped as f64 / total as f64 };
        product *= p;
    }
    let (c, r) = (hyp.len() as f64, refs.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * product.powf(1.0 / max_n as f64)
}
