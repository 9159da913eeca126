//! Table trees, a tolerant markup parser, and TEDS.
//!
//! Tree edit distance uses the Zhang-Shasha keyroot dynamic program with
//! unit insert/delete costs. Relabelling costs 1 when tag or spans differ,
//! or when two cells carry different normalized text; otherwise 0.

use serde::{Deserialize, Serialize};

use crate::normalize::normalize;
use crate::{MetricKind, MetricScore};

/// Label used for the root of unparseable input.
pub const RAW_TEXT_LABEL: &str = "#text";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableNode {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub colspan: u32,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub rowspan: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<TableNode>,
}

fn one() -> u32 {
    1
}

fn is_one(v: &u32) -> bool {
    *v == 1
}

impl TableNode {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            text: None,
            colspan: 1,
            rowspan: 1,
            children: Vec::new(),
        }
    }

    pub fn cell(label: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            text: Some(text.into()),
            ..Self::new(label)
        }
    }

    pub fn with_children(mut self, children: Vec<TableNode>) -> Self {
        self.children = children;
        self
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(TableNode::size).sum::<usize>()
    }
}

/// Rooted ordered labelled tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableTree {
    pub root: TableNode,
}

impl TableTree {
    pub fn new(root: TableNode) -> Self {
        Self { root }
    }

    pub fn size(&self) -> usize {
        self.root.size()
    }

    fn raw(text: &str) -> Self {
        let trimmed = text.trim();
        let mut root = TableNode::new(RAW_TEXT_LABEL);
        if !trimmed.is_empty() {
            root.text = Some(trimmed.to_string());
        }
        Self { root }
    }
}

/// Relabel cost between two nodes.
pub(crate) fn relabel_cost(a: &TableNode, b: &TableNode) -> usize {
    if a.label != b.label || a.colspan != b.colspan || a.rowspan != b.rowspan {
        return 1;
    }
    let ta = normalize(a.text.as_deref().unwrap_or(""));
    let tb = normalize(b.text.as_deref().unwrap_or(""));
    usize::from(ta != tb)
}

/// Postorder view of a tree: nodes, leftmost-leaf indices and keyroots.
struct Postorder<'a> {
    nodes: Vec<&'a TableNode>,
    leftmost: Vec<usize>,
    keyroots: Vec<usize>,
}

impl<'a> Postorder<'a> {
    fn new(root: &'a TableNode) -> Self {
        let mut nodes = Vec::new();
        let mut leftmost = Vec::new();
        Self::walk(root, &mut nodes, &mut leftmost);

        // A node is a keyroot iff no later node in postorder shares its
        // leftmost leaf.
        let mut keyroots = Vec::new();
        let mut seen = vec![false; nodes.len()];
        for i in (0..nodes.len()).rev() {
            if !seen[leftmost[i]] {
                seen[leftmost[i]] = true;
                keyroots.push(i);
            }
        }
        keyroots.reverse();
        Self { nodes, leftmost, keyroots }
    }

    fn walk(node: &'a TableNode, nodes: &mut Vec<&'a TableNode>, leftmost: &mut Vec<usize>) -> usize {
        let mut first_leaf = None;
        for child in &node.children {
            let l = Self::walk(child, nodes, leftmost);
            first_leaf.get_or_insert(l);
        }
        let idx = nodes.len();
        nodes.push(node);
        let l = first_leaf.unwrap_or(idx);
        leftmost.push(l);
        l
    }
}

/// Ordered tree edit distance (Zhang-Shasha).
pub fn tree_edit_distance(a: &TableTree, b: &TableTree) -> usize {
    let pa = Postorder::new(&a.root);
    let pb = Postorder::new(&b.root);
    let (n, m) = (pa.nodes.len(), pb.nodes.len());
    let mut tree_dist = vec![vec![0usize; m]; n];
    let mut forest = vec![vec![0usize; m + 1]; n + 1];

    for &i in &pa.keyroots {
        for &j in &pb.keyroots {
            let li = pa.leftmost[i];
            let lj = pb.leftmost[j];
            // forest[x][y] is the distance between forests
            // a[li..li+x) and b[lj..lj+y) (postorder ranges).
            let rows = i - li + 1;
            let cols = j - lj + 1;
            forest[0][0] = 0;
            for x in 1..=rows {
                forest[x][0] = forest[x - 1][0] + 1;
            }
            for y in 1..=cols {
                forest[0][y] = forest[0][y - 1] + 1;
            }
            for x in 1..=rows {
                let ia = li + x - 1;
                for y in 1..=cols {
                    let jb = lj + y - 1;
                    let delete = forest[x - 1][y] + 1;
                    let insert = forest[x][y - 1] + 1;
                    if pa.leftmost[ia] == li && pb.leftmost[jb] == lj {
                        let relabel = forest[x - 1][y - 1] + relabel_cost(pa.nodes[ia], pb.nodes[jb]);
                        let d = delete.min(insert).min(relabel);
                        forest[x][y] = d;
                        tree_dist[ia][jb] = d;
                    } else {
                        let px = pa.leftmost[ia] - li;
                        let py = pb.leftmost[jb] - lj;
                        let subtree = forest[px][py] + tree_dist[ia][jb];
                        forest[x][y] = delete.min(insert).min(subtree);
                    }
                }
            }
        }
    }
    tree_dist[n - 1][m - 1]
}

/// Tree-Edit-Distance Similarity: `1 - TED / max(|pred|, |gold|)`, floored
/// at 0. The floor matters because an order-preserving mapping can cost
/// more than `max(|pred|, |gold|)` when the shapes disagree.
pub fn teds(pred: &TableTree, gold: &TableTree) -> MetricScore {
    let dist = tree_edit_distance(pred, gold);
    let (np, ng) = (pred.size(), gold.size());
    let denom = np.max(ng) as f64;
    MetricScore::new(MetricKind::Teds, (1.0 - dist as f64 / denom).max(0.0))
        .with("tree_edit_distance", dist as f64)
        .with("pred_nodes", np as f64)
        .with("gold_nodes", ng as f64)
}

/// Parses HTML-style (`table`/`tr`/`td`/`th`) or markdown pipe tables.
/// Anything else becomes a single root holding the raw text.
pub fn parse_table_markup(text: &str) -> TableTree {
    let lower = text.to_ascii_lowercase();
    if lower.contains("<table") || lower.contains("<tr") || lower.contains("<td") || lower.contains("<th") {
        if let Some(tree) = html::parse(text) {
            return tree;
        }
    }
    if let Some(tree) = parse_markdown(text) {
        return tree;
    }
    TableTree::raw(text)
}

fn is_separator_cell(cell: &str) -> bool {
    let c = cell.trim();
    let inner = c.trim_start_matches(':').trim_end_matches(':');
    !inner.is_empty() && inner.chars().all(|ch| ch == '-')
}

fn split_pipe_row(line: &str) -> Vec<String> {
    let trimmed = line.trim();
    let inner = trimmed.strip_prefix('|').unwrap_or(trimmed);
    let inner = inner.strip_suffix('|').unwrap_or(inner);
    inner.split('|').map(|c| c.trim().to_string()).collect()
}

fn parse_markdown(text: &str) -> Option<TableTree> {
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| l.contains('|')).collect();
    if lines.is_empty() {
        return None;
    }
    let has_separator = lines.iter().any(|l| split_pipe_row(l).iter().all(|c| is_separator_cell(c)));
    if !has_separator && !lines.iter().any(|l| l.starts_with('|')) {
        return None;
    }
    let rows: Vec<TableNode> = lines
        .iter()
        .map(|l| split_pipe_row(l))
        .filter(|cells| !cells.iter().all(|c| is_separator_cell(c)))
        .map(|cells| {
            TableNode::new("tr").with_children(cells.into_iter().map(|c| TableNode::cell("td", c)).collect())
        })
        .collect();
    if rows.is_empty() {
        return None;
    }
    Some(TableTree::new(TableNode::new("table").with_children(rows)))
}

mod html {
    use super::{TableNode, TableTree};

    struct Builder {
        labels: Vec<String>,
        texts: Vec<Option<String>>,
        spans: Vec<(u32, u32)>,
        children: Vec<Vec<usize>>,
        stack: Vec<usize>,
    }

    impl Builder {
        fn add(&mut self, label: &str, spans: (u32, u32)) -> usize {
            let id = self.labels.len();
            self.labels.push(label.to_string());
            self.texts.push(None);
            self.spans.push(spans);
            self.children.push(Vec::new());
            if let Some(&parent) = self.stack.last() {
                self.children[parent].push(id);
            }
            self.stack.push(id);
            id
        }

        fn top_label(&self) -> Option<&str> {
            self.stack.last().map(|&i| self.labels[i].as_str())
        }

        fn pop_while(&mut self, labels: &[&str]) {
            while let Some(l) = self.top_label() {
                if labels.contains(&l) {
                    self.stack.pop();
                } else {
                    break;
                }
            }
        }

        fn close(&mut self, label: &str) {
            if let Some(pos) = self.stack.iter().rposition(|&i| self.labels[i] == label) {
                self.stack.truncate(pos);
            }
        }

        fn push_text(&mut self, text: &str) {
            if let Some(&top) = self.stack.last() {
                if matches!(self.labels[top].as_str(), "td" | "th") {
                    self.texts[top].get_or_insert_with(String::new).push_str(text);
                }
            }
        }

        fn build(&self, id: usize) -> TableNode {
            let text = self.texts[id]
                .as_deref()
                .map(|t| t.split_whitespace().collect::<Vec<_>>().join(" "));
            let is_cell = matches!(self.labels[id].as_str(), "td" | "th");
            TableNode {
                label: self.labels[id].clone(),
                text: if is_cell { Some(text.unwrap_or_default()) } else { None },
                colspan: self.spans[id].0,
                rowspan: self.spans[id].1,
                children: self.children[id].iter().map(|&c| self.build(c)).collect(),
            }
        }
    }

    fn decode_entities(s: &str) -> String {
        s.replace("&nbsp;", " ")
            .replace("&lt;", "<")
            .replace("&gt;", ">")
            .replace("&quot;", "\"")
            .replace("&#39;", "'")
            .replace("&amp;", "&")
    }

    fn attr_u32(attrs: &str, name: &str) -> u32 {
        let lower = attrs.to_ascii_lowercase();
        let Some(pos) = lower.find(name) else { return 1 };
        let rest = &lower[pos + name.len()..];
        let rest = rest.trim_start().strip_prefix('=').unwrap_or("").trim_start();
        let digits: String = rest
            .trim_start_matches(['"', '\''])
            .chars()
            .take_while(char::is_ascii_digit)
            .collect();
        digits.parse().ok().filter(|&v| v > 0).unwrap_or(1)
    }

    pub(super) fn parse(text: &str) -> Option<TableTree> {
        let mut b = Builder {
            labels: Vec::new(),
            texts: Vec::new(),
            spans: Vec::new(),
            children: Vec::new(),
            stack: Vec::new(),
        };
        let mut rest = text;
        let mut done = false;
        while !rest.is_empty() && !done {
            let Some(open) = rest.find('<') else {
                b.push_text(&decode_entities(rest));
                break;
            };
            b.push_text(&decode_entities(&rest[..open]));
            let Some(close_rel) = rest[open..].find('>') else {
                b.push_text(&decode_entities(&rest[open..]));
                break;
            };
            let tag = &rest[open + 1..open + close_rel];
            rest = &rest[open + close_rel + 1..];

            let closing = tag.trim_start().starts_with('/');
            let body = tag.trim_start().trim_start_matches('/').trim_end_matches('/');
            let name_end = body.find(|c: char| c.is_whitespace()).unwrap_or(body.len());
            let name = body[..name_end].to_ascii_lowercase();
            let attrs = &body[name_end..];
            let root_open = !b.labels.is_empty();

            match (name.as_str(), closing) {
                ("table", false) => {
                    if root_open && b.stack.is_empty() {
                        // a second top-level table ends the parse
                        done = true;
                        continue;
                    }
                    b.add("table", (1, 1));
                }
                ("tr", false) => {
                    if !root_open {
                        b.add("table", (1, 1));
                    }
                    b.pop_while(&["td", "th", "tr"]);
                    if b.stack.is_empty() {
                        continue;
                    }
                    b.add("tr", (1, 1));
                }
                ("td" | "th", false) => {
                    if !root_open {
                        b.add("table", (1, 1));
                    }
                    b.pop_while(&["td", "th"]);
                    if b.stack.is_empty() {
                        continue;
                    }
                    if b.top_label() == Some("table") {
                        b.add("tr", (1, 1));
                    }
                    b.add(&name, (attr_u32(attrs, "colspan"), attr_u32(attrs, "rowspan")));
                }
                ("table" | "tr" | "td" | "th", true) => b.close(&name),
                ("br", _) => b.push_text(" "),
                _ => {}
            }
        }
        if b.labels.is_empty() {
            return None;
        }
        Some(TableTree::new(b.build(0)))
    }
}
