//! Exact weighted empirical CDF backed by an augmented red-black tree.
//!
//! Every node is a point mass `(value, weight)`. Besides the usual red-black
//! bookkeeping each node carries `sum`, the total weight of its subtree, so
//! the tree doubles as a segment tree over the sorted values:
//!
//! ```text
//!              (3.0, w=0.5, sum=1.0)
//!              /                   \
//!   (1.0, w=0.2, sum=0.2)   (4.0, w=0.3, sum=0.3)
//! ```
//!
//! A tree with nodes `{(v_i, w_i)}` represents `F(t) = Σ_i w_i · 1{t ≥ v_i}`.
//! Weights are stored un-normalized; `query_quantile` and `cdf_at` divide by
//! the root sum at query time. Insert, delete and both queries run in
//! `O(log n)` where `n` is the number of distinct values.
//!
//! Nodes live in an arena (`Vec<Node>`) addressed by `u32` indices, with
//! index 0 reserved for the shared black NIL leaf.

use std::cmp::Ordering;
use std::fmt::Write as _;

use thiserror::Error;

/// Marker returned when no stored mass lies at or below the requested level.
pub const BELOW_ALL: f64 = f64::MIN;

/// Marker used in place of `+∞` for keys and thresholds.
pub const ABOVE_ALL: f64 = f64::MAX;

/// Nodes whose weight falls to or below this value are removed.
pub const REMOVAL_EPSILON: f64 = 1e-12;

/// Relative tolerance for weight comparisons.
pub const WEIGHT_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TreeError {
    #[error("tree values must be finite, got {0}")]
    NonFiniteValue(f64),
    #[error("tree weights must be finite and non-negative, got {0}")]
    InvalidWeight(f64),
    #[error("no node stored at value {0}")]
    NotFound(f64),
    #[error("cannot remove weight {requested} from value {value}: only {stored} stored")]
    Underflow {
        value: f64,
        stored: f64,
        requested: f64,
    },
    #[error("quantile query on an empty distribution")]
    Empty,
    #[error("quantile level must lie in (0, 1], got {0}")]
    QuantileOutOfRange(f64),
}

/// A structural invariant that failed during [`QuantileTree::check_invariants`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum InvariantViolation {
    #[error("root must be black")]
    RedRoot,
    #[error("red node at value {0} has a red child")]
    RedRed(f64),
    #[error("black height differs below value {0}")]
    BlackHeight(f64),
    #[error("in-order values not strictly increasing at {0}")]
    Ordering(f64),
    #[error("sum mismatch at value {value}: stored {stored}, recomputed {expected}")]
    Sum {
        value: f64,
        stored: f64,
        expected: f64,
    },
    #[error("non-positive weight {weight} stored at value {value}")]
    Weight { value: f64, weight: f64 },
    #[error("broken parent link at value {0}")]
    ParentLink(f64),
    #[error("node count {counted} disagrees with recorded length {recorded}")]
    Count { counted: usize, recorded: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Color {
    Red,
    Black,
}

#[derive(Debug, Clone)]
struct Node {
    value: f64,
    weight: f64,
    sum: f64,
    left: u32,
    right: u32,
    parent: u32,
    color: Color,
}

const NIL: u32 = 0;

impl Node {
    fn nil() -> Self {
        Node {
            value: f64::NAN,
            weight: 0.0,
            sum: 0.0,
            left: NIL,
            right: NIL,
            parent: NIL,
            color: Color::Black,
        }
    }
}

/// Canonical key: folds `-0.0` into `0.0` so keys compare by bits safely.
#[inline]
fn canonical(value: f64) -> f64 {
    value + 0.0
}

#[inline]
fn cmp_keys(a: f64, b: f64) -> Ordering {
    a.total_cmp(&b)
}

/// Augmented red-black tree holding a weighted empirical distribution.
#[derive(Debug, Clone)]
pub struct QuantileTree {
    nodes: Vec<Node>,
    free: Vec<u32>,
    root: u32,
    len: usize,
}

impl Default for QuantileTree {
    fn default() -> Self {
        Self::new()
    }
}

impl QuantileTree {
    pub fn new() -> Self {
        QuantileTree {
            nodes: vec![Node::nil()],
            free: Vec::new(),
            root: NIL,
            len: 0,
        }
    }

    pub fn with_capacity(capacity: usize) -> Self {
        let mut nodes = Vec::with_capacity(capacity + 1);
        nodes.push(Node::nil());
        QuantileTree {
            nodes,
            free: Vec::new(),
            root: NIL,
            len: 0,
        }
    }

    /// Number of distinct values stored.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.root == NIL
    }

    /// Total stored weight (the root's subtree sum); 0 for an empty tree.
    pub fn total_weight(&self) -> f64 {
        self.nodes[self.root as usize].sum
    }

    /// Weight stored at exactly `value`, if present.
    pub fn weight_at(&self, value: f64) -> Option<f64> {
        let node = self.find(canonical(value));
        (node != NIL).then(|| self.nodes[node as usize].weight)
    }

    pub fn clear(&mut self) {
        self.nodes.truncate(1);
        self.nodes[0] = Node::nil();
        self.free.clear();
        self.root = NIL;
        self.len = 0;
    }

    /// Adds `weight` of mass at `value`, merging with an existing node.
    pub fn insert(&mut self, value: f64, weight: f64) -> Result<(), TreeError> {
        if !value.is_finite() {
            return Err(TreeError::NonFiniteValue(value));
        }
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(TreeError::InvalidWeight(weight));
        }
        if weight == 0.0 {
            return Ok(());
        }
        let value = canonical(value);

        let mut parent = NIL;
        let mut cursor = self.root;
        let mut went_left = false;
        while cursor != NIL {
            parent = cursor;
            match cmp_keys(value, self.nodes[cursor as usize].value) {
                Ordering::Less => {
                    cursor = self.nodes[cursor as usize].left;
                    went_left = true;
                }
                Ordering::Greater => {
                    cursor = self.nodes[cursor as usize].right;
                    went_left = false;
                }
                Ordering::Equal => {
                    self.nodes[cursor as usize].weight += weight;
                    self.refresh_upward(cursor);
                    return Ok(());
                }
            }
        }

        let z = self.allocate(Node {
            value,
            weight,
            sum: weight,
            left: NIL,
            right: NIL,
            parent,
            color: Color::Red,
        });
        if parent == NIL {
            self.root = z;
        } else if went_left {
            self.nodes[parent as usize].left = z;
        } else {
            self.nodes[parent as usize].right = z;
        }
        self.len += 1;
        self.refresh_upward(parent);
        self.insert_fixup(z);
        Ok(())
    }

    /// Removes `weight` of mass from the node at exactly `value`.
    ///
    /// The node disappears once its remaining weight is at most
    /// [`REMOVAL_EPSILON`].
    pub fn delete(&mut self, value: f64, weight: f64) -> Result<(), TreeError> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(TreeError::InvalidWeight(weight));
        }
        let value = canonical(value);
        let z = self.find(value);
        if z == NIL {
            return Err(TreeError::NotFound(value));
        }
        let stored = self.nodes[z as usize].weight;
        if weight > stored * (1.0 + WEIGHT_RTOL) {
            return Err(TreeError::Underflow {
                value,
                stored,
                requested: weight,
            });
        }
        let remaining = stored - weight;
        if remaining <= REMOVAL_EPSILON {
            self.remove_node(z);
        } else {
            self.nodes[z as usize].weight = remaining;
            self.refresh_upward(z);
        }
        Ok(())
    }

    /// Smallest stored value whose cumulative weight reaches `q · total`.
    ///
    /// Returns [`BELOW_ALL`] for `q ≤ 0`.
    pub fn query_quantile(&self, q: f64) -> Result<f64, TreeError> {
        if self.is_empty() {
            return Err(TreeError::Empty);
        }
        if q.is_nan() || q > 1.0 {
            return Err(TreeError::QuantileOutOfRange(q));
        }
        if q <= 0.0 {
            return Ok(BELOW_ALL);
        }
        Ok(self.query_cumulative(q * self.total_weight()))
    }

    /// Smallest stored value `v` with `Σ_{v_i ≤ v} w_i ≥ target`, given an
    /// un-normalized target in `(0, total]`. Targets beyond the total map to
    /// the largest stored value.
    fn query_cumulative(&self, target: f64) -> f64 {
        let mut x = self.root;
        let mut acc = 0.0;
        // nearest ancestor we descended left from
        let mut successor = NIL;
        let mut last = NIL;
        while x != NIL {
            last = x;
            let node = &self.nodes[x as usize];
            let left_total = acc + self.nodes[node.left as usize].sum;
            if node.left != NIL && left_total >= target {
                successor = x;
                x = node.left;
                continue;
            }
            let through = left_total + node.weight;
            if through >= target {
                return node.value;
            }
            acc = through;
            x = node.right;
        }
        if successor != NIL {
            self.nodes[successor as usize].value
        } else {
            self.nodes[last as usize].value
        }
    }

    /// Un-normalized cumulative weight `Σ_{v_i ≤ t} w_i`.
    pub fn cumulative_weight(&self, t: f64) -> f64 {
        if t.is_nan() {
            return 0.0;
        }
        let t = canonical(t);
        let mut x = self.root;
        let mut acc = 0.0;
        while x != NIL {
            let node = &self.nodes[x as usize];
            match cmp_keys(t, node.value) {
                Ordering::Less => x = node.left,
                Ordering::Equal => return acc + self.nodes[node.left as usize].sum + node.weight,
                Ordering::Greater => {
                    acc += self.nodes[node.left as usize].sum + node.weight;
                    x = node.right;
                }
            }
        }
        acc
    }

    /// Normalized CDF `F(t) / total`; 0 on an empty tree.
    pub fn cdf_at(&self, t: f64) -> f64 {
        let total = self.total_weight();
        if total <= 0.0 {
            return 0.0;
        }
        (self.cumulative_weight(t) / total).min(1.0)
    }

    pub fn min_value(&self) -> Option<f64> {
        let mut x = self.root;
        if x == NIL {
            return None;
        }
        while self.nodes[x as usize].left != NIL {
            x = self.nodes[x as usize].left;
        }
        Some(self.nodes[x as usize].value)
    }

    pub fn max_value(&self) -> Option<f64> {
        let mut x = self.root;
        if x == NIL {
            return None;
        }
        while self.nodes[x as usize].right != NIL {
            x = self.nodes[x as usize].right;
        }
        Some(self.nodes[x as usize].value)
    }

    /// In-order `(value, weight)` pairs.
    pub fn iter(&self) -> Iter<'_> {
        let mut it = Iter {
            tree: self,
            stack: Vec::new(),
        };
        it.push_left(self.root);
        it
    }

    /// Number of nodes on the longest root-to-leaf path.
    pub fn height(&self) -> usize {
        fn go(tree: &QuantileTree, x: u32) -> usize {
            if x == NIL {
                0
            } else {
                let n = &tree.nodes[x as usize];
                1 + go(tree, n.left).max(go(tree, n.right))
            }
        }
        go(self, self.root)
    }

    /// CSV dump of `value,weight,cumulative_weight` in ascending value order.
    pub fn dump_csv(&self) -> String {
        let mut out = String::from("value,weight,cumulative_weight\n");
        let mut acc = 0.0;
        for (value, weight) in self.iter() {
            acc += weight;
            let _ = writeln!(out, "{value:?},{weight:?},{acc:?}");
        }
        out
    }

    /// Verifies ordering, red-black, sum-recursion and parent-link invariants.
    pub fn check_invariants(&self) -> Result<(), InvariantViolation> {
        if self.nodes[self.root as usize].color != Color::Black {
            return Err(InvariantViolation::RedRoot);
        }
        if self.root != NIL && self.nodes[self.root as usize].parent != NIL {
            return Err(InvariantViolation::ParentLink(
                self.nodes[self.root as usize].value,
            ));
        }
        let mut counted = 0;
        self.check_subtree(self.root, &mut counted)?;
        if counted != self.len {
            return Err(InvariantViolation::Count {
                counted,
                recorded: self.len,
            });
        }
        let mut prev: Option<f64> = None;
        for (value, _) in self.iter() {
            if let Some(p) = prev {
                if cmp_keys(p, value) != Ordering::Less {
                    return Err(InvariantViolation::Ordering(value));
                }
            }
            prev = Some(value);
        }
        Ok(())
    }

    /// Returns the black height of the subtree.
    fn check_subtree(&self, x: u32, counted: &mut usize) -> Result<usize, InvariantViolation> {
        if x == NIL {
            return Ok(1);
        }
        *counted += 1;
        let node = &self.nodes[x as usize];
        if !(node.weight > 0.0) {
            return Err(InvariantViolation::Weight {
                value: node.value,
                weight: node.weight,
            });
        }
        for child in [node.left, node.right] {
            if child != NIL {
                let c = &self.nodes[child as usize];
                if c.parent != x {
                    return Err(InvariantViolation::ParentLink(c.value));
                }
                if node.color == Color::Red && c.color == Color::Red {
                    return Err(InvariantViolation::RedRed(node.value));
                }
            }
        }
        let expected =
            self.nodes[node.left as usize].sum + node.weight + self.nodes[node.right as usize].sum;
        if (node.sum - expected).abs() > WEIGHT_RTOL * expected.abs().max(f64::MIN_POSITIVE) {
            return Err(InvariantViolation::Sum {
                value: node.value,
                stored: node.sum,
                expected,
            });
        }
        let lh = self.check_subtree(node.left, counted)?;
        let rh = self.check_subtree(node.right, counted)?;
        if lh != rh {
            return Err(InvariantViolation::BlackHeight(node.value));
        }
        Ok(lh + usize::from(node.color == Color::Black))
    }

    // --- internals ---------------------------------------------------------

    fn allocate(&mut self, node: Node) -> u32 {
        if let Some(idx) = self.free.pop() {
            self.nodes[idx as usize] = node;
            idx
        } else {
            let idx =
                u32::try_from(self.nodes.len()).expect("quantile tree exceeds u32 node capacity");
            self.nodes.push(node);
            idx
        }
    }

    fn find(&self, value: f64) -> u32 {
        let mut x = self.root;
        while x != NIL {
            let node = &self.nodes[x as usize];
            match cmp_keys(value, node.value) {
                Ordering::Less => x = node.left,
                Ordering::Greater => x = node.right,
                Ordering::Equal => return x,
            }
        }
        NIL
    }

    #[inline]
    fn recompute_sum(&mut self, x: u32) {
        let n = &self.nodes[x as usize];
        let sum = self.nodes[n.left as usize].sum + n.weight + self.nodes[n.right as usize].sum;
        self.nodes[x as usize].sum = sum;
    }

    fn refresh_upward(&mut self, mut x: u32) {
        while x != NIL {
            self.recompute_sum(x);
            x = self.nodes[x as usize].parent;
        }
    }

    fn left_rotate(&mut self, x: u32) {
        let y = self.nodes[x as usize].right;
        let (x_left, x_weight) = (self.nodes[x as usize].left, self.nodes[x as usize].weight);
        let (y_left, y_right, y_weight) = {
            let n = &self.nodes[y as usize];
            (n.left, n.right, n.weight)
        };
        let new_x_sum =
            self.nodes[x_left as usize].sum + self.nodes[y_left as usize].sum + x_weight;
        let new_y_sum = new_x_sum + y_weight + self.nodes[y_right as usize].sum;

        self.nodes[x as usize].right = y_left;
        if y_left != NIL {
            self.nodes[y_left as usize].parent = x;
        }
        let xp = self.nodes[x as usize].parent;
        self.nodes[y as usize].parent = xp;
        if xp == NIL {
            self.root = y;
        } else if self.nodes[xp as usize].left == x {
            self.nodes[xp as usize].left = y;
        } else {
            self.nodes[xp as usize].right = y;
        }
        self.nodes[y as usize].left = x;
        self.nodes[x as usize].parent = y;

        self.nodes[x as usize].sum = new_x_sum;
        self.nodes[y as usize].sum = new_y_sum;
    }

    fn right_rotate(&mut self, x: u32) {
        let y = self.nodes[x as usize].left;
        let (x_right, x_weight) = (self.nodes[x as usize].right, self.nodes[x as usize].weight);
        let (y_left, y_right, y_weight) = {
            let n = &self.nodes[y as usize];
            (n.left, n.right, n.weight)
        };
        let new_x_sum =
            self.nodes[x_right as usize].sum + self.nodes[y_right as usize].sum + x_weight;
        let new_y_sum = new_x_sum + y_weight + self.nodes[y_left as usize].sum;

        self.nodes[x as usize].left = y_right;
        if y_right != NIL {
            self.nodes[y_right as usize].parent = x;
        }
        let xp = self.nodes[x as usize].parent;
        self.nodes[y as usize].parent = xp;
        if xp == NIL {
            self.root = y;
        } else if self.nodes[xp as usize].right == x {
            self.nodes[xp as usize].right = y;
        } else {
            self.nodes[xp as usize].left = y;
        }
        self.nodes[y as usize].right = x;
        self.nodes[x as usize].parent = y;

        self.nodes[x as usize].sum = new_x_sum;
        self.nodes[y as usize].sum = new_y_sum;
    }

    #[inline]
    fn color(&self, x: u32) -> Color {
        self.nodes[x as usize].color
    }

    #[inline]
    fn set_color(&mut self, x: u32, c: Color) {
        if x != NIL {
            self.nodes[x as usize].color = c;
        }
    }

    #[inline]
    fn parent(&self, x: u32) -> u32 {
        self.nodes[x as usize].parent
    }

    fn insert_fixup(&mut self, mut z: u32) {
        while self.color(self.parent(z)) == Color::Red {
            let p = self.parent(z);
            let g = self.parent(p);
            if p == self.nodes[g as usize].left {
                let uncle = self.nodes[g as usize].right;
                if self.color(uncle) == Color::Red {
                    self.set_color(p, Color::Black);
                    self.set_color(uncle, Color::Black);
                    self.set_color(g, Color::Red);
                    z = g;
                } else {
                    if z == self.nodes[p as usize].right {
                        z = p;
                        self.left_rotate(z);
                    }
                    let p = self.parent(z);
                    let g = self.parent(p);
                    self.set_color(p, Color::Black);
                    self.set_color(g, Color::Red);
                    self.right_rotate(g);
                }
            } else {
                let uncle = self.nodes[g as usize].left;
                if self.color(uncle) == Color::Red {
                    self.set_color(p, Color::Black);
                    self.set_color(uncle, Color::Black);
                    self.set_color(g, Color::Red);
                    z = g;
                } else {
                    if z == self.nodes[p as usize].left {
                        z = p;
                        self.right_rotate(z);
                    }
                    let p = self.parent(z);
                    let g = self.parent(p);
                    self.set_color(p, Color::Black);
                    self.set_color(g, Color::Red);
                    self.left_rotate(g);
                }
            }
        }
        let root = self.root;
        self.set_color(root, Color::Black);
    }

    fn transplant(&mut self, u: u32, v: u32) {
        let up = self.parent(u);
        if up == NIL {
            self.root = v;
        } else if self.nodes[up as usize].left == u {
            self.nodes[up as usize].left = v;
        } else {
            self.nodes[up as usize].right = v;
        }
        // NIL's parent is written on purpose; delete_fixup walks up from it.
        self.nodes[v as usize].parent = up;
    }

    fn subtree_min(&self, mut x: u32) -> u32 {
        while self.nodes[x as usize].left != NIL {
            x = self.nodes[x as usize].left;
        }
        x
    }

    fn remove_node(&mut self, z: u32) {
        let mut y_color = self.color(z);
        let x;
        let (z_left, z_right) = (self.nodes[z as usize].left, self.nodes[z as usize].right);
        if z_left == NIL {
            x = z_right;
            self.transplant(z, z_right);
        } else if z_right == NIL {
            x = z_left;
            self.transplant(z, z_left);
        } else {
            let y = self.subtree_min(z_right);
            y_color = self.color(y);
            x = self.nodes[y as usize].right;
            if self.parent(y) == z {
                self.nodes[x as usize].parent = y;
            } else {
                let y_right = self.nodes[y as usize].right;
                self.transplant(y, y_right);
                self.nodes[y as usize].right = z_right;
                self.nodes[z_right as usize].parent = y;
            }
            self.transplant(z, y);
            self.nodes[y as usize].left = z_left;
            self.nodes[z_left as usize].parent = y;
            let zc = self.color(z);
            self.set_color(y, zc);
        }
        // x's parent is the lowest node whose subtree changed.
        self.refresh_upward(self.parent(x));
        if y_color == Color::Black {
            self.delete_fixup(x);
        }
        self.nodes[NIL as usize] = Node::nil();
        self.nodes[z as usize] = Node::nil();
        self.free.push(z);
        self.len -= 1;
    }

    fn delete_fixup(&mut self, mut x: u32) {
        while x != self.root && self.color(x) == Color::Black {
            let p = self.parent(x);
            if x == self.nodes[p as usize].left {
                let mut w = self.nodes[p as usize].right;
                if self.color(w) == Color::Red {
                    self.set_color(w, Color::Black);
                    self.set_color(p, Color::Red);
                    self.left_rotate(p);
                    w = self.nodes[self.parent(x) as usize].right;
                }
                let (wl, wr) = (self.nodes[w as usize].left, self.nodes[w as usize].right);
                if self.color(wl) == Color::Black && self.color(wr) == Color::Black {
                    self.set_color(w, Color::Red);
                    x = self.parent(x);
                } else {
                    if self.color(wr) == Color::Black {
                        self.set_color(wl, Color::Black);
                        self.set_color(w, Color::Red);
                        self.right_rotate(w);
                        w = self.nodes[self.parent(x) as usize].right;
                    }
                    let p = self.parent(x);
                    let pc = self.color(p);
                    self.set_color(w, pc);
                    self.set_color(p, Color::Black);
                    let wr = self.nodes[w as usize].right;
                    self.set_color(wr, Color::Black);
                    self.left_rotate(p);
                    x = self.root;
                }
            } else {
                let mut w = self.nodes[p as usize].left;
                if self.color(w) == Color::Red {
                    self.set_color(w, Color::Black);
                    self.set_color(p, Color::Red);
                    self.right_rotate(p);
                    w = self.nodes[self.parent(x) as usize].left;
                }
                let (wl, wr) = (self.nodes[w as usize].left, self.nodes[w as usize].right);
                if self.color(wl) == Color::Black && self.color(wr) == Color::Black {
                    self.set_color(w, Color::Red);
                    x = self.parent(x);
                } else {
                    if self.color(wl) == Color::Black {
                        self.set_color(wr, Color::Black);
                        self.set_color(w, Color::Red);
                        self.left_rotate(w);
                        w = self.nodes[self.parent(x) as usize].left;
                    }
                    let p = self.parent(x);
                    let pc = self.color(p);
                    self.set_color(w, pc);
                    self.set_color(p, Color::Black);
                    let wl = self.nodes[w as usize].left;
                    self.set_color(wl, Color::Black);
                    self.right_rotate(p);
                    x = self.root;
                }
            }
        }
        self.set_color(x, Color::Black);
    }
}

/// In-order iterator over `(value, weight)`.
pub struct Iter<'a> {
    tree: &'a QuantileTree,
    stack: Vec<u32>,
}

impl Iter<'_> {
    fn push_left(&mut self, mut x: u32) {
        while x != NIL {
            self.stack.push(x);
            x = self.tree.nodes[x as usize].left;
        }
    }
}

impl Iterator for Iter<'_> {
    type Item = (f64, f64);

    fn next(&mut self) -> Option<Self::Item> {
        let x = self.stack.pop()?;
        let node = &self.tree.nodes[x as usize];
        self.push_left(node.right);
        Some((node.value, node.weight))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Sorted `(value, weight)` list with the same semantics as the tree.
    #[derive(Default)]
    struct SortedOracle {
        items: Vec<(f64, f64)>,
    }

    impl SortedOracle {
        fn insert(&mut self, v: f64, w: f64) {
            if w == 0.0 {
                return;
            }
            match self.items.binary_search_by(|(x, _)| x.total_cmp(&v)) {
                Ok(i) => self.items[i].1 += w,
                Err(i) => self.items.insert(i, (v, w)),
            }
        }

        fn delete(&mut self, v: f64, w: f64) {
            let i = self
                .items
                .binary_search_by(|(x, _)| x.total_cmp(&v))
                .expect("oracle delete of absent value");
            let rest = self.items[i].1 - w;
            if rest <= REMOVAL_EPSILON {
                self.items.remove(i);
            } else {
                self.items[i].1 = rest;
            }
        }

        fn total(&self) -> f64 {
            self.items.iter().map(|(_, w)| w).sum()
        }

        fn quantile(&self, q: f64) -> f64 {
            let target = q * self.total();
            let mut acc = 0.0;
            for &(v, w) in &self.items {
                acc += w;
                if acc >= target {
                    return v;
                }
            }
            self.items.last().unwrap().0
        }

        fn cdf(&self, t: f64) -> f64 {
            let below: f64 = self
                .items
                .iter()
                .filter(|(v, _)| *v <= t)
                .map(|(_, w)| w)
                .sum();
            below / self.total()
        }
    }

    #[test]
    fn single_insert() {
        let mut t = QuantileTree::new();
        t.insert(5.0, 2.0).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.total_weight(), 2.0);
        assert_eq!(t.query_quantile(1.0).unwrap(), 5.0);
    }

    #[test]
    fn duplicate_values_merge() {
        let mut t = QuantileTree::new();
        t.insert(5.0, 1.0).unwrap();
        t.insert(5.0, 3.0).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.weight_at(5.0), Some(4.0));
        assert_eq!(t.total_weight(), 4.0);
    }

    #[test]
    fn zero_weight_insert_is_noop() {
        let mut t = QuantileTree::new();
        t.insert(1.0, 0.0).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn negative_zero_is_same_key() {
        let mut t = QuantileTree::new();
        t.insert(0.0, 1.0).unwrap();
        t.insert(-0.0, 1.0).unwrap();
        assert_eq!(t.len(), 1);
        t.delete(-0.0, 2.0).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut t = QuantileTree::new();
        assert!(matches!(
            t.insert(f64::NAN, 1.0),
            Err(TreeError::NonFiniteValue(_))
        ));
        assert!(matches!(
            t.insert(f64::INFINITY, 1.0),
            Err(TreeError::NonFiniteValue(_))
        ));
        assert!(matches!(
            t.insert(1.0, -1.0),
            Err(TreeError::InvalidWeight(_))
        ));
        assert!(matches!(
            t.insert(1.0, f64::NAN),
            Err(TreeError::InvalidWeight(_))
        ));
    }

    #[test]
    fn full_delete_empties_tree() {
        let mut t = QuantileTree::new();
        t.insert(3.0, 2.0).unwrap();
        t.delete(3.0, 2.0).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.total_weight(), 0.0);
        t.check_invariants().unwrap();
    }

    #[test]
    fn partial_delete_keeps_node() {
        let mut t = QuantileTree::new();
        t.insert(3.0, 2.0).unwrap();
        t.delete(3.0, 0.5).unwrap();
        assert_eq!(t.weight_at(3.0), Some(1.5));
        assert_eq!(t.total_weight(), 1.5);
    }

    #[test]
    fn delete_errors() {
        let mut t = QuantileTree::new();
        t.insert(3.0, 2.0).unwrap();
        assert_eq!(t.delete(4.0, 1.0), Err(TreeError::NotFound(4.0)));
        assert!(matches!(
            t.delete(3.0, 2.5),
            Err(TreeError::Underflow { .. })
        ));
        // within relative tolerance counts as a full removal
        t.delete(3.0, 2.0 * (1.0 + 1e-12)).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn quantile_examples() {
        let mut t = QuantileTree::new();
        for (v, w) in [(1.0, 0.2), (2.0, 0.3), (3.0, 0.5)] {
            t.insert(v, w).unwrap();
        }
        assert_eq!(t.query_quantile(0.5).unwrap(), 2.0);
        assert_eq!(t.query_quantile(0.1).unwrap(), 1.0);
        assert_eq!(t.query_quantile(1.0).unwrap(), 3.0);
        assert_eq!(t.query_quantile(0.0).unwrap(), BELOW_ALL);
        assert_eq!(t.query_quantile(-0.3).unwrap(), BELOW_ALL);
        assert!(matches!(
            t.query_quantile(1.5),
            Err(TreeError::QuantileOutOfRange(_))
        ));
        assert!((t.cdf_at(2.0) - 0.5).abs() < 1e-15);
        assert_eq!(t.cdf_at(BELOW_ALL), 0.0);
        assert_eq!(t.cdf_at(3.0), 1.0);
        assert_eq!(t.cdf_at(ABOVE_ALL), 1.0);
    }

    #[test]
    fn empty_tree_queries() {
        let t = QuantileTree::new();
        assert_eq!(t.query_quantile(0.5), Err(TreeError::Empty));
        assert_eq!(t.cdf_at(1.0), 0.0);
        assert_eq!(t.total_weight(), 0.0);
        assert_eq!(t.min_value(), None);
    }

    #[test]
    fn dump_lists_cumulative_weights() {
        let mut t = QuantileTree::new();
        t.insert(2.0, 1.0).unwrap();
        t.insert(1.0, 0.5).unwrap();
        assert_eq!(
            t.dump_csv(),
            "value,weight,cumulative_weight\n1.0,0.5,0.5\n2.0,1.0,1.5\n"
        );
    }

    #[test]
    fn thousand_inserts_match_running_total() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut t = QuantileTree::new();
        let mut oracle = SortedOracle::default();
        let mut running = 0.0;
        for _ in 0..1000 {
            let v: f64 = rng.random_range(-50.0..50.0);
            let w: f64 = rng.random_range(0.0..3.0);
            t.insert(v, w).unwrap();
            oracle.insert(v, w);
            running += w;
        }
        assert!((t.total_weight() - running).abs() <= 1e-9 * running);
        let values: Vec<f64> = t.iter().map(|(v, _)| v).collect();
        assert!(values.windows(2).all(|p| p[0] < p[1]));
        assert_eq!(values.len(), oracle.items.len());
        t.check_invariants().unwrap();
    }

    #[test]
    fn height_bound_after_sorted_inserts() {
        let mut t = QuantileTree::new();
        let n = 4095;
        for i in 0..n {
            t.insert(i as f64, 1.0).unwrap();
        }
        let bound = 2.0 * ((n + 1) as f64).log2();
        assert!(
            t.height() as f64 <= bound,
            "height {} > {bound}",
            t.height()
        );
        t.check_invariants().unwrap();
    }

    #[test]
    fn ten_thousand_pairs_quantiles_match_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut t = QuantileTree::new();
        let mut oracle = SortedOracle::default();
        for _ in 0..10_000 {
            let v = f64::from(rng.random_range(0..5_000u32)) * 0.25;
            let w = f64::from(rng.random_range(1..=64u32));
            t.insert(v, w).unwrap();
            oracle.insert(v, w);
        }
        for _ in 0..100 {
            let q: f64 = rng.random_range(1e-9..=1.0);
            assert_eq!(t.query_quantile(q).unwrap(), oracle.quantile(q));
        }
    }

    #[derive(Debug, Clone)]
    enum Op {
        Insert(u16, u8),
        Delete(usize, bool),
    }

    fn op_strategy() -> impl Strategy<Value = Op> {
        prop_oneof![
            3 => (0u16..200, 1u8..20).prop_map(|(v, w)| Op::Insert(v, w)),
            2 => (any::<usize>(), any::<bool>()).prop_map(|(i, full)| Op::Delete(i, full)),
        ]
    }

    proptest! {
        #[test]
        fn interleaved_ops_match_oracle(ops in proptest::collection::vec(op_strategy(), 1..500)) {
            let mut t = QuantileTree::new();
            let mut oracle = SortedOracle::default();
            for op in ops {
                match op {
                    Op::Insert(v, w) => {
                        let (v, w) = (f64::from(v) * 0.5, f64::from(w));
                        t.insert(v, w).unwrap();
                        oracle.insert(v, w);
                    }
                    Op::Delete(i, full) => {
                        if oracle.items.is_empty() { continue; }
                        let (v, stored) = oracle.items[i % oracle.items.len()];
                        let w = if full || stored <= 1.0 { stored } else { stored - 1.0 };
                        t.delete(v, w).unwrap();
                        oracle.delete(v, w);
                    }
                }
                prop_assert!(t.check_invariants().is_ok(), "{:?}", t.check_invariants());
                prop_assert_eq!(t.len(), oracle.items.len());
                prop_assert_eq!(t.total_weight(), oracle.total());
                for &(v, _) in &oracle.items {
                    prop_assert_eq!(t.cdf_at(v), oracle.cdf(v));
                }
            }
        }

        #[test]
        fn quantile_brackets_cdf(pairs in proptest::collection::vec((0u16..500, 1u8..50), 1..200),
                                 q in 1e-6f64..=1.0) {
            let mut t = QuantileTree::new();
            for (v, w) in pairs {
                t.insert(f64::from(v), f64::from(w)).unwrap();
            }
            let v = t.query_quantile(q).unwrap();
            let total = t.total_weight();
            prop_assert!(t.cumulative_weight(v) >= q * total);
            let below = t.iter().map(|(x, _)| x).filter(|x| *x < v).last();
            if let Some(prev) = below {
                prop_assert!(t.cumulative_weight(prev) < q * total);
            }
        }

        #[test]
        fn rebalancing_preserves_cdf(pairs in proptest::collection::vec((0u16..300, 1u8..50), 1..150),
                                     extra in 0u16..300) {
            let mut t = QuantileTree::new();
            for (v, w) in pairs {
                t.insert(f64::from(v), f64::from(w)).unwrap();
            }
            let probes: Vec<f64> = (0..310).map(f64::from).filter(|p| *p != f64::from(extra)).collect();
            let before: Vec<f64> = probes.iter().map(|&p| t.cumulative_weight(p)).collect();
            let extra_v = f64::from(extra);
            t.insert(extra_v, 1.0).unwrap();
            for (p, b) in probes.iter().zip(before) {
                let shift = if *p >= extra_v { 1.0 } else { 0.0 };
                prop_assert_eq!(t.cumulative_weight(*p), b + shift);
            }
        }
    }
}
