//! Depth-limited regression trees grown level by level on binned features.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        /// Rows with `bin <= bin` go left.
        bin: u8,
        /// Raw-value form of the same test: `x <= threshold` (or missing) goes left.
        threshold: f64,
        gain: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn is_single_leaf(&self) -> bool {
        self.nodes.len() == 1
    }

    pub fn leaf_binned(&self, binned: &[Vec<u8>], row: usize) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    bin,
                    left,
                    right,
                    ..
                } => {
                    i = if binned[*feature][row] <= *bin {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    /// Leaf reached by a row given column-major raw values.
    pub fn leaf_raw(&self, columns: &[Vec<f64>], row: usize) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    let x = columns[*feature][row];
                    i = if x.is_nan() || x <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub(crate) fn add_gains(&self, out: &mut [f64]) {
        for n in &self.nodes {
            if let Node::Split { feature, gain, .. } = n {
                out[*feature] += gain;
            }
        }
    }
}

pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub l2: f64,
    pub gain_floor: f64,
}

/// Read-only training inputs for one tree.
pub(crate) struct GrowInput<'a> {
    pub binned: &'a [Vec<u8>],
    pub n_bins: &'a [usize],
    pub thresholds: &'a [Vec<f64>],
    /// Sampled features, ascending.
    pub features: &'a [usize],
    /// Weighted residuals `w·(y - pred)`.
    pub grad: &'a [f64],
    /// Weights.
    pub hess: &'a [f64],
}

#[derive(Clone)]
struct FeatureHist {
    g: Vec<f64>,
    h: Vec<f64>,
    c: Vec<u32>,
}

type Hist = Vec<FeatureHist>;

const PARALLEL_WORK: usize = 32_768;

fn build_hist(input: &GrowInput, rows: &[u32]) -> Hist {
    let one = |&f: &usize| {
        let nb = input.n_bins[f];
        let mut fh = FeatureHist {
            g: vec![0.0; nb],
            h: vec![0.0; nb],
            c: vec![0; nb],
        };
        let col = &input.binned[f];
        for &r in rows {
            let r = r as usize;
            let b = col[r] as usize;
            fh.g[b] += input.grad[r];
            fh.h[b] += input.hess[r];
            fh.c[b] += 1;
        }
        fh
    };
    if rows.len() * input.features.len() >= PARALLEL_WORK {
        input.features.par_iter().map(one).collect()
    } else {
        input.features.iter().map(one).collect()
    }
}

fn subtract(parent: &Hist, child: &Hist) -> Hist {
    parent
        .iter()
        .zip(child)
        .map(|(p, c)| FeatureHist {
            g: p.g.iter().zip(&c.g).map(|(a, b)| a - b).collect(),
            h: p.h.iter().zip(&c.h).map(|(a, b)| a - b).collect(),
            c: p.c.iter().zip(&c.c).map(|(a, b)| a - b).collect(),
        })
        .collect()
}

struct Candidate {
    feature: usize,
    bin: usize,
    gain: f64,
}

fn score(g: f64, h: f64, l2: f64) -> f64 {
    g * g / (h + l2)
}

fn best_split(input: &GrowInput, hist: &Hist, params: &GrowParams) -> Option<Candidate> {
    let mut best: Option<Candidate> = None;
    for (fh, &f) in hist.iter().zip(input.features) {
        let g_tot: f64 = fh.g.iter().sum();
        let h_tot: f64 = fh.h.iter().sum();
        let c_tot: u32 = fh.c.iter().sum();
        let parent = score(g_tot, h_tot, params.l2);
        let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0u32);
        for b in 0..fh.g.len().saturating_sub(1) {
            gl += fh.g[b];
            hl += fh.h[b];
            cl += fh.c[b];
            let cr = c_tot - cl;
            if (cl as usize) < params.min_samples_leaf {
                continue;
            }
            if (cr as usize) < params.min_samples_leaf {
                break;
            }
            let (gr, hr) = (g_tot - gl, h_tot - hl);
            if hl <= 0.0 || hr <= 0.0 {
                continue;
            }
            let gain = score(gl, hl, params.l2) + score(gr, hr, params.l2) - parent;
            if gain > params.gain_floor && best.as_ref().is_none_or(|c| gain > c.gain) {
                best = Some(Candidate {
                    feature: f,
                    bin: b,
                    gain,
                });
            }
        }
    }
    best
}

struct Work {
    node: usize,
    rows: Vec<u32>,
    hist: Option<Hist>,
}

fn leaf_value(input: &GrowInput, rows: &[u32], l2: f64) -> f64 {
    let (mut g, mut h) = (0.0, 0.0);
    for &r in rows {
        g += input.grad[r as usize];
        h += input.hess[r as usize];
    }
    g / (h + l2)
}

pub(crate) fn grow_tree(input: &GrowInput, rows: Vec<u32>, params: &GrowParams) -> Tree {
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let can_split = |n: usize| n >= 2 * params.min_samples_leaf.max(1);
    let root_hist =
        (params.max_depth > 0 && can_split(rows.len())).then(|| build_hist(input, &rows));
    let mut level = vec![Work {
        node: 0,
        rows,
        hist: root_hist,
    }];
    for depth in 0..params.max_depth {
        let mut next = Vec::new();
        for work in level {
            let split = work
                .hist
                .as_ref()
                .and_then(|h| best_split(input, h, params));
            let Some(split) = split else {
                nodes[work.node] = Node::Leaf {
                    value: leaf_value(input, &work.rows, params.l2),
                };
                continue;
            };
            let col = &input.binned[split.feature];
            let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = work
                .rows
                .iter()
                .partition(|&&r| col[r as usize] as usize <= split.bin);
            let (left, right) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::Leaf { value: 0.0 });
            nodes.push(Node::Leaf { value: 0.0 });
            nodes[work.node] = Node::Split {
                feature: split.feature,
                bin: split.bin as u8,
                threshold: input.thresholds[split.feature][split.bin],
                gain: split.gain,
                left,
                right,
            };
            let (mut lh, mut rh) = (None, None);
            if depth + 1 < params.max_depth
                && (can_split(left_rows.len()) || can_split(right_rows.len()))
            {
                let parent = work.hist.as_ref().expect("split implies histogram");
                if left_rows.len() <= right_rows.len() {
                    let small = build_hist(input, &left_rows);
                    rh = Some(subtract(parent, &small));
                    lh = Some(small);
                } else {
                    let small = build_hist(input, &right_rows);
                    lh = Some(subtract(parent, &small));
                    rh = Some(small);
                }
                if !can_split(left_rows.len()) {
                    lh = None;
                }
                if !can_split(right_rows.len()) {
                    rh = None;
                }
            }
            next.push(Work {
                node: left,
                rows: left_rows,
                hist: lh,
            });
            next.push(Work {
                node: right,
                rows: right_rows,
                hist: rh,
            });
        }
        level = next;
        if level.is_empty() {
            break;
        }
    }
    for work in level {
        nodes[work.node] = Node::Leaf {
            value: leaf_value(input, &work.rows, params.l2),
        };
    }
    Tree { nodes }
}
