//! Least-squares gradient boosting with depth-limited trees grown level by
//! level on quantile-binned features.

use crate::numkit::{sorted_copy, Matrix};

const MAX_BINS: usize = 256;

#[derive(Debug, Clone)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict_row(&self, z: &Matrix, i: usize) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    k = if z.get(i, feature) <= threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GbtModel {
    base: f64,
    trees: Vec<Tree>,
}

/// Cut points for one feature: bin `b` holds values in `(cuts[b-1], cuts[b]]`.
fn feature_cuts(col: &[f64]) -> Vec<f64> {
    let s = sorted_copy(col);
    let n = s.len();
    let max = s[n - 1];
    let mut cuts: Vec<f64> = Vec::with_capacity(MAX_BINS);
    for b in 1..MAX_BINS {
        let v = s[(b * n / MAX_BINS).min(n - 1)];
        if v < max && cuts.last().is_none_or(|&l| v > l) {
            cuts.push(v);
        }
    }
    cuts
}

struct Binned {
    cuts: Vec<Vec<f64>>,
    bins: Vec<Vec<u16>>,
}

fn bin_features(z: &Matrix) -> Binned {
    let cuts: Vec<Vec<f64>> = z.columns().map(feature_cuts).collect();
    let bins = z
        .columns()
        .zip(&cuts)
        .map(|(c, cut)| {
            c.iter()
                .map(|&v| cut.partition_point(|&x| x < v) as u16)
                .collect()
        })
        .collect();
    Binned { cuts, bins }
}

struct Best {
    feature: usize,
    bin: usize,
    gain: f64,
}

fn best_split(binned: &Binned, rows: &[usize], resid: &[f64], min_leaf: usize) -> Option<Best> {
    let n = rows.len();
    if n < 2 * min_leaf {
        return None;
    }
    let total: f64 = rows.iter().map(|&i| resid[i]).sum();
    let parent = total * total / n as f64;
    let mut best: Option<Best> = None;
    let mut sum = [0.0f64; MAX_BINS];
    let mut cnt = [0usize; MAX_BINS];
    for (f, fb) in binned.bins.iter().enumerate() {
        let nb = binned.cuts[f].len() + 1;
        if nb < 2 {
            continue;
        }
        sum[..nb].fill(0.0);
        cnt[..nb].fill(0);
        for &i in rows {
            let b = fb[i] as usize;
            sum[b] += resid[i];
            cnt[b] += 1;
        }
        let (mut sl, mut nl) = (0.0, 0usize);
        for b in 0..nb - 1 {
            sl += sum[b];
            nl += cnt[b];
            let nr = n - nl;
            if nl < min_leaf {
                continue;
            }
            if nr < min_leaf {
                break;
            }
            let sr = total - sl;
            let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - parent;
            if gain > 1e-12 && best.as_ref().is_none_or(|bb| gain > bb.gain) {
                best = Some(Best {
                    feature: f,
                    bin: b,
                    gain,
                });
            }
        }
    }
    best
}

impl GbtModel {
    pub fn fit(
        z: &Matrix,
        t: &[f64],
        n_trees: usize,
        depth: usize,
        lr: f64,
        min_leaf: usize,
    ) -> GbtModel {
        let n = t.len();
        let base = t.iter().sum::<f64>() / n as f64;
        let binned = bin_features(z);
        let mut f = vec![base; n];
        let mut resid = vec![0.0; n];
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            for i in 0..n {
                resid[i] = t[i] - f[i];
            }
            let mut nodes: Vec<Node> = vec![Node::Leaf(0.0)];
            let mut frontier: Vec<(usize, Vec<usize>)> = vec![(0, (0..n).collect())];
            for level in 0..=depth {
                let mut next = Vec::new();
                for (id, rows) in frontier {
                    let split = if level < depth {
                        best_split(&binned, &rows, &resid, min_leaf)
                    } else {
                        None
                    };
                    match split {
                        Some(b) => {
                            let fb = &binned.bins[b.feature];
                            let (l, r): (Vec<usize>, Vec<usize>) =
                                rows.iter().partition(|&&i| fb[i] as usize <= b.bin);
                            let (li, ri) = (nodes.len(), nodes.len() + 1);
                            nodes.push(Node::Leaf(0.0));
                            nodes.push(Node::Leaf(0.0));
                            nodes[id] = Node::Split {
                                feature: b.feature,
                                threshold: binned.cuts[b.feature][b.bin],
                                left: li,
                                right: ri,
                            };
                            next.push((li, l));
                            next.push((ri, r));
                        }
                        None => {
                            let v = lr * rows.iter().map(|&i| resid[i]).sum::<f64>()
                                / rows.len() as f64;
                            nodes[id] = Node::Leaf(v);
                            for &i in &rows {
                                f[i] += v;
                            }
                        }
                    }
                }
                if next.is_empty() {
                    break;
                }
                frontier = next;
            }
            trees.push(Tree { nodes });
        }
        GbtModel { base, trees }
    }

    pub fn predict(&self, z: &Matrix) -> Vec<f64> {
        (0..z.nrows())
            .map(|i| self.base + self.trees.iter().map(|t| t.predict_row(z, i)).sum::<f64>())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_tiny_step_is_the_mean() {
        let z = Matrix::from_columns(6, &[vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]]).unwrap();
        let t = [1.0, 1.0, 1.0, 5.0, 5.0, 5.0];
        let m = GbtModel::fit(&z, &t, 1, 2, 1e-12, 1);
        for p in m.predict(&z) {
            assert!((p - 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn recovers_a_step() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let t: Vec<f64> = x
            .iter()
            .map(|&v| if v < 50.0 { 0.0 } else { 10.0 })
            .collect();
        let z = Matrix::from_columns(100, &[x]).unwrap();
        let m = GbtModel::fit(&z, &t, 50, 1, 0.5, 5);
        let p = m.predict(&z);
        assert!(p.iter().zip(&t).all(|(a, b)| (a - b).abs() < 1e-6));
    }
}
