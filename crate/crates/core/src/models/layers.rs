use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Floor applied to each kernel row sum before the log.
pub const KERNEL_LOG_FLOOR: f64 = 1e-10;
/// Similarities this close to 1 fall into the exact-match histogram bin.
pub const EXACT_MATCH_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    Dot,
    Cosine,
    Indicator,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Word-by-word matching matrix between `left` (n×d) and `right` (m×d).
/// Indicator mode compares `ids` instead of vectors.
pub fn matching_matrix(
    left: &Tensor,
    right: &Tensor,
    mode: MatchMode,
    ids: Option<(&[usize], &[usize])>,
) -> Result<Tensor> {
    let shape_err = |what: String| Error::Shape {
        node: 0,
        op: "matching_matrix",
        expected: what,
        actual: format!("{:?} vs {:?}", left.shape(), right.shape()),
    };
    let ((n, d1), (m, d2)) = match (left.dims2(), right.dims2()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(shape_err("two matrices".into())),
    };
    if d1 != d2 {
        return Err(shape_err("equal vector dimensions".into()));
    }
    let mut out = Vec::with_capacity(n * m);
    match mode {
        MatchMode::Indicator => {
            let (li, ri) = ids.ok_or_else(|| {
                Error::config("indicator matching needs token id sequences")
            })?;
            if li.len() != n || ri.len() != m {
                return Err(shape_err(format!("{n} left and {m} right ids")));
            }
            for a in li {
                out.extend(ri.iter().map(|b| if a == b { 1.0 } else { 0.0 }));
            }
        }
        MatchMode::Dot | MatchMode::Cosine => {
            let rn: Vec<f64> = (0..m).map(|j| norm(right.row_slice(j))).collect();
            for i in 0..n {
                let a = left.row_slice(i);
                let an = norm(a);
                for j in 0..m {
                    let v = dot(a, right.row_slice(j));
                    out.push(match mode {
                        MatchMode::Cosine if an == 0.0 || rn[j] == 0.0 => 0.0,
                        MatchMode::Cosine => v / (an * rn[j]),
                        _ => v,
                    });
                }
            }
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Cosine matching matrix as a differentiable graph node.
pub fn cosine_matrix_node(g: &mut Graph, left: NodeId, right: NodeId) -> NodeId {
    let l = g.l2_normalize_rows(left);
    let r = g.l2_normalize_rows(right);
    let rt = g.transpose(r);
    g.matmul(l, rt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HistogramMode {
    #[serde(rename = "CH")]
    Count,
    #[serde(rename = "NH")]
    Normalized,
    #[serde(rename = "LCH")]
    LogCount,
}

/// Index of the bin `v` falls into: `bins - 1` equal intervals over
/// [−1, 1) and a final exact-match bin.
pub fn histogram_bin(v: f64, bins: usize) -> usize {
    let v = v.clamp(-1.0, 1.0);
    if v >= 1.0 - EXACT_MATCH_TOLERANCE {
        return bins - 1;
    }
    let width = 2.0 / (bins - 1) as f64;
    (((v + 1.0) / width).floor() as usize).min(bins - 2)
}

pub fn matching_histogram(row: &[f64], bins: usize, mode: HistogramMode) -> Result<Vec<f64>> {
    if bins < 2 {
        return Err(Error::config("histogram bin_count must be >= 2"));
    }
    let mut h = vec![0.0; bins];
    for &v in row {
        h[histogram_bin(v, bins)] += 1.0;
    }
    match mode {
        HistogramMode::Count => {}
        HistogramMode::Normalized => {
            if !row.is_empty() {
                let n = row.len() as f64;
                h.iter_mut().for_each(|c| *c /= n);
            }
        }
        HistogramMode::LogCount => h.iter_mut().for_each(|c| *c = c.ln_1p()),
    }
    Ok(h)
}

/// X·W·Yᵀ attention inside a graph; returns the attended n×d node.
pub fn attention_node(g: &mut Graph, x: NodeId, y: NodeId, w: NodeId) -> NodeId {
    let xw = g.matmul(x, w);
    let yt = g.transpose(y);
    let s = g.matmul(xw, yt);
    let a = g.softmax_rows(s);
    g.matmul(a, y)
}

pub fn attention(x: &Tensor, y: &Tensor, w: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let xs = g.constant(x.clone());
    let ys = g.constant(y.clone());
    let ws = g.constant(w.clone());
    let out = attention_node(&mut g, xs, ys, ws);
    let none = std::collections::HashMap::<String, Tensor>::new();
    let eval = g.evaluate(&none)?;
    Ok(eval.value(out).clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelBank {
    kernels: Vec<Kernel>,
}

impl KernelBank {
    pub fn new(kernels: Vec<Kernel>) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::config("kernel bank is empty"));
        }
        for k in &kernels {
            if !(k.sigma > 0.0 && k.sigma.is_finite()) {
                return Err(Error::config(format!("kernel sigma {} must be > 0", k.sigma)));
            }
            if !(-1.0..=1.0).contains(&k.mu) {
                return Err(Error::config(format!("kernel mu {} outside [-1, 1]", k.mu)));
            }
        }
        if kernels.windows(2).any(|w| w[1].mu < w[0].mu) {
            return Err(Error::config("kernel mus must be non-decreasing"));
        }
        Ok(KernelBank { kernels })
    }

    /// `count - 1` soft kernels centred on an even grid over (−1, 1), then
    /// the exact-match kernel at 1.
    pub fn grid(count: usize, sigma: f64, exact_sigma: f64) -> Result<Self> {
        if count < 2 {
            return Err(Error::config("kernel_count must be >= 2"));
        }
        let soft = count - 1;
        let step = 2.0 / soft as f64;
        let mut kernels: Vec<Kernel> = (0..soft)
            .map(|i| Kernel {
                mu: -1.0 + step * (i as f64 + 0.5),
                sigma,
            })
            .collect();
        kernels.push(Kernel {
            mu: 1.0,
            sigma: exact_sigma,
        });
        KernelBank::new(kernels)
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }
}

impl Default for KernelBank {
    fn default() -> Self {
        KernelBank::grid(11, 0.1, 1e-3).expect("default kernel grid is valid")
    }
}

pub fn kernel_pooling(m: &Tensor, bank: &KernelBank) -> Result<Vec<f64>> {
    let (n, cols) = m
        .dims2()
        .filter(|(r, c)| *r > 0 && *c > 0)
        .ok_or_else(|| Error::data("kernel pooling needs a non-empty matrix"))?;
    if !m.is_finite() {
        return Err(Error::data("kernel pooling input is not finite"));
    }
    Ok(bank
        .kernels()
        .iter()
        .map(|k| {
            (0..n)
                .map(|i| {
                    let s: f64 = m.row_slice(i)[..cols]
                        .iter()
                        .map(|v| (-(v - k.mu).powi(2) / (2.0 * k.sigma * k.sigma)).exp())
                        .sum();
                    s.max(KERNEL_LOG_FLOOR).ln()
                })
                .sum()
        })
        .collect())
}

/// Differentiable kernel pooling of an n×m matrix node into a [1, K] node.
pub fn kernel_pooling_node(g: &mut Graph, m: NodeId, shape: (usize, usize), bank: &KernelBank) -> NodeId {
    let (n, cols) = shape;
    let feats: Vec<NodeId> = bank
        .kernels()
        .iter()
        .map(|k| {
            let mu = g.constant(Tensor::filled(vec![n, cols], k.mu));
            let d = g.sub(m, mu);
            let d2 = g.mul(d, d);
            let z = g.scale(d2, -1.0 / (2.0 * k.sigma * k.sigma));
            let e = g.exp(z);
            let rows = g.sum_axis(e, 1);
            let logs = g.safe_log(rows, KERNEL_LOG_FLOOR);
            g.sum_axis(logs, 0)
        })
        .collect();
    g.concat_axis(&feats, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn matching_matrix_examples() {
        let a = t(&[&[0.6, 0.8], &[0.6, 0.8]]);
        let m = matching_matrix(&a, &a, MatchMode::Cosine, None).unwrap();
        assert!(m.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
        let m = matching_matrix(&t(&[&[1.0, 0.0]]), &t(&[&[0.0, 1.0]]), MatchMode::Cosine, None).unwrap();
        assert_eq!(m.data(), &[0.0]);
        let l = t(&[&[0.0], &[0.0]]);
        let r = t(&[&[0.0]]);
        let m = matching_matrix(&l, &r, MatchMode::Indicator, Some((&[5, 7], &[7]))).unwrap();
        assert_eq!(m.to_rows(), vec![vec![0.0], vec![1.0]]);
        assert!(matching_matrix(&t(&[&[1.0]]), &t(&[&[1.0, 2.0]]), MatchMode::Dot, None).is_err());
        let z = matching_matrix(&t(&[&[0.0, 0.0]]), &t(&[&[1.0, 2.0]]), MatchMode::Cosine, None).unwrap();
        assert_eq!(z.data(), &[0.0]);
    }

    #[test]
    fn histogram_examples() {
        let row = [1.0, 0.5, -0.2];
        let ch = matching_histogram(&row, 5, HistogramMode::Count).unwrap();
        assert_eq!(ch, vec![0.0, 1.0, 0.0, 1.0, 1.0]);
        let nh = matching_histogram(&row, 5, HistogramMode::Normalized).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(nh, vec![0.0, third, 0.0, third, third]);
        let lch = matching_histogram(&row, 5, HistogramMode::LogCount).unwrap();
        assert_eq!(lch[1], 2f64.ln());
        for mode in [HistogramMode::Count, HistogramMode::Normalized, HistogramMode::LogCount] {
            assert_eq!(matching_histogram(&[], 4, mode).unwrap(), vec![0.0; 4]);
        }
        assert!(matching_histogram(&row, 1, HistogramMode::Count).is_err());
        // clipped values and the lower edge
        assert_eq!(matching_histogram(&[-3.0, 7.0], 3, HistogramMode::Count).unwrap(), vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn attention_examples() {
        let x = t(&[&[1.0, 2.0], &[3.0, -1.0]]);
        let y1 = t(&[&[0.5, -0.5]]);
        let w = t(&[&[0.3, 0.1], &[-0.2, 0.4]]);
        let out = attention(&x, &y1, &w).unwrap();
        assert_eq!(out.to_rows(), vec![vec![0.5, -0.5]; 2]);
        let y = t(&[&[1.0, 0.0], &[0.0, 3.0], &[2.0, 3.0]]);
        let out = attention(&x, &y, &Tensor::zeros(vec![2, 2])).unwrap();
        for r in out.to_rows() {
            assert!((r[0] - 1.0).abs() < 1e-12 && (r[1] - 2.0).abs() < 1e-12);
        }
        assert!(attention(&x, &y, &Tensor::zeros(vec![3, 2])).is_err());
    }

    #[test]
    fn kernel_pooling_examples() {
        let k = |mu, sigma| KernelBank::new(vec![Kernel { mu, sigma }]).unwrap();
        assert_eq!(kernel_pooling(&t(&[&[1.0]]), &k(1.0, 0.1)).unwrap(), vec![0.0]);
        assert_eq!(kernel_pooling(&t(&[&[0.5]]), &k(0.5, 0.1)).unwrap(), vec![0.0]);
        assert_eq!(
            kernel_pooling(&t(&[&[0.0]]), &k(1.0, 0.1)).unwrap(),
            vec![KERNEL_LOG_FLOOR.ln()]
        );
        assert!(kernel_pooling(&Tensor::zeros(vec![0, 3]), &k(1.0, 0.1)).is_err());
    }

    #[test]
    fn default_bank() {
        let b = KernelBank::default();
        assert_eq!(b.len(), 11);
        let mus: Vec<f64> = b.kernels().iter().map(|k| k.mu).collect();
        let expected = [-0.9, -0.7, -0.5, -0.3, -0.1, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0];
        for (m, e) in mus.iter().zip(expected) {
            assert!((m - e).abs() < 1e-12, "{mus:?}");
        }
        assert_eq!(b.kernels()[10].sigma, 1e-3);
        assert!(b.kernels()[..10].iter().all(|k| k.sigma == 0.1));
        assert!(KernelBank::new(vec![Kernel { mu: 0.0, sigma: 0.0 }]).is_err());
        assert!(KernelBank::new(vec![Kernel { mu: 0.5, sigma: 0.1 }, Kernel { mu: 0.0, sigma: 0.1 }]).is_err());
    }

    #[test]
    fn kernel_node_matches_numeric() {
        let m = t(&[&[0.2, -0.4, 0.9], &[1.0, 0.0, 0.35]]);
        let bank = KernelBank::default();
        let mut g = Graph::new();
        let mn = g.constant(m.clone());
        let out = kernel_pooling_node(&mut g, mn, (2, 3), &bank);
        let none = std::collections::HashMap::<String, Tensor>::new();
        let eval = g.evaluate(&none).unwrap();
        let got = eval.value(out).data().to_vec();
        let want = kernel_pooling(&m, &bank).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
