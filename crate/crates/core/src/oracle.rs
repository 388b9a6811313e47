//! Straightforward dense reference implementations, used by `selfcheck` and
//! the test suites to cross-check the sparse and tape-based code paths.

use crate::data::schema::Label;
use crate::graph_encoder::{GatLayerParams, HeadMerge};
use crate::tensor::Tensor;

/// Dense masked attention: builds the full `N x N` logit matrix, masks
/// non-neighbours with `-inf` and normalises each row.
pub fn dense_attention(features: &Tensor, mask: &[Vec<bool>], w: &Tensor, a: &Tensor, slope: f64) -> Vec<Vec<f64>> {
    let n = features.rows();
    let f_out = w.cols();
    let wx = dense_matmul(features, w);
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut logits = vec![f64::NEG_INFINITY; n];
        for j in 0..n {
            if mask[i][j] {
                let mut s = 0.0;
                for k in 0..f_out {
                    s += a.data()[k] * wx[i][k] + a.data()[f_out + k] * wx[j][k];
                }
                logits[j] = if s > 0.0 { s } else { slope * s };
            }
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|&l| (l - m).exp()).sum();
        for j in 0..n {
            out[i][j] = (logits[j] - m).exp() / z;
        }
    }
    out
}

fn dense_matmul(x: &Tensor, w: &Tensor) -> Vec<Vec<f64>> {
    (0..x.rows())
        .map(|i| {
            (0..w.cols())
                .map(|c| (0..x.cols()).map(|k| x.get(i, k) * w.get(k, c)).sum())
                .collect()
        })
        .collect()
}

/// Dense GAT layer with the given head merge.
pub fn dense_gat_layer(
    features: &Tensor,
    mask: &[Vec<bool>],
    p: &GatLayerParams,
    merge: HeadMerge,
    slope: f64,
) -> Tensor {
    let n = features.rows();
    let per_head: Vec<Vec<Vec<f64>>> = p
        .heads
        .iter()
        .map(|h| {
            let att = dense_attention(features, mask, &h.w, &h.a, slope);
            let wx = dense_matmul(features, &h.w);
            (0..n)
                .map(|i| {
                    (0..h.w.cols())
                        .map(|c| (0..n).map(|j| att[i][j] * wx[j][c]).sum())
                        .collect()
                })
                .collect()
        })
        .collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| match merge {
            HeadMerge::ConcatElu => per_head
                .iter()
                .flat_map(|h| h[i].iter().map(|&v| if v > 0.0 { v } else { v.exp() - 1.0 }))
                .collect(),
            HeadMerge::AverageRelu => {
                let f = per_head[0][i].len();
                (0..f)
                    .map(|c| {
                        let avg = per_head.iter().map(|h| h[i][c]).sum::<f64>() / per_head.len() as f64;
                        avg.max(0.0)
                    })
                    .collect()
            }
        })
        .collect();
    Tensor::from_rows(&rows).expect("rows have equal width")
}

/// Neighbour mask from adjacency lists.
pub fn mask_from_lists(lists: &[Vec<usize>]) -> Vec<Vec<bool>> {
    let n = lists.len();
    lists
        .iter()
        .map(|l| {
            let mut row = vec![false; n];
            for &j in l {
                row[j] = true;
            }
            row
        })
        .collect()
}

/// Per-example counting of `(tp, tn, fp, fn)` with fake as the positive class.
pub fn count_confusion(predicted: &[Label], actual: &[Label]) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for (p, a) in predicted.iter().zip(actual) {
        match (p, a) {
            (Label::Fake, Label::Fake) => c.0 += 1,
            (Label::True, Label::True) => c.1 += 1,
            (Label::Fake, Label::True) => c.2 += 1,
            (Label::True, Label::Fake) => c.3 += 1,
        }
    }
    c
}
