use crate::error::{Error, Result};

/// Row-wise softmax of `(N, K)` logits given flat.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<Vec<f64>> {
    logits
        .chunks(classes)
        .map(|row| {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|&x| (x - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|x| x / z).collect()
        })
        .collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Weighted sum of per-modality score matrices and its argmax labels.
pub fn fuse_scores(per_modality: &[Vec<Vec<f64>>], weights: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    if per_modality.is_empty() || per_modality.len() != weights.len() {
        return Err(Error::Input(format!(
            "{} score sets for {} weights",
            per_modality.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || !weights.iter().any(|&w| w > 0.0) {
        return Err(Error::Config(format!("fusion weights must be non-negative with one positive, got {weights:?}")));
    }
    let first = &per_modality[0];
    let k = first.first().map_or(0, Vec::len);
    if per_modality
        .iter()
        .any(|m| m.len() != first.len() || m.iter().any(|r| r.len() != k))
    {
        return Err(Error::Input("score matrices differ in shape".into()));
    }
    let fused: Vec<Vec<f64>> = (0..first.len())
        .map(|n| {
            (0..k)
                .map(|c| per_modality.iter().zip(weights).map(|(m, w)| w * m[n][c]).sum())
                .collect()
        })
        .collect();
    let labels = fused.iter().map(|r| argmax(r)).collect();
    Ok((fused, labels))
}

/// `K x K` counts; rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Confusion {
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_predictions(classes: usize, truth: &[usize], predicted: &[usize]) -> Self {
        let mut c = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            c.counts[t][p] += 1;
        }
        c
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }

    /// Comma-separated matrix with a header row of predicted classes.
    pub fn to_csv(&self) -> String {
        let k = self.counts.len();
        let mut out = String::from("true\\pred");
        for c in 0..k {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (t, row) in self.counts.iter().enumerate() {
            out.push_str(&t.to_string());
            for x in row {
                out.push_str(&format!(",{x}"));
            }
            out.push('\n');
        }
        out
    }
}
