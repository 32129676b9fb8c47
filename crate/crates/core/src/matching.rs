//! Descriptor distance, nearest-neighbour retrieval and evaluation metrics.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::descriptor::Descriptor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDescriptor {
    pub descriptor: Descriptor,
    pub label: String,
    pub object_id: String,
}

/// Replaces every zero bin, in every descriptor, by half of the smallest
/// strictly positive bin found anywhere in the set. No renormalisation.
/// Returns the floor value used.
pub fn apply_zero_floor<'a, I>(descriptors: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a mut Descriptor>,
{
    let mut all: Vec<&mut Descriptor> = descriptors.into_iter().collect();
    let min_positive = all
        .iter()
        .flat_map(|d| d.weights.iter().copied())
        .filter(|w| *w > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !min_positive.is_finite() {
        return Err(Error::Degenerate("every descriptor in the set is all-zero".into()));
    }
    let floor = min_positive / 2.0;
    for d in all.iter_mut() {
        for w in d.weights.iter_mut() {
            if *w == 0.0 {
                *w = floor;
            }
        }
    }
    Ok(floor)
}

/// `(a - b) ln(a / b)` evaluated on the ordered pair so the term is exactly
/// symmetric and strictly positive whenever `a != b`.
fn kl_term(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    let diff = hi - lo;
    diff * (diff / lo).ln_1p()
}

/// Symmetrised Kullback-Leibler divergence `sum (w1 - w2) ln(w1 / w2)`.
/// Bins must be strictly positive (see [`apply_zero_floor`]).
pub fn kl_symmetric(w1: &Descriptor, w2: &Descriptor) -> Result<f64> {
    if !w1.config.same_layout(&w2.config) || w1.len() != w2.len() {
        return Err(Error::ConfigMismatch("descriptors have different histogram layouts".into()));
    }
    kl_symmetric_weights(&w1.weights, &w2.weights)
}

pub fn kl_symmetric_weights(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ConfigMismatch(format!("{} vs {} bins", a.len(), b.len())));
    }
    let mut sum = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        if !(x > 0.0 && y > 0.0) {
            return Err(Error::invalid("KL divergence needs strictly positive bins; apply the zero floor first"));
        }
        sum += kl_term(x, y);
    }
    Ok(sum)
}

/// Gallery entry with the smallest distance to `query`; equal distances go
/// to the lexicographically smaller object id.
pub fn retrieve_nearest<'g>(
    query: &LabeledDescriptor,
    gallery: &'g [LabeledDescriptor],
) -> Result<&'g LabeledDescriptor> {
    let mut best: Option<(f64, &LabeledDescriptor)> = None;
    for g in gallery {
        let d = kl_symmetric(&query.descriptor, &g.descriptor)?;
        best = match best {
            Some((bd, b)) if bd < d || (bd == d && b.object_id <= g.object_id) => Some((bd, b)),
            _ => Some((d, g)),
        };
    }
    best.map(|(_, g)| g)
        .ok_or_else(|| Error::invalid("retrieval gallery is empty"))
}

/// Square count matrix indexed (true class, predicted class).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub total_accuracy: f64,
    /// Macro precision over predicted classes.
    pub mean_accuracy: f64,
    /// Macro recall over true classes.
    pub mean_recall: f64,
    /// Harmonic mean of `mean_accuracy` and `mean_recall`.
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub support: u64,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let n = classes.len();
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    pub fn record(&mut self, truth: &str, predicted: &str) -> Result<()> {
        let t = self
            .class_index(truth)
            .ok_or_else(|| Error::invalid(format!("unknown class {truth:?}")))?;
        let p = self
            .class_index(predicted)
            .ok_or_else(|| Error::invalid(format!("unknown class {predicted:?}")))?;
        self.counts[t][p] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn per_class(&self) -> Vec<ClassScore> {
        (0..self.classes.len())
            .map(|i| {
                let (row, col) = (self.row_sum(i), self.col_sum(i));
                let diag = self.counts[i][i] as f64;
                ClassScore {
                    class: self.classes[i].clone(),
                    precision: (col > 0).then(|| diag / col as f64),
                    recall: (row > 0).then(|| diag / row as f64),
                    support: row,
                }
            })
            .collect()
    }

    /// Total accuracy = trace / total. Mean recall averages classes with a
    /// non-empty row; mean accuracy (macro precision) averages the same
    /// classes and scores a never-predicted class as 0. F1 is the harmonic
    /// mean of the two macro values.
    pub fn metrics(&self) -> Result<Metrics> {
        let total = self.total();
        if total == 0 {
            return Err(Error::invalid("confusion matrix is empty"));
        }
        let trace: u64 = (0..self.classes.len()).map(|i| self.counts[i][i]).sum();
        let scores = self.per_class();
        let present: Vec<&ClassScore> = scores.iter().filter(|s| s.support > 0).collect();
        let n = present.len() as f64;
        let mean_recall = present.iter().map(|s| s.recall.unwrap_or(0.0)).sum::<f64>() / n;
        let mean_accuracy = present.iter().map(|s| s.precision.unwrap_or(0.0)).sum::<f64>() / n;
        let f1 = if mean_accuracy + mean_recall > 0.0 {
            2.0 * mean_accuracy * mean_recall / (mean_accuracy + mean_recall)
        } else {
            0.0
        };
        Ok(Metrics {
            total_accuracy: trace as f64 / total as f64,
            mean_accuracy,
            mean_recall,
            f1,
        })
    }

    /// CSV: the matrix with a header of predicted classes, followed by a
    /// per-class precision/recall table and the summary metrics.
    pub fn to_csv(&self) -> Result<String> {
        let m = self.metrics()?;
        let mut out = String::from("true\\predicted");
        for c in &self.classes {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.counts) {
            out.push_str(c);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out.push_str("\nclass,precision,recall,support\n");
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for s in self.per_class() {
            let _ = writeln!(out, "{},{},{},{}", s.class, fmt(s.precision), fmt(s.recall), s.support);
        }
        out.push_str("\nmetric,value\n");
        let _ = writeln!(out, "total_accuracy,{}", m.total_accuracy);
        let _ = writeln!(out, "mean_accuracy,{}", m.mean_accuracy);
        let _ = writeln!(out, "mean_recall,{}", m.mean_recall);
        let _ = writeln!(out, "f1,{}", m.f1);
        Ok(out)
    }
}

/// Pairwise symmetric-KL distances (upper triangle mirrored).
pub fn distance_matrix(items: &[LabeledDescriptor]) -> Result<Vec<Vec<f64>>> {
    let n = items.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = kl_symmetric(&items[i].descriptor, &items[j].descriptor)?;
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    Ok(d)
}

/// Each object queries all others; the confusion matrix counts
/// (true label, label of the nearest other object). Descriptors must be
/// floored consistently beforehand.
pub fn leave_one_out(all: &[LabeledDescriptor]) -> Result<ConfusionMatrix> {
    if all.len() < 2 {
        return Err(Error::invalid("leave-one-out needs at least 2 objects"));
    }
    let classes: Vec<String> = all
        .iter()
        .map(|d| d.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let dist = distance_matrix(all)?;
    let mut cm = ConfusionMatrix::new(classes);
    for (i, query) in all.iter().enumerate() {
        let mut best: Option<usize> = None;
        for j in (0..all.len()).filter(|&j| j != i) {
            best = match best {
                Some(b)
                    if dist[i][b] < dist[i][j]
                        || (dist[i][b] == dist[i][j] && all[b].object_id <= all[j].object_id) =>
                {
                    Some(b)
                }
                _ => Some(j),
            };
        }
        let b = best.expect("at least one other object");
        cm.record(&query.label, &all[b].label)?;
    }
    Ok(cm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::DescriptorConfig;
    use crate::rng::{seeded, uniform_f64};
    use proptest::prelude::*;

    fn cfg(n: usize) -> DescriptorConfig {
        DescriptorConfig {
            bins: [n, 1, 1, 1],
            ..DescriptorConfig::full()
        }
    }

    fn desc(w: &[f64]) -> Descriptor {
        Descriptor::from_weights(&cfg(w.len()), w.to_vec()).unwrap()
    }

    fn labeled(w: &[f64], label: &str, id: &str) -> LabeledDescriptor {
        LabeledDescriptor {
            descriptor: desc(w),
            label: label.into(),
            object_id: id.into(),
        }
    }

    #[test]
    fn floor_is_half_min_positive() {
        let mut a = desc(&[0.5, 0.0, 0.496, 0.004]);
        let mut b = desc(&[0.2, 0.3, 0.5, 0.0]);
        let eps = apply_zero_floor([&mut a, &mut b]).unwrap();
        assert_eq!(eps, 0.002);
        assert_eq!(a.weights[1], 0.002);
        assert_eq!(b.weights[3], 0.002);
        assert!(a.weights.iter().chain(&b.weights).all(|w| *w > 0.0));

        let mut c = desc(&[0.25, 0.75]);
        apply_zero_floor([&mut c]).unwrap();
        assert_eq!(c.weights, vec![0.25, 0.75]);

        let mut z = desc(&[0.0, 0.0]);
        assert!(apply_zero_floor([&mut z]).is_err());
    }

    #[test]
    fn kl_examples() {
        let a = desc(&[0.5, 0.5]);
        let b = desc(&[0.25, 0.75]);
        assert_eq!(kl_symmetric(&a, &a).unwrap(), 0.0);
        // 0.25 ln 2 + 0.25 ln 1.5
        let expected = 0.25 * 2f64.ln() + (-0.25) * (0.5f64 / 0.75).ln();
        let d = kl_symmetric(&a, &b).unwrap();
        assert!((d - expected).abs() < 1e-15);
        assert!((d - 0.27465).abs() < 1e-5);
        assert_eq!(d, kl_symmetric(&b, &a).unwrap());
    }

    #[test]
    fn kl_errors() {
        assert!(kl_symmetric(&desc(&[0.0, 1.0]), &desc(&[0.5, 0.5])).is_err());
        assert!(kl_symmetric(&desc(&[0.5, 0.5]), &desc(&[0.2, 0.3, 0.5])).is_err());
    }

    fn random_weights(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = seeded(seed);
        let w: Vec<f64> = (0..n).map(|_| uniform_f64(&mut rng) + 1e-6).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    }

    proptest! {
        #[test]
        fn kl_symmetric_nonnegative(s1 in 0u64..10_000, s2 in 0u64..10_000) {
            let a = random_weights(s1, 32);
            let b = random_weights(s2, 32);
            let ab = kl_symmetric_weights(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, kl_symmetric_weights(&b, &a).unwrap());
            prop_assert_eq!(ab == 0.0, a == b);
        }

        #[test]
        fn kl_zero_only_for_equal(a in 1e-6f64..1.0, ulps in 1u64..4) {
            let b = f64::from_bits(a.to_bits() + ulps);
            prop_assert!(kl_symmetric_weights(&[a], &[b]).unwrap() > 0.0);
        }
    }

    #[test]
    fn nearest_examples() {
        let q = labeled(&[0.5, 0.5], "a", "q");
        let copy = labeled(&[0.5, 0.5], "a", "z");
        let other = labeled(&[0.1, 0.9], "b", "b1");
        let gallery = vec![other.clone(), copy.clone()];
        assert_eq!(retrieve_nearest(&q, &gallery).unwrap().object_id, "z");
        assert_eq!(retrieve_nearest(&q, &[other.clone()]).unwrap().object_id, "b1");
        assert!(retrieve_nearest(&q, &[]).is_err());
    }

    #[test]
    fn nearest_brute_force_three() {
        let q = labeled(&[0.3, 0.7], "x", "q");
        let g = vec![
            labeled(&[0.6, 0.4], "a", "g0"),
            labeled(&[0.25, 0.75], "b", "g1"),
            labeled(&[0.4, 0.6], "c", "g2"),
        ];
        let d: Vec<f64> = g
            .iter()
            .map(|e| {
                let (a, b) = (&q.descriptor.weights, &e.descriptor.weights);
                (a[0] - b[0]) * (a[0] / b[0]).ln() + (a[1] - b[1]) * (a[1] / b[1]).ln()
            })
            .collect();
        let argmin = (0..3).min_by(|&i, &j| d[i].total_cmp(&d[j])).unwrap();
        assert_eq!(retrieve_nearest(&q, &g).unwrap().object_id, g[argmin].object_id);
    }

    #[test]
    fn nearest_ties_by_object_id_regardless_of_order() {
        let q = labeled(&[0.5, 0.5], "a", "q");
        let g1 = labeled(&[0.3, 0.7], "a", "m");
        let g2 = labeled(&[0.3, 0.7], "b", "c");
        let fwd = retrieve_nearest(&q, &[g1.clone(), g2.clone()]).unwrap().object_id.clone();
        let rev = retrieve_nearest(&q, &[g2, g1]).unwrap().object_id.clone();
        assert_eq!(fwd, "c");
        assert_eq!(rev, "c");
    }

    #[test]
    fn leave_one_out_examples() {
        let same = vec![labeled(&[0.5, 0.5], "a", "1"), labeled(&[0.5, 0.5], "a", "2")];
        assert_eq!(leave_one_out(&same).unwrap().metrics().unwrap().total_accuracy, 1.0);

        let diff = vec![labeled(&[0.5, 0.5], "a", "1"), labeled(&[0.2, 0.8], "b", "2")];
        let cm = leave_one_out(&diff).unwrap();
        assert_eq!(cm.metrics().unwrap().total_accuracy, 0.0);
        assert_eq!(cm.total(), 2);

        let mut items = Vec::new();
        for (k, label) in ["a", "b", "c"].iter().enumerate() {
            for r in 0..4 {
                let mut w = vec![0.05; 3];
                w[k] = 0.9 - 0.01 * r as f64;
                items.push(labeled(&w, label, &format!("{label}{r}")));
            }
        }
        let cm = leave_one_out(&items).unwrap();
        assert_eq!(cm.counts, vec![vec![4, 0, 0], vec![0, 4, 0], vec![0, 0, 4]]);
        assert!(leave_one_out(&items[..1]).is_err());
    }

    #[test]
    fn metrics_examples() {
        let mut cm = ConfusionMatrix::new(vec!["a".into(), "b".into()]);
        cm.counts = vec![vec![5, 5], vec![0, 10]];
        let m = cm.metrics().unwrap();
        assert_eq!(m.total_accuracy, 0.75);
        assert_eq!(m.mean_recall, 0.75);
        assert!((m.mean_accuracy - (1.0 + 10.0 / 15.0) / 2.0).abs() < 1e-15);
        let f1 = 2.0 * m.mean_accuracy * 0.75 / (m.mean_accuracy + 0.75);
        assert!((m.f1 - f1).abs() < 1e-15);
        assert!((m.f1 - 0.789_473_684).abs() < 1e-8);

        cm.counts = vec![vec![7, 0], vec![0, 3]];
        let m = cm.metrics().unwrap();
        assert_eq!((m.total_accuracy, m.mean_accuracy, m.mean_recall, m.f1), (1.0, 1.0, 1.0, 1.0));

        // Everything predicted as "a" on a balanced set.
        cm.counts = vec![vec![10, 0], vec![10, 0]];
        let m = cm.metrics().unwrap();
        assert_eq!(m.total_accuracy, 0.5);
        assert_eq!(m.mean_recall, 0.5);
        assert_eq!(m.mean_accuracy, 0.25);

        assert!(ConfusionMatrix::new(vec!["a".into()]).metrics().is_err());
    }

    #[test]
    fn metrics_invariant_under_relabeling() {
        let mut cm = ConfusionMatrix::new(vec!["a".into(), "b".into(), "c".into()]);
        cm.counts = vec![vec![5, 2, 1], vec![0, 7, 3], vec![4, 0, 9]];
        let perm = [2, 0, 1];
        let mut pm = ConfusionMatrix::new(perm.iter().map(|&i| cm.classes[i].clone()).collect());
        for (a, &i) in perm.iter().enumerate() {
            for (b, &j) in perm.iter().enumerate() {
                pm.counts[a][b] = cm.counts[i][j];
            }
        }
        let (m1, m2) = (cm.metrics().unwrap(), pm.metrics().unwrap());
        assert!((m1.f1 - m2.f1).abs() < 1e-15);
        assert!((m1.mean_accuracy - m2.mean_accuracy).abs() < 1e-15);
        assert!((m1.mean_recall - m2.mean_recall).abs() < 1e-15);
        assert_eq!(m1.total_accuracy, m2.total_accuracy);
    }

    #[test]
    fn csv_report_contents() {
        let mut cm = ConfusionMatrix::new(vec!["a".into(), "b".into()]);
        cm.counts = vec![vec![5, 5], vec![0, 10]];
        let csv = cm.to_csv().unwrap();
        assert!(csv.starts_with("true\\predicted,a,b\na,5,5\nb,0,10\n"));
        assert!(csv.contains("total_accuracy,0.75"));
    }
}
