//! Instance-level clustering metrics: B³, V-measure and the adjusted Rand
//! index, plus an exhaustive pair-counting ARI used as a test oracle.
//!
//! | metric | range | perfect |
//! |---|---|---|
//! | B³ precision / recall / F1 | [0, 1] | 1 |
//! | homogeneity / completeness / V | [0, 1] | 1 |
//! | ARI | [−1, 1] | 1 |

use std::collections::HashMap;
use std::hash::Hash;
use std::io::Write;

use serde::{Deserialize, Serialize};

/// Predicted and gold labels for the same instances, re-encoded as dense
/// integer codes. Label values are opaque.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    predicted: Vec<usize>,
    gold: Vec<usize>,
    n_pred: usize,
    n_gold: usize,
}

fn encode<L: Hash + Eq>(labels: &[L]) -> (Vec<usize>, usize) {
    let mut codes: HashMap<&L, usize> = HashMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = codes.len();
            *codes.entry(l).or_insert(next)
        })
        .collect();
    (out, codes.len())
}

impl Labeling {
    /// Panics if the two slices differ in length.
    pub fn new<P: Hash + Eq, G: Hash + Eq>(predicted: &[P], gold: &[G]) -> Self {
        assert_eq!(predicted.len(), gold.len(), "predicted and gold must align");
        let (predicted, n_pred) = encode(predicted);
        let (gold, n_gold) = encode(gold);
        Labeling {
            predicted,
            gold,
            n_pred,
            n_gold,
        }
    }

    /// Aligns two id-keyed label maps; ids missing on either side are an error.
    pub fn from_maps<P: Hash + Eq + Clone, G: Hash + Eq + Clone>(
        predicted: &HashMap<String, P>,
        gold: &HashMap<String, G>,
    ) -> Result<Self, String> {
        if predicted.len() != gold.len() {
            return Err(format!(
                "{} predictions for {} gold labels",
                predicted.len(),
                gold.len()
            ));
        }
        let mut ids: Vec<&String> = gold.keys().collect();
        ids.sort();
        let mut p = Vec::with_capacity(ids.len());
        let mut g = Vec::with_capacity(ids.len());
        for id in ids {
            p.push(
                predicted
                    .get(id)
                    .ok_or_else(|| format!("no prediction for {id}"))?
                    .clone(),
            );
            g.push(gold[id].clone());
        }
        Ok(Labeling::new(&p, &g))
    }

    pub fn len(&self) -> usize {
        self.gold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gold.is_empty()
    }

    /// Same instances with predicted and gold sides exchanged.
    pub fn swapped(&self) -> Labeling {
        Labeling {
            predicted: self.gold.clone(),
            gold: self.predicted.clone(),
            n_pred: self.n_gold,
            n_gold: self.n_pred,
        }
    }

    /// `table[c][g]` = instances predicted `c` with gold `g`.
    fn contingency(&self) -> Vec<Vec<u64>> {
        let mut t = vec![vec![0u64; self.n_gold]; self.n_pred];
        for (&c, &g) in self.predicted.iter().zip(&self.gold) {
            t[c][g] += 1;
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub b3_precision: f64,
    pub b3_recall: f64,
    pub b3_f1: f64,
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_measure: f64,
    pub ari: f64,
}

impl MetricReport {
    pub const COLUMNS: [&'static str; 7] = [
        "b3_f1",
        "b3_precision",
        "b3_recall",
        "v_measure",
        "homogeneity",
        "completeness",
        "ari",
    ];

    pub fn evaluate(l: &Labeling) -> Self {
        let (b3_precision, b3_recall, b3_f1) = bcubed(l);
        let (homogeneity, completeness, v_measure) = v_measure(l);
        MetricReport {
            b3_precision,
            b3_recall,
            b3_f1,
            homogeneity,
            completeness,
            v_measure,
            ari: ari(l),
        }
    }

    /// Values in [`Self::COLUMNS`] order.
    pub fn values(&self) -> [f64; 7] {
        [
            self.b3_f1,
            self.b3_precision,
            self.b3_recall,
            self.v_measure,
            self.homogeneity,
            self.completeness,
            self.ari,
        ]
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// B³ `(precision, recall, f1)`; F1 is the harmonic mean of the averaged
/// precision and recall.
pub fn bcubed(l: &Labeling) -> (f64, f64, f64) {
    if l.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let t = l.contingency();
    let cluster: Vec<u64> = t.iter().map(|row| row.iter().sum()).collect();
    let mut class = vec![0u64; l.n_gold];
    for row in &t {
        for (g, &v) in row.iter().enumerate() {
            class[g] += v;
        }
    }
    // every member of cell (c, g) has |C ∩ L| = t[c][g]
    let mut p = 0.0;
    let mut r = 0.0;
    for (c, row) in t.iter().enumerate() {
        for (g, &v) in row.iter().enumerate() {
            if v > 0 {
                let v = v as f64;
                p += v * v / cluster[c] as f64;
                r += v * v / class[g] as f64;
            }
        }
    }
    let n = l.len() as f64;
    let (p, r) = (p / n, r / n);
    (p, r, harmonic(p, r))
}

/// `(homogeneity, completeness, v)` with natural-log entropies. A zero entropy
/// denominator scores 1.
pub fn v_measure(l: &Labeling) -> (f64, f64, f64) {
    if l.is_empty() {
        return (1.0, 1.0, 1.0);
    }
    let t = l.contingency();
    let n = l.len() as f64;
    let cluster: Vec<f64> = t.iter().map(|row| row.iter().sum::<u64>() as f64).collect();
    let mut class = vec![0f64; l.n_gold];
    for row in &t {
        for (g, &v) in row.iter().enumerate() {
            class[g] += v as f64;
        }
    }
    let entropy = |counts: &[f64]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| -(c / n) * (c / n).ln())
            .sum()
    };
    let h_gold = entropy(&class);
    let h_pred = entropy(&cluster);
    let mut h_gold_given_pred = 0.0;
    let mut h_pred_given_gold = 0.0;
    for (c, row) in t.iter().enumerate() {
        for (g, &v) in row.iter().enumerate() {
            if v > 0 {
                let v = v as f64;
                h_gold_given_pred -= (v / n) * (v / cluster[c]).ln();
                h_pred_given_gold -= (v / n) * (v / class[g]).ln();
            }
        }
    }
    let hom = if h_gold == 0.0 {
        1.0
    } else {
        1.0 - h_gold_given_pred / h_gold
    };
    let comp = if h_pred == 0.0 {
        1.0
    } else {
        1.0 - h_pred_given_gold / h_pred
    };
    (hom, comp, harmonic(hom, comp))
}

fn comb2(x: u64) -> f64 {
    (x as f64) * (x as f64 - 1.0) / 2.0
}

/// Adjusted Rand index from the contingency table. Returns 1 when the
/// maximum and expected index coincide.
pub fn ari(l: &Labeling) -> f64 {
    let n = l.len() as u64;
    if n < 2 {
        return 1.0;
    }
    let t = l.contingency();
    let index: f64 = t.iter().flatten().map(|&v| comb2(v)).sum();
    let rows: f64 = t.iter().map(|row| comb2(row.iter().sum())).sum();
    let mut class = vec![0u64; l.n_gold];
    for row in &t {
        for (g, &v) in row.iter().enumerate() {
            class[g] += v;
        }
    }
    let cols: f64 = class.iter().map(|&c| comb2(c)).sum();
    let expected = rows * cols / comb2(n);
    let max = 0.5 * (rows + cols);
    if max == expected {
        1.0
    } else {
        (index - expected) / (max - expected)
    }
}

pub const PAIR_ORACLE_MAX_N: usize = 12;

/// ARI by enumerating every unordered pair, for `n ≤ 12`. Uses the pair-count
/// form `2(ad − bc) / ((a+b)(b+d) + (a+c)(c+d))`.
pub fn pair_oracle(l: &Labeling) -> Result<f64, String> {
    let n = l.len();
    if n > PAIR_ORACLE_MAX_N {
        return Err(format!(
            "pair oracle limited to n ≤ {PAIR_ORACLE_MAX_N}, got {n}"
        ));
    }
    let (mut a, mut b, mut c, mut d) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..n {
        for j in i + 1..n {
            let same_pred = l.predicted[i] == l.predicted[j];
            let same_gold = l.gold[i] == l.gold[j];
            match (same_pred, same_gold) {
                (true, true) => a += 1.0,
                (true, false) => b += 1.0,
                (false, true) => c += 1.0,
                (false, false) => d += 1.0,
            }
        }
    }
    let denom = (a + b) * (b + d) + (a + c) * (c + d);
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok(2.0 * (a * d - b * c) / denom)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Writes one row per labelled group with `mean±std` cells (percentages, one
/// decimal) for the seven metric columns.
pub fn write_summary_csv<W: Write>(
    out: &mut W,
    rows: &[(String, Vec<MetricReport>)],
) -> std::io::Result<()> {
    write!(out, "setting,seeds")?;
    for c in MetricReport::COLUMNS {
        write!(out, ",{c}")?;
    }
    writeln!(out)?;
    for (name, reports) in rows {
        write!(out, "{name},{}", reports.len())?;
        for k in 0..MetricReport::COLUMNS.len() {
            let vals: Vec<f64> = reports.iter().map(|r| 100.0 * r.values()[k]).collect();
            let (m, s) = mean_std(&vals);
            write!(out, ",{m:.1}±{s:.1}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
