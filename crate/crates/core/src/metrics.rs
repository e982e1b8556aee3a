//! Confusion matrices, F-scores, annotator statistics and report tables.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use chrono::{DateTime, Datelike, Utc};
use log::warn;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::corpus::{reduce_annotation, AnnotationRecord, CorpusStore, LabelPair, Mode, Task};
use crate::error::{Error, Result};

/// Counts indexed by (gold class, predicted class) in a fixed class order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let n = classes.len();
        Self {
            classes,
            counts: vec![vec![0; n]; n],
        }
    }

    /// Builds a matrix from explicit counts; rows are gold classes.
    pub fn from_counts(classes: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = classes.len();
        if counts.len() != n || counts.iter().any(|r| r.len() != n) {
            return Err(Error::Format(format!("confusion matrix must be {n}x{n}")));
        }
        Ok(Self { classes, counts })
    }

    pub fn from_pairs<'a>(classes: Vec<String>, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cm = Self::new(classes);
        for (gold, pred) in pairs {
            cm.add(gold, pred)?;
        }
        Ok(cm)
    }

    fn index(&self, class: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == class)
            .ok_or_else(|| Error::InvalidLabel(format!("`{class}` is not an evaluated class")))
    }

    pub fn add(&mut self, gold: &str, predicted: &str) -> Result<()> {
        let (g, p) = (self.index(gold)?, self.index(predicted)?);
        self.counts[g][p] += 1;
        Ok(())
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, gold: usize, predicted: usize) -> u64 {
        self.counts[gold][predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    fn nonempty(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::EmptyEvaluation),
            t => Ok(t as f64),
        }
    }

    /// Precision of class `i` (0 when nothing was predicted as `i`).
    pub fn precision(&self, i: usize) -> f64 {
        let p = self.col_sum(i);
        if p == 0 {
            0.0
        } else {
            self.counts[i][i] as f64 / p as f64
        }
    }

    /// Recall of class `i` (0 when the class has no gold documents).
    pub fn recall(&self, i: usize) -> f64 {
        let r = self.row_sum(i);
        if r == 0 {
            0.0
        } else {
            self.counts[i][i] as f64 / r as f64
        }
    }

    pub fn f1(&self, i: usize) -> f64 {
        let (p, r) = (self.precision(i), self.recall(i));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn accuracy(&self) -> Result<f64> {
        let total = self.nonempty()?;
        Ok(self.trace() as f64 / total)
    }

    /// Mean per-class F1 over every class of the task, empty classes
    /// included (they contribute 0).
    pub fn macro_f(&self) -> Result<f64> {
        self.nonempty()?;
        let n = self.classes.len();
        Ok((0..n).map(|i| self.f1(i)).sum::<f64>() / n as f64)
    }

    /// Micro-averaged F1: pooled TP/FP/FN over all classes. With exactly one
    /// gold and one predicted class per document it equals accuracy.
    pub fn micro_f(&self) -> Result<f64> {
        let total = self.nonempty()?;
        let tp = self.trace() as f64;
        let p = tp / total;
        let r = tp / total;
        Ok(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
    }

    /// Aligned plain-text rendering, gold classes as rows.
    pub fn to_table(&self) -> String {
        let width = self
            .classes
            .iter()
            .map(|c| c.len())
            .chain(self.counts.iter().flatten().map(|v| v.to_string().len()))
            .max()
            .unwrap_or(1)
            .max(4);
        let mut out = format!("{:>width$}", "gold\\pred");
        for c in &self.classes {
            let _ = write!(out, " {c:>width$}");
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.counts) {
            let _ = write!(out, "{c:>width$}");
            for v in row {
                let _ = write!(out, " {v:>width$}");
            }
            out.push('\n');
        }
        out
    }
}

/// Summary scores of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub n: u64,
    pub accuracy: f64,
    pub macro_f: f64,
    pub micro_f: f64,
}

impl Scores {
    pub fn of(cm: &ConfusionMatrix) -> Result<Self> {
        Ok(Self {
            n: cm.total(),
            accuracy: cm.accuracy()?,
            macro_f: cm.macro_f()?,
            micro_f: cm.micro_f()?,
        })
    }
}

/// Cohen's kappa between two aligned label sequences. `None` when the
/// sequences are empty or expected agreement is 1.
pub fn cohen_kappa(a: &[&str], b: &[&str]) -> Option<f64> {
    if a.is_empty() || a.len() != b.len() {
        return None;
    }
    let n = a.len() as f64;
    let observed = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut ma: HashMap<&str, f64> = HashMap::new();
    let mut mb: HashMap<&str, f64> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *ma.entry(x).or_insert(0.0) += 1.0;
        *mb.entry(y).or_insert(0.0) += 1.0;
    }
    let expected: f64 = ma
        .iter()
        .map(|(k, v)| v / n * mb.get(k).copied().unwrap_or(0.0) / n)
        .sum();
    if (1.0 - expected).abs() < f64::EPSILON {
        None
    } else {
        Some((observed - expected) / (1.0 - expected))
    }
}

/// Cohen's kappa averaged over annotator pairs, computed on the contents
/// both annotators labeled. Reporting only.
pub fn mean_pairwise_kappa(store: &CorpusStore, task: Task) -> Option<f64> {
    // annotator -> content -> first reduced class
    let mut by_annotator: BTreeMap<&str, BTreeMap<&str, String>> = BTreeMap::new();
    for rec in store.annotations() {
        let (Some(doc), Ok(pair)) = (store.document(&rec.doc_id), reduce_annotation(rec)) else {
            continue;
        };
        by_annotator
            .entry(&rec.annotator_id)
            .or_default()
            .entry(&doc.content_hash)
            .or_insert_with(|| pair.class(task).to_string());
    }
    let annotators: Vec<_> = by_annotator.keys().copied().collect();
    let mut kappas = Vec::new();
    for (i, x) in annotators.iter().enumerate() {
        for y in &annotators[i + 1..] {
            let (mx, my) = (&by_annotator[x], &by_annotator[y]);
            let (a, b): (Vec<&str>, Vec<&str>) = mx
                .iter()
                .filter_map(|(h, l)| my.get(h).map(|m| (l.as_str(), m.as_str())))
                .unzip();
            if let Some(k) = cohen_kappa(&a, &b) {
                kappas.push(k);
            }
        }
    }
    if kappas.is_empty() {
        None
    } else {
        Some(kappas.iter().sum::<f64>() / kappas.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Consistency {
    pub agreeing_pairs: u64,
    pub pairs: u64,
    pub rate: f64,
}

/// Per annotator, the share of pairs of their own annotations on the same
/// content that agree on (polarity, aspect). `content_of` maps a doc id to
/// its content key.
pub fn annotator_consistency<'a>(
    records: impl IntoIterator<Item = &'a AnnotationRecord>,
    content_of: impl Fn(&str) -> Option<String>,
) -> BTreeMap<String, Consistency> {
    let mut groups: BTreeMap<(String, String), Vec<LabelPair>> = BTreeMap::new();
    for rec in records {
        let (Some(content), Ok(label)) = (content_of(&rec.doc_id), reduce_annotation(rec)) else {
            continue;
        };
        groups
            .entry((rec.annotator_id.clone(), content))
            .or_default()
            .push(label);
    }
    let mut out: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for ((annotator, _), labels) in groups {
        if labels.len() < 2 {
            continue;
        }
        let e = out.entry(annotator).or_insert((0, 0));
        for i in 0..labels.len() {
            for j in i + 1..labels.len() {
                e.1 += 1;
                if labels[i] == labels[j] {
                    e.0 += 1;
                }
            }
        }
    }
    if out.is_empty() {
        warn!("annotator consistency: no annotator labeled the same content twice");
    }
    out.into_iter()
        .map(|(a, (agree, pairs))| {
            (
                a,
                Consistency {
                    agreeing_pairs: agree,
                    pairs,
                    rate: agree as f64 / pairs as f64,
                },
            )
        })
        .collect()
}

/// Calendar month key `YYYY-MM`.
pub fn month_key(ts: DateTime<Utc>) -> String {
    format!("{:04}-{:02}", ts.year(), ts.month())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthShares {
    pub entity: String,
    pub month: String,
    pub total: u64,
    pub counts: BTreeMap<String, u64>,
    pub shares: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalDistribution {
    pub classes: Vec<String>,
    pub rows: Vec<MonthShares>,
}

impl TemporalDistribution {
    /// Buckets (entity, timestamp, class) observations by calendar month.
    pub fn from_observations<'a>(
        classes: Vec<String>,
        items: impl IntoIterator<Item = (&'a str, DateTime<Utc>, &'a str)>,
    ) -> Self {
        let mut buckets: BTreeMap<(String, String), BTreeMap<String, u64>> = BTreeMap::new();
        for (entity, ts, class) in items {
            *buckets
                .entry((entity.to_string(), month_key(ts)))
                .or_default()
                .entry(class.to_string())
                .or_insert(0) += 1;
        }
        let rows = buckets
            .into_iter()
            .map(|((entity, month), observed)| {
                let total: u64 = observed.values().sum();
                let counts: BTreeMap<String, u64> = classes
                    .iter()
                    .map(|c| (c.clone(), observed.get(c).copied().unwrap_or(0)))
                    .collect();
                let shares = counts
                    .iter()
                    .map(|(c, &n)| (c.clone(), n as f64 / total as f64))
                    .collect();
                MonthShares {
                    entity,
                    month,
                    total,
                    counts,
                    shares,
                }
            })
            .collect();
        Self { classes, rows }
    }

    /// Tab-separated columns for external plotting.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("entity\tmonth\ttotal");
        for c in &self.classes {
            let _ = write!(out, "\t{c}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{}\t{}\t{}", r.entity, r.month, r.total);
            for c in &self.classes {
                let _ = write!(out, "\t{:.6}", r.shares[c]);
            }
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<8} {:<8} {:>7}", "entity", "month", "n");
        for c in &self.classes {
            let _ = write!(out, " {c:>9}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:<8} {:<8} {:>7}", r.entity, r.month, r.total);
            for c in &self.classes {
                let _ = write!(out, " {:>9.3}", r.shares[c]);
            }
            out.push('\n');
        }
        out
    }
}

/// Monthly class shares of the non-rejected gold labels.
pub fn temporal_distribution(store: &CorpusStore, task: Task, classes: Vec<String>) -> TemporalDistribution {
    let items = store.gold().training_view().filter_map(|g| {
        let doc = store.document(&g.doc_id)?;
        Some((doc.entity.as_str(), doc.created_at, g.class(task)))
    });
    TemporalDistribution::from_observations(classes, items)
}

/// A human label next to the system label for one annotated task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceItem {
    pub mode: Mode,
    pub system: String,
    pub human: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeStats {
    pub n: u64,
    pub agreement: f64,
    pub macro_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub blind: Option<ModeStats>,
    pub suggested: Option<ModeStats>,
    /// Suggested minus blind agreement.
    pub delta: Option<f64>,
    pub delta_macro_f: Option<f64>,
    pub z: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: Option<bool>,
    pub warnings: Vec<String>,
}

impl InfluenceReport {
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<10} {:>6} {:>9} {:>8}\n", "mode", "n", "agreement", "macro-F");
        for (name, s) in [("BLIND", self.blind), ("SUGGESTED", self.suggested)] {
            match s {
                Some(s) => {
                    let _ = writeln!(out, "{name:<10} {:>6} {:>9.3} {:>8.3}", s.n, s.agreement, s.macro_f);
                }
                None => {
                    let _ = writeln!(out, "{name:<10} {:>6} {:>9} {:>8}", 0, "-", "-");
                }
            }
        }
        if let (Some(d), Some(z), Some(p)) = (self.delta, self.z, self.p_value) {
            let verdict = if p < 0.05 { "significant" } else { "not significant" };
            let _ = writeln!(out, "delta {d:+.3} (z = {z:.2}, p = {p:.4}, {verdict} at alpha = .05)");
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

/// Two-sided two-proportion z-test with pooled variance.
pub fn two_proportion_z(x1: u64, n1: u64, x2: u64, n2: u64) -> Option<(f64, f64)> {
    if n1 == 0 || n2 == 0 {
        return None;
    }
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let pooled = (x1 + x2) as f64 / (n1f + n2f);
    let se = (pooled * (1.0 - pooled) * (1.0 / n1f + 1.0 / n2f)).sqrt();
    if se == 0.0 {
        return None;
    }
    let z = (x2 as f64 / n2f - x1 as f64 / n1f) / se;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Some((z, 2.0 * (1.0 - normal.cdf(z.abs()))))
}

/// System-vs-human agreement in each annotation mode and the difference
/// between them.
pub fn suggestion_influence(items: &[InfluenceItem], classes: &[String]) -> Result<InfluenceReport> {
    let mut warnings = Vec::new();
    let mut stats = |mode: Mode| -> Result<Option<(ModeStats, u64)>> {
        let chosen: Vec<&InfluenceItem> = items.iter().filter(|i| i.mode == mode).collect();
        if chosen.is_empty() {
            let msg = format!("no {mode:?} annotations; partial report");
            warn!("suggestion influence: {msg}");
            warnings.push(msg);
            return Ok(None);
        }
        let cm = ConfusionMatrix::from_pairs(
            classes.to_vec(),
            chosen.iter().map(|i| (i.human.as_str(), i.system.as_str())),
        )?;
        let agree = chosen.iter().filter(|i| i.human == i.system).count() as u64;
        Ok(Some((
            ModeStats {
                n: chosen.len() as u64,
                agreement: agree as f64 / chosen.len() as f64,
                macro_f: cm.macro_f()?,
            },
            agree,
        )))
    };
    let blind = stats(Mode::Blind)?;
    let suggested = stats(Mode::Suggested)?;
    let mut report = InfluenceReport {
        blind: blind.map(|b| b.0),
        suggested: suggested.map(|s| s.0),
        delta: None,
        delta_macro_f: None,
        z: None,
        p_value: None,
        significant: None,
        warnings,
    };
    if let (Some((b, xb)), Some((s, xs))) = (blind, suggested) {
        report.delta = Some(s.agreement - b.agreement);
        report.delta_macro_f = Some(s.macro_f - b.macro_f);
        if let Some((z, p)) = two_proportion_z(xb, b.n, xs, s.n) {
            report.z = Some(z);
            report.p_value = Some(p);
            report.significant = Some(p < 0.05);
        }
    }
    Ok(report)
}
