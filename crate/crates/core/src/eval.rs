//! Strict argument scoring and breakdowns.
//!
//! Arg-I counts a predicted argument when its word span equals a gold
//! argument span of the same event; Arg-C also needs the role. Matching is
//! one-to-one per event, so a repeated prediction of one gold argument is a
//! true positive once and a false positive afterwards.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{EaeInstance, EventRecord, Span};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    pub event: usize,
    pub role: String,
    /// Word span.
    pub span: Span,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub tp: usize,
    pub n_pred: usize,
    pub n_gold: usize,
}

impl Prf {
    pub fn from_counts(tp: usize, n_pred: usize, n_gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let (p, r) = (ratio(tp, n_pred), ratio(tp, n_gold));
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        Prf {
            p,
            r,
            f1,
            tp,
            n_pred,
            n_gold,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Counts {
    tp_i: usize,
    tp_c: usize,
    n_pred: usize,
    n_gold: usize,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.tp_i += o.tp_i;
        self.tp_c += o.tp_c;
        self.n_pred += o.n_pred;
        self.n_gold += o.n_gold;
    }
}

impl Counts {
    fn of<'a>(gold: impl IntoIterator<Item = (&'a str, Span)>, pred: impl IntoIterator<Item = (&'a str, Span)>) -> Self {
        let mut g_span: HashMap<Span, usize> = HashMap::new();
        let mut g_full: HashMap<(&str, Span), usize> = HashMap::new();
        let mut p_span: HashMap<Span, usize> = HashMap::new();
        let mut p_full: HashMap<(&str, Span), usize> = HashMap::new();
        let mut c = Counts::default();
        for (r, s) in gold {
            *g_span.entry(s).or_default() += 1;
            *g_full.entry((r, s)).or_default() += 1;
            c.n_gold += 1;
        }
        for (r, s) in pred {
            *p_span.entry(s).or_default() += 1;
            *p_full.entry((r, s)).or_default() += 1;
            c.n_pred += 1;
        }
        c.tp_i = p_span.iter().map(|(s, &n)| n.min(g_span.get(s).copied().unwrap_or(0))).sum();
        c.tp_c = p_full.iter().map(|(k, &n)| n.min(g_full.get(k).copied().unwrap_or(0))).sum();
        c
    }

    fn arg_i(&self) -> Prf {
        Prf::from_counts(self.tp_i, self.n_pred, self.n_gold)
    }

    fn arg_c(&self) -> Prf {
        Prf::from_counts(self.tp_c, self.n_pred, self.n_gold)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketScore {
    pub label: String,
    /// Events in the bucket (gold arguments for the distance curve).
    pub support: usize,
    pub arg_i: Prf,
    pub arg_c: Prf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub arg_i: Prf,
    pub arg_c: Prf,
    pub buckets: BTreeMap<String, Vec<BucketScore>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Analysis {
    Buckets,
    Overlap,
    Distance,
}

impl Analysis {
    pub fn name(&self) -> &'static str {
        match self {
            Analysis::Buckets => "buckets",
            Analysis::Overlap => "overlap",
            Analysis::Distance => "distance",
        }
    }
}

impl fmt::Display for Analysis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Analysis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "buckets" => Ok(Analysis::Buckets),
            "overlap" => Ok(Analysis::Overlap),
            "distance" => Ok(Analysis::Distance),
            other => Err(Error::InvalidArgument(format!(
                "unknown analysis `{other}` (expected buckets, overlap or distance)"
            ))),
        }
    }
}

/// Default distance bucket edges in words.
pub const DISTANCE_EDGES: [i64; 9] = [-40, -20, -10, -5, 0, 5, 10, 20, 40];

/// Predictions grouped per gold event, checked against the gold corpus.
struct Indexed<'a> {
    gold: &'a [EaeInstance],
    preds: Vec<Vec<Vec<&'a Prediction>>>,
}

impl<'a> Indexed<'a> {
    fn new(gold: &'a [EaeInstance], preds: &'a [Prediction]) -> Result<Self> {
        let mut by_doc: HashMap<&str, usize> = HashMap::with_capacity(gold.len());
        for (i, x) in gold.iter().enumerate() {
            if by_doc.insert(x.doc_id.as_str(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate gold doc_id `{}`", x.doc_id)));
            }
        }
        let mut grouped: Vec<Vec<Vec<&Prediction>>> =
            gold.iter().map(|x| vec![Vec::new(); x.events.len()]).collect();
        for p in preds {
            let slot = by_doc
                .get(p.doc_id.as_str())
                .and_then(|&i| grouped[i].get_mut(p.event))
                .ok_or_else(|| Error::UnknownEvent {
                    doc_id: p.doc_id.clone(),
                    event: p.event,
                })?;
            slot.push(p);
        }
        Ok(Indexed { gold, preds: grouped })
    }

    fn events(&self) -> impl Iterator<Item = (&'a EaeInstance, usize, &'a EventRecord, &[&'a Prediction])> + '_ {
        self.gold.iter().zip(&self.preds).flat_map(|(x, ps)| {
            x.events
                .iter()
                .enumerate()
                .map(move |(e, ev)| (x, e, ev, ps[e].as_slice()))
        })
    }

    fn event_counts(ev: &EventRecord, ps: &[&Prediction]) -> Counts {
        Counts::of(
            ev.arguments.iter().map(|a| (a.role.as_str(), a.span)),
            ps.iter().map(|p| (p.role.as_str(), p.span)),
        )
    }

    fn split(&self, labels: &[&str], key: impl Fn(&EaeInstance, usize) -> usize) -> Vec<BucketScore> {
        let mut acc = vec![(0usize, Counts::default()); labels.len()];
        for (x, e, ev, ps) in self.events() {
            let b = &mut acc[key(x, e)];
            b.0 += 1;
            b.1 += Self::event_counts(ev, ps);
        }
        labels
            .iter()
            .zip(acc)
            .map(|(l, (support, c))| BucketScore {
                label: l.to_string(),
                support,
                arg_i: c.arg_i(),
                arg_c: c.arg_c(),
            })
            .collect()
    }
}

pub fn score(gold: &[EaeInstance], preds: &[Prediction]) -> Result<EvalReport> {
    let idx = Indexed::new(gold, preds)?;
    let mut total = Counts::default();
    for (_, _, ev, ps) in idx.events() {
        total += Indexed::event_counts(ev, ps);
    }
    Ok(EvalReport {
        arg_i: total.arg_i(),
        arg_c: total.arg_c(),
        buckets: BTreeMap::new(),
    })
}

/// `score` plus the requested breakdowns, keyed by analysis name.
pub fn analyze(
    gold: &[EaeInstance],
    preds: &[Prediction],
    analyses: &[Analysis],
    distance_edges: &[i64],
) -> Result<EvalReport> {
    let mut report = score(gold, preds)?;
    for a in analyses {
        let table = match a {
            Analysis::Buckets => bucket_by_event_count(gold, preds)?,
            Analysis::Overlap => overlap_split(gold, preds)?,
            Analysis::Distance => distance_curve(gold, preds, distance_edges)?,
        };
        report.buckets.insert(a.name().to_string(), table);
    }
    Ok(report)
}

/// Events of single-event instances versus the rest.
pub fn bucket_by_event_count(gold: &[EaeInstance], preds: &[Prediction]) -> Result<Vec<BucketScore>> {
    let idx = Indexed::new(gold, preds)?;
    Ok(idx.split(&["#Ev=1", "#Ev>1"], |x, _| usize::from(x.num_events() > 1)))
}

/// Whether some gold argument span of event `e` is also a gold argument span
/// of another event of the instance.
pub fn is_overlapping(x: &EaeInstance, e: usize) -> bool {
    x.events[e].arguments.iter().any(|a| {
        x.events
            .iter()
            .enumerate()
            .any(|(o, ev)| o != e && ev.arguments.iter().any(|b| b.span == a.span))
    })
}

pub fn overlap_split(gold: &[EaeInstance], preds: &[Prediction]) -> Result<Vec<BucketScore>> {
    let idx = Indexed::new(gold, preds)?;
    Ok(idx.split(&["non-overlapping", "overlapping"], |x, e| usize::from(is_overlapping(x, e))))
}

/// Head (first) word of the argument minus head word of the trigger.
pub fn head_distance(trigger: Span, argument: Span) -> i64 {
    argument.start as i64 - trigger.start as i64
}

/// Bucket index of `d` for sorted `edges`: bucket 0 is `d < edges[0]`,
/// bucket `i` is `edges[i-1] <= d < edges[i]`, the last is `d >= edges[-1]`.
pub fn distance_bucket(d: i64, edges: &[i64]) -> usize {
    edges.partition_point(|&e| e <= d)
}

pub fn distance_labels(edges: &[i64]) -> Vec<String> {
    let mut out = Vec::with_capacity(edges.len() + 1);
    match edges.first() {
        Some(e) => out.push(format!("<{e}")),
        None => out.push("all".to_string()),
    }
    for w in edges.windows(2) {
        out.push(format!("[{},{})", w[0], w[1]));
    }
    if let Some(e) = edges.last() {
        out.push(format!(">={e}"));
    }
    out
}

/// Per-distance Arg-I/Arg-C. Gold and predicted arguments each fall in the
/// bucket of their own head distance; support counts gold arguments.
pub fn distance_curve(gold: &[EaeInstance], preds: &[Prediction], edges: &[i64]) -> Result<Vec<BucketScore>> {
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("distance edges must be strictly increasing".into()));
    }
    let idx = Indexed::new(gold, preds)?;
    let labels = distance_labels(edges);
    let mut acc = vec![Counts::default(); labels.len()];
    for (_, _, ev, ps) in idx.events() {
        let bucket = |s: Span| distance_bucket(head_distance(ev.trigger, s), edges);
        for (b, c) in acc.iter_mut().enumerate() {
            *c += Counts::of(
                ev.arguments.iter().filter(|a| bucket(a.span) == b).map(|a| (a.role.as_str(), a.span)),
                ps.iter().filter(|p| bucket(p.span) == b).map(|p| (p.role.as_str(), p.span)),
            );
        }
    }
    Ok(labels
        .into_iter()
        .zip(acc)
        .map(|(label, c)| BucketScore {
            label,
            support: c.n_gold,
            arg_i: c.arg_i(),
            arg_c: c.arg_c(),
        })
        .collect())
}

pub fn write_predictions(path: impl AsRef<Path>, preds: &[Prediction]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for p in preds {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

fn svg_bars(title: &str, labels: &[String], values: &[f64], y_max: f64) -> String {
    let (w, h, pad) = (80.0 * labels.len().max(1) as f64 + 80.0, 320.0, 50.0);
    let bw = (w - 2.0 * pad) / labels.len().max(1) as f64;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n\
         <line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        w / 2.0,
        h - pad,
        w - pad,
        h - pad
    );
    let y_max = if y_max > 0.0 { y_max } else { 1.0 };
    for (i, (l, v)) in labels.iter().zip(values).enumerate() {
        let bh = (h - 2.0 * pad) * v / y_max;
        let x = pad + i as f64 * bw;
        s += &format!(
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{bh:.1}\" fill=\"steelblue\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{v:.2}</text>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            x + 0.1 * bw,
            h - pad - bh,
            0.8 * bw,
            x + bw / 2.0,
            h - pad - bh - 4.0,
            x + bw / 2.0,
            h - pad + 16.0,
            l.replace('<', "&lt;").replace('>', "&gt;")
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Arg-C F1 per distance bucket.
pub fn distance_svg(curve: &[BucketScore]) -> String {
    let labels: Vec<String> = curve.iter().map(|b| b.label.clone()).collect();
    let values: Vec<f64> = curve.iter().map(|b| 100.0 * b.arg_c.f1).collect();
    svg_bars("Arg-C F1 by argument-trigger distance", &labels, &values, 100.0)
}

/// Number of instances per event count.
pub fn event_count_histogram_svg(gold: &[EaeInstance]) -> String {
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    for x in gold {
        *hist.entry(x.num_events()).or_default() += 1;
    }
    let labels: Vec<String> = hist.keys().map(|k| k.to_string()).collect();
    let values: Vec<f64> = hist.values().map(|&v| v as f64).collect();
    let top = values.iter().copied().fold(0.0, f64::max);
    svg_bars("Instances by number of events", &labels, &values, top)
}
