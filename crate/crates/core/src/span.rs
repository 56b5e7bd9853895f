//! Span selectors, span decoding, Hungarian matching and the bipartite loss.
//!
//! Spans are half-open over marked-text positions; `(0, 0)` (the start
//! sentinel) is the empty span.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::corpus::{MarkedText, MarkedToken, Span};
use crate::error::{Error, Result};

pub const EMPTY: Span = Span { start: 0, end: 0 };

#[derive(Clone, Debug, PartialEq)]
pub struct SpanSelector {
    pub phi_start: Vec<f64>,
    pub phi_end: Vec<f64>,
    /// Index of the slot in table order.
    pub slot: usize,
}

/// `phi = h ⊙ w` for every slot row of `h_slots`.
pub fn make_selectors(
    h_slots: ArrayView2<f64>,
    w_start: ArrayView1<f64>,
    w_end: ArrayView1<f64>,
) -> Result<Vec<SpanSelector>> {
    let d = h_slots.ncols();
    if w_start.len() != d || w_end.len() != d {
        return Err(Error::Shape(format!(
            "selector weights of width {}/{} for slot width {d}",
            w_start.len(),
            w_end.len()
        )));
    }
    Ok(h_slots
        .rows()
        .into_iter()
        .enumerate()
        .map(|(slot, h)| SpanSelector {
            phi_start: (&h * &w_start).to_vec(),
            phi_end: (&h * &w_end).to_vec(),
            slot,
        })
        .collect())
}

pub fn span_logits(sel: &SpanSelector, h_text: ArrayView2<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    if h_text.ncols() != sel.phi_start.len() {
        return Err(Error::Shape(format!(
            "text width {} for selector width {}",
            h_text.ncols(),
            sel.phi_start.len()
        )));
    }
    let ps = ArrayView1::from(&sel.phi_start);
    let pe = ArrayView1::from(&sel.phi_end);
    Ok((h_text.dot(&ps).to_vec(), h_text.dot(&pe).to_vec()))
}

/// Which positions may open and close a span, and how long spans may be.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpanCandidates {
    /// Word index of each text position, `None` for sentinels and markers.
    pub word: Vec<Option<usize>>,
    /// Longest span in words.
    pub max_span_words: usize,
}

impl SpanCandidates {
    /// Positions `1..len` are text, one word each.
    pub fn plain(len: usize, max_span_words: usize) -> Self {
        let word = (0..len).map(|p| (p > 0).then(|| p - 1)).collect();
        SpanCandidates { word, max_span_words }
    }

    pub fn from_marked(marked: &MarkedText, max_span_words: usize) -> Self {
        let word: Vec<Option<usize>> = marked
            .kinds
            .iter()
            .map(|k| match *k {
                MarkedToken::Text { word } => Some(word),
                _ => None,
            })
            .collect();
        SpanCandidates { word, max_span_words }
    }

    pub fn len(&self) -> usize {
        self.word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word.is_empty()
    }

    /// Whether `[l, m)` is a non-empty candidate.
    pub fn allows(&self, l: usize, m: usize) -> bool {
        if l == 0 || m <= l || m >= self.word.len() {
            return false;
        }
        match (self.word[l], self.word[m - 1]) {
            (Some(a), Some(b)) => b >= a && b - a < self.max_span_words,
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

impl SpanPrediction {
    pub fn span(&self) -> Span {
        Span::new(self.start, self.end)
    }

    pub fn is_empty(&self) -> bool {
        self.start == 0 && self.end == 0
    }
}

/// Best `(l, m)` by `logit_start[l] + logit_end[m]` among the empty span
/// and the candidates, ties going to smaller `l`, then smaller `m`.
pub fn select_span(logit_start: &[f64], logit_end: &[f64], cand: &SpanCandidates) -> SpanPrediction {
    let mut best = SpanPrediction {
        start: 0,
        end: 0,
        score: logit_start[0] + logit_end[0],
    };
    let n = cand.len().min(logit_start.len()).min(logit_end.len());
    for l in 1..n {
        let Some(wl) = cand.word[l] else { continue };
        for m in l + 1..n {
            if let Some(wm) = cand.word[m - 1] {
                if wm >= wl && wm - wl >= cand.max_span_words {
                    break;
                }
            }
            if !cand.allows(l, m) {
                continue;
            }
            let s = logit_start[l] + logit_end[m];
            if s > best.score {
                best = SpanPrediction { start: l, end: m, score: s };
            }
        }
    }
    best
}

/// Minimum-cost perfect matching of a square matrix. Returns, for each row,
/// its column, and the total cost.
pub fn hungarian_assign(cost: ArrayView2<f64>) -> Result<(Vec<usize>, f64)> {
    let n = cost.nrows();
    if cost.ncols() != n {
        return Err(Error::Shape(format!("assignment matrix is {}x{}", n, cost.ncols())));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument("assignment cost is not finite".into()));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    // potentials, 1-based with column 0 as the virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    let total = row_to_col.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
    Ok((row_to_col, total))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignmentCost {
    /// `-(logit_start[l] + logit_end[m])`
    #[default]
    Logit,
    /// `-(P_start[l] + P_end[m])` under per-slot softmax
    Probability,
}

fn pair_cost(ls: &[f64], le: &[f64], span: Span, kind: AssignmentCost) -> Result<f64> {
    let (s, e) = (span.start, span.end);
    if s >= ls.len() || e >= le.len() {
        return Err(Error::InvalidArgument(format!(
            "span [{s}, {e}) outside logits of length {}",
            ls.len()
        )));
    }
    Ok(match kind {
        AssignmentCost::Logit => -(ls[s] + le[e]),
        AssignmentCost::Probability => -(softmax(ls)[s] + softmax(le)[e]),
    })
}

/// Targets for the slots of one event: slots sharing a role compete for the
/// gold spans of that role; slots left over get the empty span. Gold spans
/// beyond a role's capacity are dropped.
pub fn assign_event(
    slot_roles: &[&str],
    gold: &[(&str, Span)],
    logits_start: &[Vec<f64>],
    logits_end: &[Vec<f64>],
    kind: AssignmentCost,
) -> Result<Vec<Span>> {
    if logits_start.len() != slot_roles.len() || logits_end.len() != slot_roles.len() {
        return Err(Error::Shape(format!(
            "{} slots with {}/{} logit rows",
            slot_roles.len(),
            logits_start.len(),
            logits_end.len()
        )));
    }
    let mut targets = vec![EMPTY; slot_roles.len()];
    let mut roles: Vec<&str> = slot_roles.to_vec();
    roles.sort_unstable();
    roles.dedup();
    for role in roles {
        let slots: Vec<usize> = (0..slot_roles.len()).filter(|&i| slot_roles[i] == role).collect();
        let spans: Vec<Span> = gold.iter().filter(|(r, _)| *r == role).map(|&(_, s)| s).collect();
        if spans.is_empty() {
            continue;
        }
        let n = slots.len().max(spans.len());
        let mut cost = Array2::zeros((n, n));
        for (a, &s) in slots.iter().enumerate() {
            for b in 0..n {
                let target = spans.get(b).copied().unwrap_or(EMPTY);
                cost[[a, b]] = pair_cost(&logits_start[s], &logits_end[s], target, kind)?;
            }
        }
        let (cols, _) = hungarian_assign(cost.view())?;
        for (a, &s) in slots.iter().enumerate() {
            targets[s] = spans.get(cols[a]).copied().unwrap_or(EMPTY);
        }
    }
    Ok(targets)
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    log_softmax(x).into_iter().map(f64::exp).collect()
}

/// `-Σ_k (log P_start[l_k] + log P_end[m_k])` over slots.
pub fn bipartite_loss(logits_start: &[Vec<f64>], logits_end: &[Vec<f64>], targets: &[Span]) -> Result<f64> {
    if logits_start.len() != targets.len() || logits_end.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} targets for {}/{} logit rows",
            targets.len(),
            logits_start.len(),
            logits_end.len()
        )));
    }
    let mut loss = 0.0;
    for ((ls, le), t) in logits_start.iter().zip(logits_end).zip(targets) {
        if t.start >= ls.len() || t.end >= le.len() {
            return Err(Error::InvalidArgument(format!(
                "target [{}, {}) outside logits of length {}",
                t.start,
                t.end,
                ls.len()
            )));
        }
        loss -= log_softmax(ls)[t.start] + log_softmax(le)[t.end];
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};

    #[test]
    fn selectors_are_elementwise() {
        let h = Array2::<f64>::ones((2, 3));
        let s = make_selectors(h.view(), Array1::ones(3).view(), Array1::zeros(3).view()).unwrap();
        assert_eq!(s[0].phi_start, vec![1.0; 3]);
        assert_eq!(s[1].phi_end, vec![0.0; 3]);
        let h = array![[1.0, -2.0], [0.5, 3.0]];
        let s = make_selectors(h.view(), array![2.0, 0.5].view(), array![-1.0, 1.0].view()).unwrap();
        assert_eq!(s[1].phi_start, vec![1.0, 1.5]);
        assert_eq!(s[0].phi_end, vec![-1.0, -2.0]);
        assert!(make_selectors(h.view(), array![1.0].view(), array![1.0].view()).is_err());
    }

    #[test]
    fn logits_are_dot_products() {
        let sel = SpanSelector {
            phi_start: vec![1.0, 2.0],
            phi_end: vec![0.0, 0.0],
            slot: 0,
        };
        let h = array![[1.0, 2.0], [3.0, -1.0]];
        let (s, e) = span_logits(&sel, h.view()).unwrap();
        assert_eq!(s, vec![5.0, 1.0]);
        assert_eq!(e, vec![0.0, 0.0]);
    }

    #[test]
    fn decode_examples() {
        let c = SpanCandidates::plain(3, 10);
        let p = select_span(&[5.0, 0.0, 0.0], &[5.0, 0.0, 0.0], &c);
        assert_eq!((p.start, p.end, p.score), (0, 0, 10.0));
        let p = select_span(&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &c);
        assert_eq!((p.start, p.end), (1, 2));
        let p = select_span(&[1.0; 3], &[1.0; 3], &c);
        assert!(p.is_empty());
    }

    #[test]
    fn decode_skips_markers() {
        // <s> a <T-1> b </T-1> c </s>
        let c = SpanCandidates {
            word: vec![None, Some(0), None, Some(1), None, Some(2), None],
            max_span_words: 10,
        };
        let mut ls = vec![0.0; 7];
        ls[2] = 9.0;
        ls[3] = 1.0;
        let mut le = vec![0.0; 7];
        le[3] = 9.0;
        le[4] = 1.0;
        let p = select_span(&ls, &le, &c);
        assert_eq!((p.start, p.end), (3, 4));
    }

    #[test]
    fn span_length_cap() {
        let c = SpanCandidates::plain(8, 2);
        assert!(c.allows(1, 3));
        assert!(!c.allows(1, 4));
        assert!(!c.allows(0, 1));
    }

    #[test]
    fn hungarian_small_cases() {
        let eye = array![[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]];
        assert_eq!(hungarian_assign(eye.view()).unwrap(), (vec![0, 1, 2], 0.0));
        let c = array![[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]];
        assert_eq!(hungarian_assign(c.view()).unwrap().1, 5.0);
        assert!(hungarian_assign(Array2::<f64>::zeros((2, 3)).view()).is_err());
    }

    #[test]
    fn one_gold_two_slots() {
        let gold = [("Victim", Span::new(2, 3))];
        // slot 1 prefers the gold span, slot 0 prefers empty
        let ls = vec![vec![5.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 5.0, 0.0]];
        let le = vec![vec![5.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 5.0]];
        let t = assign_event(&["Victim", "Victim"], &gold, &ls, &le, AssignmentCost::Logit).unwrap();
        assert_eq!(t, vec![EMPTY, Span::new(2, 3)]);
        let t = assign_event(&["Victim", "Victim"], &gold, &ls, &le, AssignmentCost::Probability).unwrap();
        assert_eq!(t, vec![EMPTY, Span::new(2, 3)]);
    }

    #[test]
    fn roles_are_matched_separately() {
        let gold = [("A", Span::new(1, 2)), ("B", Span::new(2, 3)), ("B", Span::new(1, 3))];
        let z = vec![vec![0.0; 4]; 3];
        let t = assign_event(&["A", "B", "C"], &gold, &z, &z, AssignmentCost::Logit).unwrap();
        assert_eq!(t[0], Span::new(1, 2));
        assert!(t[1] == Span::new(2, 3) || t[1] == Span::new(1, 3));
        assert_eq!(t[2], EMPTY);
    }

    #[test]
    fn loss_closed_forms() {
        let n = 7usize;
        let u = vec![vec![0.3; n]];
        let l = bipartite_loss(&u, &u, &[Span::new(1, 3)]).unwrap();
        assert_abs_diff_eq!(l, 2.0 * (n as f64).ln(), epsilon = 1e-12);
        let mut peaked = vec![-50.0; n];
        peaked[0] = 50.0;
        let l = bipartite_loss(&[peaked.clone()], &[peaked.clone()], &[EMPTY]).unwrap();
        assert!((0.0..1e-12).contains(&l));
        let ls = vec![1.0, 2.0, 0.5];
        let le = vec![0.0, -1.0, 3.0];
        let l = bipartite_loss(&[ls.clone()], &[le.clone()], &[EMPTY]).unwrap();
        assert_abs_diff_eq!(l, -(log_softmax(&ls)[0] + log_softmax(&le)[0]), epsilon = 1e-12);
        assert!(bipartite_loss(&[ls], &[le], &[Span::new(1, 3)]).is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, -3.0, 2.5, 0.0]);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }
}
