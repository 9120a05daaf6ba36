//! Entity-level exact match, character-level micro F1 and answerability
//! accuracy over extraction records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::postprocess::{AnswerPart, ExtractionRecord, FinalAnswer, Task};
use crate::span::Span;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalItem {
    pub qid: String,
    pub predicted: FinalAnswer,
    pub gold: FinalAnswer,
    pub task: Task,
    pub category: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct F1Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl F1Counts {
    /// `None` when there is nothing to score on either side.
    pub fn f1(&self) -> Option<f64> {
        let denom = 2 * self.tp + self.fp + self.fn_;
        (denom > 0).then(|| (2 * self.tp) as f64 / denom as f64)
    }
}

impl std::ops::AddAssign for F1Counts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

pub fn exact_match(pred: &FinalAnswer, gold: &FinalAnswer) -> bool {
    pred.answerable == gold.answerable && (!gold.answerable || pred.text == gold.text)
}

fn chars_without<'a>(text: &'a str, separator: &'a str) -> impl Iterator<Item = char> + 'a {
    text.chars().filter(move |c| !separator.contains(*c))
}

fn multiset_counts(pred: &str, gold: &str, separator: &str) -> F1Counts {
    let mut bag: BTreeMap<char, i64> = BTreeMap::new();
    for c in chars_without(gold, separator) {
        *bag.entry(c).or_default() += 1;
    }
    let gold_n = chars_without(gold, separator).count() as u64;
    let mut pred_n = 0u64;
    let mut tp = 0u64;
    for c in chars_without(pred, separator) {
        pred_n += 1;
        if let Some(n) = bag.get_mut(&c) {
            if *n > 0 {
                *n -= 1;
                tp += 1;
            }
        }
    }
    F1Counts { tp, fp: pred_n - tp, fn_: gold_n - tp }
}

fn positional_counts(p: &AnswerPart, g: &AnswerPart, separator: &str) -> F1Counts {
    let scored = |part: &AnswerPart| -> BTreeSet<usize> {
        part.text
            .chars()
            .enumerate()
            .filter(|(_, c)| !separator.contains(*c))
            .map(|(i, _)| part.span.start + i)
            .collect()
    };
    let (ps, gs) = (scored(p), scored(g));
    let tp = ps.intersection(&gs).count() as u64;
    F1Counts { tp, fp: ps.len() as u64 - tp, fn_: gs.len() as u64 - tp }
}

fn text_parts(ans: &FinalAnswer, separator: &str) -> Vec<String> {
    if !ans.answerable {
        return Vec::new();
    }
    if !ans.parts.is_empty() {
        return ans.parts.iter().map(|p| p.text.clone()).collect();
    }
    if separator.is_empty() {
        return vec![ans.text.clone()];
    }
    ans.text.split(separator).map(str::to_string).collect()
}

fn whole(text: &str, separator: &str) -> F1Counts {
    F1Counts { tp: chars_without(text, separator).count() as u64, fp: 0, fn_: 0 }
}

/// Character counts for one item. Parts with spans on both sides are paired
/// greedily in document order by overlap and compared position by position;
/// otherwise parts are paired in order and compared as character multisets.
/// Unpaired parts count wholly as false positives or negatives.
pub fn item_counts(pred: &FinalAnswer, gold: &FinalAnswer, separator: &str) -> F1Counts {
    let mut c = F1Counts::default();
    if !pred.answerable && !gold.answerable {
        return c;
    }
    if pred.answerable && gold.answerable && pred.text == gold.text {
        return whole(&gold.text, separator);
    }
    let surplus_p = |t: &str| F1Counts { fp: chars_without(t, separator).count() as u64, ..Default::default() };
    let surplus_g = |t: &str| F1Counts { fn_: chars_without(t, separator).count() as u64, ..Default::default() };

    let spanned = pred.answerable && gold.answerable && !pred.parts.is_empty() && !gold.parts.is_empty();
    if spanned {
        let (mut i, mut j) = (0, 0);
        let (ps, gs) = (&pred.parts, &gold.parts);
        while i < ps.len() && j < gs.len() {
            let (p, g) = (&ps[i], &gs[j]);
            if p.span.overlaps(&g.span) {
                c += positional_counts(p, g, separator);
                i += 1;
                j += 1;
            } else if (p.span.start, p.span.end) < (g.span.start, g.span.end) {
                c += surplus_p(&p.text);
                i += 1;
            } else {
                c += surplus_g(&g.text);
                j += 1;
            }
        }
        ps[i..].iter().for_each(|p| c += surplus_p(&p.text));
        gs[j..].iter().for_each(|g| c += surplus_g(&g.text));
        return c;
    }

    let (pp, gp) = (text_parts(pred, separator), text_parts(gold, separator));
    for k in 0..pp.len().max(gp.len()) {
        c += match (pp.get(k), gp.get(k)) {
            (Some(p), Some(g)) => multiset_counts(p, g, separator),
            (Some(p), None) => surplus_p(p),
            (None, Some(g)) => surplus_g(g),
            (None, None) => unreachable!(),
        };
    }
    c
}

/// Micro-averaged counts over relation items; `f1()` of the result is `None`
/// for an empty list.
pub fn token_f1_qa(items: &[EvalItem], separator: &str) -> F1Counts {
    let mut c = F1Counts::default();
    for it in items {
        c += item_counts(&it.predicted, &it.gold, separator);
    }
    c
}

fn position_labels(entities: &[(Span, String)], check_overlap: bool) -> Result<BTreeMap<usize, BTreeSet<&str>>> {
    if check_overlap {
        for (a, (sa, ta)) in entities.iter().enumerate() {
            for (sb, tb) in &entities[a + 1..] {
                if ta == tb && sa.overlaps(sb) {
                    return Err(Error::IllFormedGold(format!(
                        "overlapping {ta} spans [{}, {}) and [{}, {})",
                        sa.start, sa.end, sb.start, sb.end
                    )));
                }
            }
        }
    }
    let mut labels: BTreeMap<usize, BTreeSet<&str>> = BTreeMap::new();
    for (s, t) in entities {
        for pos in s.start..s.end {
            labels.entry(pos).or_default().insert(t.as_str());
        }
    }
    Ok(labels)
}

/// Per-type counts: a position is a true positive for a type when both sides
/// label it with that type.
pub fn ner_counts_by_type(pred: &[(Span, String)], gold: &[(Span, String)]) -> Result<BTreeMap<String, F1Counts>> {
    let g = position_labels(gold, true)?;
    let p = position_labels(pred, false)?;
    let mut out: BTreeMap<String, F1Counts> = BTreeMap::new();
    let positions: BTreeSet<usize> = g.keys().chain(p.keys()).copied().collect();
    let none = BTreeSet::new();
    for pos in positions {
        let (gl, pl) = (g.get(&pos).unwrap_or(&none), p.get(&pos).unwrap_or(&none));
        for t in gl.union(pl) {
            let e = out.entry(t.to_string()).or_default();
            match (gl.contains(t), pl.contains(t)) {
                (true, true) => e.tp += 1,
                (true, false) => e.fn_ += 1,
                _ => e.fp += 1,
            }
        }
    }
    Ok(out)
}

pub fn token_f1_ner(pred: &[(Span, String)], gold: &[(Span, String)]) -> Result<F1Counts> {
    let mut c = F1Counts::default();
    for v in ner_counts_by_type(pred, gold)?.into_values() {
        c += v;
    }
    Ok(c)
}

/// `None` for an empty item list.
pub fn answerability_accuracy(items: &[EvalItem]) -> Option<f64> {
    if items.is_empty() {
        return None;
    }
    let ok = items.iter().filter(|i| i.predicted.answerable == i.gold.answerable).count();
    Some(ok as f64 / items.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub items: u64,
    pub exact: u64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub answerable_correct: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub em: Option<f64>,
    pub f1: Option<f64>,
    pub answerability_accuracy: Option<f64>,
    pub counts: Counts,
}

impl Summary {
    fn from_counts(counts: Counts) -> Self {
        let frac = |n: u64| (counts.items > 0).then(|| n as f64 / counts.items as f64);
        let f1 = F1Counts { tp: counts.tp, fp: counts.fp, fn_: counts.fn_ }.f1();
        Summary { em: frac(counts.exact), f1, answerability_accuracy: frac(counts.answerable_correct), counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub overall: Summary,
    pub by_task: BTreeMap<Task, Summary>,
    /// Keyed by entity type (NER) or relation class.
    pub breakdown: BTreeMap<String, Summary>,
    pub warnings: Vec<String>,
}

fn task_name(t: Task) -> &'static str {
    match t {
        Task::Ner => "ner",
        Task::Relation => "relation",
    }
}

type Mentions = Vec<(Span, String)>;

fn entities_of(ans: &FinalAnswer, ty: &str) -> Vec<(Span, String)> {
    ans.parts.iter().map(|p| (p.span, ty.to_string())).collect()
}

/// Scores items. Relation items use [`item_counts`]; NER items are scored per
/// document with [`ner_counts_by_type`] when spans are available.
pub fn evaluate_items(items: &[EvalItem], separator: &str) -> Result<EvalReport> {
    let mut overall = Counts::default();
    let mut by_task: BTreeMap<Task, Counts> = BTreeMap::new();
    let mut breakdown: BTreeMap<String, Counts> = BTreeMap::new();
    let mut add = |task: Task, category: &str, f: &dyn Fn(&mut Counts)| {
        f(&mut overall);
        f(by_task.entry(task).or_default());
        f(breakdown.entry(category.to_string()).or_default());
    };

    let mut ner_by_doc: BTreeMap<&str, (Mentions, Mentions)> = BTreeMap::new();
    for it in items {
        let exact = exact_match(&it.predicted, &it.gold) as u64;
        let agree = (it.predicted.answerable == it.gold.answerable) as u64;
        add(it.task, &it.category, &|c| {
            c.items += 1;
            c.exact += exact;
            c.answerable_correct += agree;
        });
        let has_spans = |a: &FinalAnswer| !a.answerable || !a.parts.is_empty();
        if it.task == Task::Ner && has_spans(&it.predicted) && has_spans(&it.gold) {
            let e = ner_by_doc.entry(it.gold.doc_id.as_str()).or_default();
            e.0.extend(entities_of(&it.predicted, &it.category));
            e.1.extend(entities_of(&it.gold, &it.category));
            continue;
        }
        let f = item_counts(&it.predicted, &it.gold, separator);
        add(it.task, &it.category, &|c| {
            c.tp += f.tp;
            c.fp += f.fp;
            c.fn_ += f.fn_;
        });
    }
    for (pred, gold) in ner_by_doc.values() {
        for (ty, f) in ner_counts_by_type(pred, gold)? {
            add(Task::Ner, &ty, &|c| {
                c.tp += f.tp;
                c.fp += f.fp;
                c.fn_ += f.fn_;
            });
        }
    }
    Ok(EvalReport {
        overall: Summary::from_counts(overall),
        by_task: by_task.into_iter().map(|(k, v)| (k, Summary::from_counts(v))).collect(),
        breakdown: breakdown.into_iter().map(|(k, v)| (k, Summary::from_counts(v))).collect(),
        warnings: Vec::new(),
    })
}

/// Pairs prediction and gold records on (doc_id, key). A key missing from
/// the predictions is scored as an unanswerable prediction, with a warning;
/// a key missing from the gold is a spurious answer to an unanswerable
/// question.
pub fn pair_records(preds: &[ExtractionRecord], gold: &[ExtractionRecord]) -> Result<(Vec<EvalItem>, Vec<String>)> {
    let index = |recs: &[ExtractionRecord], what: &str| -> Result<BTreeMap<(String, String), ExtractionRecord>> {
        let mut m = BTreeMap::new();
        for r in recs {
            if m.insert((r.doc_id.clone(), r.key.clone()), r.clone()).is_some() {
                return Err(Error::QidCollision { qid: format!("{what} record {} / {}", r.doc_id, r.key) });
            }
        }
        Ok(m)
    };
    let (p, g) = (index(preds, "prediction")?, index(gold, "gold")?);
    let keys: BTreeSet<&(String, String)> = p.keys().chain(g.keys()).collect();
    let mut items = Vec::new();
    let mut warnings = Vec::new();
    for key in keys {
        let (doc_id, question) = key;
        let gr = g.get(key);
        let pr = p.get(key);
        let gold_ans = match gr {
            Some(r) => r.to_answer()?,
            None => FinalAnswer::unanswerable(question, doc_id),
        };
        let pred_ans = match pr {
            Some(r) => r.to_answer()?,
            None => {
                let w = format!("no prediction for {doc_id} / {question}; scored as unanswerable");
                log::warn!("{w}");
                warnings.push(w);
                FinalAnswer::unanswerable(question, doc_id)
            }
        };
        let src = gr.or(pr).expect("key from one side");
        let task = gr.and_then(|r| r.task).or(pr.and_then(|r| r.task)).unwrap_or(Task::Relation);
        let category = gr
            .and_then(|r| r.category.clone())
            .or_else(|| pr.and_then(|r| r.category.clone()))
            .unwrap_or_else(|| "uncategorized".into());
        items.push(EvalItem {
            qid: format!("{}/{}", src.doc_id, src.key),
            predicted: pred_ans,
            gold: gold_ans,
            task,
            category,
        });
    }
    Ok((items, warnings))
}

pub fn evaluate(preds: &[ExtractionRecord], gold: &[ExtractionRecord], separator: &str) -> Result<EvalReport> {
    let (items, warnings) = pair_records(preds, gold)?;
    let mut report = evaluate_items(&items, separator)?;
    report.warnings = warnings;
    Ok(report)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<32} {:>7} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "group", "items", "EM", "F1", "acc", "tp", "fp", "fn"
    );
    let mut row = |name: &str, s: &Summary| {
        let c = &s.counts;
        let _ = writeln!(
            out,
            "{:<32} {:>7} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            name,
            c.items,
            cell(s.em),
            cell(s.f1),
            cell(s.answerability_accuracy),
            c.tp,
            c.fp,
            c.fn_
        );
    };
    row("overall", &report.overall);
    for (t, s) in &report.by_task {
        row(&format!("task:{}", task_name(*t)), s);
    }
    for (k, s) in &report.breakdown {
        row(k, s);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub delta: f64,
    pub accuracy: Option<f64>,
}

/// Answerability accuracy at each threshold, given each example's score
/// difference, mixture and gold answerable flag.
pub fn sweep_threshold(
    scored: &[(f64, f64, bool)],
    deltas: &[f64],
    base: &crate::reader::VerifierConfig,
) -> Vec<SweepPoint> {
    deltas
        .iter()
        .map(|&delta| {
            let cfg = crate::reader::VerifierConfig { delta, ..base.clone() };
            let accuracy = (!scored.is_empty()).then(|| {
                let ok = scored.iter().filter(|(d, m, gold)| crate::reader::verdict(*d, *m, &cfg) == *gold).count();
                ok as f64 / scored.len() as f64
            });
            SweepPoint { delta, accuracy }
        })
        .collect()
}
