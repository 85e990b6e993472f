//! Independent reference implementations the library is checked against.

use litpilot::embedding::{info_nce_features, FeatureVector, ProjectionModel};
use litpilot::retrieval::{EntryMeta, SearchFilter};
use std::collections::BTreeSet;

// ---------------------------------------------------------------- tokens

fn one_token_char(c: char) -> bool {
    let u = c as u32;
    (0x3000..=0x303F).contains(&u)
        || (0x3040..=0x30FF).contains(&u)
        || (0x3400..=0x4DBF).contains(&u)
        || (0x4E00..=0x9FFF).contains(&u)
        || (0xAC00..=0xD7AF).contains(&u)
        || (0xF900..=0xFAFF).contains(&u)
        || (0xFF00..=0xFFEF).contains(&u)
        || (0x20000..=0x2FA1F).contains(&u)
}

/// Token byte ranges: whitespace-separated words, CJK characters alone.
pub fn tokens(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut word: Option<usize> = None;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        let end = i + c.len_utf8();
        if c.is_whitespace() || one_token_char(c) {
            if let Some(s) = word.take() {
                out.push((s, i));
            }
            if !c.is_whitespace() {
                out.push((i, end));
            }
        } else if word.is_none() {
            word = Some(i);
        }
        if iter.peek().is_none() {
            if let Some(s) = word.take() {
                out.push((s, end));
            }
        }
    }
    out
}

/// Reference greedy splitter. Returns byte spans of each chunk.
///
/// A window holds at most `max` tokens and ends after the last sentence
/// terminator that leaves it at least `min` tokens and advances past the
/// carried overlap; without one it is cut at the size limit. The last
/// window is kept at `min` tokens or more by pulling earlier cuts back.
pub fn greedy_split(body: &str, max: usize, overlap: usize, min: usize) -> Vec<(usize, usize)> {
    let toks = tokens(body);
    let n = toks.len();
    if n == 0 {
        return Vec::new();
    }
    let terminal = |i: usize| -> bool {
        let (s, e) = toks[i];
        let last = body[s..e].chars().next_back().unwrap();
        if "。！？".contains(last) {
            return true;
        }
        if ".!?".contains(last) {
            return body[e..].chars().next().is_none_or(char::is_whitespace);
        }
        false
    };
    let mut cuts = Vec::new();
    let mut start = 0usize;
    while n - start > max {
        let mut limit = start + max;
        if n >= min && n - min < limit && n - min > start + overlap {
            limit = n - min;
        }
        let mut end = limit;
        let mut e = limit;
        while e > start + overlap {
            if terminal(e - 1) && e - start >= min {
                end = e;
                break;
            }
            e -= 1;
        }
        cuts.push((start, end));
        start = end - overlap;
    }
    cuts.push((start, n));
    cuts.iter()
        .map(|&(s, e)| {
            let from = if s == 0 { 0 } else { toks[s].0 };
            let to = if e == n { body.len() } else { toks[e].0 };
            (from, to)
        })
        .collect()
}

// ---------------------------------------------------------------- BLEU

fn grams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].to_vec()).collect()
}

fn occurrences(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

/// Clipped matches and total for order `n`, by linear scans only.
pub fn clipped_precision(cand: &[String], refs: &[Vec<String>], n: usize) -> (usize, usize) {
    let cg = grams(cand, n);
    let mut seen: Vec<Vec<String>> = Vec::new();
    let mut matched = 0;
    for g in &cg {
        if seen.contains(g) {
            continue;
        }
        seen.push(g.clone());
        let count = occurrences(&cg, g);
        let best_ref = refs.iter().map(|r| occurrences(&grams(r, n), g)).max().unwrap_or(0);
        matched += count.min(best_ref);
    }
    (matched, cg.len())
}

/// Sentence BLEU straight from the definition.
pub fn bleu(cand: &[String], refs: &[Vec<String>], max_n: usize) -> f64 {
    let c = cand.len();
    if c == 0 {
        return 0.0;
    }
    let mut logs = 0.0;
    for n in 1..=max_n {
        let (m, t) = clipped_precision(cand, refs, n);
        let p = if m > 0 {
            m as f64 / t as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (2.0 * t.max(1) as f64)
        };
        logs += p.ln();
    }
    let mut r = refs[0].len();
    for x in refs {
        let (d, best) = (x.len().abs_diff(c), r.abs_diff(c));
        if d < best || (d == best && x.len() < r) {
            r = x.len();
        }
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (logs / max_n as f64).exp()
}

/// Hand-made (candidate, references) pairs, whitespace tokenized.
pub const HAND_PAIRS: &[(&str, &[&str])] = &[
    ("the the the the the the the", &["the cat is on the mat", "there is a cat on the mat"]),
    ("the cat sat on the mat", &["the cat sat on the mat"]),
    ("on the mat", &["the cat is on the mat"]),
    ("the cat is on the mat", &["the cat is on the mat", "there is a cat on the mat"]),
    ("a cat is sitting on the mat today", &["the cat sat on the mat", "a cat was on a mat"]),
    ("dense retrieval beats sparse retrieval", &["dense retrieval outperforms sparse retrieval"]),
    ("we propose a new method", &["in this paper we propose a novel method", "we present a new approach"]),
    ("graph neural networks for molecules", &["message passing networks for molecular graphs"]),
    ("it is it is it is", &["it is what it is"]),
    ("the quick brown fox jumps over the lazy dog", &["the fast brown fox leaps over the lazy dog", "a quick brown fox jumps over a lazy dog"]),
];

pub fn split(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

// ---------------------------------------------------------------- retrieval

#[derive(Debug, Clone)]
pub struct Doc {
    pub id: String,
    pub text: String,
    pub vector: Vec<f32>,
    pub meta: EntryMeta,
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    let na: f64 = a.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

fn any_contains(needles: &[String], hay: &[String]) -> bool {
    needles
        .iter()
        .any(|n| hay.iter().any(|h| h.to_lowercase().contains(&n.to_lowercase())))
}

pub fn passes(filter: &SearchFilter, d: &Doc) -> bool {
    let m = &d.meta;
    (filter.scholars.is_empty() || any_contains(&filter.scholars, &m.authors))
        && (filter.institutions.is_empty() || any_contains(&filter.institutions, &m.institutions))
        && (filter.domains.is_empty() || any_contains(&filter.domains, &m.domain_tags))
        && match filter.year_range {
            (None, None) => true,
            (lo, hi) => m.year.is_some_and(|y| lo.is_none_or(|lo| y >= lo) && hi.is_none_or(|hi| y <= hi)),
        }
        && filter
            .keywords
            .iter()
            .all(|k| d.text.to_lowercase().contains(&k.to_lowercase()))
        && (filter.doc_ids.is_empty() || filter.doc_ids.contains(&m.doc_id))
}

fn top_k(mut scored: Vec<(String, f64)>, k: usize) -> Vec<(String, f64)> {
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Full scan: every passing document scored, sorted, truncated.
pub fn brute_vector(docs: &[Doc], query: &[f32], filter: &SearchFilter, k: usize) -> Vec<(String, f64)> {
    let scored = docs
        .iter()
        .filter(|d| passes(filter, d))
        .map(|d| (d.id.clone(), cosine(query, &d.vector)))
        .collect();
    top_k(scored, k)
}

pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if one_token_char(c) {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if c.is_alphanumeric() {
                out.push(c.to_string());
            }
        } else if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// 0.7 cosine plus 0.3 normalized TF-IDF, idf = ln(1 + N / df) over the
/// whole collection.
pub fn brute_hybrid(docs: &[Doc], text: &str, query: &[f32], filter: &SearchFilter, k: usize) -> Vec<(String, f64)> {
    let n = docs.len() as f64;
    let doc_words: Vec<Vec<String>> = docs.iter().map(|d| words(&d.text)).collect();
    let terms: BTreeSet<String> = words(text).into_iter().collect();
    let idf: Vec<(String, f64)> = terms
        .into_iter()
        .filter_map(|t| {
            let df = doc_words.iter().filter(|w| w.contains(&t)).count();
            (df > 0).then(|| (t, (1.0 + n / df as f64).ln()))
        })
        .collect();
    let cands: Vec<usize> = (0..docs.len()).filter(|&i| passes(filter, &docs[i])).collect();
    let raw: Vec<f64> = cands
        .iter()
        .map(|&i| {
            idf.iter()
                .map(|(t, w)| doc_words[i].iter().filter(|x| *x == t).count() as f64 * w)
                .sum()
        })
        .collect();
    let best = raw.iter().cloned().fold(0.0, f64::max);
    let scored = cands
        .iter()
        .zip(&raw)
        .map(|(&i, &r)| {
            let kw = if best > 0.0 { r / best } else { 0.0 };
            (docs[i].id.clone(), 0.7 * cosine(query, &docs[i].vector) + 0.3 * kw)
        })
        .collect();
    top_k(scored, k)
}

// ---------------------------------------------------------------- gradients

/// Largest relative error between the analytic InfoNCE gradient and central
/// differences over every touched column of `rows`.
pub fn gradient_check(model: &mut ProjectionModel, q: &FeatureVector, cands: &[&FeatureVector], rows: &[usize], h: f64) -> f64 {
    let (_, grad) = info_nce_features(model, q, cands).unwrap();
    let columns: Vec<usize> = grad.touched_columns().collect();
    let mut worst: f64 = 0.0;
    for &row in rows {
        for &col in &columns {
            let w = model.weight(row, col);
            model.set_weight(row, col, w + h);
            let up = info_nce_features(model, q, cands).unwrap().0;
            model.set_weight(row, col, w - h);
            let down = info_nce_features(model, q, cands).unwrap().0;
            model.set_weight(row, col, w);
            let numeric = (up - down) / (2.0 * h);
            let analytic = grad.get(row, col);
            let scale = analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic - numeric).abs() / scale);
        }
    }
    worst
}

// ---------------------------------------------------------------- k-means

fn normalize(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 1e-12).then(|| v.iter().map(|x| x / n).collect())
}

/// Spherical k-means objective of one labelling with optimal unit centroids.
pub fn labelling_objective(points: &[Vec<f64>], labels: &[usize], k: usize) -> Option<f64> {
    let dim = points[0].len();
    let mut total = 0.0;
    for j in 0..k {
        let members: Vec<&Vec<f64>> = points.iter().zip(labels).filter(|(_, &l)| l == j).map(|(p, _)| p).collect();
        if members.is_empty() {
            return None;
        }
        let mut sum = vec![0.0; dim];
        for p in &members {
            sum.iter_mut().zip(p.iter()).for_each(|(s, x)| *s += x);
        }
        let c = normalize(&sum).unwrap_or_else(|| members[0].clone());
        total += members
            .iter()
            .map(|p| p.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum::<f64>();
    }
    Some(total)
}

/// Minimum objective over all k^n labellings with nonempty clusters.
pub fn exhaustive_kmeans(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        if let Some(obj) = labelling_objective(points, &labels, k) {
            best = best.min(obj);
        }
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
    }
}
