//! Count-based backoff n-gram language models.
//!
//! Probabilities are stored as log10 with an optional log10 backoff weight per
//! entry, exactly as in the ARPA format. Both smoothing modes are materialized
//! in backoff form: every seen n-gram keeps its smoothed probability and the
//! leftover mass of a history is spread over unseen tokens in proportion to the
//! next-lower order, so each conditional distribution sums to one.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

/// log10 stand-in for probability zero, as written by common ARPA tools.
pub const LOG_ZERO: f64 = -99.0;

#[derive(Debug, Error)]
pub enum NGramError {
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
    #[error("malformed ARPA at line {line}: {message}")]
    MalformedArpa { line: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, NGramError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothing {
    /// Add-k counts at every order; `AddK(0.0)` is plain maximum likelihood.
    AddK(f64),
    /// Witten-Bell interpolation, with a uniform distribution under the unigrams.
    WittenBell,
}

impl std::str::FromStr for Smoothing {
    type Err = String;

    /// Accepts `wittenbell`, `addk` (k = 1) or `addk:<k>`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "wittenbell" | "witten-bell" | "wb" => Ok(Smoothing::WittenBell),
            "addk" => Ok(Smoothing::AddK(1.0)),
            _ => s
                .strip_prefix("addk:")
                .and_then(|k| k.parse::<f64>().ok())
                .filter(|k| *k >= 0.0)
                .map(Smoothing::AddK)
                .ok_or_else(|| format!("unknown smoothing {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NGramConfig {
    pub order: usize,
    pub smoothing: Smoothing,
    /// Wrap every sentence in `<s> ... </s>`.
    pub sentence_boundaries: bool,
    /// Give `<unk>` probability mass during smoothing. When false it is kept in
    /// the unigram table at [`LOG_ZERO`].
    pub reserve_unk: bool,
}

impl NGramConfig {
    pub fn new(order: usize, smoothing: Smoothing) -> Self {
        Self {
            order,
            smoothing,
            sentence_boundaries: true,
            reserve_unk: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub log10_prob: f64,
    pub log10_backoff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    /// `tables[m - 1]` holds the m-grams.
    tables: Vec<HashMap<Vec<u32>, Entry>>,
}

fn log10_or_zero(p: f64) -> f64 {
    if p > 0.0 {
        p.log10().max(LOG_ZERO)
    } else {
        LOG_ZERO
    }
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn entries(&self, n: usize) -> &HashMap<Vec<u32>, Entry> {
        &self.tables[n - 1]
    }

    /// Token id, mapping unknown tokens to `<unk>` when the model has one.
    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.index
            .get(token)
            .or_else(|| self.index.get(UNK))
            .copied()
    }

    pub fn has_token(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Tokens a distribution ranges over: everything but `<s>`.
    pub fn predictable(&self) -> impl Iterator<Item = u32> + '_ {
        let bos = self.index.get(BOS).copied();
        (0..self.vocab.len() as u32).filter(move |&i| Some(i) != bos)
    }

    /// log10 P(token | context), walking the backoff chain. Only the last
    /// `order - 1` context ids are used.
    pub fn log10_prob(&self, context: &[u32], token: u32) -> f64 {
        let keep = context.len().min(self.order - 1);
        let mut ctx = &context[context.len() - keep..];
        let mut acc = 0.0;
        let mut key = Vec::with_capacity(self.order);
        loop {
            key.clear();
            key.extend_from_slice(ctx);
            key.push(token);
            if let Some(e) = self.tables[ctx.len()].get(&key) {
                return acc + e.log10_prob;
            }
            if ctx.is_empty() {
                return acc + LOG_ZERO;
            }
            if let Some(bo) = self.tables[ctx.len() - 1]
                .get(ctx)
                .and_then(|e| e.log10_backoff)
            {
                acc += bo;
            }
            ctx = &ctx[1..];
        }
    }

    pub fn ids(&self, tokens: &[&str]) -> Vec<u32> {
        tokens
            .iter()
            .map(|t| self.token_id(t).unwrap_or(u32::MAX))
            .collect()
    }

    /// Sum of log10 P(t_i | t_{<i}) over `tokens` as given, with no implicit
    /// sentence markers. Unknown tokens score as `<unk>`.
    pub fn score_sequence(&self, tokens: &[&str]) -> f64 {
        let ids = self.ids(tokens);
        (0..ids.len())
            .map(|i| self.log10_prob(&ids[..i], ids[i]))
            .sum()
    }

    /// Scores `words` followed by `</s>`, starting from the `<s>` context.
    pub fn score_sentence(&self, words: &[&str]) -> f64 {
        let mut ids = Vec::with_capacity(words.len() + 2);
        let start = if let Some(&b) = self.index.get(BOS) {
            ids.push(b);
            1
        } else {
            0
        };
        ids.extend(self.ids(words));
        if let Some(&e) = self.index.get(EOS) {
            ids.push(e);
        }
        (start..ids.len())
            .map(|i| self.log10_prob(&ids[..i], ids[i]))
            .sum()
    }

    /// Drops every order above `order`, as if the model had been trained at
    /// that order.
    pub fn truncate(&self, order: usize) -> NGramModel {
        let order = order.clamp(1, self.order);
        let mut tables = self.tables[..order].to_vec();
        for e in tables[order - 1].values_mut() {
            e.log10_backoff = None;
        }
        NGramModel {
            order,
            vocab: self.vocab.clone(),
            index: self.index.clone(),
            tables,
        }
    }

    pub fn to_arpa(&self) -> String {
        let mut out = String::from("\\data\\\n");
        for (n, t) in self.tables.iter().enumerate() {
            let _ = writeln!(out, "ngram {}={}", n + 1, t.len());
        }
        for (n, t) in self.tables.iter().enumerate() {
            let _ = write!(out, "\n\\{}-grams:\n", n + 1);
            let mut rows: Vec<(String, &Entry)> = t
                .iter()
                .map(|(k, e)| {
                    let words: Vec<&str> = k.iter().map(|&i| self.vocab[i as usize].as_str()).collect();
                    (words.join(" "), e)
                })
                .collect();
            rows.sort_by(|a, b| a.0.cmp(&b.0));
            for (words, e) in rows {
                let _ = write!(out, "{:.7}\t{}", e.log10_prob, words);
                if let Some(bo) = e.log10_backoff {
                    let _ = write!(out, "\t{bo:.7}");
                }
                out.push('\n');
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }

    pub fn parse_arpa(text: &str) -> Result<NGramModel> {
        ArpaParser::default().parse(text)
    }
}

pub fn write_arpa(lm: &NGramModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, lm.to_arpa()).map_err(|source| NGramError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_arpa(path: impl AsRef<Path>) -> Result<NGramModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| NGramError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    NGramModel::parse_arpa(&text)
}

#[derive(Default)]
struct ArpaParser {
    counts: Vec<usize>,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    tables: Vec<HashMap<Vec<u32>, Entry>>,
}

impl ArpaParser {
    fn parse(mut self, text: &str) -> Result<NGramModel> {
        let bad = |line: usize, message: String| NGramError::MalformedArpa { line, message };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut section: Option<usize> = None;
        let mut seen_data = false;
        let mut ended = false;

        for (ln, line) in lines.by_ref() {
            if line.is_empty() {
                continue;
            }
            if !seen_data {
                if line != "\\data\\" {
                    return Err(bad(ln, format!("expected \\data\\, found {line:?}")));
                }
                seen_data = true;
                continue;
            }
            if line == "\\end\\" {
                ended = true;
                break;
            }
            if let Some(rest) = line.strip_prefix("ngram ") {
                if section.is_some() {
                    return Err(bad(ln, "ngram count after sections began".into()));
                }
                let (n, c) = rest
                    .split_once('=')
                    .ok_or_else(|| bad(ln, format!("bad count line {line:?}")))?;
                let n: usize = n.trim().parse().map_err(|_| bad(ln, "bad order".into()))?;
                let c: usize = c.trim().parse().map_err(|_| bad(ln, "bad count".into()))?;
                if n != self.counts.len() + 1 {
                    return Err(bad(ln, format!("ngram counts out of order at {n}")));
                }
                self.counts.push(c);
                self.tables.push(HashMap::new());
                continue;
            }
            if line.starts_with('\\') && line.ends_with("-grams:") {
                let n: usize = line[1..line.len() - "-grams:".len()]
                    .parse()
                    .map_err(|_| bad(ln, format!("bad section header {line:?}")))?;
                let expected = section.map_or(1, |s| s + 1);
                if n != expected || n > self.counts.len() {
                    return Err(bad(ln, format!("unexpected section {n}")));
                }
                if let Some(s) = section {
                    self.check_count(s, ln)?;
                }
                section = Some(n);
                continue;
            }
            let n = section.ok_or_else(|| bad(ln, format!("unexpected line {line:?}")))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != n + 1 && fields.len() != n + 2 {
                return Err(bad(ln, format!("expected {} or {} fields", n + 1, n + 2)));
            }
            let prob: f64 = fields[0]
                .parse()
                .map_err(|_| bad(ln, format!("bad probability {:?}", fields[0])))?;
            let backoff = match fields.get(n + 1) {
                Some(b) => Some(
                    b.parse::<f64>()
                        .map_err(|_| bad(ln, format!("bad backoff {b:?}")))?,
                ),
                None => None,
            };
            if prob > 0.0 || !prob.is_finite() {
                return Err(bad(ln, format!("log10 probability {prob} out of range")));
            }
            let mut key = Vec::with_capacity(n);
            for w in &fields[1..=n] {
                let id = match self.index.get(*w) {
                    Some(&id) => id,
                    None if n == 1 => {
                        let id = self.vocab.len() as u32;
                        self.vocab.push(w.to_string());
                        self.index.insert(w.to_string(), id);
                        id
                    }
                    None => return Err(bad(ln, format!("token {w:?} has no unigram"))),
                };
                key.push(id);
            }
            let entry = Entry {
                log10_prob: prob,
                log10_backoff: backoff,
            };
            if self.tables[n - 1].insert(key, entry).is_some() {
                return Err(bad(ln, "duplicate n-gram".into()));
            }
        }

        let last = text.lines().count();
        if !seen_data {
            return Err(bad(last, "missing \\data\\ header".into()));
        }
        if !ended {
            return Err(bad(last, "missing \\end\\".into()));
        }
        let order = self.counts.len();
        if order == 0 {
            return Err(bad(last, "no ngram counts".into()));
        }
        if section != Some(order) {
            return Err(bad(last, "missing n-gram sections".into()));
        }
        self.check_count(order, last)?;
        Ok(NGramModel {
            order,
            vocab: self.vocab,
            index: self.index,
            tables: self.tables,
        })
    }

    fn check_count(&self, n: usize, line: usize) -> Result<()> {
        let (want, got) = (self.counts[n - 1], self.tables[n - 1].len());
        if want != got {
            return Err(NGramError::MalformedArpa {
                line,
                message: format!("{n}-gram section has {got} entries, header says {want}"),
            });
        }
        Ok(())
    }
}

/// Per-order counts: `ngrams[m-1][h ++ [w]]` and `histories[m-1][h]` (sum
/// over w), plus the number of distinct followers of each history.
struct Counts {
    ngrams: Vec<HashMap<Vec<u32>, u64>>,
    histories: Vec<HashMap<Vec<u32>, (u64, u64)>>,
}

pub fn train_ngram<S: AsRef<str>>(corpus: &[Vec<S>], config: &NGramConfig) -> Result<NGramModel> {
    if config.order == 0 {
        return Err(NGramError::ZeroOrder);
    }
    if corpus.is_empty() || (!config.sentence_boundaries && corpus.iter().all(Vec::is_empty)) {
        return Err(NGramError::EmptyCorpus);
    }
    let order = config.order;

    let mut vocab: Vec<String> = Vec::new();
    let mut index: HashMap<String, u32> = HashMap::new();
    let intern = |w: &str, vocab: &mut Vec<String>, index: &mut HashMap<String, u32>| -> u32 {
        *index.entry(w.to_string()).or_insert_with(|| {
            vocab.push(w.to_string());
            (vocab.len() - 1) as u32
        })
    };
    let bos = config
        .sentence_boundaries
        .then(|| intern(BOS, &mut vocab, &mut index));
    let eos = config
        .sentence_boundaries
        .then(|| intern(EOS, &mut vocab, &mut index));
    let unk = intern(UNK, &mut vocab, &mut index);

    let mut sentences = Vec::with_capacity(corpus.len());
    for s in corpus {
        let mut ids = Vec::with_capacity(s.as_slice().len() + 2);
        if config.sentence_boundaries {
            ids.push(bos.unwrap());
        }
        for w in s {
            ids.push(intern(w.as_ref(), &mut vocab, &mut index));
        }
        if let Some(e) = eos {
            ids.push(e);
        }
        sentences.push(ids);
    }

    let mut counts = Counts {
        ngrams: vec![HashMap::new(); order],
        histories: vec![HashMap::new(); order],
    };
    for ids in &sentences {
        for i in 0..ids.len() {
            if Some(ids[i]) == bos {
                continue;
            }
            for m in 1..=order.min(i + 1) {
                let gram = &ids[i + 1 - m..=i];
                let c = counts.ngrams[m - 1].entry(gram.to_vec()).or_insert(0);
                *c += 1;
                let h = counts.histories[m - 1]
                    .entry(gram[..m - 1].to_vec())
                    .or_insert((0, 0));
                h.0 += 1;
                if *c == 1 {
                    h.1 += 1;
                }
            }
        }
    }

    // The smoothing support: every token except <s>, and <unk> only if reserved.
    let support: Vec<u32> = (0..vocab.len() as u32)
        .filter(|&i| Some(i) != bos && (config.reserve_unk || i != unk))
        .collect();
    let v_size = support.len() as f64;

    let mut model = NGramModel {
        order,
        vocab,
        index,
        tables: Vec::with_capacity(order),
    };

    let mut unigrams = HashMap::new();
    let (total, types) = counts.histories[0].get(&Vec::new()).copied().unwrap_or((0, 0));
    for id in 0..model.vocab.len() as u32 {
        let in_support = support.binary_search(&id).is_ok();
        let c = counts.ngrams[0].get(&vec![id]).copied().unwrap_or(0) as f64;
        let p = if !in_support {
            0.0
        } else {
            match config.smoothing {
                Smoothing::AddK(k) => (c + k) / (total as f64 + k * v_size),
                Smoothing::WittenBell => {
                    (c + types as f64 / v_size) / (total as f64 + types as f64)
                }
            }
        };
        unigrams.insert(
            vec![id],
            Entry {
                log10_prob: log10_or_zero(p),
                log10_backoff: None,
            },
        );
    }
    model.tables.push(unigrams);

    for m in 2..=order {
        // Lower-order model with the current tables; backoffs of (m-1)-grams
        // are filled in below once the m-gram probabilities are known.
        let mut table: HashMap<Vec<u32>, Entry> = HashMap::new();
        let mut by_history: HashMap<&[u32], Vec<(u32, u64)>> = HashMap::new();
        for (gram, &c) in &counts.ngrams[m - 1] {
            by_history.entry(&gram[..m - 1]).or_default().push((gram[m - 1], c));
        }
        let mut backoffs: Vec<(Vec<u32>, f64)> = Vec::with_capacity(by_history.len());
        let mut hist_keys: Vec<&&[u32]> = by_history.keys().collect();
        hist_keys.sort();
        for h in hist_keys {
            let followers = &by_history[*h];
            let (c_h, t_h) = counts.histories[m - 1][*h];
            let lower_ctx = &h[1..];
            let mut seen_mass = 0.0;
            let mut seen_lower = 0.0;
            for &(w, c) in followers {
                let lower = 10f64.powf(model.log10_prob(lower_ctx, w));
                let p = match config.smoothing {
                    Smoothing::AddK(k) => (c as f64 + k) / (c_h as f64 + k * v_size),
                    Smoothing::WittenBell => {
                        (c as f64 + t_h as f64 * lower) / (c_h as f64 + t_h as f64)
                    }
                };
                seen_mass += p;
                seen_lower += lower;
                let mut key = h.to_vec();
                key.push(w);
                table.insert(
                    key,
                    Entry {
                        log10_prob: log10_or_zero(p),
                        log10_backoff: None,
                    },
                );
            }
            let left = (1.0 - seen_mass).max(0.0);
            let left_lower = (1.0 - seen_lower).max(0.0);
            let bo = if left <= 1e-15 {
                if left_lower <= 1e-15 {
                    0.0
                } else {
                    LOG_ZERO
                }
            } else {
                log10_or_zero(left / left_lower.max(1e-300))
            };
            backoffs.push((h.to_vec(), bo));
        }
        for (h, bo) in backoffs {
            model.tables[m - 2]
                .get_mut(&h)
                .expect("every history is a lower-order n-gram")
                .log10_backoff = Some(bo);
        }
        model.tables.push(table);
    }
    Ok(model)
}
